//! Feed-forward angle map: a learned grid of plate-angle corrections over
//! the plate, recorded from the disturbance compensator and applied by
//! adding onto the angle components of the state estimate.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::Vec2;

/// Grid geometry: covers `[-x_frame, x_frame] x [-y_frame, y_frame]` with
/// square cells of `cell_size` metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_frame: f64,
    pub y_frame: f64,
    pub cell_size: f64,
}

impl GridSpec {
    pub fn new(x_frame: f64, y_frame: f64, cell_size: f64) -> Self {
        assert!(cell_size > 0.0 && x_frame > 0.0 && y_frame > 0.0);
        Self {
            x_frame,
            y_frame,
            cell_size,
        }
    }

    pub fn nx(&self) -> usize {
        ((2.0 * self.x_frame / self.cell_size).ceil() as usize).max(1)
    }

    pub fn ny(&self) -> usize {
        ((2.0 * self.y_frame / self.cell_size).ceil() as usize).max(1)
    }

    /// Center of cell (ix, iy).
    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            -self.x_frame + (ix as f64 + 0.5) * self.cell_size,
            -self.y_frame + (iy as f64 + 0.5) * self.cell_size,
        )
    }

    fn cell_of(&self, p: Vec2) -> (usize, usize) {
        let ix = ((p.x + self.x_frame) / self.cell_size).floor() as isize;
        let iy = ((p.y + self.y_frame) / self.cell_size).floor() as isize;
        (
            ix.clamp(0, self.nx() as isize - 1) as usize,
            iy.clamp(0, self.ny() as isize - 1) as usize,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MapError {
    #[error("cannot finalize an angle map with no visited cells")]
    Empty,
}

/// Accumulates per-cell running means of disturbance samples during runs.
#[derive(Debug, Clone)]
pub struct AngleMapRecorder {
    pub spec: GridSpec,
    sum: Vec<Vec2>,
    count: Vec<u32>,
}

impl AngleMapRecorder {
    pub fn new(spec: GridSpec) -> Self {
        let cells = spec.nx() * spec.ny();
        Self {
            spec,
            sum: vec![Vec2::zeros(); cells],
            count: vec![0; cells],
        }
    }

    pub fn record(&mut self, pos: Vec2, disturbance: Vec2) {
        let (ix, iy) = self.spec.cell_of(pos);
        let i = iy * self.spec.nx() + ix;
        self.sum[i] += disturbance;
        self.count[i] += 1;
    }

    pub fn visited_cells(&self) -> usize {
        self.count.iter().filter(|&&c| c > 0).count()
    }

    pub fn cell_mean(&self, ix: usize, iy: usize) -> Option<Vec2> {
        let i = iy * self.spec.nx() + ix;
        (self.count[i] > 0).then(|| self.sum[i] / self.count[i] as f64)
    }

    /// Fill unvisited cells from their nearest visited cell (Euclidean on
    /// cell centers), producing the immutable interpolating map.
    pub fn finalize(&self) -> Result<AngleMap, MapError> {
        let nx = self.spec.nx();
        let ny = self.spec.ny();
        let visited: Vec<(usize, usize)> = (0..ny)
            .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
            .filter(|&(ix, iy)| self.count[iy * nx + ix] > 0)
            .collect();
        if visited.is_empty() {
            return Err(MapError::Empty);
        }
        let mut values = vec![Vec2::zeros(); nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                let i = iy * nx + ix;
                if self.count[i] > 0 {
                    values[i] = self.sum[i] / self.count[i] as f64;
                } else {
                    let mut best = (f64::INFINITY, 0usize);
                    for &(vx, vy) in &visited {
                        let dx = vx as f64 - ix as f64;
                        let dy = vy as f64 - iy as f64;
                        let d2 = dx * dx + dy * dy;
                        if d2 < best.0 {
                            best = (d2, vy * nx + vx);
                        }
                    }
                    values[i] = self.sum[best.1] / self.count[best.1] as f64;
                }
            }
        }
        Ok(AngleMap {
            spec: self.spec,
            values,
        })
    }
}

/// Finalized feed-forward angle map; immutable, bilinear everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleMap {
    pub spec: GridSpec,
    values: Vec<Vec2>,
}

impl AngleMap {
    /// Map from explicit row-major cell values (file loading, tests).
    pub fn from_values(spec: GridSpec, values: Vec<Vec2>) -> Self {
        assert_eq!(values.len(), spec.nx() * spec.ny());
        Self { spec, values }
    }

    pub fn values(&self) -> &[Vec2] {
        &self.values
    }

    /// Bilinear interpolation of the cell-center values; coordinates are
    /// clamped to the outermost centers, so the field is continuous on the
    /// whole plate.
    pub fn query(&self, pos: Vec2) -> Vec2 {
        let nx = self.spec.nx();
        let ny = self.spec.ny();
        let cs = self.spec.cell_size;
        let fx = ((pos.x + self.spec.x_frame) / cs - 0.5).clamp(0.0, (nx - 1) as f64);
        let fy = ((pos.y + self.spec.y_frame) / cs - 0.5).clamp(0.0, (ny - 1) as f64);
        let ix = (fx.floor() as usize).min(nx - 1);
        let iy = (fy.floor() as usize).min(ny - 1);
        let ix1 = (ix + 1).min(nx - 1);
        let iy1 = (iy + 1).min(ny - 1);
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        let v = |x: usize, y: usize| self.values[y * nx + x];
        v(ix, iy) * (1.0 - tx) * (1.0 - ty)
            + v(ix1, iy) * tx * (1.0 - ty)
            + v(ix, iy1) * (1.0 - tx) * ty
            + v(ix1, iy1) * tx * ty
    }

    /// RMS over cell centers against a reference field (learning metric).
    pub fn rms_error(&self, reference: impl Fn(Vec2) -> Vec2) -> f64 {
        let mut acc = 0.0;
        let n = self.values.len();
        for iy in 0..self.spec.ny() {
            for ix in 0..self.spec.nx() {
                let c = self.spec.cell_center(ix, iy);
                let err = self.values[iy * self.spec.nx() + ix] - reference(c);
                acc += err.norm_squared();
            }
        }
        (acc / n as f64).sqrt()
    }
}

/// Direction of a learning traversal along the corner path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Traversal {
    Forward,
    Backward,
}

/// Iterative map learning: each iteration runs the labyrinth forwards and
/// backwards with the previous map applied as feed-forward, recording a new
/// map from the disturbances the compensator measures.
pub fn iterate_learning<E>(
    spec: GridSpec,
    iterations: usize,
    mut run: impl FnMut(Option<&AngleMap>, Traversal, &mut AngleMapRecorder) -> Result<(), E>,
) -> Result<(AngleMap, Vec<AngleMap>), E> {
    let mut previous: Option<AngleMap> = None;
    let mut history = Vec::new();
    for _ in 0..iterations {
        let mut rec = AngleMapRecorder::new(spec);
        run(previous.as_ref(), Traversal::Forward, &mut rec)?;
        run(previous.as_ref(), Traversal::Backward, &mut rec)?;
        let map = rec
            .finalize()
            .expect("learning runs must visit at least one cell");
        history.push(map.clone());
        previous = Some(map);
    }
    let final_map = previous.expect("at least one learning iteration");
    Ok((final_map, history))
}
