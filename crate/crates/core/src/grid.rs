//! Space-time lattice and nodal fields.

use crate::error::{check_finite, Error, Result};

/// Regular `frames × height × width` node lattice.
///
/// Node `(k, i, j)` sits at the physical point `(k·dt, i·h, j·h)` and has the
/// row-major flat index `(k·height + i)·width + j`. The spatial spacing `h`
/// is one pixel unless changed with [`SpaceTimeGrid::with_spacing`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid {
    frames: usize,
    height: usize,
    width: usize,
    dt: f64,
    spacing: f64,
}

impl SpaceTimeGrid {
    pub fn new(frames: usize, height: usize, width: usize, dt: f64) -> Result<Self> {
        if frames < 2 || height < 2 || width < 2 {
            return Err(Error::InvalidGrid(format!(
                "every axis needs at least two nodes, got {frames}×{height}×{width}"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidGrid(format!("time spacing must be positive, got {dt}")));
        }
        Ok(Self { frames, height, width, dt, spacing: 1.0 })
    }

    /// Same lattice with spatial node spacing `h` instead of one pixel.
    pub fn with_spacing(mut self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("spatial spacing must be positive, got {h}")));
        }
        self.spacing = h;
        Ok(self)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Nodes per frame.
    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn node_count(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn element_count(&self) -> usize {
        (self.frames - 1) * (self.height - 1) * (self.width - 1)
    }

    #[inline]
    pub fn index(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.height + i) * self.width + j
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let j = index % self.width;
        let rest = index / self.width;
        (rest / self.height, rest % self.height, j)
    }

    /// Physical coordinates `(t, x¹, x²)` of node `(k, i, j)`.
    #[inline]
    pub fn point(&self, k: usize, i: usize, j: usize) -> [f64; 3] {
        [k as f64 * self.dt, i as f64 * self.spacing, j as f64 * self.spacing]
    }

    /// Physical length of the time interval, `(T−1)·dt`.
    pub fn duration(&self) -> f64 {
        (self.frames - 1) as f64 * self.dt
    }

    /// Physical extents of the spatial domain along `x¹` and `x²`.
    pub fn extent(&self) -> [f64; 2] {
        [
            (self.height - 1) as f64 * self.spacing,
            (self.width - 1) as f64 * self.spacing,
        ]
    }

    /// Space-time volume `|E|`.
    pub fn volume(&self) -> f64 {
        let [a, b] = self.extent();
        self.duration() * a * b
    }

    pub fn contains(&self, t: f64, x: [f64; 2]) -> bool {
        let [a, b] = self.extent();
        (0.0..=self.duration()).contains(&t) && (0.0..=a).contains(&x[0]) && (0.0..=b).contains(&x[1])
    }

    /// True when the node lies on the boundary of the lattice in any axis.
    pub fn is_boundary(&self, k: usize, i: usize, j: usize) -> bool {
        k == 0 || i == 0 || j == 0 || k + 1 == self.frames || i + 1 == self.height || j + 1 == self.width
    }

    /// Cell containing the physical point (clamped) and local coordinates in `[0, 1]³`.
    pub(crate) fn locate(&self, t: f64, x: [f64; 2]) -> ([usize; 3], [f64; 3]) {
        let axis = |v: f64, step: f64, n: usize| -> (usize, f64) {
            let s = (v / step).clamp(0.0, (n - 1) as f64);
            let cell = (s.floor() as usize).min(n - 2);
            (cell, s - cell as f64)
        };
        let (k, a) = axis(t, self.dt, self.frames);
        let (i, b) = axis(x[0], self.spacing, self.height);
        let (j, c) = axis(x[1], self.spacing, self.width);
        ([k, i, j], [a, b, c])
    }

    pub(crate) fn same_as(&self, other: &SpaceTimeGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Nodal values of a trilinear scalar function.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: SpaceTimeGrid,
    values: Vec<f64>,
}

/// A normalized grayscale image sequence, one value per node.
pub type ImageSequence = ScalarField;

impl ScalarField {
    pub fn new(grid: SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::LengthMismatch {
                what: "scalar field",
                got: values.len(),
                expected: grid.node_count(),
            });
        }
        check_finite("scalar field", &values)?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: SpaceTimeGrid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.node_count()] }
    }

    /// Samples `f(t, x¹, x²)` at every node.
    pub fn from_fn(grid: SpaceTimeGrid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.node_count());
        for k in 0..grid.frames() {
            for i in 0..grid.height() {
                for j in 0..grid.width() {
                    let [t, x1, x2] = grid.point(k, i, j);
                    values.push(f(t, x1, x2));
                }
            }
        }
        Self { grid, values }
    }

    pub(crate) fn from_raw(grid: SpaceTimeGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        Self { grid, values }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(k, i, j)]
    }

    /// Values of frame `k`, row-major.
    pub fn frame(&self, k: usize) -> &[f64] {
        let n = self.grid.frame_len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Trilinear interpolation at a physical point, clamped to the domain.
    pub fn sample(&self, t: f64, x: [f64; 2]) -> f64 {
        let (cell, local) = self.grid.locate(t, x);
        trilinear(&self.grid, &self.values, cell, local)
    }
}

/// Nodal values of a trilinear vector field `(u¹, u²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: SpaceTimeGrid,
    u1: Vec<f64>,
    u2: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: SpaceTimeGrid, u1: Vec<f64>, u2: Vec<f64>) -> Result<Self> {
        for (what, c) in [("u¹", &u1), ("u²", &u2)] {
            if c.len() != grid.node_count() {
                return Err(Error::LengthMismatch { what, got: c.len(), expected: grid.node_count() });
            }
            check_finite(what, c)?;
        }
        Ok(Self { grid, u1, u2 })
    }

    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        Self::constant(grid, [0.0, 0.0])
    }

    pub fn constant(grid: SpaceTimeGrid, c: [f64; 2]) -> Self {
        let n = grid.node_count();
        Self { grid, u1: vec![c[0]; n], u2: vec![c[1]; n] }
    }

    /// Samples `u(t, x¹, x²)` at every node.
    pub fn from_fn(grid: SpaceTimeGrid, f: impl Fn(f64, f64, f64) -> [f64; 2]) -> Self {
        let n = grid.node_count();
        let (mut u1, mut u2) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for k in 0..grid.frames() {
            for i in 0..grid.height() {
                for j in 0..grid.width() {
                    let [t, x1, x2] = grid.point(k, i, j);
                    let [a, b] = f(t, x1, x2);
                    u1.push(a);
                    u2.push(b);
                }
            }
        }
        Self { grid, u1, u2 }
    }

    pub(crate) fn from_raw(grid: SpaceTimeGrid, u1: Vec<f64>, u2: Vec<f64>) -> Self {
        debug_assert_eq!(u1.len(), grid.node_count());
        debug_assert_eq!(u2.len(), grid.node_count());
        Self { grid, u1, u2 }
    }

    /// Splits a stacked `[u¹; u²]` vector.
    pub fn from_stacked(grid: SpaceTimeGrid, x: &[f64]) -> Result<Self> {
        let n = grid.node_count();
        if x.len() != 2 * n {
            return Err(Error::LengthMismatch { what: "stacked field", got: x.len(), expected: 2 * n });
        }
        Self::new(grid, x[..n].to_vec(), x[n..].to_vec())
    }

    pub fn to_stacked(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.u1.len());
        x.extend_from_slice(&self.u1);
        x.extend_from_slice(&self.u2);
        x
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn u1(&self) -> &[f64] {
        &self.u1
    }

    pub fn u2(&self) -> &[f64] {
        &self.u2
    }

    pub fn components(&self) -> [&[f64]; 2] {
        [&self.u1, &self.u2]
    }

    pub fn components_mut(&mut self) -> [&mut Vec<f64>; 2] {
        [&mut self.u1, &mut self.u2]
    }

    pub fn at(&self, k: usize, i: usize, j: usize) -> [f64; 2] {
        let n = self.grid.index(k, i, j);
        [self.u1[n], self.u2[n]]
    }

    pub fn component_field(&self, c: usize) -> ScalarField {
        let v = if c == 0 { &self.u1 } else { &self.u2 };
        ScalarField::from_raw(self.grid, v.clone())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            u1: self.u1.iter().map(|v| c * v).collect(),
            u2: self.u2.iter().map(|v| c * v).collect(),
        }
    }

    /// Componentwise `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &VectorField, b: f64) -> Result<Self> {
        self.grid.same_as(&other.grid)?;
        let lin = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect();
        Ok(Self { grid: self.grid, u1: lin(&self.u1, &other.u1), u2: lin(&self.u2, &other.u2) })
    }

    /// Largest pointwise Euclidean difference.
    pub fn max_difference(&self, other: &VectorField) -> f64 {
        self.u1
            .iter()
            .zip(&self.u2)
            .zip(other.u1.iter().zip(&other.u2))
            .map(|((a1, a2), (b1, b2))| (a1 - b1).hypot(a2 - b2))
            .fold(0.0, f64::max)
    }

    /// Trilinear interpolation at a physical point, clamped to the domain.
    pub fn sample(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let (cell, local) = self.grid.locate(t, x);
        [
            trilinear(&self.grid, &self.u1, cell, local),
            trilinear(&self.grid, &self.u2, cell, local),
        ]
    }
}

fn trilinear(grid: &SpaceTimeGrid, values: &[f64], cell: [usize; 3], local: [f64; 3]) -> f64 {
    let [k, i, j] = cell;
    let [a, b, c] = local;
    let mut acc = 0.0;
    for (dk, wk) in [(0, 1.0 - a), (1, a)] {
        for (di, wi) in [(0, 1.0 - b), (1, b)] {
            for (dj, wj) in [(0, 1.0 - c), (1, c)] {
                acc += wk * wi * wj * values[grid.index(k + dk, i + di, j + dj)];
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_grids() {
        assert!(SpaceTimeGrid::new(1, 4, 4, 0.125).is_err());
        assert!(SpaceTimeGrid::new(2, 4, 1, 0.125).is_err());
        assert!(SpaceTimeGrid::new(2, 2, 2, 0.0).is_err());
        assert!(SpaceTimeGrid::new(2, 2, 2, -1.0).is_err());
        assert!(SpaceTimeGrid::new(2, 2, 2, 1.0).unwrap().with_spacing(0.0).is_err());
    }

    #[test]
    fn index_round_trips() {
        let g = SpaceTimeGrid::new(3, 4, 5, 0.125).unwrap();
        for n in 0..g.node_count() {
            let (k, i, j) = g.coords(n);
            assert_eq!(g.index(k, i, j), n);
        }
        assert_eq!(g.index(1, 2, 3), (4 + 2) * 5 + 3);
        assert_eq!(g.point(2, 1, 3), [0.25, 1.0, 3.0]);
    }

    #[test]
    fn field_length_and_finiteness_checked() {
        let g = SpaceTimeGrid::new(2, 2, 2, 1.0).unwrap();
        assert!(ScalarField::new(g, vec![0.0; 7]).is_err());
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(matches!(ScalarField::new(g, v), Err(Error::NonFinite { index: 3, .. })));
    }

    #[test]
    fn trilinear_sampling_reproduces_affine_functions() {
        let g = SpaceTimeGrid::new(4, 5, 6, 0.125).unwrap().with_spacing(0.5).unwrap();
        let f = ScalarField::from_fn(g, |t, a, b| 1.0 + 2.0 * t - a + 0.25 * b);
        for &(t, a, b) in &[(0.1, 0.3, 1.7), (0.375, 2.0, 2.5), (0.0, 0.0, 0.0)] {
            let exact = 1.0 + 2.0 * t - a + 0.25 * b;
            assert!((f.sample(t, [a, b]) - exact).abs() < 1e-12);
        }
    }
}
