//! Trilinear space-time elements and tensor-product Gauss rules.

use crate::error::{Error, Result};
use crate::grid::{SpaceTimeGrid, VectorField};

/// One `2×2×2` cell of the lattice.
///
/// Local node `a = 4·a_t + 2·a_i + a_j` sits at grid node
/// `(k + a_t, i + a_i, j + a_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Element {
    pub cell: [usize; 3],
    pub nodes: [usize; 8],
}

impl Element {
    pub fn new(grid: &SpaceTimeGrid, k: usize, i: usize, j: usize) -> Self {
        debug_assert!(k + 1 < grid.frames() && i + 1 < grid.height() && j + 1 < grid.width());
        let mut nodes = [0; 8];
        for (a, node) in nodes.iter_mut().enumerate() {
            *node = grid.index(k + (a >> 2), i + ((a >> 1) & 1), j + (a & 1));
        }
        Self { cell: [k, i, j], nodes }
    }

    /// Physical extents `(dt, h, h)`.
    pub fn extents(grid: &SpaceTimeGrid) -> [f64; 3] {
        [grid.dt(), grid.spacing(), grid.spacing()]
    }

    /// Interpolates nodal values at a point given by the basis values.
    #[inline]
    pub fn interpolate(&self, values: &[f64], shape: &[f64; 8]) -> f64 {
        let mut acc = 0.0;
        for a in 0..8 {
            acc += shape[a] * values[self.nodes[a]];
        }
        acc
    }

    /// Space-time gradient of the trilinear interpolant.
    #[inline]
    pub fn gradient(&self, values: &[f64], grad: &[[f64; 3]; 8]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for a in 0..8 {
            let v = values[self.nodes[a]];
            g[0] += grad[a][0] * v;
            g[1] += grad[a][1] * v;
            g[2] += grad[a][2] * v;
        }
        g
    }
}

/// Iterates the elements of one time slab `k` in row-major order.
pub fn slab_elements(grid: &SpaceTimeGrid, k: usize) -> impl Iterator<Item = Element> + '_ {
    (0..grid.height() - 1)
        .flat_map(move |i| (0..grid.width() - 1).map(move |j| Element::new(grid, k, i, j)))
}

/// Tensor-product Gauss rule on the reference cube `(−1, 1)³`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss–Legendre with `n` points per axis, `n ∈ {2, 3, 4}`.
    pub fn gauss(n: usize) -> Result<Self> {
        let (x, w): (Vec<f64>, Vec<f64>) = match n {
            2 => {
                let a = 1.0 / 3f64.sqrt();
                (vec![-a, a], vec![1.0, 1.0])
            }
            3 => {
                let a = (3.0f64 / 5.0).sqrt();
                (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
            }
            4 => {
                let s = (6.0f64 / 5.0).sqrt();
                let a = ((3.0 - 2.0 * s) / 7.0).sqrt();
                let b = ((3.0 + 2.0 * s) / 7.0).sqrt();
                let wa = (18.0 + 30f64.sqrt()) / 36.0;
                let wb = (18.0 - 30f64.sqrt()) / 36.0;
                (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
            }
            _ => {
                return Err(Error::InvalidParameter {
                    name: "quadrature",
                    reason: format!("supported Gauss rules have 2, 3 or 4 points per axis, got {n}"),
                })
            }
        };
        let mut points = Vec::with_capacity(n * n * n);
        let mut weights = Vec::with_capacity(n * n * n);
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    points.push([x[p], x[q], x[r]]);
                    weights.push(w[p] * w[q] * w[r]);
                }
            }
        }
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss(2).expect("two-point rule")
    }
}

/// Shape functions, physical gradients and integration weights at every
/// quadrature point. All cells of a regular lattice share these.
#[derive(Debug, Clone)]
pub struct ReferenceBasis {
    pub shape: Vec<[f64; 8]>,
    pub grad: Vec<[[f64; 3]; 8]>,
    /// Quadrature weight times the Jacobian determinant.
    pub jw: Vec<f64>,
}

impl ReferenceBasis {
    pub fn new(grid: &SpaceTimeGrid, rule: &QuadratureRule) -> Self {
        let ext = Element::extents(grid);
        let det = ext[0] * ext[1] * ext[2] / 8.0;
        let mut shape = Vec::with_capacity(rule.len());
        let mut grad = Vec::with_capacity(rule.len());
        for p in rule.points() {
            let mut n = [0.0; 8];
            let mut g = [[0.0; 3]; 8];
            for a in 0..8 {
                let s = [sign(a >> 2), sign((a >> 1) & 1), sign(a & 1)];
                let f = [
                    0.5 * (1.0 + s[0] * p[0]),
                    0.5 * (1.0 + s[1] * p[1]),
                    0.5 * (1.0 + s[2] * p[2]),
                ];
                n[a] = f[0] * f[1] * f[2];
                // d/dx = (2/extent)·d/dξ and d/dξ of ½(1 + sξ) is s/2.
                g[a] = [
                    s[0] / ext[0] * f[1] * f[2],
                    s[1] / ext[1] * f[0] * f[2],
                    s[2] / ext[2] * f[0] * f[1],
                ];
            }
            shape.push(n);
            grad.push(g);
        }
        let jw = rule.weights().iter().map(|w| w * det).collect();
        Self { shape, grad, jw }
    }

    pub fn len(&self) -> usize {
        self.jw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jw.is_empty()
    }
}

fn sign(bit: usize) -> f64 {
    if bit == 0 {
        -1.0
    } else {
        1.0
    }
}

/// The diffusion tensor `α w̄w̄ᵀ + β Id` with `w̄ = (c, w¹, w²)`, evaluated on
/// the fly at quadrature points from a lagged velocity field.
#[derive(Debug, Clone, Copy)]
pub struct DiffusionTensorField<'a> {
    pub w: &'a VectorField,
    pub alpha: f64,
    pub beta: f64,
    pub time_axis_weight: f64,
}

impl DiffusionTensorField<'_> {
    /// Space-time velocity `w̄` interpolated at a point with basis values `shape`.
    #[inline]
    pub fn space_time_velocity(&self, element: &Element, shape: &[f64; 8]) -> [f64; 3] {
        [
            self.time_axis_weight,
            element.interpolate(self.w.u1(), shape),
            element.interpolate(self.w.u2(), shape),
        ]
    }

    pub fn tensor(&self, element: &Element, shape: &[f64; 8]) -> [[f64; 3]; 3] {
        let wb = self.space_time_velocity(element, shape);
        let mut d = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                d[r][c] = self.alpha * (wb[r] * wb[c]) + if r == c { self.beta } else { 0.0 };
            }
        }
        d
    }
}
