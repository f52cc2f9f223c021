//! Element-loop assembly of mass, anisotropic stiffness and data-term blocks.
//!
//! Rows are gathered one frame at a time: the rows of frame `f` receive
//! contributions from the elements of slabs `f − 1` and `f` only, visited in a
//! fixed order. Frames are independent, so assembly runs in parallel and the
//! result is bitwise identical for any number of threads.

use std::sync::Arc;

use rayon::prelude::*;

use super::element::{slab_elements, DiffusionTensorField, Element, QuadratureRule, ReferenceBasis};
use super::sparse::{CsrMatrix, SparsityPattern};
use crate::derivatives::ImageDerivatives;
use crate::energy::ModelWeights;
use crate::error::{Error, Result};
use crate::grid::{ScalarField, SpaceTimeGrid, VectorField};
use crate::solver::{self, SolveReport, SolverConfig};

/// Rows below this count are multiplied sequentially.
const PAR_MIN_ROWS: usize = 4096;

/// Local rows of one element restricted to a single time layer: 4 rows × 8 columns.
type LocalBlock = [[f64; 8]; 4];

/// Data-term coupling blocks and right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBlocks {
    pub d11: CsrMatrix,
    pub d12: CsrMatrix,
    pub d22: CsrMatrix,
    pub rhs1: Vec<f64>,
    pub rhs2: Vec<f64>,
}

/// Symmetric `2×2`-block operator of the linear Euler–Lagrange system.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseSystem {
    grid: SpaceTimeGrid,
    pub a11: CsrMatrix,
    pub a12: CsrMatrix,
    pub a21: CsrMatrix,
    pub a22: CsrMatrix,
    pub rhs1: Vec<f64>,
    pub rhs2: Vec<f64>,
}

impl BlockSparseSystem {
    /// `A¹¹ = K + D¹¹`, `A²² = K + D²²`, `A¹² = A²¹ = D¹²`.
    pub fn from_parts(grid: SpaceTimeGrid, stiffness: &CsrMatrix, data: &DataBlocks) -> Result<Self> {
        Ok(Self {
            grid,
            a11: stiffness.add(&data.d11)?,
            a12: data.d12.clone(),
            a21: data.d12.clone(),
            a22: stiffness.add(&data.d22)?,
            rhs1: data.rhs1.clone(),
            rhs2: data.rhs2.clone(),
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    /// Number of unknowns, `2·T·H·W`.
    pub fn dim(&self) -> usize {
        2 * self.a11.dim()
    }

    pub fn rhs_stacked(&self) -> Vec<f64> {
        let mut b = self.rhs1.clone();
        b.extend_from_slice(&self.rhs2);
        b
    }

    /// `y ← A x` on stacked `[u¹; u²]` vectors.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.a11.dim();
        let (x1, x2) = x.split_at(n);
        let (y1, y2) = y.split_at_mut(n);
        let shared = [&self.a12, &self.a21, &self.a22]
            .iter()
            .all(|m| Arc::ptr_eq(m.pattern(), self.a11.pattern()));
        if !shared {
            self.a11.mul_vec_into(x1, y1);
            self.a12.mul_vec_add(x2, y1);
            self.a21.mul_vec_into(x1, y2);
            self.a22.mul_vec_add(x2, y2);
            return;
        }
        // One sweep over the shared pattern computes both block rows.
        let pat = self.a11.pattern();
        let (rp, ci) = (pat.row_ptr(), pat.col_idx());
        let (v11, v12, v21, v22) = (self.a11.values(), self.a12.values(), self.a21.values(), self.a22.values());
        let row = |r: usize, out: (&mut f64, &mut f64)| {
            let (mut s1, mut s2) = (0.0, 0.0);
            for p in rp[r]..rp[r + 1] {
                let (a, b) = (x1[ci[p]], x2[ci[p]]);
                s1 += v11[p] * a + v12[p] * b;
                s2 += v21[p] * a + v22[p] * b;
            }
            *out.0 = s1;
            *out.1 = s2;
        };
        if n >= PAR_MIN_ROWS {
            y1.par_iter_mut()
                .zip(y2.par_iter_mut())
                .enumerate()
                .with_min_len(1024)
                .for_each(|(r, (a, b))| row(r, (a, b)));
        } else {
            y1.iter_mut().zip(y2.iter_mut()).enumerate().for_each(|(r, (a, b))| row(r, (a, b)));
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = self.a11.diagonal();
        d.extend(self.a22.diagonal());
        d
    }

    /// Largest relative violation of `A¹¹ = (A¹¹)ᵀ`, `A²² = (A²²)ᵀ`, `A¹² = (A²¹)ᵀ`.
    pub fn asymmetry(&self) -> f64 {
        self.a11
            .asymmetry()
            .max(self.a22.asymmetry())
            .max(self.a12.asymmetry_against(&self.a21))
    }

    /// Discrete quadratic `uᵀAu − 2bᵀu`; the energy `G(u, w)` up to the
    /// constant `‖λ f_t‖²`.
    pub fn quadratic(&self, u: &[f64]) -> f64 {
        let mut au = vec![0.0; u.len()];
        self.apply(u, &mut au);
        let b = self.rhs_stacked();
        u.iter().zip(&au).zip(&b).map(|((x, ax), bx)| x * ax - 2.0 * bx * x).sum()
    }
}

/// Precomputed basis and sparsity pattern for one grid and quadrature rule.
#[derive(Debug, Clone)]
pub struct Assembler {
    grid: SpaceTimeGrid,
    basis: ReferenceBasis,
    pattern: Arc<SparsityPattern>,
}

impl Assembler {
    pub fn new(grid: &SpaceTimeGrid, rule: &QuadratureRule) -> Self {
        Self {
            grid: *grid,
            basis: ReferenceBasis::new(grid, rule),
            pattern: Arc::new(SparsityPattern::for_grid(grid)),
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn basis(&self) -> &ReferenceBasis {
        &self.basis
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    /// Consistent mass matrix `M_ab = ∫ φ_a φ_b`.
    pub fn mass(&self) -> CsrMatrix {
        let b = &self.basis;
        let (mut blocks, _) = self.gather(1, 0, |_, layer, blk, _| {
            for q in 0..b.len() {
                let n = &b.shape[q];
                for r in 0..4 {
                    let s = b.jw[q] * n[4 * layer + r];
                    for c in 0..8 {
                        blk[0][r][c] += s * n[c];
                    }
                }
            }
        });
        CsrMatrix::from_values(Arc::clone(&self.pattern), blocks.remove(0)).expect("pattern sized")
    }

    /// `K_ab = ∫ ∇̄φ_aᵀ (α w̄w̄ᵀ + β Id) ∇̄φ_b`, shared by both flow components.
    pub fn stiffness(&self, w: &VectorField, weights: &ModelWeights) -> Result<CsrMatrix> {
        w.grid().same_as(&self.grid)?;
        let b = &self.basis;
        let tensor = DiffusionTensorField {
            w,
            alpha: weights.alpha,
            beta: weights.beta,
            time_axis_weight: weights.time_axis_weight,
        };
        let (alpha, beta) = (weights.alpha, weights.beta);
        let (mut blocks, _) = self.gather(1, 0, |e, layer, blk, _| {
            for q in 0..b.len() {
                let g = &b.grad[q];
                let jw = b.jw[q];
                let wb = tensor.space_time_velocity(e, &b.shape[q]);
                let mut s = [0.0; 8];
                for a in 0..8 {
                    s[a] = g[a][0] * wb[0] + g[a][1] * wb[1] + g[a][2] * wb[2];
                }
                for r in 0..4 {
                    let a = 4 * layer + r;
                    for c in 0..8 {
                        let lap = g[a][0] * g[c][0] + g[a][1] * g[c][1] + g[a][2] * g[c][2];
                        blk[0][r][c] += jw * (alpha * s[a] * s[c] + beta * lap);
                    }
                }
            }
        });
        Ok(CsrMatrix::from_values(Arc::clone(&self.pattern), blocks.remove(0)).expect("pattern sized"))
    }

    /// `Dⁱʲ_ab = ∫ λ² f_{xⁱ} f_{xʲ} φ_a φ_b` and `bⁱ_a = −∫ λ² f_t f_{xⁱ} φ_a`,
    /// with all coefficients interpolated at the quadrature points.
    pub fn data_blocks(&self, derivs: &ImageDerivatives, lambda: &ScalarField) -> Result<DataBlocks> {
        derivs.check_grid(&self.grid)?;
        lambda.grid().same_as(&self.grid)?;
        check_positive(lambda)?;
        let b = &self.basis;
        let (ft, f1, f2, lam) = (derivs.t.values(), derivs.x1.values(), derivs.x2.values(), lambda.values());
        let (blocks, rhs) = self.gather(3, 2, |e, layer, blk, rhs| {
            for q in 0..b.len() {
                let n = &b.shape[q];
                let l = e.interpolate(lam, n);
                let c = b.jw[q] * l * l;
                let (t, a1, a2) = (e.interpolate(ft, n), e.interpolate(f1, n), e.interpolate(f2, n));
                let (c11, c12, c22) = (c * a1 * a1, c * a1 * a2, c * a2 * a2);
                for r in 0..4 {
                    let na = n[4 * layer + r];
                    for col in 0..8 {
                        let nn = na * n[col];
                        blk[0][r][col] += c11 * nn;
                        blk[1][r][col] += c12 * nn;
                        blk[2][r][col] += c22 * nn;
                    }
                    rhs[0][r] -= c * t * a1 * na;
                    rhs[1][r] -= c * t * a2 * na;
                }
            }
        });
        let mut blocks = blocks.into_iter();
        let mut rhs = rhs.into_iter();
        let mut next = || CsrMatrix::from_values(Arc::clone(&self.pattern), blocks.next().unwrap()).unwrap();
        Ok(DataBlocks {
            d11: next(),
            d12: next(),
            d22: next(),
            rhs1: rhs.next().unwrap(),
            rhs2: rhs.next().unwrap(),
        })
    }

    pub fn system(
        &self,
        derivs: &ImageDerivatives,
        lambda: &ScalarField,
        w: &VectorField,
        weights: &ModelWeights,
    ) -> Result<BlockSparseSystem> {
        let k = self.stiffness(w, weights)?;
        let d = self.data_blocks(derivs, lambda)?;
        BlockSparseSystem::from_parts(self.grid, &k, &d)
    }

    /// Right-hand sides `∫ φ_a ∂f_h` of the L² projection of each partial derivative.
    pub fn projection_rhs(&self, f: &ScalarField) -> Result<[Vec<f64>; 3]> {
        f.grid().same_as(&self.grid)?;
        let b = &self.basis;
        let v = f.values();
        let (_, rhs) = self.gather(0, 3, |e, layer, _, rhs| {
            for q in 0..b.len() {
                let d = e.gradient(v, &b.grad[q]);
                for r in 0..4 {
                    let s = b.jw[q] * b.shape[q][4 * layer + r];
                    rhs[0][r] += s * d[0];
                    rhs[1][r] += s * d[1];
                    rhs[2][r] += s * d[2];
                }
            }
        });
        let mut it = rhs.into_iter();
        Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
    }

    /// L² projection of `(f_t, f_{x¹}, f_{x²})` of the trilinear interpolant onto
    /// the trilinear space. Each component solves `M p = b` by CG.
    pub fn project_derivatives(
        &self,
        f: &ScalarField,
        cfg: &SolverConfig,
    ) -> Result<(ImageDerivatives, [SolveReport; 3])> {
        let mass = self.mass();
        let [bt, b1, b2] = self.projection_rhs(f)?;
        let solve = |b: Vec<f64>| -> Result<(ScalarField, SolveReport)> {
            let (x, report) = solver::pcg(&mass, &b, vec![0.0; b.len()], cfg)?;
            if !report.converged {
                return Err(Error::NotConverged { iterations: report.iterations, residual: report.relative_residual });
            }
            Ok((ScalarField::from_raw(self.grid, x), report))
        };
        let (t, rt) = solve(bt)?;
        let (x1, r1) = solve(b1)?;
        let (x2, r2) = solve(b2)?;
        Ok((ImageDerivatives { t, x1, x2 }, [rt, r1, r2]))
    }

    /// Runs `kernel` over every (element, time layer) pair and scatters the
    /// local rows into `n_blocks` matrices and `n_rhs` vectors.
    fn gather<K>(&self, n_blocks: usize, n_rhs: usize, kernel: K) -> (Vec<Vec<f64>>, Vec<Vec<f64>>)
    where
        K: Fn(&Element, usize, &mut [LocalBlock], &mut [[f64; 4]]) + Sync,
    {
        let g = &self.grid;
        let pat = &*self.pattern;
        let hw = g.frame_len();
        let nt = g.frames();
        let val_bounds: Vec<usize> = (0..=nt).map(|f| pat.row_ptr()[f * hw]).collect();
        let row_bounds: Vec<usize> = (0..=nt).map(|f| f * hw).collect();

        let mut blocks: Vec<Vec<f64>> = (0..n_blocks).map(|_| vec![0.0; pat.nnz()]).collect();
        let mut rhs: Vec<Vec<f64>> = (0..n_rhs).map(|_| vec![0.0; pat.dim()]).collect();

        struct FrameTask<'a> {
            frame: usize,
            blocks: Vec<&'a mut [f64]>,
            rhs: Vec<&'a mut [f64]>,
        }
        let mut tasks: Vec<FrameTask> =
            (0..nt).map(|frame| FrameTask { frame, blocks: Vec::new(), rhs: Vec::new() }).collect();
        for b in blocks.iter_mut() {
            for (task, s) in tasks.iter_mut().zip(split_at_bounds(b, &val_bounds)) {
                task.blocks.push(s);
            }
        }
        for r in rhs.iter_mut() {
            for (task, s) in tasks.iter_mut().zip(split_at_bounds(r, &row_bounds)) {
                task.rhs.push(s);
            }
        }

        tasks.into_par_iter().for_each(|mut task| {
            let f = task.frame;
            let vbase = val_bounds[f];
            let rbase = row_bounds[f];
            let mut local_blocks = vec![[[0.0; 8]; 4]; n_blocks];
            let mut local_rhs = vec![[0.0; 4]; n_rhs];
            let slabs = f.saturating_sub(1)..f.min(nt - 2) + 1;
            for slab in slabs {
                let layer = f - slab;
                for e in slab_elements(g, slab) {
                    local_blocks.iter_mut().for_each(|b| *b = [[0.0; 8]; 4]);
                    local_rhs.iter_mut().for_each(|r| *r = [0.0; 4]);
                    kernel(&e, layer, &mut local_blocks, &mut local_rhs);
                    for r in 0..4 {
                        let row = e.nodes[4 * layer + r];
                        if n_blocks > 0 {
                            for c in 0..8 {
                                let p = pat.position(row, e.nodes[c]).expect("element coupling in pattern") - vbase;
                                for (dst, src) in task.blocks.iter_mut().zip(&local_blocks) {
                                    dst[p] += src[r][c];
                                }
                            }
                        }
                        for (dst, src) in task.rhs.iter_mut().zip(&local_rhs) {
                            dst[row - rbase] += src[r];
                        }
                    }
                }
            }
        });
        (blocks, rhs)
    }
}

fn split_at_bounds<'a>(mut data: &'a mut [f64], bounds: &[usize]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(bounds.len().saturating_sub(1));
    let mut consumed = bounds[0];
    data = &mut data[consumed..];
    for &end in &bounds[1..] {
        let (head, tail) = std::mem::take(&mut data).split_at_mut(end - consumed);
        out.push(head);
        data = tail;
        consumed = end;
    }
    out
}

fn check_positive(lambda: &ScalarField) -> Result<()> {
    match lambda.values().iter().position(|&v| !(v > 0.0)) {
        Some(node) => Err(Error::NonPositiveWeight { node, value: lambda.values()[node] }),
        None => Ok(()),
    }
}

pub fn assemble_mass(grid: &SpaceTimeGrid, rule: &QuadratureRule) -> CsrMatrix {
    Assembler::new(grid, rule).mass()
}

pub fn assemble_stiffness(w: &VectorField, weights: &ModelWeights, rule: &QuadratureRule) -> Result<CsrMatrix> {
    Assembler::new(w.grid(), rule).stiffness(w, weights)
}

pub fn assemble_data_blocks(
    derivs: &ImageDerivatives,
    lambda: &ScalarField,
    rule: &QuadratureRule,
) -> Result<DataBlocks> {
    Assembler::new(lambda.grid(), rule).data_blocks(derivs, lambda)
}

pub fn assemble_system(
    derivs: &ImageDerivatives,
    lambda: &ScalarField,
    w: &VectorField,
    weights: &ModelWeights,
    rule: &QuadratureRule,
) -> Result<BlockSparseSystem> {
    Assembler::new(lambda.grid(), rule).system(derivs, lambda, w, weights)
}

/// Projected partial derivatives of `f`, solved to relative residual `1e-10`.
pub fn project_derivatives(f: &ScalarField, rule: &QuadratureRule) -> Result<ImageDerivatives> {
    let cfg = SolverConfig { rel_tolerance: 1e-10, ..SolverConfig::default() };
    Ok(Assembler::new(f.grid(), rule).project_derivatives(f, &cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: usize, h: usize, w: usize, dt: f64) -> SpaceTimeGrid {
        SpaceTimeGrid::new(t, h, w, dt).unwrap()
    }

    #[test]
    fn single_element_mass() {
        let g = grid(2, 2, 2, 0.125);
        let m = assemble_mass(&g, &QuadratureRule::default());
        for s in m.row_sums() {
            assert!((s - 0.125 / 8.0).abs() < 1e-16);
        }
        // ∫φ² = (1/3)³ of the cell volume for a corner node.
        assert!((m.get(0, 0) - 0.125 / 27.0).abs() < 1e-16);
        // Opposite corners: (1/6)³ of the volume.
        assert!((m.get(0, 7) - 0.125 / 216.0).abs() < 1e-16);
    }

    #[test]
    fn mass_total_is_domain_volume() {
        let g = grid(4, 5, 3, 0.125).with_spacing(0.5).unwrap();
        let m = assemble_mass(&g, &QuadratureRule::default());
        let total: f64 = m.values().iter().sum();
        assert!((total - g.volume()).abs() < 1e-12 * g.volume());
        assert!(m.values().iter().all(|&v| v >= 0.0));
        assert!(m.asymmetry() < 1e-15);
    }

    #[test]
    fn isotropic_stiffness_without_motion() {
        let g = grid(3, 4, 4, 0.125);
        let w = VectorField::zeros(g);
        let k = assemble_stiffness(&w, &ModelWeights::new(0.0, 1.0), &QuadratureRule::default()).unwrap();
        assert!(k.row_sums().iter().all(|s| s.abs() < 1e-10));
        // ∫|∇̄x¹|² = |E|
        let x1: Vec<f64> = (0..g.node_count()).map(|n| g.coords(n).1 as f64).collect();
        assert!((k.bilinear(&x1, &x1) - g.volume()).abs() < 1e-12);
    }

    #[test]
    fn zero_motion_tensor_is_diagonal() {
        // w ≡ 0: tensor diag(α + β, β, β), so the α part only adds time diffusion.
        let g = grid(3, 3, 4, 0.25);
        let w = VectorField::zeros(g);
        let rule = QuadratureRule::default();
        let k = assemble_stiffness(&w, &ModelWeights::new(2.0, 0.5), &rule).unwrap();
        let t: Vec<f64> = (0..g.node_count()).map(|n| g.point(g.coords(n).0, 0, 0)[0]).collect();
        let x2: Vec<f64> = (0..g.node_count()).map(|n| g.coords(n).2 as f64).collect();
        assert!((k.bilinear(&t, &t) - 2.5 * g.volume()).abs() < 1e-12);
        assert!((k.bilinear(&x2, &x2) - 0.5 * g.volume()).abs() < 1e-12);
        assert!(k.bilinear(&t, &x2).abs() < 1e-12);
        assert!(k.row_sums().iter().all(|s| s.abs() < 1e-10));
    }

    #[test]
    fn data_blocks_vanish_without_gradient() {
        let g = grid(3, 3, 3, 0.125);
        let z = ScalarField::zeros(g);
        let d = ImageDerivatives { t: ScalarField::constant(g, 0.3), x1: z.clone(), x2: z.clone() };
        let blocks = assemble_data_blocks(&d, &ScalarField::constant(g, 2.0), &QuadratureRule::default()).unwrap();
        for m in [&blocks.d11, &blocks.d12, &blocks.d22] {
            assert!(m.values().iter().all(|&v| v == 0.0));
        }
        assert!(blocks.rhs1.iter().chain(&blocks.rhs2).all(|&v| v == 0.0));
    }

    #[test]
    fn nonpositive_weight_is_rejected() {
        let g = grid(2, 2, 2, 0.125);
        let z = ScalarField::zeros(g);
        let d = ImageDerivatives { t: z.clone(), x1: z.clone(), x2: z.clone() };
        let mut lam = ScalarField::constant(g, 1.0);
        lam.values_mut()[5] = 0.0;
        let err = assemble_data_blocks(&d, &lam, &QuadratureRule::default()).unwrap_err();
        assert!(matches!(err, Error::NonPositiveWeight { node: 5, .. }));
    }

    #[test]
    fn constant_coefficient_data_block_is_scaled_mass() {
        let g = grid(3, 4, 4, 0.125);
        let rule = QuadratureRule::default();
        let f = ScalarField::from_fn(g, |_, _, x2| x2);
        let d = project_derivatives(&f, &rule).unwrap();
        let lam = ScalarField::constant(g, 3.0);
        let blocks = assemble_data_blocks(&d, &lam, &rule).unwrap();
        let m = assemble_mass(&g, &rule);
        for (a, b) in blocks.d22.values().iter().zip(m.values()) {
            assert!((a - 9.0 * b).abs() < 1e-9 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn projection_reproduces_trilinear_functions() {
        let g = grid(3, 4, 5, 0.125);
        let rule = QuadratureRule::default();
        let d = project_derivatives(&ScalarField::from_fn(g, |_, _, x2| x2), &rule).unwrap();
        assert!(d.x2.values().iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!(d.t.values().iter().chain(d.x1.values()).all(|v| v.abs() < 1e-9));

        let d = project_derivatives(&ScalarField::constant(g, 0.4), &rule).unwrap();
        assert!(d.t.values().iter().chain(d.x1.values()).chain(d.x2.values()).all(|&v| v == 0.0));
    }

    #[test]
    fn split_bounds_partition() {
        let mut v: Vec<f64> = (0..10).map(f64::from).collect();
        let parts = split_at_bounds(&mut v, &[0, 3, 3, 7, 10]);
        let lens: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        assert_eq!(lens, vec![3, 0, 4, 3]);
        assert_eq!(parts[2][0], 3.0);
    }
}
