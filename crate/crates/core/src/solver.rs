//! Preconditioned conjugate gradients for the assembled symmetric systems.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_finite, Error, Result};
use crate::fem::{BlockSparseSystem, CsrMatrix};
use crate::grid::VectorField;

/// Fixed chunk size for reductions; partial sums are combined in order so the
/// result does not depend on the thread count.
const CHUNK: usize = 8192;

/// Upper bound on the default iteration budget.
const MAX_ITERATIONS_CAP: usize = 50_000;

/// Energy checkpoints are recorded every this many iterations.
const CHECKPOINT_EVERY: usize = 10;

/// Accepted relative defect of the random symmetry probe.
const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Jacobi,
    /// Exact block-tridiagonal solve along the time line of every pixel,
    /// coupling both flow components. Falls back to Jacobi for operators
    /// without grid structure.
    TimeLine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rel_tolerance: f64,
    pub abs_tolerance: f64,
    /// `None` means `10 × unknowns`, capped at 50 000.
    pub max_iterations: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tolerance: 1e-8,
            abs_tolerance: 1e-12,
            max_iterations: None,
            preconditioner: Preconditioner::Jacobi,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0) || !(self.abs_tolerance > 0.0) {
            return Err(Error::InvalidParameter { name: "tolerance", reason: "tolerances must be positive".into() });
        }
        if self.max_iterations == Some(0) {
            return Err(Error::InvalidParameter { name: "max_iterations", reason: "must be at least 1".into() });
        }
        Ok(())
    }

    fn iteration_budget(&self, n: usize) -> usize {
        self.max_iterations.unwrap_or_else(|| (10 * n).clamp(1, MAX_ITERATIONS_CAP))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖b − Ax‖ / ‖b‖` of the returned iterate (absolute when `b = 0`).
    pub relative_residual: f64,
    pub converged: bool,
    pub elapsed: Duration,
    /// Mean of each solution block, i.e. its component along the constants.
    pub constant_mode: Vec<f64>,
    /// `½xᵀAx − bᵀx` at the start, every few iterations and at the end.
    pub energy_checkpoints: Vec<f64>,
}

/// Symmetric positive semidefinite operator.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
    /// Number of equally sized blocks the unknowns split into.
    fn blocks(&self) -> usize {
        1
    }

    /// Line factorization for [`Preconditioner::TimeLine`], when available.
    fn time_lines(&self) -> Option<TimeLines> {
        None
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        CsrMatrix::dim(self)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y)
    }

    fn diagonal(&self) -> Vec<f64> {
        CsrMatrix::diagonal(self)
    }
}

impl LinearOperator for BlockSparseSystem {
    fn dim(&self) -> usize {
        BlockSparseSystem::dim(self)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        BlockSparseSystem::apply(self, x, y)
    }

    fn diagonal(&self) -> Vec<f64> {
        BlockSparseSystem::diagonal(self)
    }

    fn blocks(&self) -> usize {
        2
    }

    fn time_lines(&self) -> Option<TimeLines> {
        Some(TimeLines::new(self))
    }
}

type Block = [[f64; 2]; 2];

fn mul(a: &Block, b: &Block) -> Block {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn transpose(a: &Block) -> Block {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// Inverse of a symmetric positive definite 2×2 block; falls back to the
/// inverse diagonal when the block is numerically singular.
fn inverse(a: &Block) -> Block {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = a[0][0].abs().max(a[1][1].abs());
    if det > 1e-14 * scale * scale && det.is_finite() {
        [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
    } else {
        let inv = |d: f64| if d > 0.0 { 1.0 / d } else { 1.0 };
        [[inv(a[0][0]), 0.0], [0.0, inv(a[1][1])]]
    }
}

fn apply_block(a: &Block, x: [f64; 2]) -> [f64; 2] {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

/// Block LDLᵀ factors of the time-line restriction of a block system.
///
/// For the nodes `n_k = k·HW + p` of pixel `p`, `S_k = D_k − L_k S_{k−1}⁻¹ L_kᵀ`
/// where `D_k` couples both components at `n_k` and `L_k` couples `n_k` with
/// `n_{k−1}`.
#[derive(Debug, Clone)]
pub struct TimeLines {
    frames: usize,
    frame_len: usize,
    s_inv: Vec<Block>,
    /// `L_k S_{k−1}⁻¹`.
    gain: Vec<Block>,
    lower: Vec<Block>,
}

impl TimeLines {
    pub fn new(system: &BlockSparseSystem) -> Self {
        let grid = system.grid();
        let (nt, hw) = (grid.frames(), grid.frame_len());
        let entry = |r: usize, c: usize| -> Block {
            [
                [system.a11.get(r, c), system.a12.get(r, c)],
                [system.a21.get(r, c), system.a22.get(r, c)],
            ]
        };
        let n = nt * hw;
        let mut s_inv = vec![[[0.0; 2]; 2]; n];
        let mut gain = vec![[[0.0; 2]; 2]; n];
        let mut lower = vec![[[0.0; 2]; 2]; n];
        for p in 0..hw {
            s_inv[p] = inverse(&entry(p, p));
        }
        for k in 1..nt {
            for p in 0..hw {
                let node = k * hw + p;
                let l = entry(node, node - hw);
                let g = mul(&l, &s_inv[node - hw]);
                let correction = mul(&g, &transpose(&l));
                let mut d = entry(node, node);
                for r in 0..2 {
                    for c in 0..2 {
                        d[r][c] -= correction[r][c];
                    }
                }
                // Symmetrize against roundoff before inverting.
                let off = 0.5 * (d[0][1] + d[1][0]);
                d[0][1] = off;
                d[1][0] = off;
                s_inv[node] = inverse(&d);
                gain[node] = g;
                lower[node] = l;
            }
        }
        Self { frames: nt, frame_len: hw, s_inv, gain, lower }
    }

    /// `z = M⁻¹ r` on stacked `[u¹; u²]` vectors.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let (nt, hw) = (self.frames, self.frame_len);
        let n = nt * hw;
        let (r1, r2) = r.split_at(n);
        let (z1, z2) = z.split_at_mut(n);
        // Forward sweep: y_k = r_k − L_k S_{k−1}⁻¹ y_{k−1}, stored in z.
        for node in 0..n {
            let mut y = [r1[node], r2[node]];
            if node >= hw {
                let prev = [z1[node - hw], z2[node - hw]];
                let c = apply_block(&self.gain[node], prev);
                y[0] -= c[0];
                y[1] -= c[1];
            }
            z1[node] = y[0];
            z2[node] = y[1];
        }
        // Backward sweep: z_k = S_k⁻¹ (y_k − L_{k+1}ᵀ z_{k+1}).
        for node in (0..n).rev() {
            let mut y = [z1[node], z2[node]];
            if node + hw < n {
                let next = [z1[node + hw], z2[node + hw]];
                let c = apply_block(&transpose(&self.lower[node + hw]), next);
                y[0] -= c[0];
                y[1] -= c[1];
            }
            let x = apply_block(&self.s_inv[node], y);
            z1[node] = x[0];
            z2[node] = x[1];
        }
    }
}

enum Preconditioning {
    Diagonal(Vec<f64>),
    Lines(TimeLines),
}

impl Preconditioning {
    fn build<A: LinearOperator + ?Sized>(a: &A, kind: Preconditioner) -> Self {
        let jacobi = || a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
        match kind {
            Preconditioner::None => Preconditioning::Diagonal(vec![1.0; a.dim()]),
            Preconditioner::Jacobi => Preconditioning::Diagonal(jacobi()),
            Preconditioner::TimeLine => match a.time_lines() {
                Some(lines) => Preconditioning::Lines(lines),
                None => Preconditioning::Diagonal(jacobi()),
            },
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioning::Diagonal(d) => z
                .par_iter_mut()
                .with_min_len(CHUNK)
                .zip(r)
                .zip(d)
                .for_each(|((z, r), d)| *z = r * d),
            Preconditioning::Lines(lines) => lines.apply(r, z),
        }
    }
}

/// `y = A x` for the block system; errors on a length mismatch.
pub fn matvec(system: &BlockSparseSystem, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != system.dim() {
        return Err(Error::LengthMismatch { what: "matvec input", got: x.len(), expected: system.dim() });
    }
    let mut y = vec![0.0; system.dim()];
    system.apply(x, &mut y);
    Ok(y)
}

/// Solves the block system starting from `x0`.
pub fn cg_solve(system: &BlockSparseSystem, x0: &VectorField, cfg: &SolverConfig) -> Result<(VectorField, SolveReport)> {
    system.grid().same_as(x0.grid())?;
    check_symmetry(system)?;
    let b = system.rhs_stacked();
    let (x, report) = pcg(system, &b, x0.to_stacked(), cfg)?;
    Ok((VectorField::from_stacked(*system.grid(), &x)?, report))
}

/// Compares `xᵀAy` with `yᵀAx` for one pair of seeded random vectors.
pub fn check_symmetry<A: LinearOperator + ?Sized>(a: &A) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5157);
    let n = a.dim();
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (mut ax, mut ay) = (vec![0.0; n], vec![0.0; n]);
    a.apply(&x, &mut ax);
    a.apply(&y, &mut ay);
    let scale = norm(&x) * norm(&ay) + norm(&y) * norm(&ax);
    let defect = (dot(&x, &ay) - dot(&y, &ax)).abs();
    if scale > 0.0 && defect > SYMMETRY_TOLERANCE * scale {
        return Err(Error::Asymmetric { defect: defect / scale });
    }
    Ok(())
}

/// Preconditioned conjugate gradients on `A x = b`.
///
/// Singular but consistent systems (pure Neumann operators with `b ⊥ ker A`)
/// converge to a solution. Without preconditioning the kernel component of
/// `x0` is left untouched.
pub fn pcg<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    x0: Vec<f64>,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let n = a.dim();
    for (what, len) in [("right-hand side", b.len()), ("initial guess", x0.len())] {
        if len != n {
            return Err(Error::LengthMismatch { what, got: len, expected: n });
        }
    }
    check_finite("right-hand side", b)?;
    check_finite("initial guess", &x0)?;
    let start = Instant::now();

    let pre = Preconditioning::build(a, cfg.preconditioner);

    let mut x = x0;
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    residual(a, b, &x, &mut r);
    let b_norm = norm(b);
    let tol = (cfg.rel_tolerance * b_norm).max(cfg.abs_tolerance);
    let relative = |rn: f64| if b_norm > 0.0 { rn / b_norm } else { rn };
    let mut checkpoints = vec![quadratic_energy(b, &x, &r)];

    let mut z = vec![0.0; n];
    pre.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut r_norm = norm(&r);
    let budget = cfg.iteration_budget(n);
    let mut iterations = 0;
    let mut converged = r_norm <= tol;

    while !converged && iterations < budget {
        iterations += 1;
        a.apply(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !curvature.is_finite() {
            return Err(Error::NonFinite { what: "CG search direction", index: iterations });
        }
        if curvature <= 0.0 {
            return Err(Error::Breakdown { iteration: iterations, curvature });
        }
        let step = rz / curvature;
        axpy(step, &p, &mut x);
        axpy(-step, &ap, &mut r);
        r_norm = norm(&r);
        if !r_norm.is_finite() {
            return Err(Error::NonFinite { what: "CG residual", index: iterations });
        }
        if iterations % CHECKPOINT_EVERY == 0 {
            checkpoints.push(quadratic_energy(b, &x, &r));
        }
        if r_norm <= tol {
            // Confirm against the true residual; restart on drift.
            residual(a, b, &x, &mut r);
            r_norm = norm(&r);
            if r_norm <= tol {
                converged = true;
                break;
            }
            pre.apply(&r, &mut z);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        pre.apply(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        p.par_iter_mut().with_min_len(CHUNK).zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }

    if !converged || iterations % CHECKPOINT_EVERY != 0 {
        residual(a, b, &x, &mut r);
        r_norm = norm(&r);
        converged = r_norm <= tol;
        checkpoints.push(quadratic_energy(b, &x, &r));
    }

    let blocks = a.blocks();
    let len = n / blocks;
    let constant_mode = (0..blocks)
        .map(|c| x[c * len..(c + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let report = SolveReport {
        iterations,
        relative_residual: relative(r_norm),
        converged,
        elapsed: start.elapsed(),
        constant_mode,
        energy_checkpoints: checkpoints,
    };
    log::debug!(
        "cg: {} iterations, relative residual {:.3e}, converged {}",
        report.iterations,
        report.relative_residual,
        report.converged
    );
    Ok((x, report))
}

fn residual<A: LinearOperator + ?Sized>(a: &A, b: &[f64], x: &[f64], r: &mut [f64]) {
    a.apply(x, r);
    r.par_iter_mut().with_min_len(CHUNK).zip(b).for_each(|(r, b)| *r = b - *r);
}

/// `½xᵀAx − bᵀx = −½(bᵀx + rᵀx)` with `r = b − Ax`.
fn quadratic_energy(b: &[f64], x: &[f64], r: &[f64]) -> f64 {
    -0.5 * (dot(b, x) + dot(r, x))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    if a.len() <= CHUNK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    partial.iter().sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().with_min_len(CHUNK).zip(x).for_each(|(y, x)| *y += alpha * x);
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fem::{assemble_mass, QuadratureRule, SparsityPattern};
    use crate::grid::SpaceTimeGrid;

    #[test]
    fn identity_converges_in_one_step() {
        let g = SpaceTimeGrid::new(2, 3, 3, 1.0).unwrap();
        let id = CsrMatrix::identity(Arc::new(SparsityPattern::for_grid(&g)));
        let b: Vec<f64> = (0..id.dim()).map(|i| (i as f64).sin()).collect();
        for pre in [Preconditioner::None, Preconditioner::Jacobi] {
            let cfg = SolverConfig { preconditioner: pre, ..Default::default() };
            let (x, rep) = pcg(&id, &b, vec![0.0; b.len()], &cfg).unwrap();
            assert_eq!(rep.iterations, 1);
            assert!(rep.converged);
            assert!(x.iter().zip(&b).all(|(x, b)| (x - b).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_rhs_from_zero_start_needs_no_iterations() {
        let g = SpaceTimeGrid::new(2, 3, 3, 1.0).unwrap();
        let m = assemble_mass(&g, &QuadratureRule::default());
        let (x, rep) = pcg(&m, &vec![0.0; 18], vec![0.0; 18], &SolverConfig::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = SpaceTimeGrid::new(2, 2, 2, 1.0).unwrap();
        let m = assemble_mass(&g, &QuadratureRule::default());
        assert!(pcg(&m, &[0.0; 7], vec![0.0; 8], &SolverConfig::default()).is_err());
        let mut b = vec![0.0; 8];
        b[2] = f64::INFINITY;
        assert!(matches!(pcg(&m, &b, vec![0.0; 8], &SolverConfig::default()), Err(Error::NonFinite { .. })));
        let bad = SolverConfig { rel_tolerance: 0.0, ..Default::default() };
        assert!(pcg(&m, &[1.0; 8], vec![0.0; 8], &bad).is_err());
    }

    #[test]
    fn indefinite_operator_breaks_down() {
        let g = SpaceTimeGrid::new(2, 2, 2, 1.0).unwrap();
        let neg = assemble_mass(&g, &QuadratureRule::default()).scaled(-1.0);
        let cfg = SolverConfig { preconditioner: Preconditioner::None, ..Default::default() };
        let err = pcg(&neg, &[1.0; 8], vec![0.0; 8], &cfg).unwrap_err();
        assert!(matches!(err, Error::Breakdown { iteration: 1, .. }));
    }

    #[test]
    fn energy_checkpoints_do_not_increase() {
        let g = SpaceTimeGrid::new(4, 6, 6, 0.125).unwrap();
        let m = assemble_mass(&g, &QuadratureRule::default());
        let b: Vec<f64> = (0..m.dim()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let cfg = SolverConfig { rel_tolerance: 1e-12, ..Default::default() };
        let (_, rep) = pcg(&m, &b, vec![0.0; b.len()], &cfg).unwrap();
        assert!(rep.converged);
        assert!(rep.energy_checkpoints.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs()));
    }

    fn sample_system(frames: usize, height: usize, width: usize) -> BlockSparseSystem {
        use crate::derivatives::nodal_derivatives;
        use crate::energy::ModelWeights;
        use crate::fem::Assembler;
        use crate::grid::ScalarField;
        let g = SpaceTimeGrid::new(frames, height, width, 0.125).unwrap();
        let f = ScalarField::from_fn(g, |t, a, b| (0.3 * a + 0.2 * b - t).sin() + 0.1 * a * b);
        let w = VectorField::from_fn(g, |t, a, b| [0.5 + 0.1 * b, -0.3 * a + t]);
        let lambda = ScalarField::from_fn(g, |_, a, _| 1.0 + 0.1 * a);
        let weights = ModelWeights { alpha: 5e-3, beta: 5e-4, time_axis_weight: 1.0 };
        Assembler::new(&g, &QuadratureRule::default()).system(&nodal_derivatives(&f), &lambda, &w, &weights).unwrap()
    }

    #[test]
    fn time_lines_invert_the_line_restriction() {
        let sys = sample_system(7, 2, 3);
        let lines = TimeLines::new(&sys);
        let g = *sys.grid();
        let (n, hw) = (g.node_count(), g.frame_len());
        let x: Vec<f64> = (0..2 * n).map(|i| (i as f64 * 0.7).cos()).collect();
        // Apply only the couplings between a node and itself or its time neighbours.
        let mut mx = vec![0.0; 2 * n];
        for r in 0..n {
            for c in [r.wrapping_sub(hw), r, r + hw] {
                if c < n {
                    mx[r] += sys.a11.get(r, c) * x[c] + sys.a12.get(r, c) * x[n + c];
                    mx[n + r] += sys.a21.get(r, c) * x[c] + sys.a22.get(r, c) * x[n + c];
                }
            }
        }
        let mut z = vec![0.0; 2 * n];
        lines.apply(&mx, &mut z);
        assert!(z.iter().zip(&x).all(|(z, x)| (z - x).abs() < 1e-9));
    }

    #[test]
    fn preconditioners_agree_on_the_solution() {
        let sys = sample_system(4, 5, 6);
        let b = sys.rhs_stacked();
        let mut solutions = Vec::new();
        for pre in [Preconditioner::None, Preconditioner::Jacobi, Preconditioner::TimeLine] {
            let cfg = SolverConfig { preconditioner: pre, rel_tolerance: 1e-12, ..Default::default() };
            let (x, rep) = pcg(&sys, &b, vec![0.0; b.len()], &cfg).unwrap();
            assert!(rep.converged);
            solutions.push((x, rep.iterations));
        }
        let scale = norm(&solutions[0].0);
        for (x, _) in &solutions[1..] {
            let diff: Vec<f64> = x.iter().zip(&solutions[0].0).map(|(a, b)| a - b).collect();
            assert!(norm(&diff) < 1e-9 * scale);
        }
        assert!(solutions[2].1 <= solutions[1].1);
    }

    #[test]
    fn symmetry_probe() {
        let sys = sample_system(3, 3, 4);
        assert!(check_symmetry(&sys).is_ok());
        let mut skewed = sys.clone();
        let v = skewed.a12.values_mut();
        v[0] += 1.0;
        assert!(matches!(check_symmetry(&skewed), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn dot_is_independent_of_chunking_order() {
        let a: Vec<f64> = (0..3 * CHUNK + 17).map(|i| (i as f64 * 0.37).cos()).collect();
        let d = dot(&a, &a);
        let again = dot(&a, &a);
        assert_eq!(d.to_bits(), again.to_bits());
        let naive: f64 = a.iter().map(|x| x * x).sum();
        assert!((d - naive).abs() < 1e-10 * naive);
    }
}
