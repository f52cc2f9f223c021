//! Contrast-normalized data weight and the lagged-coefficient flow iteration.
//!
//! The estimate starts from a time-regularized Horn–Schunck solution
//! (`α = 0`, `β = β₀`). Each outer step then minimizes the convex surrogate
//! `G(·, u_k)` with weights `(α₁, β₁)`, warm-starting CG from `u_k`.

use std::fmt;

use crate::derivatives::ImageDerivatives;
use crate::energy::{surrogate_energy, EnergyBreakdown, ModelWeights};
use crate::error::{Error, Result};
use crate::fem::{slab_elements, Assembler, BlockSparseSystem, CsrMatrix, QuadratureRule, ReferenceBasis};
use crate::grid::{ImageSequence, ScalarField, SpaceTimeGrid, VectorField};
use crate::solver::{self, cg_solve, Preconditioner, SolveReport, SolverConfig};

/// Relative residual used for the L² projection of the image derivatives.
pub const PROJECTION_TOLERANCE: f64 = 1e-10;

/// How the data term is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DataWeighting {
    /// `λ = 1/√(|∇̄f|² + ε²)`.
    #[default]
    Gradient,
    /// `λ ≡ 1`, the unnormalized data term.
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    /// Convective weight `α₁` of the outer iterations.
    pub alpha1: f64,
    /// Isotropic weight `β₁` of the outer iterations.
    pub beta1: f64,
    /// Isotropic weight `β₀` of the initialization.
    pub beta0: f64,
    /// Floor `ε` of the gradient weight.
    pub epsilon: f64,
    pub time_axis_weight: f64,
    pub max_outer_iterations: usize,
    /// Stop once `‖u_{k+1} − u_k‖ / ‖u_k‖` falls below this.
    pub stabilization_tol: f64,
    pub solver: SolverConfig,
    /// Gauss points per axis.
    pub quadrature: usize,
    pub weighting: DataWeighting,
}

impl FlowParams {
    /// Defaults with `β₀ = α₁`, falling back to `β₁` for the purely isotropic
    /// model `α₁ = 0`.
    pub fn new(alpha1: f64, beta1: f64) -> Self {
        Self {
            alpha1,
            beta1,
            beta0: if alpha1 > 0.0 { alpha1 } else { beta1 },
            epsilon: 0.01,
            time_axis_weight: 1.0,
            max_outer_iterations: 8,
            stabilization_tol: 1e-3,
            solver: SolverConfig { preconditioner: Preconditioner::TimeLine, ..SolverConfig::default() },
            quadrature: 2,
            weighting: DataWeighting::Gradient,
        }
    }

    /// Parameters used for the traffic scenes: `α = 5e-3`, `β = 5e-4`.
    pub fn traffic() -> Self {
        Self::new(5e-3, 5e-4)
    }

    /// Parameters used for the car scene: `α = 1e-3`, `β = 5e-5`.
    pub fn passat() -> Self {
        Self::new(1e-3, 5e-5)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, reason: format!("must be positive, got {v}") })
            }
        };
        if !(self.alpha1 >= 0.0 && self.alpha1.is_finite()) {
            return Err(Error::InvalidParameter { name: "alpha1", reason: format!("must be ≥ 0, got {}", self.alpha1) });
        }
        positive("beta1", self.beta1)?;
        positive("beta0", self.beta0)?;
        positive("epsilon", self.epsilon)?;
        positive("stabilization_tol", self.stabilization_tol)?;
        if self.max_outer_iterations == 0 {
            return Err(Error::InvalidParameter { name: "max_outer_iterations", reason: "must be at least 1".into() });
        }
        self.outer_weights().validate()?;
        self.solver.validate()?;
        QuadratureRule::gauss(self.quadrature)?;
        Ok(())
    }

    pub fn init_weights(&self) -> ModelWeights {
        ModelWeights { alpha: 0.0, beta: self.beta0, time_axis_weight: self.time_axis_weight }
    }

    pub fn outer_weights(&self) -> ModelWeights {
        ModelWeights { alpha: self.alpha1, beta: self.beta1, time_axis_weight: self.time_axis_weight }
    }
}

/// One outer step `u_k → u_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterIteration {
    pub k: usize,
    /// `E(u_k)` with weights `(α₁, β₁)`.
    pub energy: EnergyBreakdown,
    /// `G(u_{k+1}, u_k)`.
    pub surrogate: EnergyBreakdown,
    /// Tolerance implied by the inexact inner solve, `10·rel_tol·‖b‖`.
    pub slack: f64,
    /// `‖u_{k+1} − u_k‖ / ‖u_k‖` in L².
    pub step_norm: f64,
    pub solve: SolveReport,
}

impl OuterIteration {
    /// `G(u_{k+1}, u_k) ≤ E(u_k)` up to the inner solver tolerance.
    pub fn surrogate_bound_holds(&self) -> bool {
        self.surrogate.total <= self.energy.total + self.slack + 1e-12 * self.energy.total.abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub init: Option<SolveReport>,
    pub iterations: Vec<OuterIteration>,
    /// Whether the step norm fell below the stabilization tolerance.
    pub stabilized: bool,
}

impl IterationTrace {
    fn new(init: Option<SolveReport>) -> Self {
        Self { init, iterations: Vec::new(), stabilized: false }
    }

    pub fn last_step_norm(&self) -> Option<f64> {
        self.iterations.last().map(|it| it.step_norm)
    }

    pub fn total_cg_iterations(&self) -> usize {
        self.init.as_ref().map_or(0, |r| r.iterations) + self.iterations.iter().map(|it| it.solve.iterations).sum::<usize>()
    }
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug)]
pub struct IterationFailure {
    pub error: Error,
    pub trace: IterationTrace,
}

impl fmt::Display for IterationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} outer iterations)", self.error, self.trace.iterations.len())
    }
}

impl std::error::Error for IterationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<IterationFailure> for Error {
    fn from(f: IterationFailure) -> Self {
        f.error
    }
}

/// `λ = 1/√(f_t² + f_{x¹}² + f_{x²}² + ε²)` at every node.
pub fn compute_weight(derivs: &ImageDerivatives, epsilon: f64) -> Result<ScalarField> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter { name: "epsilon", reason: format!("must be positive, got {epsilon}") });
    }
    let (t, a, b) = (derivs.t.values(), derivs.x1.values(), derivs.x2.values());
    let values = (0..t.len())
        .map(|n| 1.0 / (t[n] * t[n] + a[n] * a[n] + b[n] * b[n] + epsilon * epsilon).sqrt())
        .collect();
    ScalarField::new(*derivs.grid(), values)
}

/// Projected derivatives, data weight and cached operators of one sequence.
/// The weight depends on the sequence only and is computed once.
#[derive(Debug, Clone)]
pub struct FlowProblem {
    params: FlowParams,
    rule: QuadratureRule,
    assembler: Assembler,
    mass: CsrMatrix,
    derivs: ImageDerivatives,
    lambda: ScalarField,
}

impl FlowProblem {
    pub fn new(seq: &ImageSequence, params: &FlowParams) -> Result<Self> {
        params.validate()?;
        let rule = QuadratureRule::gauss(params.quadrature)?;
        let assembler = Assembler::new(seq.grid(), &rule);
        let cfg = SolverConfig { rel_tolerance: PROJECTION_TOLERANCE, ..params.solver.clone() };
        let (derivs, _) = assembler.project_derivatives(seq, &cfg)?;
        Self::assemble(params, rule, assembler, derivs)
    }

    /// Uses the given derivatives instead of projecting them from a sequence.
    pub fn from_derivatives(derivs: ImageDerivatives, params: &FlowParams) -> Result<Self> {
        params.validate()?;
        let rule = QuadratureRule::gauss(params.quadrature)?;
        let assembler = Assembler::new(derivs.grid(), &rule);
        Self::assemble(params, rule, assembler, derivs)
    }

    fn assemble(params: &FlowParams, rule: QuadratureRule, assembler: Assembler, derivs: ImageDerivatives) -> Result<Self> {
        let lambda = match params.weighting {
            DataWeighting::Gradient => compute_weight(&derivs, params.epsilon)?,
            DataWeighting::Unit => ScalarField::constant(*derivs.grid(), 1.0),
        };
        let mass = assembler.mass();
        Ok(Self { params: params.clone(), rule, assembler, mass, derivs, lambda })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        self.assembler.grid()
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn derivatives(&self) -> &ImageDerivatives {
        &self.derivs
    }

    pub fn lambda(&self) -> &ScalarField {
        &self.lambda
    }

    pub fn system(&self, w: &VectorField, weights: &ModelWeights) -> Result<BlockSparseSystem> {
        self.assembler.system(&self.derivs, &self.lambda, w, weights)
    }

    /// `E(u)` with the outer weights `(α₁, β₁)`.
    pub fn energy(&self, u: &VectorField) -> Result<EnergyBreakdown> {
        self.surrogate(u, u)
    }

    /// `G(u, w)` with the outer weights `(α₁, β₁)`.
    pub fn surrogate(&self, u: &VectorField, w: &VectorField) -> Result<EnergyBreakdown> {
        surrogate_energy(u, w, &self.derivs, &self.lambda, &self.params.outer_weights(), &self.rule)
    }

    /// L² norm of a vector field.
    pub fn l2_norm(&self, u: &VectorField) -> f64 {
        let q = self.mass.bilinear(u.u1(), u.u1()) + self.mass.bilinear(u.u2(), u.u2());
        q.max(0.0).sqrt()
    }

    /// `‖u − w‖ / ‖w‖`; zero when both vanish.
    pub fn relative_step(&self, u: &VectorField, w: &VectorField) -> Result<f64> {
        let diff = u.combine(1.0, w, -1.0)?;
        let (d, n) = (self.l2_norm(&diff), self.l2_norm(w));
        Ok(if d == 0.0 {
            0.0
        } else if n == 0.0 {
            f64::INFINITY
        } else {
            d / n
        })
    }

    /// Minimizer of `‖λ D_u f‖² + β₀‖∇̄u‖²`, solved from a zero initial guess.
    pub fn horn_schunck_init(&self) -> Result<(VectorField, SolveReport)> {
        let zero = VectorField::zeros(*self.grid());
        let system = self.system(&zero, &self.params.init_weights())?;
        solve_checked(&system, &zero, &self.params.solver)
    }

    /// Initialization followed by the outer iterations.
    pub fn run(&self) -> Result<(VectorField, IterationTrace), IterationFailure> {
        let (u0, report) = self
            .horn_schunck_init()
            .map_err(|error| IterationFailure { error, trace: IterationTrace::new(None) })?;
        self.iterate_from(u0, Some(report))
    }

    /// Outer iterations from a given `u_0`.
    pub fn iterate_from(
        &self,
        u0: VectorField,
        init: Option<SolveReport>,
    ) -> Result<(VectorField, IterationTrace), IterationFailure> {
        let mut trace = IterationTrace::new(init);
        let mut u = u0;
        let weights = self.params.outer_weights();
        for k in 0..self.params.max_outer_iterations {
            match self.outer_step(k, &u, &weights) {
                Ok((next, record)) => {
                    let step = record.step_norm;
                    log::info!(
                        "outer {k}: E = {:.6e}, G = {:.6e}, step = {:.3e}, cg = {}",
                        record.energy.total,
                        record.surrogate.total,
                        step,
                        record.solve.iterations
                    );
                    trace.iterations.push(record);
                    u = next;
                    if step < self.params.stabilization_tol {
                        trace.stabilized = true;
                        break;
                    }
                }
                Err(error) => return Err(IterationFailure { error, trace }),
            }
        }
        Ok((u, trace))
    }

    fn outer_step(&self, k: usize, u: &VectorField, weights: &ModelWeights) -> Result<(VectorField, OuterIteration)> {
        let system = self.system(u, weights)?;
        let energy = self.energy(u)?;
        let (next, solve) = solve_checked(&system, u, &self.params.solver)?;
        let surrogate = self.surrogate(&next, u)?;
        let slack = 10.0 * self.params.solver.rel_tolerance * solver::norm(&system.rhs_stacked());
        let step_norm = self.relative_step(&next, u)?;
        Ok((next, OuterIteration { k, energy, surrogate, slack, step_norm, solve }))
    }
}

fn solve_checked(system: &BlockSparseSystem, x0: &VectorField, cfg: &SolverConfig) -> Result<(VectorField, SolveReport)> {
    let (u, report) = cg_solve(system, x0, cfg)?;
    if !report.converged {
        return Err(Error::NotConverged { iterations: report.iterations, residual: report.relative_residual });
    }
    Ok((u, report))
}

/// Time-regularized Horn–Schunck estimate `u₀`.
pub fn horn_schunck_init(seq: &ImageSequence, params: &FlowParams) -> Result<(VectorField, SolveReport)> {
    FlowProblem::new(seq, params)?.horn_schunck_init()
}

/// Full scheme: initialization and lagged convective iterations.
pub fn convective_iterate(
    seq: &ImageSequence,
    params: &FlowParams,
) -> Result<(VectorField, IterationTrace), IterationFailure> {
    let problem = FlowProblem::new(seq, params)
        .map_err(|error| IterationFailure { error, trace: IterationTrace::new(None) })?;
    problem.run()
}

/// Gradient of the discrete energy split by term; `total()` weighs them.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualParts {
    pub data: VectorField,
    pub convective: VectorField,
    pub isotropic: VectorField,
    pub alpha: f64,
    pub beta: f64,
}

impl ResidualParts {
    /// `α·convective + β·isotropic`.
    pub fn regularizer(&self) -> VectorField {
        self.convective.combine(self.alpha, &self.isotropic, self.beta).expect("same grid")
    }

    pub fn total(&self) -> VectorField {
        self.data.combine(1.0, &self.regularizer(), 1.0).expect("same grid")
    }
}

/// Gradient of the full discrete `E` with respect to the nodal values of `u`,
/// including the transport term that the lagged scheme drops.
pub fn el_residual(
    u: &VectorField,
    derivs: &ImageDerivatives,
    lambda: &ScalarField,
    weights: &ModelWeights,
    rule: &QuadratureRule,
) -> Result<VectorField> {
    Ok(el_residual_parts(u, derivs, lambda, weights, rule)?.total())
}

pub fn el_residual_parts(
    u: &VectorField,
    derivs: &ImageDerivatives,
    lambda: &ScalarField,
    weights: &ModelWeights,
    rule: &QuadratureRule,
) -> Result<ResidualParts> {
    weights.validate()?;
    let grid = *u.grid();
    grid.same_as(lambda.grid())?;
    derivs.check_grid(&grid)?;
    if let Some(node) = lambda.values().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonPositiveWeight { node, value: lambda.values()[node] });
    }
    let basis = ReferenceBasis::new(&grid, rule);
    let n = grid.node_count();
    let c = weights.time_axis_weight;
    let (u1, u2) = (u.u1(), u.u2());
    let (ft, f1, f2, lam) = (derivs.t.values(), derivs.x1.values(), derivs.x2.values(), lambda.values());
    let mut data = [vec![0.0; n], vec![0.0; n]];
    let mut conv = [vec![0.0; n], vec![0.0; n]];
    let mut iso = [vec![0.0; n], vec![0.0; n]];

    for k in 0..grid.frames() - 1 {
        for e in slab_elements(&grid, k) {
            for q in 0..basis.len() {
                let (sh, g, jw) = (&basis.shape[q], &basis.grad[q], basis.jw[q]);
                let l = e.interpolate(lam, sh);
                let fx = [e.interpolate(f1, sh), e.interpolate(f2, sh)];
                let uq = [e.interpolate(u1, sh), e.interpolate(u2, sh)];
                let r = e.interpolate(ft, sh) + fx[0] * uq[0] + fx[1] * uq[1];
                let ub = [c, uq[0], uq[1]];
                let gu = [e.gradient(u1, g), e.gradient(u2, g)];
                let d = [
                    gu[0][0] * ub[0] + gu[0][1] * ub[1] + gu[0][2] * ub[2],
                    gu[1][0] * ub[0] + gu[1][1] * ub[1] + gu[1][2] * ub[2],
                ];
                for a in 0..8 {
                    let node = e.nodes[a];
                    let phi = sh[a];
                    let ga = g[a];
                    let transport = ga[0] * ub[0] + ga[1] * ub[1] + ga[2] * ub[2];
                    for m in 0..2 {
                        data[m][node] += jw * 2.0 * l * l * r * fx[m] * phi;
                        // ∂_{x^m} uⁱ sits in gradient slot m + 1.
                        let coupling = d[0] * gu[0][m + 1] + d[1] * gu[1][m + 1];
                        conv[m][node] += jw * 2.0 * (d[m] * transport + phi * coupling);
                        iso[m][node] += jw * 2.0 * (gu[m][0] * ga[0] + gu[m][1] * ga[1] + gu[m][2] * ga[2]);
                    }
                }
            }
        }
    }
    let field = |[a, b]: [Vec<f64>; 2]| VectorField::from_raw(grid, a, b);
    Ok(ResidualParts {
        data: field(data),
        convective: field(conv),
        isotropic: field(iso),
        alpha: weights.alpha,
        beta: weights.beta,
    })
}

/// `|⟨f_{x¹}, f_{x²}⟩| / (‖f_{x¹}‖ ‖f_{x²}‖)` in L². Values below 1 mean the
/// spatial derivatives are linearly independent. Returns 1 with a warning when
/// either derivative vanishes.
pub fn check_linear_independence(derivs: &ImageDerivatives) -> f64 {
    let grid = *derivs.grid();
    let basis = ReferenceBasis::new(&grid, &QuadratureRule::default());
    let (f1, f2) = (derivs.x1.values(), derivs.x2.values());
    let (mut cross, mut n1, mut n2) = (0.0, 0.0, 0.0);
    for k in 0..grid.frames() - 1 {
        for e in slab_elements(&grid, k) {
            for q in 0..basis.len() {
                let (a, b) = (e.interpolate(f1, &basis.shape[q]), e.interpolate(f2, &basis.shape[q]));
                cross += basis.jw[q] * a * b;
                n1 += basis.jw[q] * a * a;
                n2 += basis.jw[q] * b * b;
            }
        }
    }
    if n1 == 0.0 || n2 == 0.0 {
        log::warn!("a spatial image derivative vanishes identically; the data term is degenerate");
        return 1.0;
    }
    let ratio = (cross.abs() / (n1.sqrt() * n2.sqrt())).min(1.0);
    if ratio > 1.0 - 1e-9 {
        log::warn!("spatial image derivatives are linearly dependent (ratio {ratio:.6})");
    }
    ratio
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: usize, h: usize, w: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(t, h, w, 0.125).unwrap()
    }

    #[test]
    fn weight_examples() {
        let g = grid(2, 3, 3);
        let z = ScalarField::zeros(g);
        let d = ImageDerivatives { t: z.clone(), x1: z.clone(), x2: z.clone() };
        let lam = compute_weight(&d, 0.01).unwrap();
        assert!(lam.values().iter().all(|&v| (v - 100.0).abs() < 1e-10));

        let d = ImageDerivatives { t: ScalarField::constant(g, 0.6), x1: ScalarField::constant(g, 0.8), x2: z };
        let lam = compute_weight(&d, 1e-12).unwrap();
        assert!(lam.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(compute_weight(&d, 0.0).is_err());
    }

    #[test]
    fn static_sequence_stays_at_rest() {
        let g = grid(3, 5, 5);
        let f = ScalarField::from_fn(g, |_, x1, x2| (0.3 * x1).sin() * (0.2 * x2).cos());
        let (u, trace) = convective_iterate(&f, &FlowParams::new(1e-2, 1e-3)).unwrap();
        assert!(u.u1().iter().chain(u.u2()).all(|v| v.abs() < 1e-12));
        assert_eq!(trace.iterations.len(), 1);
        assert!(trace.stabilized);
    }

    #[test]
    fn isotropic_model_needs_a_positive_init_weight() {
        let p = FlowParams::new(0.0, 5e-4);
        assert_eq!(p.beta0, 5e-4);
        assert!(p.validate().is_ok());
        let p = FlowParams { beta0: 0.0, ..p };
        assert!(matches!(p.validate(), Err(Error::InvalidParameter { name: "beta0", .. })));
    }

    #[test]
    fn independence_of_bilinear_image() {
        let g = SpaceTimeGrid::new(2, 5, 5, 1.0).unwrap().with_spacing(0.25).unwrap();
        let d = ImageDerivatives {
            t: ScalarField::zeros(g),
            x1: ScalarField::from_fn(g, |_, _, x2| x2),
            x2: ScalarField::from_fn(g, |_, x1, _| x1),
        };
        assert!((check_linear_independence(&d) - 0.75).abs() < 1e-12);
        let d = ImageDerivatives { t: ScalarField::zeros(g), x1: ScalarField::constant(g, 1.0), x2: ScalarField::constant(g, 1.0) };
        assert!((check_linear_independence(&d) - 1.0).abs() < 1e-12);
        let d = ImageDerivatives { x2: ScalarField::zeros(g), ..d };
        assert_eq!(check_linear_independence(&d), 1.0);
    }
}
