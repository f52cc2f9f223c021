//! Quadrature evaluation of the three terms of the flow functional.
//!
//! The integrands are evaluated directly from the trilinear interpolants at the
//! quadrature points, independently of the assembled matrices.

use rayon::prelude::*;

use crate::derivatives::ImageDerivatives;
use crate::error::{Error, Result};
use crate::fem::{slab_elements, QuadratureRule, ReferenceBasis};
use crate::grid::{ScalarField, VectorField};

/// Regularization weights and the time entry of `w̄ = (c, wᵀ)ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelWeights {
    /// Convective weight `α`.
    pub alpha: f64,
    /// Isotropic weight `β`.
    pub beta: f64,
    /// Leading entry `c` of the space-time velocity; 1 in physical time units.
    pub time_axis_weight: f64,
}

impl ModelWeights {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta, time_axis_weight: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter { name: "alpha", reason: format!("must be ≥ 0, got {}", self.alpha) });
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter { name: "beta", reason: format!("must be ≥ 0, got {}", self.beta) });
        }
        if !self.time_axis_weight.is_finite() {
            return Err(Error::InvalidParameter { name: "time_axis_weight", reason: "must be finite".into() });
        }
        Ok(())
    }
}

/// `data = ‖λ D_u f‖²`, `convective = ‖D_w u‖²`, `isotropic = ‖∇̄u‖²` and
/// `total = data + α·convective + β·isotropic`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub data: f64,
    pub convective: f64,
    pub isotropic: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(data: f64, convective: f64, isotropic: f64, w: &ModelWeights) -> Self {
        Self { data, convective, isotropic, total: data + w.alpha * convective + w.beta * isotropic }
    }
}

/// `E(u) = G(u, u)`.
pub fn energy(
    u: &VectorField,
    derivs: &ImageDerivatives,
    lambda: &ScalarField,
    weights: &ModelWeights,
    rule: &QuadratureRule,
) -> Result<EnergyBreakdown> {
    surrogate_energy(u, u, derivs, lambda, weights, rule)
}

/// `G(u, w) = ‖λ D_u f‖² + α ‖D_w u‖² + β ‖∇̄u‖²`, where
/// `D_w u = ∇̄u w̄` is the derivative of `u` along the lagged field `w`.
pub fn surrogate_energy(
    u: &VectorField,
    w: &VectorField,
    derivs: &ImageDerivatives,
    lambda: &ScalarField,
    weights: &ModelWeights,
    rule: &QuadratureRule,
) -> Result<EnergyBreakdown> {
    weights.validate()?;
    let grid = *u.grid();
    grid.same_as(w.grid())?;
    grid.same_as(lambda.grid())?;
    derivs.check_grid(&grid)?;
    if let Some(node) = lambda.values().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonPositiveWeight { node, value: lambda.values()[node] });
    }

    let basis = ReferenceBasis::new(&grid, rule);
    let (u1, u2) = (u.u1(), u.u2());
    let (w1, w2) = (w.u1(), w.u2());
    let (ft, f1, f2, lam) = (derivs.t.values(), derivs.x1.values(), derivs.x2.values(), lambda.values());
    let c = weights.time_axis_weight;

    let per_slab: Vec<[f64; 3]> = (0..grid.frames() - 1)
        .into_par_iter()
        .map(|k| {
            let mut acc = [0.0; 3];
            for e in slab_elements(&grid, k) {
                for q in 0..basis.len() {
                    let (n, g, jw) = (&basis.shape[q], &basis.grad[q], basis.jw[q]);
                    let transport = e.interpolate(ft, n)
                        + e.interpolate(f1, n) * e.interpolate(u1, n)
                        + e.interpolate(f2, n) * e.interpolate(u2, n);
                    let weighted = e.interpolate(lam, n) * transport;
                    let wb = [c, e.interpolate(w1, n), e.interpolate(w2, n)];
                    let g1 = e.gradient(u1, g);
                    let g2 = e.gradient(u2, g);
                    let d1 = g1[0] * wb[0] + g1[1] * wb[1] + g1[2] * wb[2];
                    let d2 = g2[0] * wb[0] + g2[1] * wb[1] + g2[2] * wb[2];
                    acc[0] += jw * weighted * weighted;
                    acc[1] += jw * (d1 * d1 + d2 * d2);
                    acc[2] += jw * (g1.iter().map(|v| v * v).sum::<f64>() + g2.iter().map(|v| v * v).sum::<f64>());
                }
            }
            acc
        })
        .collect();
    let [data, conv, iso] = per_slab
        .iter()
        .fold([0.0; 3], |s, p| [s[0] + p[0], s[1] + p[1], s[2] + p[2]]);
    Ok(EnergyBreakdown::new(data, conv, iso, weights))
}
