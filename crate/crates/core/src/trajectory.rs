//! Particle trajectories of a discrete velocity field and their curvature.

use crate::derivatives::convective_acceleration;
use crate::error::{Error, Result};
use crate::grid::VectorField;

/// Speeds below this make the curvature undefined.
pub const DEFAULT_STAGNATION_SPEED: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    /// Interpolated convective acceleration `D_u u`.
    pub acceleration: [f64; 2],
    /// `None` at stagnation points.
    pub curvature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub x0: [f64; 2],
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectorySample {
        self.samples.last().expect("a trajectory holds at least its start")
    }
}

/// Default integration step, a quarter of the frame spacing.
pub fn default_step(u: &VectorField) -> f64 {
    u.grid().dt() / 4.0
}

/// One classical Runge–Kutta step of `x' = v(t, x)`; `h` may be negative.
pub(crate) fn rk4_step(v: impl Fn(f64, [f64; 2]) -> [f64; 2], t: f64, x: [f64; 2], h: f64) -> [f64; 2] {
    let shift = |x: [f64; 2], k: [f64; 2], s: f64| [x[0] + s * k[0], x[1] + s * k[1]];
    let k1 = v(t, x);
    let k2 = v(t + h / 2.0, shift(x, k1, h / 2.0));
    let k3 = v(t + h / 2.0, shift(x, k2, h / 2.0));
    let k4 = v(t + h, shift(x, k3, h));
    [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

fn signed_curvature(v: [f64; 2], a: [f64; 2], eps_speed: f64) -> Result<f64> {
    let speed = v[0].hypot(v[1]);
    if !(speed > eps_speed) {
        return Err(Error::Stagnation { speed, threshold: eps_speed });
    }
    // u⊥ = (−u², u¹)
    Ok((-v[1] * a[0] + v[0] * a[1]) / speed.powi(3))
}

/// Curvature `κ = u⊥·D_u u / |u|³` of the trajectory through `(t, x)`.
pub fn curvature(u: &VectorField, t: f64, x: [f64; 2], eps_speed: f64) -> Result<f64> {
    let grid = u.grid();
    if !grid.contains(t, x) {
        return Err(Error::OutsideDomain { t, x1: x[0], x2: x[1] });
    }
    let acc = convective_acceleration(u);
    signed_curvature(u.sample(t, x), acc.sample(t, x), eps_speed)
}

/// Integrates `γ' = u(t, γ)` from `(t0, x0)` with fixed RK4 steps and trilinear
/// interpolation of `u`. Stops at the final time or before leaving the domain.
pub fn integrate_trajectory(u: &VectorField, t0: f64, x0: [f64; 2], step: f64) -> Result<Trajectory> {
    let grid = *u.grid();
    if !grid.contains(t0, x0) {
        return Err(Error::OutsideDomain { t: t0, x1: x0[0], x2: x0[1] });
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter { name: "step", reason: format!("must be positive, got {step}") });
    }
    let acc = convective_acceleration(u);
    let sample = |t: f64, x: [f64; 2]| {
        let v = u.sample(t, x);
        let a = acc.sample(t, x);
        TrajectorySample { t, position: x, velocity: v, acceleration: a, curvature: signed_curvature(v, a, DEFAULT_STAGNATION_SPEED).ok() }
    };
    let t_end = grid.duration();
    let mut samples = vec![sample(t0, x0)];
    let (mut t, mut x) = (t0, x0);
    let mut n = 0usize;
    while t_end - t > 1e-12 * t_end.max(1.0) {
        let next_t = (t0 + (n + 1) as f64 * step).min(t_end);
        let next_x = rk4_step(|s, y| u.sample(s, y), t, x, next_t - t);
        if !grid.contains(next_t, next_x) {
            break;
        }
        n += 1;
        t = next_t;
        x = next_x;
        samples.push(sample(t, x));
    }
    Ok(Trajectory { t0, x0, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceTimeGrid;

    #[test]
    fn constant_field_gives_exact_lines() {
        let g = SpaceTimeGrid::new(9, 12, 12, 0.125).unwrap();
        let u = VectorField::constant(g, [1.0, 0.0]);
        let tr = integrate_trajectory(&u, 0.25, [2.0, 3.0], default_step(&u)).unwrap();
        assert!(tr.samples.len() > 2);
        for s in &tr.samples {
            assert!((s.position[0] - (2.0 + (s.t - 0.25))).abs() < 1e-14);
            assert_eq!(s.position[1], 3.0);
            assert_eq!(s.curvature, Some(0.0));
        }
        assert!((tr.last().t - g.duration()).abs() < 1e-12);
    }

    #[test]
    fn stops_before_leaving_the_domain() {
        let g = SpaceTimeGrid::new(9, 5, 5, 1.0).unwrap();
        let u = VectorField::constant(g, [0.0, 1.0]);
        let tr = integrate_trajectory(&u, 0.0, [2.0, 1.0], 0.5).unwrap();
        assert!((tr.last().position[1] - 4.0).abs() < 1e-12);
        assert!(tr.last().t < g.duration());
        assert!(tr.samples.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn start_outside_is_an_error() {
        let g = SpaceTimeGrid::new(3, 5, 5, 1.0).unwrap();
        let u = VectorField::zeros(g);
        assert!(matches!(integrate_trajectory(&u, 0.0, [5.0, 1.0], 0.1), Err(Error::OutsideDomain { .. })));
        assert!(integrate_trajectory(&u, 0.0, [1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn stagnation_is_reported() {
        let g = SpaceTimeGrid::new(3, 5, 5, 1.0).unwrap();
        let u = VectorField::zeros(g);
        assert!(matches!(curvature(&u, 1.0, [2.0, 2.0], DEFAULT_STAGNATION_SPEED), Err(Error::Stagnation { .. })));
    }

    #[test]
    fn rotation_curvature_is_inverse_radius() {
        let g = SpaceTimeGrid::new(3, 9, 9, 0.125).unwrap();
        let c = [4.0, 4.0];
        let u = VectorField::from_fn(g, |_, x1, x2| [-(x2 - c[1]), x1 - c[0]]);
        let k1 = curvature(&u, 0.125, [5.0, 4.0], DEFAULT_STAGNATION_SPEED).unwrap();
        let k2 = curvature(&u, 0.125, [4.0, 6.0], DEFAULT_STAGNATION_SPEED).unwrap();
        assert!((k1 - 1.0).abs() < 1e-12);
        assert!((k2 - 0.5).abs() < 1e-12);
        // At unit speed |κ| equals |D_u u|.
        let a = convective_acceleration(&u).sample(0.125, [5.0, 4.0]);
        assert!((a[0].hypot(a[1]) - k1.abs()).abs() < 1e-12);
    }
}
