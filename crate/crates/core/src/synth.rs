//! Closed-form flow fields, synthetic sequences with known motion and error
//! metrics.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_finite, Error, Result};
use crate::grid::{ImageSequence, ScalarField, SpaceTimeGrid, VectorField};
use crate::trajectory::rk4_step;

/// Scalar profile `g` used by the analytic fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    Identity,
    /// `slope·s + offset`.
    Affine { slope: f64, offset: f64 },
    /// `offset + amplitude·cos(harmonic·s)`; `2π`-periodic for integer harmonics.
    Cosine { offset: f64, amplitude: f64, harmonic: f64 },
}

impl Profile {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            Profile::Identity => s,
            Profile::Affine { slope, offset } => slope * s + offset,
            Profile::Cosine { offset, amplitude, harmonic } => offset + amplitude * (harmonic * s).cos(),
        }
    }
}

/// Velocity fields with known convective acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticFlow {
    /// `(0, g(x¹))`: straight lines along `x²`, `D_u u = 0`.
    AxisParallelX1(Profile),
    /// `(g(x²), 0)`: straight lines along `x¹`, `D_u u = 0`.
    AxisParallelX2(Profile),
    /// `g(φ) e_r` around a center outside the domain, `D_u u = 0`.
    Radial { center: [f64; 2], profile: Profile },
    /// `(a x¹/(1 + a t), 0)`, a Burgers solution with `D_u u = 0`.
    BurgersLinear { a: f64 },
    /// Rigid rotation `rate·(−(x² − c²), x¹ − c¹)`.
    Rotation { center: [f64; 2], rate: f64 },
    Constant([f64; 2]),
    /// `(x²/2, x¹/2)`, the mean of the two identity axis-parallel fields.
    MidpointExample,
}

impl AnalyticFlow {
    pub fn velocity(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        match *self {
            AnalyticFlow::AxisParallelX1(g) => [0.0, g.eval(x[0])],
            AnalyticFlow::AxisParallelX2(g) => [g.eval(x[1]), 0.0],
            AnalyticFlow::Radial { center, profile } => {
                let d = [x[0] - center[0], x[1] - center[1]];
                let r = d[0].hypot(d[1]);
                let g = profile.eval(d[1].atan2(d[0]));
                [g * d[0] / r, g * d[1] / r]
            }
            AnalyticFlow::BurgersLinear { a } => [a * x[0] / (1.0 + a * t), 0.0],
            AnalyticFlow::Rotation { center, rate } => [-rate * (x[1] - center[1]), rate * (x[0] - center[0])],
            AnalyticFlow::Constant(c) => c,
            AnalyticFlow::MidpointExample => [x[1] / 2.0, x[0] / 2.0],
        }
    }

    /// Checks the field is defined on the closed space-time domain of `grid`.
    pub fn validate(&self, grid: &SpaceTimeGrid) -> Result<()> {
        match *self {
            AnalyticFlow::Radial { center, .. } => {
                let [a, b] = grid.extent();
                if (0.0..=a).contains(&center[0]) && (0.0..=b).contains(&center[1]) {
                    return Err(Error::DomainViolation(format!(
                        "radial center ({}, {}) lies inside the image domain",
                        center[0], center[1]
                    )));
                }
            }
            AnalyticFlow::BurgersLinear { a } => {
                let worst = 1.0 + (a * grid.duration()).min(0.0);
                if !(worst > 0.0) {
                    return Err(Error::DomainViolation(format!("1 + a·t must stay positive, a = {a}")));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Nodal samples of an analytic field.
pub fn sample_flow(flow: &AnalyticFlow, grid: &SpaceTimeGrid) -> Result<VectorField> {
    flow.validate(grid)?;
    let f = *flow;
    let u = VectorField::from_fn(*grid, move |t, a, b| f.velocity(t, [a, b]));
    check_finite("analytic flow", u.u1())?;
    check_finite("analytic flow", u.u2())?;
    Ok(u)
}

/// A velocity source for backward warping.
pub trait Velocity: Sync {
    fn velocity(&self, t: f64, x: [f64; 2]) -> [f64; 2];

    /// `Some(c)` when the field is the constant `c`, enabling exact shifts.
    fn as_constant(&self) -> Option<[f64; 2]> {
        None
    }
}

impl Velocity for AnalyticFlow {
    fn velocity(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        AnalyticFlow::velocity(self, t, x)
    }

    fn as_constant(&self) -> Option<[f64; 2]> {
        match *self {
            AnalyticFlow::Constant(c) => Some(c),
            _ => None,
        }
    }
}

impl Velocity for VectorField {
    fn velocity(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        self.sample(t, x)
    }
}

/// A single grayscale image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Template {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::LengthMismatch { what: "template", got: pixels.len(), expected: height * width });
        }
        if let Some(index) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter {
                name: "template",
                reason: format!("pixel {index} is {}, values must lie in [0, 1]", pixels[index]),
            });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let pixels = (0..height * width).map(|n| f(n / width, n % width)).collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Bilinear sample at pixel coordinates, clamped to the image.
    pub fn sample(&self, p: [f64; 2]) -> f64 {
        let axis = |v: f64, n: usize| {
            let s = v.clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n.saturating_sub(2));
            (i, s - i as f64)
        };
        let (i, a) = axis(p[0], self.height);
        let (j, b) = axis(p[1], self.width);
        let at = |i: usize, j: usize| self.pixels[i.min(self.height - 1) * self.width + j.min(self.width - 1)];
        (1.0 - a) * ((1.0 - b) * at(i, j) + b * at(i, j + 1)) + a * ((1.0 - b) * at(i + 1, j) + b * at(i + 1, j + 1))
    }
}

/// Frame `k` is the template warped backward along the trajectories of `flow`
/// from `t = k·dt` to `t = 0` (RK4 with steps of at most `dt/4`; exact shift for
/// constant fields), sampled bilinearly with a clamped boundary.
pub fn advect_sequence<V: Velocity + ?Sized>(
    template: &Template,
    flow: &V,
    grid: &SpaceTimeGrid,
) -> Result<ImageSequence> {
    if template.height != grid.height() || template.width != grid.width() {
        return Err(Error::InvalidGrid(format!(
            "template is {}×{}, grid frames are {}×{}",
            template.height,
            template.width,
            grid.height(),
            grid.width()
        )));
    }
    let h = grid.spacing();
    let dt = grid.dt();
    let frame_len = grid.frame_len();
    let mut values = vec![0.0; grid.node_count()];
    values.par_chunks_mut(frame_len).enumerate().for_each(|(k, frame)| {
        let t = k as f64 * dt;
        for (n, out) in frame.iter_mut().enumerate() {
            let x = [(n / grid.width()) as f64 * h, (n % grid.width()) as f64 * h];
            let x0 = match flow.as_constant() {
                Some(c) => [x[0] - c[0] * t, x[1] - c[1] * t],
                None => {
                    let steps = 4 * k;
                    let mut y = x;
                    for s in 0..steps {
                        let ts = t - s as f64 * dt / 4.0;
                        y = rk4_step(|tt, yy| flow.velocity(tt, yy), ts, y, -dt / 4.0);
                    }
                    y
                }
            };
            *out = template.sample([x0[0] / h, x0[1] / h]);
        }
    });
    check_finite("advected sequence", &values)?;
    ScalarField::new(*grid, values)
}

/// Aggregate errors over a mask, in pixels per frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mean_endpoint: f64,
    pub max_endpoint: f64,
    /// Mean angle in degrees between `(u·dt/h, 1)` and `(u_true·dt/h, 1)`.
    pub mean_angular: f64,
    pub count: usize,
}

/// Endpoint and angular errors of `u` against `u_true` over the nodes where
/// `mask` is set. Velocities are converted to pixels per frame.
pub fn endpoint_error(u: &VectorField, u_true: &VectorField, mask: &[bool]) -> Result<ErrorStats> {
    let grid = u.grid();
    grid.same_as(u_true.grid())?;
    if mask.len() != grid.node_count() {
        return Err(Error::LengthMismatch { what: "mask", got: mask.len(), expected: grid.node_count() });
    }
    let scale = grid.dt() / grid.spacing();
    let (mut sum_ee, mut max_ee, mut sum_ae, mut count) = (0.0, 0.0f64, 0.0, 0usize);
    for (n, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let p = [u.u1()[n] * scale, u.u2()[n] * scale];
        let q = [u_true.u1()[n] * scale, u_true.u2()[n] * scale];
        let ee = (p[0] - q[0]).hypot(p[1] - q[1]);
        let cos = (p[0] * q[0] + p[1] * q[1] + 1.0)
            / ((p[0] * p[0] + p[1] * p[1] + 1.0).sqrt() * (q[0] * q[0] + q[1] * q[1] + 1.0).sqrt());
        sum_ee += ee;
        max_ee = max_ee.max(ee);
        sum_ae += cos.clamp(-1.0, 1.0).acos().to_degrees();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(ErrorStats { mean_endpoint: sum_ee / count as f64, max_endpoint: max_ee, mean_angular: sum_ae / count as f64, count })
}

/// Mean speed over the masked nodes, in pixels per frame.
pub fn mean_speed(u: &VectorField, mask: &[bool]) -> Result<f64> {
    let grid = u.grid();
    if mask.len() != grid.node_count() {
        return Err(Error::LengthMismatch { what: "mask", got: mask.len(), expected: grid.node_count() });
    }
    let scale = grid.dt() / grid.spacing();
    let (sum, count) = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), (n, _)| (s + u.u1()[n].hypot(u.u2()[n]) * scale, c + 1));
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / count as f64)
}

/// A synthetic sequence with its true flow and per-object interior masks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthPair {
    pub sequence: ImageSequence,
    pub flow: VectorField,
    /// One mask per moving object, set at nodes well inside the object.
    pub object_masks: Vec<Vec<bool>>,
}

impl GroundTruthPair {
    /// Union of the object interior masks.
    pub fn interior_mask(&self) -> Vec<bool> {
        let n = self.sequence.grid().node_count();
        (0..n).map(|i| self.object_masks.iter().any(|m| m[i])).collect()
    }
}

pub const SCENARIOS: [&str; 5] =
    ["translating_square", "two_objects_contrast", "diverging_pair", "converging_pair", "textured_background"];

const SCENARIO_FRAMES: usize = 16;
const SCENARIO_SIZE: usize = 48;
const SCENARIO_DT: f64 = 0.125;
const TEXTURE_SEED: u64 = 0x5eed_f10f;

/// Distance inside an object edge that counts as interior.
const INTERIOR_MARGIN: f64 = 1.5;

/// Half-width in pixels of the smooth transition across an object edge.
/// Half width of the smoothed object edges, in pixels. Narrower ramps leave
/// visible oscillations in the projected derivatives of flat regions.
pub const EDGE_HALF_WIDTH: f64 = 4.0;

/// Smooth step across an edge (`d` = signed distance, positive inside).
fn ramp(d: f64) -> f64 {
    let r = EDGE_HALF_WIDTH;
    let s = ((d + r) / (2.0 * r)).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Smooth random texture: a sum of seeded plane waves mapped into `[lo, hi]`.
#[derive(Debug, Clone)]
struct Texture {
    waves: Vec<([f64; 2], f64, f64)>,
    lo: f64,
    hi: f64,
}

impl Texture {
    fn new(seed: u64, modes: usize, lo: f64, hi: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..modes)
            .map(|_| {
                let wavelength = rng.random_range(6.0..16.0);
                let angle = rng.random_range(0.0..PI);
                let k = 2.0 * PI / wavelength;
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.5..1.0);
                ([k * angle.cos(), k * angle.sin()], phase, amp)
            })
            .collect();
        Self { waves, lo, hi }
    }

    fn eval(&self, x: [f64; 2]) -> f64 {
        let total: f64 = self.waves.iter().map(|(_, _, a)| a).sum();
        let s: f64 = self.waves.iter().map(|(k, p, a)| a * (k[0] * x[0] + k[1] * x[1] + p).sin()).sum();
        self.lo + (self.hi - self.lo) * 0.5 * (1.0 + s / total)
    }
}

#[derive(Debug, Clone)]
enum Fill {
    Flat(f64),
    Textured(Texture),
}

impl Fill {
    fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            Fill::Flat(v) => *v,
            Fill::Textured(t) => t.eval(x),
        }
    }
}

/// A square translating at constant velocity (pixels per frame).
#[derive(Debug, Clone)]
struct MovingSquare {
    center: [f64; 2],
    velocity: [f64; 2],
    half: f64,
    fill: Fill,
}

impl MovingSquare {
    fn center_at(&self, frame: f64) -> [f64; 2] {
        [self.center[0] + self.velocity[0] * frame, self.center[1] + self.velocity[1] * frame]
    }

    /// Signed distance to the nearest edge along each axis (positive inside).
    fn inset(&self, frame: f64, x: [f64; 2]) -> f64 {
        let c = self.center_at(frame);
        (self.half - (x[0] - c[0]).abs()).min(self.half - (x[1] - c[1]).abs())
    }

    fn coverage(&self, frame: f64, x: [f64; 2]) -> f64 {
        let c = self.center_at(frame);
        ramp(self.half - (x[0] - c[0]).abs()) * ramp(self.half - (x[1] - c[1]).abs())
    }

    /// Interior texture moves with the object.
    fn value(&self, frame: f64, x: [f64; 2]) -> f64 {
        let c = self.center_at(frame);
        self.fill.eval([x[0] - c[0], x[1] - c[1]])
    }
}

/// Renders a scene of non-overlapping squares over a static background.
fn render(objects: &[MovingSquare], background: &Fill) -> GroundTruthPair {
    let grid = SpaceTimeGrid::new(SCENARIO_FRAMES, SCENARIO_SIZE, SCENARIO_SIZE, SCENARIO_DT).expect("valid scenario grid");
    let n = grid.node_count();
    let mut f = vec![0.0; n];
    let (mut u1, mut u2) = (vec![0.0; n], vec![0.0; n]);
    let mut masks = vec![vec![false; n]; objects.len()];
    for idx in 0..n {
        let (k, i, j) = grid.coords(idx);
        let frame = k as f64;
        let x = [i as f64, j as f64];
        let mut value = background.eval(x);
        for (o, obj) in objects.iter().enumerate() {
            let cov = obj.coverage(frame, x);
            if cov > 0.0 {
                value = (1.0 - cov) * value + cov * obj.value(frame, x);
                u1[idx] = obj.velocity[0] / grid.dt();
                u2[idx] = obj.velocity[1] / grid.dt();
            }
            masks[o][idx] = obj.inset(frame, x) >= INTERIOR_MARGIN;
        }
        f[idx] = value.clamp(0.0, 1.0);
    }
    GroundTruthPair {
        sequence: ScalarField::new(grid, f).expect("finite scenario"),
        flow: VectorField::new(grid, u1, u2).expect("finite scenario"),
        object_masks: masks,
    }
}

/// Deterministic synthetic scenes on a 48×48 grid with 16 frames and `dt = 1/8`.
/// Object velocities are given in pixels per frame; the returned flow is in
/// physical units (divided by `dt`).
pub fn scenario(name: &str) -> Result<GroundTruthPair> {
    let square = |center: [f64; 2], velocity: [f64; 2], half: f64, fill: Fill| MovingSquare { center, velocity, half, fill };
    let textured = |k: u64| Fill::Textured(Texture::new(TEXTURE_SEED + k, 10, 0.55, 0.95));
    let background = || Fill::Textured(Texture::new(TEXTURE_SEED, 12, 0.05, 0.45));
    let pair = match name {
        "translating_square" => render(&[square([18.0, 18.0], [0.5, 0.25], 6.0, Fill::Flat(0.9))], &Fill::Flat(0.1)),
        "two_objects_contrast" => render(
            &[
                square([13.0, 14.0], [0.25, 0.5], 6.0, Fill::Flat(0.9)),
                square([33.0, 34.0], [0.25, -0.5], 6.0, Fill::Flat(0.2)),
            ],
            &Fill::Flat(0.0),
        ),
        "converging_pair" => render(
            &[
                square([24.0, 10.0], [0.0, 0.5], 5.0, textured(2)),
                square([24.0, 38.0], [0.0, -0.5], 5.0, textured(3)),
            ],
            &background(),
        ),
        "diverging_pair" => render(
            &[
                square([34.0, 17.0], [-0.5, -0.2], 5.0, textured(4)),
                square([34.0, 31.0], [-0.5, 0.2], 5.0, textured(5)),
            ],
            &background(),
        ),
        "textured_background" => render(
            &[square([16.0, 16.0], [0.3, 0.4], 7.0, textured(1))],
            &background(),
        ),
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivatives::convective_acceleration;

    #[test]
    fn closed_form_values() {
        let b = AnalyticFlow::BurgersLinear { a: 1.0 };
        assert_eq!(b.velocity(1.0, [2.0, 5.0]), [1.0, 0.0]);
        assert_eq!(AnalyticFlow::MidpointExample.velocity(0.0, [0.4, 0.8]), [0.4, 0.2]);
        let g = SpaceTimeGrid::new(2, 3, 3, 1.0).unwrap();
        let c = sample_flow(&AnalyticFlow::Constant([1.0, 0.0]), &g).unwrap();
        assert!(c.u1().iter().all(|&v| v == 1.0) && c.u2().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn domain_checks() {
        let g = SpaceTimeGrid::new(9, 8, 8, 0.125).unwrap();
        let inside = AnalyticFlow::Radial { center: [3.0, 3.0], profile: Profile::Identity };
        assert!(matches!(sample_flow(&inside, &g), Err(Error::DomainViolation(_))));
        let outside = AnalyticFlow::Radial { center: [-2.0, -2.0], profile: Profile::Identity };
        assert!(sample_flow(&outside, &g).is_ok());
        assert!(sample_flow(&AnalyticFlow::BurgersLinear { a: -1.0 }, &g).is_err());
        assert!(sample_flow(&AnalyticFlow::BurgersLinear { a: -0.5 }, &g).is_ok());
    }

    #[test]
    fn radial_field_has_small_acceleration() {
        let g = SpaceTimeGrid::new(3, 17, 17, 0.125).unwrap();
        let flow = AnalyticFlow::Radial {
            center: [-4.0, -3.0],
            profile: Profile::Cosine { offset: 2.0, amplitude: 0.5, harmonic: 2.0 },
        };
        let u = sample_flow(&flow, &g).unwrap();
        let a = convective_acceleration(&u);
        let mut worst = 0.0f64;
        for k in 1..2 {
            for i in 1..16 {
                for j in 1..16 {
                    let v = a.at(k, i, j);
                    worst = worst.max(v[0].hypot(v[1]));
                }
            }
        }
        assert!(worst < 0.05, "{worst}");
    }

    #[test]
    fn zero_and_integer_shifts_are_exact() {
        let g = SpaceTimeGrid::new(4, 8, 8, 1.0).unwrap();
        let tpl = Template::from_fn(8, 8, |i, j| if (i, j) == (2, 3) { 1.0 } else { 0.0 }).unwrap();
        let still = advect_sequence(&tpl, &AnalyticFlow::Constant([0.0, 0.0]), &g).unwrap();
        for k in 0..4 {
            assert_eq!(still.frame(k), tpl.pixels());
        }
        let moved = advect_sequence(&tpl, &AnalyticFlow::Constant([1.0, 0.0]), &g).unwrap();
        for k in 0..4 {
            assert_eq!(moved.at(k, 2 + k, 3), 1.0);
            assert_eq!(moved.frame(k).iter().sum::<f64>(), 1.0);
        }
        // The integrator path agrees with the exact shift.
        let field = VectorField::constant(g, [1.0, 0.0]);
        let traced = advect_sequence(&tpl, &field, &g).unwrap();
        assert!(traced.values().iter().zip(moved.values()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn error_metrics() {
        let g = SpaceTimeGrid::new(2, 3, 3, 1.0).unwrap();
        let truth = VectorField::constant(g, [0.5, -1.0]);
        let all = vec![true; g.node_count()];
        let s = endpoint_error(&truth, &truth, &all).unwrap();
        assert_eq!((s.mean_endpoint, s.max_endpoint, s.mean_angular), (0.0, 0.0, 0.0));
        let off = VectorField::constant(g, [0.8, -0.6]);
        assert!((endpoint_error(&off, &truth, &all).unwrap().mean_endpoint - 0.5).abs() < 1e-12);
        assert!(matches!(endpoint_error(&off, &truth, &vec![false; g.node_count()]), Err(Error::EmptyMask)));
    }

    #[test]
    fn scenarios_are_reproducible_and_consistent() {
        for name in SCENARIOS {
            let a = scenario(name).unwrap();
            let b = scenario(name).unwrap();
            assert_eq!(a, b);
            assert!(a.sequence.values().iter().all(|v| (0.0..=1.0).contains(v)));
            for m in &a.object_masks {
                assert!(m.iter().any(|&v| v));
            }
        }
        assert!(matches!(scenario("nope"), Err(Error::UnknownScenario(_))));
        let two = scenario("two_objects_contrast").unwrap();
        let s0 = mean_speed(&two.flow, &two.object_masks[0]).unwrap();
        let s1 = mean_speed(&two.flow, &two.object_masks[1]).unwrap();
        assert_eq!(s0, s1);
    }
}
