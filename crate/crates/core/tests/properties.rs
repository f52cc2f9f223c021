use convflow::io::{colorize, decode_flo, encode_flo, FlowFrame};
use convflow::*;
use proptest::prelude::*;

fn grid() -> SpaceTimeGrid {
    SpaceTimeGrid::new(3, 4, 5, 0.125).unwrap()
}

fn field(values: &[f64]) -> ScalarField {
    ScalarField::new(grid(), values.to_vec()).unwrap()
}

fn vector(values: &[f64]) -> VectorField {
    let n = grid().node_count();
    VectorField::new(grid(), values[..n].to_vec(), values[n..].to_vec()).unwrap()
}

fn scalars() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, grid().node_count())
}

fn vectors() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 2 * grid().node_count())
}

fn no_image(g: SpaceTimeGrid) -> ImageDerivatives {
    ImageDerivatives { t: ScalarField::zeros(g), x1: ScalarField::zeros(g), x2: ScalarField::zeros(g) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convective_derivative_is_linear(f in scalars(), g in scalars(), u in vectors(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let (f, g, u) = (field(&f), field(&g), vector(&u));
        let combined = ScalarField::new(grid(), f.values().iter().zip(g.values()).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let lhs = convective_derivative(&combined, &u).unwrap();
        let (df, dg) = (convective_derivative(&f, &u).unwrap(), convective_derivative(&g, &u).unwrap());
        for n in 0..grid().node_count() {
            let rhs = a * df.values()[n] + b * dg.values()[n];
            prop_assert!((lhs.values()[n] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn energy_is_nonnegative(d in prop::collection::vec(-2.0..2.0f64, 3 * grid().node_count()), u in vectors(), lam in 0.1..10.0f64) {
        let n = grid().node_count();
        let derivs = ImageDerivatives { t: field(&d[..n]), x1: field(&d[n..2 * n]), x2: field(&d[2 * n..]) };
        let lambda = ScalarField::constant(grid(), lam);
        let rule = QuadratureRule::default();
        let weights = ModelWeights::new(5e-3, 5e-4);
        let e = energy(&vector(&u), &derivs, &lambda, &weights, &rule).unwrap();
        prop_assert!(e.total >= 0.0 && e.data >= 0.0 && e.convective >= 0.0 && e.isotropic >= 0.0);
        let zero = energy(&VectorField::zeros(grid()), &derivs, &lambda, &weights, &rule).unwrap();
        prop_assert_eq!(zero.convective, 0.0);
        prop_assert_eq!(zero.isotropic, 0.0);
    }

    #[test]
    fn quadratic_form_matches_quadrature_energy(u in vectors(), alpha in 0.0..1.0f64, beta in 0.0..1.0f64) {
        let u = vector(&u);
        let rule = QuadratureRule::default();
        let weights = ModelWeights::new(alpha, beta);
        let k = assemble_stiffness(&u, &weights, &rule).unwrap();
        let from_matrix = k.bilinear(u.u1(), u.u1()) + k.bilinear(u.u2(), u.u2());
        let g = *u.grid();
        let e = energy(&u, &no_image(g), &ScalarField::constant(g, 1.0), &weights, &rule).unwrap();
        let from_quadrature = alpha * e.convective + beta * e.isotropic;
        prop_assert!((from_matrix - from_quadrature).abs() <= 1e-8 * from_quadrature.abs().max(1e-12));
    }

    #[test]
    fn stiffness_is_symmetric_with_constant_kernel(w in vectors(), alpha in 0.0..1.0f64, beta in 0.0..1.0f64) {
        let k = assemble_stiffness(&vector(&w), &ModelWeights::new(alpha, beta), &QuadratureRule::default()).unwrap();
        let scale = k.values().iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        prop_assert!(k.asymmetry() <= 1e-12 * scale);
        prop_assert!(k.row_sums().iter().all(|s| s.abs() <= 1e-10 * scale));
        let again = assemble_stiffness(&vector(&w), &ModelWeights::new(alpha, beta), &QuadratureRule::default()).unwrap();
        prop_assert!(k.values().iter().zip(again.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn curvature_is_scale_invariant(c in 0.1..10.0f64, p in (0.5..2.5f64, 0.5..3.5f64)) {
        let g = grid();
        let u = VectorField::from_fn(g, |_, a, b| [-(b - 7.0), a - 6.0]);
        let k1 = curvature(&u, 0.1, [p.0, p.1], DEFAULT_STAGNATION_SPEED).unwrap();
        let kc = curvature(&u.scaled(c), 0.1, [p.0, p.1], DEFAULT_STAGNATION_SPEED).unwrap();
        prop_assert!((k1 - kc).abs() <= 1e-10 * k1.abs().max(1.0));
    }

    #[test]
    fn constant_flow_trajectories_are_exact_lines(v in (-1.0..1.0f64, -1.0..1.0f64), x0 in (1.5..2.5f64, 1.5..2.5f64)) {
        let g = SpaceTimeGrid::new(9, 8, 8, 0.125).unwrap();
        let u = VectorField::constant(g, [v.0, v.1]);
        let tr = integrate_trajectory(&u, 0.0, [x0.0, x0.1], default_step(&u)).unwrap();
        for s in &tr.samples {
            prop_assert!((s.position[0] - (x0.0 + v.0 * s.t)).abs() < 1e-12);
            prop_assert!((s.position[1] - (x0.1 + v.1 * s.t)).abs() < 1e-12);
        }
    }

    #[test]
    fn contrast_scaling_leaves_the_system_unchanged(c in 0.25..4.0f64) {
        let g = SpaceTimeGrid::new(4, 6, 6, 0.125).unwrap();
        let f = ScalarField::from_fn(g, |t, a, b| 0.5 + 0.3 * (0.5 * a - t).sin() * (0.4 * b).cos());
        let rule = QuadratureRule::default();
        let w = VectorField::constant(g, [1.0, -0.5]);
        let weights = ModelWeights::new(5e-3, 5e-4);
        let system = |f: &ScalarField, eps: f64| {
            let d = project_derivatives(f, &rule).unwrap();
            let lambda = compute_weight(&d, eps).unwrap();
            assemble_system(&d, &lambda, &w, &weights, &rule).unwrap()
        };
        let base = system(&f, 0.01);
        let scaled = system(&f.map(|v| c * v), c * 0.01);
        let close = |a: &[f64], b: &[f64]| {
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-10 * scale)
        };
        prop_assert!(close(base.a11.values(), scaled.a11.values()));
        prop_assert!(close(base.a12.values(), scaled.a12.values()));
        prop_assert!(close(base.a22.values(), scaled.a22.values()));
        prop_assert!(close(&base.rhs_stacked(), &scaled.rhs_stacked()));
    }

    #[test]
    fn flo_encoding_round_trips(values in prop::collection::vec(-1e6..1e6f32, 2 * 12)) {
        let frame = FlowFrame { height: 3, width: 4, u1: values[..12].to_vec(), u2: values[12..].to_vec() };
        let back = decode_flo(&encode_flo(&frame), std::path::Path::new("mem.flo")).unwrap();
        prop_assert_eq!(back, frame);
    }

    #[test]
    fn color_hue_ignores_scaling(u in vectors(), c in 0.1..0.9f64) {
        let u = vector(&u);
        let a = colorize(&u, 1, Some(10.0));
        let b = colorize(&u.scaled(c), 1, Some(10.0));
        for (p, q) in a.pixels().zip(b.pixels()) {
            if let (Some(h1), Some(h2)) = (hue(p), hue(q)) {
                let d = (h1 - h2).rem_euclid(360.0);
                prop_assert!(d.min(360.0 - d) < 2.5, "{p:?} {q:?}");
            }
        }
    }
}

/// Hue in degrees of an 8-bit color, when the chroma is large enough for the
/// quantization error to stay below a degree or so.
fn hue(px: &image::Rgb<u8>) -> Option<f64> {
    let [r, g, b] = px.0.map(f64::from);
    let (max, min) = (r.max(g).max(b), r.min(g).min(b));
    let chroma = max - min;
    if chroma < 64.0 {
        return None;
    }
    let h = if max == r {
        (g - b) / chroma
    } else if max == g {
        2.0 + (b - r) / chroma
    } else {
        4.0 + (r - g) / chroma
    };
    Some(60.0 * h)
}

#[test]
fn burgers_trajectories_cross_a_point_at_different_speeds() {
    let g = SpaceTimeGrid::new(17, 12, 12, 0.125).unwrap();
    let u = sample_flow(&AnalyticFlow::BurgersLinear { a: 0.5 }, &g).unwrap();
    let early = integrate_trajectory(&u, 0.0, [4.0, 5.0], default_step(&u)).unwrap();
    let late = integrate_trajectory(&u, 1.0, [4.0, 5.0], default_step(&u)).unwrap();
    let (s0, s1) = (early.samples[0].velocity, late.samples[0].velocity);
    assert!((s0[0].hypot(s0[1]) - s1[0].hypot(s1[1])).abs() > 0.1, "{s0:?} {s1:?}");
    // Both trajectories are straight lines.
    for tr in [&early, &late] {
        let first = tr.samples[0].position;
        let last = tr.last().position;
        assert!((first[1] - last[1]).abs() < 1e-9);
    }
}

#[test]
fn zero_flow_advection_is_identity_and_scenarios_reproduce() {
    let tpl = Template::from_fn(6, 7, |i, j| ((i * 7 + j) % 5) as f64 / 4.0).unwrap();
    let g = SpaceTimeGrid::new(3, 6, 7, 0.125).unwrap();
    let seq = advect_sequence(&tpl, &AnalyticFlow::Constant([0.0, 0.0]), &g).unwrap();
    for k in 0..3 {
        assert_eq!(seq.frame(k), tpl.pixels());
    }
    for name in SCENARIOS {
        let (a, b) = (scenario(name).unwrap(), scenario(name).unwrap());
        assert!(a.sequence.values().iter().zip(b.sequence.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.flow, b.flow);
    }
}

#[test]
fn zero_acceleration_fields_converge_with_spacing() {
    let flows = [
        AnalyticFlow::AxisParallelX1(Profile::Cosine { offset: 0.0, amplitude: 1.0, harmonic: 3.0 }),
        AnalyticFlow::AxisParallelX2(Profile::Affine { slope: 2.0, offset: 1.0 }),
        AnalyticFlow::Radial { center: [-0.5, -0.3], profile: Profile::Cosine { offset: 1.0, amplitude: 0.5, harmonic: 2.0 } },
        AnalyticFlow::Constant([0.3, -0.2]),
    ];
    for flow in flows {
        let mut errors = Vec::new();
        for n in [9, 17] {
            let h = 1.0 / (n - 1) as f64;
            let g = SpaceTimeGrid::new(3, n, n, 0.125).unwrap().with_spacing(h).unwrap();
            let acc = convective_acceleration(&sample_flow(&flow, &g).unwrap());
            let mut worst = 0.0f64;
            for i in 1..n - 1 {
                for j in 1..n - 1 {
                    let v = acc.at(1, i, j);
                    worst = worst.max(v[0].hypot(v[1]));
                }
            }
            errors.push((h, worst));
        }
        // Bounded by C·h with the same constant on both grids.
        let c = errors[0].1 / errors[0].0;
        assert!(errors[1].1 <= c * errors[1].0 + 1e-12, "{flow:?}: {errors:?}");
    }
}
