use lorbundle::base_geometry::{U, V};
use lorbundle::curvature::riemann_brute_force;
use lorbundle::holonomy::*;
use lorbundle::par::Exec;
use lorbundle::presets::{build_preset, build_type4, descriptor, lambda_set, Params, PRESET_NAMES};
use lorbundle::sampling;
use lorbundle::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn preset(name: &str) -> lorbundle::bundle_chart::BundleConfig {
    build_preset(name, &Params::new()).unwrap()
}

fn basepoint(cfg: &lorbundle::bundle_chart::BundleConfig, seed: u64) -> Vec<f64> {
    sampling::sample_points(&cfg.base, 1, seed)[0].clone()
}

/// Closed triangle through u and the first one or two base directions.
fn triangle(cfg: &lorbundle::bundle_chart::BundleConfig, x0: &[f64]) -> ChartPath {
    let mut a = x0.to_vec();
    a[U] += 0.7;
    a[2] += 0.4;
    let mut b = x0.to_vec();
    b[U] += 0.2;
    b[2] -= 0.5;
    if cfg.dim() > 3 {
        b[3] += 0.3;
    }
    ChartPath::new("triangle", vec![x0.to_vec(), a, b, x0.to_vec()]).unwrap()
}

fn rotation(theta: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
}

#[test]
fn constant_block_rotates_by_minus_c_delta_u() {
    let c = 0.3;
    let cfg = build_preset("constant-psi-torus", &Params::new().with("c", c)).unwrap();
    let x0 = basepoint(&cfg, 1);
    for du in [1.3, -0.8, 2.0 * std::f64::consts::PI] {
        let mut end = x0.clone();
        end[U] += du;
        let path = if du == 2.0 * std::f64::consts::PI {
            LoopSpec::UCircle.build(&cfg, &x0).unwrap()
        } else {
            ChartPath::new("u-arc", vec![x0.clone(), end]).unwrap()
        };
        let t = transport_screen_ode(&cfg, &path).unwrap();
        assert!((&t.omega - rotation(-c * du)).amax() <= 1e-10, "{} {}", du, t.omega);
        assert!(t.orthogonality_residual <= 1e-12);
        assert!((t.determinant - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn no_u_motion_gives_identity() {
    for name in ["constant-psi-torus", "type4", "noncommuting-torus3"] {
        let cfg = preset(name);
        let x0 = basepoint(&cfg, 2);
        let mut a = x0.clone();
        a[2] += 0.9;
        let mut b = a.clone();
        b[cfg.dim() - 1] -= 1.4;
        let loops = [
            ChartPath::new("base", vec![x0.clone(), a, b, x0.clone()]).unwrap(),
            LoopSpec::Cycle(cfg.dim() - 1).build(&cfg, &x0).unwrap(),
        ];
        for path in &loops {
            let t = transport_screen_ode(&cfg, path).unwrap();
            let n = cfg.base.n();
            assert!((&t.omega - DMatrix::identity(n, n)).amax() <= 1e-11, "{} {}", name, path.label);
        }
    }
}

#[test]
fn exponential_matches_ode_on_commuting_blocks() {
    for name in ["type4", "type4-complete", "constant-psi-torus"] {
        let cfg = preset(name);
        let x0 = basepoint(&cfg, 3);
        for path in [LoopSpec::UCircle.build(&cfg, &x0).unwrap(), triangle(&cfg, &x0)] {
            let e = commuting_exponential(&cfg, &path).unwrap();
            assert!(e.used_exponential, "{} {} {}", name, path.label, e.commutator_sup);
            assert!(e.commutator_sup <= COMMUTATION_TOL);
            assert!(e.exp_vs_ode <= 1e-8, "{} {}", name, e.exp_vs_ode);
            assert!(e.endpoint_commutation <= 1e-8, "{} {}", name, e.endpoint_commutation);
            assert!(e.ode.orthogonality_residual <= 1e-9);
            assert!((e.ode.determinant - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn overlapping_blocks_refuse_the_shortcut() {
    let cfg = preset("noncommuting-torus3");
    let x0 = basepoint(&cfg, 4);
    let mut a = x0.clone();
    a[U] += 1.5;
    a[2] += 1.0;
    a[3] += 0.5;
    let mut b = x0.clone();
    b[U] -= 0.5;
    b[3] += 1.7;
    b[4] -= 1.1;
    let path = ChartPath::new("diag", vec![x0.clone(), a, b, x0.clone()]).unwrap();
    let e = commuting_exponential(&cfg, &path).unwrap();
    assert!(!e.used_exponential);
    assert!(e.commutator_sup > 1e-2, "{}", e.commutator_sup);
    assert_eq!(e.omega, e.ode.omega);
    // the shortcut would have been wrong here
    assert!(e.exp_vs_ode > 1e-4, "{}", e.exp_vs_ode);
}

#[test]
fn generic_transport_preserves_g_and_matches_the_screen_ode() {
    for name in PRESET_NAMES {
        let cfg = preset(name);
        let x0 = basepoint(&cfg, 5);
        let mut paths = vec![triangle(&cfg, &x0), LoopSpec::UCircle.build(&cfg, &x0).unwrap()];
        if cfg.base.is_periodic(2) {
            paths.push(LoopSpec::Cycle(2).build(&cfg, &x0).unwrap());
        }
        for path in &paths {
            let g = transport_generic_chart(&cfg, path).unwrap();
            assert!(g.closed, "{} {}", name, path.label);
            assert!(g.metric_residual <= 1e-8, "{} {} {}", name, path.label, g.metric_residual);
            // ξ is fixed up to scale
            let d = cfg.dim();
            for r in 0..d - 1 {
                assert!(g.frame[(r, d - 1)].abs() <= 1e-8);
            }
            if cfg.fiber_constant {
                let s = transport_screen_ode(&cfg, path).unwrap();
                assert!((&g.frame - &s.frame).amax() <= 1e-7, "{} {}", name, path.label);
                assert!(s.consistency_residual <= 1e-10, "{} {}", name, s.consistency_residual);
            }
        }
    }
}

#[test]
fn trivial_loop_is_identity() {
    let cfg = preset("type4");
    let x0 = basepoint(&cfg, 6);
    let path = ChartPath::new("point", vec![x0.clone(), x0.clone()]).unwrap();
    let t = transport_generic_chart(&cfg, &path).unwrap();
    assert!((&t.chart - DMatrix::identity(cfg.dim(), cfg.dim())).amax() <= 1e-15);
}

#[test]
fn small_rectangle_is_identity_plus_area_times_curvature() {
    let cfg = preset("type4");
    let x0 = vec![0.3, 0.1, 0.2, 0.5, 1.1, 0.7, 2.0];
    let d = cfg.dim();
    let b = riemann_brute_force(&cfg, &x0).unwrap();
    for (i, j) in [(U, 3), (3, 4), (2, 3), (U, 2)] {
        let r = DMatrix::from_fn(d, d, |c, z| {
            (0..d).map(|w| b.inverse[(c, w)] * b.riemann.get(i, j, z, w)).sum::<f64>()
        });
        let mut errs = Vec::new();
        for s in [2e-2, 1e-2] {
            let path = LoopSpec::Rectangle { i, j, side: s }.build(&cfg, &x0).unwrap();
            let t = transport_generic_chart(&cfg, &path).unwrap();
            let err = (&t.chart - DMatrix::identity(d, d) - &r * (s * s)).amax();
            assert!(err <= 10.0 * s.powi(3) * (1.0 + r.amax()), "({},{}) {} {}", i, j, s, err);
            errs.push(err);
        }
        // third-order remainder
        assert!(errs[1] <= errs[0] / 6.0 || errs[1] <= 1e-12, "{:?}", errs);
    }
}

#[test]
fn concatenation_composes_in_order() {
    for name in ["type4", "warped-mixed", "recurrent-eta"] {
        let cfg = preset(name);
        let pts = sampling::sample_points(&cfg.base, 3, 8);
        let g1 = ChartPath::new("g1", vec![pts[0].clone(), pts[1].clone()]).unwrap();
        let g2 = ChartPath::new("g2", vec![pts[1].clone(), pts[2].clone()]).unwrap();
        let t1 = transport_generic_chart(&cfg, &g1).unwrap();
        let t2 = transport_generic_chart(&cfg, &g2).unwrap();
        let t12 = transport_generic_chart(&cfg, &g1.then(&g2).unwrap()).unwrap();
        assert!((&t12.chart - &t2.chart * &t1.chart).amax() <= 1e-7, "{}", name);
        let back = transport_generic_chart(&cfg, &g1.reversed()).unwrap();
        assert!((&back.chart * &t1.chart - DMatrix::identity(cfg.dim(), cfg.dim())).amax() <= 1e-9);
        assert!(g2.then(&g1).is_err());
    }
}

#[test]
fn chart_exit_and_bad_paths_are_domain_errors() {
    let cfg = build_preset("type4", &Params::new().with("warp", "exp")).unwrap();
    let x0 = basepoint(&cfg, 9);
    let mut far = x0.clone();
    far[2] = 800.0; // e^y overflows
    let path = ChartPath::new("far", vec![x0.clone(), far]).unwrap();
    assert!(matches!(transport_generic_chart(&cfg, &path), Err(Error::Domain(_))));
    assert!(matches!(transport_screen_ode(&cfg, &path), Err(Error::Domain(_))));
    let short = ChartPath::new("short", vec![vec![0.0; 3], vec![1.0; 3]]).unwrap();
    assert!(matches!(transport_generic_chart(&cfg, &short), Err(Error::Domain(_))));
    assert!(ChartPath::new("nan", vec![x0.clone(), vec![f64::NAN; x0.len()]]).is_err());
    assert!(ChartPath::new("one", vec![x0.clone()]).is_err());
    // lines have no cycle
    assert!(LoopSpec::Cycle(2).build(&cfg, &x0).is_err());
    // the screen ODE needs ξ parallel
    let ef = preset("einstein-fiber");
    let p = triangle(&ef, &basepoint(&ef, 1));
    assert!(matches!(transport_screen_ode(&ef, &p), Err(Error::Shape(_))));
}

#[test]
fn loop_specs_parse() {
    let cfg = preset("type4");
    assert_eq!(LoopSpec::parse("u-circle", &cfg).unwrap(), LoopSpec::UCircle);
    assert_eq!(LoopSpec::parse("torus-cycle(x2)", &cfg).unwrap(), LoopSpec::Cycle(4));
    // base factor 3 is x2 (after y1 and x1)
    assert_eq!(LoopSpec::parse("torus-cycle(3)", &cfg).unwrap(), LoopSpec::Cycle(4));
    assert_eq!(
        LoopSpec::parse("rectangle(u, x1, 0.25)", &cfg).unwrap(),
        LoopSpec::Rectangle { i: U, j: 3, side: 0.25 }
    );
    let w = LoopSpec::parse("1,0,0,0,0,0,0; 1,0,1,0,0,0,0", &cfg).unwrap();
    assert!(matches!(w, LoopSpec::Waypoints(ref p) if p.len() == 2));
    match LoopSpec::parse("1,0,0; 2", &cfg) {
        Err(Error::Parse { path, .. }) => assert_eq!(path, "loop[0]"),
        other => panic!("{:?}", other),
    }
    assert!(LoopSpec::parse("torus-cycle(q)", &cfg).is_err());
    assert!(LoopSpec::parse("rectangle(x1,x2,wide)", &cfg).is_err());
    let built = LoopSpec::Waypoints(vec![vec![1.0; 7]]).build(&cfg, &[0.0; 7]).unwrap();
    assert_eq!(built.waypoints.len(), 3);
    assert_eq!(built.end(), &[0.0; 7]);
}

#[test]
fn holonomy_types_of_the_presets() {
    for name in PRESET_NAMES {
        let cfg = preset(name);
        let h = sample_holonomy_algebra(&cfg, &HolonomySampling::default(), Exec::Parallel).unwrap();
        assert!(h.xi_preservation <= 1e-8 * (1.0 + h.scale), "{} {}", name, h.xi_preservation);
        if let Some(want) = descriptor(name).unwrap().expected.holonomy {
            assert_eq!(h.holonomy_type, want, "{}", name);
        }
    }
}

#[test]
fn orthogonal_part_has_dimension_l() {
    for (k, l, m) in [(4, 2, 1), (4, 2, 3), (6, 3, 1)] {
        let cfg = build_type4("t", k, m, l, "flat", 1.0, 1.0, 0.0).unwrap();
        let h = sample_holonomy_algebra(&cfg, &HolonomySampling::default(), Exec::Parallel).unwrap();
        assert_eq!(h.orthogonal.rank, l, "({},{},{})", k, l, m);
        assert!(h.orthogonal.determined);
        assert_eq!(h.pure_translations, k);
        assert_eq!(h.scaling.rank, 0);
    }
    // every line is reached by φ only when Λ meets a block for each λ
    let cfg = build_type4("t", 4, 1, 2, "exp", 1.0, 1.0, 0.0).unwrap();
    let h = sample_holonomy_algebra(&cfg, &HolonomySampling::default(), Exec::Parallel).unwrap();
    assert_eq!(h.holonomy_type, "4");
    let cfg = build_type4("t", 4, 3, 2, "flat", 1.0, 1.0, 0.0).unwrap();
    let h = sample_holonomy_algebra(&cfg, &HolonomySampling::default(), Exec::Sequential).unwrap();
    assert_eq!(h.holonomy_type, "decomposable");
}

#[test]
fn flat_ricci_preset_has_translations_only_around_loops() {
    // locally flat, so the restricted algebra vanishes
    let cfg = preset("ricci-flat-torus2");
    let h = sample_holonomy_algebra(&cfg, &HolonomySampling::default(), Exec::Parallel).unwrap();
    assert_eq!(h.full.rank, 0);
    let x0 = basepoint(&cfg, 10);
    let n = cfg.base.n();
    let t = transport_generic_chart(&cfg, &LoopSpec::UCircle.build(&cfg, &x0).unwrap()).unwrap();
    let screen = t.frame.view((0, 0), (n, n)).clone_owned();
    assert!((screen - DMatrix::identity(n, n)).amax() <= 1e-9);
    let translation = t.frame.view((0, n), (n, 1)).amax();
    assert!(translation > 0.1, "{}", t.frame);
}

#[test]
fn sampling_is_deterministic_across_executors() {
    let cfg = preset("type4");
    let opts = HolonomySampling {
        points: 6,
        ..Default::default()
    };
    let a = sample_holonomy_algebra(&cfg, &opts, Exec::Parallel).unwrap();
    let b = sample_holonomy_algebra(&cfg, &opts, Exec::Sequential).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn rank_estimates_and_classification() {
    let r = estimate_rank(&[vec![1.0, 0.0], vec![0.0, 1e-12]], 1.0);
    assert_eq!((r.rank, r.determined), (1, true));
    let r = estimate_rank(&[vec![1.0, 0.0], vec![0.0, 1e-5]], 1.0);
    assert_eq!(r.rank, 2);
    // a value just above the floor next to one just below it is not a decision
    let r = estimate_rank(&[vec![1.0, 0.0, 0.0], vec![0.0, 2e-7, 0.0], vec![0.0, 0.0, 5e-8]], 1.0);
    assert_eq!(r.rank, 2);
    assert!(!r.determined);
    assert!(estimate_rank(&[], 1.0).determined);

    // one element with a ξ-eigenvalue: type 1
    let mut m = DMatrix::zeros(4, 4);
    m[(3, 3)] = 1.0;
    m[(2, 2)] = -1.0;
    assert_eq!(classify_elements(&[0.0; 4], 2, &[m], true).holonomy_type, "1");
    // pure translations in both screen directions: type 2
    let mut t1 = DMatrix::zeros(4, 4);
    t1[(0, 2)] = 1.0;
    t1[(3, 0)] = 1.0;
    let mut t2 = DMatrix::zeros(4, 4);
    t2[(1, 2)] = 1.0;
    t2[(3, 1)] = 1.0;
    let h = classify_elements(&[0.0; 4], 2, &[t1.clone(), t2], true);
    assert_eq!(h.holonomy_type, "2");
    assert_eq!(classify_elements(&[0.0; 4], 2, &[t1], true).holonomy_type, "decomposable");
    assert_eq!(classify_elements(&[0.0; 4], 2, &[], true).holonomy_type, "trivial");
}

#[test]
fn xi_recurrence() {
    for name in ["flat", "type4", "ricci-flat-torus"] {
        let r = xi_recurrence_report(&preset(name), 16, 1).unwrap();
        assert!(r.parallel && r.sup_dv_f == 0.0, "{}", name);
    }
    let a = 0.7;
    let cfg = build_preset("einstein-fiber", &Params::new().with("a", a)).unwrap();
    let r = xi_recurrence_report(&cfg, 16, 1).unwrap();
    assert!(!r.parallel);
    assert!(r.theta_residual <= 1e-10, "{}", r.theta_residual);
    // f = a cos v, ξ = −∂_v, η = du: ∇_{∂_u} ξ = −½ a sin v · ξ
    let p = [0.4, 1.1, 0.2, 0.3];
    let gamma = cfg.christoffel_g_numeric(&p).unwrap();
    let nab_v = -gamma.get(V, U, V);
    let want = -0.5 * a * p[V].sin() * -1.0;
    assert!((nab_v - want).abs() <= 1e-12, "{} {}", nab_v, want);
}

#[test]
fn phi_map_examples() {
    let k4 = lorbundle::bundle_chart::Type4Shape {
        k: 4,
        m: 1,
        l: 2,
        line_coords: vec![2],
        torus_coords: vec![3, 4, 5, 6],
        lambda_set: lambda_set(4, 1),
        offsets: vec![0.0],
        warp: "flat".into(),
    };
    assert_eq!(k4.lambda_set, vec![(1, 2, 1)]);
    // A E_1 = 2 E_2, so A_12 = g(A E_1, E_2) = 2
    let mut a = DMatrix::zeros(4, 4);
    a[(1, 0)] = 2.0;
    a[(0, 1)] = -2.0;
    assert_eq!(phi_map(&k4, &a, &[1.0], PhiWeights::Unit), vec![2.0]);
    assert_eq!(phi_map(&k4, &a, &[3.0], PhiWeights::Coordinate), vec![18.0]);
    // φ ≡ 1 and m = k(k−1)/2: the coordinate map of so(k)
    let k3 = lorbundle::bundle_chart::Type4Shape {
        k: 3,
        m: 3,
        l: 1,
        line_coords: vec![2, 3, 4],
        torus_coords: vec![5, 6, 7],
        lambda_set: lambda_set(3, 3),
        offsets: vec![0.0; 3],
        warp: "flat".into(),
    };
    let a = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, -2.0, 1.0, 0.0, -3.0, 2.0, 3.0, 0.0]);
    assert_eq!(phi_map(&k3, &a, &[1.0; 3], PhiWeights::Coordinate), vec![1.0, 2.0, 3.0]);
}

#[test]
fn type4_conditions_hold() {
    for (k, l, m, warp) in [(4, 2, 1, "flat"), (4, 2, 1, "exp"), (4, 2, 3, "flat"), (6, 3, 1, "flat")] {
        let cfg = build_type4("t", k, m, l, warp, 1.0, 1.0, 0.0).unwrap();
        let v = type4_verify(&cfg, 6, 20, 3, PhiWeights::Unit, Exec::Parallel).unwrap();
        let tag = format!("({},{},{},{})", k, l, m, warp);
        assert!(v.preserves_s1_kills_s2 <= 1e-8, "{} {}", tag, v.preserves_s1_kills_s2);
        assert!(v.phi_of_screen_curvature <= 1e-7, "{}", tag);
        assert!(v.screen_curvature_on_screen <= 1e-7, "{}", tag);
        assert!(v.mixed_curvature <= 1e-7, "{} {}", tag, v.mixed_curvature);
        assert!(v.transport_compatibility <= 1e-6, "{} {}", tag, v.transport_compatibility);
        assert!(v.omega_vs_chart <= 1e-7, "{}", tag);
        assert!(v.endpoint_commutation <= 1e-8, "{}", tag);
    }
    // read literally, the coordinate weights break compatibility on warped lines
    let cfg = build_type4("t", 4, 1, 2, "exp", 1.0, 1.0, 0.0).unwrap();
    let v = type4_verify(&cfg, 6, 20, 3, PhiWeights::Coordinate, Exec::Parallel).unwrap();
    assert!(v.transport_compatibility > 1e-2);
    assert!(matches!(
        type4_verify(&preset("flat"), 2, 2, 1, PhiWeights::Unit, Exec::Sequential),
        Err(Error::Shape(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_loops_are_isometries(seed in 0u64..10_000, which in 0usize..3) {
        let name = ["type4", "noncommuting-torus3", "torus-non-integrable-screen"][which];
        let cfg = preset(name);
        let pts = sampling::sample_points(&cfg.base, 3, seed);
        let path = ChartPath::new("rand", vec![pts[0].clone(), pts[1].clone(), pts[2].clone(), pts[0].clone()]).unwrap();
        let s = transport_screen_ode(&cfg, &path).unwrap();
        prop_assert!(s.orthogonality_residual <= 1e-9);
        prop_assert!((s.determinant - 1.0).abs() <= 1e-9);
        let g = transport_generic_chart(&cfg, &path).unwrap();
        prop_assert!(g.metric_residual <= 1e-8);
        prop_assert!((&g.frame - &s.frame).amax() <= 1e-7);
        let back = transport_generic_chart(&cfg, &path.reversed()).unwrap();
        prop_assert!((&back.chart * &g.chart - DMatrix::identity(cfg.dim(), cfg.dim())).amax() <= 1e-8);
    }
}
