use lorbundle::bundle_chart::FrameLabel;
use lorbundle::curvature::*;
use lorbundle::presets::{build_preset, Params, PRESET_NAMES};
use lorbundle::sampling;
use proptest::prelude::*;

#[test]
fn closed_form_connection_matches_numeric_on_every_preset() {
    for name in PRESET_NAMES {
        let cfg = build_preset(name, &Params::new()).unwrap();
        let labels = FrameLabel::connection_labels(cfg.base.n());
        for p in sampling::sample_points(&cfg.base, 4, 17) {
            for &x in &labels {
                for &y in &labels {
                    let a = cfg.cov_deriv_closed_form(x, y, &p).unwrap();
                    let b = cfg.cov_deriv_numeric(x, y, &p).unwrap();
                    assert!((a - b).amax() <= 1e-9, "{} {:?} {:?}", name, x, y);
                }
            }
        }
    }
}

#[test]
fn closed_form_curvature_matches_brute_force_on_every_preset() {
    for name in PRESET_NAMES {
        let cfg = build_preset(name, &Params::new()).unwrap();
        for p in sampling::sample_points(&cfg.base, 12, 5) {
            let r = curvature_report(&cfg, &p).unwrap();
            assert!(r.riemann_discrepancy <= 1e-8, "{} {} {}", name, r.worst_riemann_component, r.riemann_discrepancy);
            assert!(r.ricci_discrepancy <= 1e-8, "{} {} {}", name, r.worst_ricci_component, r.ricci_discrepancy);
            assert!(r.unlisted_max <= 1e-8, "{} unlisted {}", name, r.unlisted_max);
            assert!(r.symmetry_residual <= 1e-8, "{} symmetry {}", name, r.symmetry_residual);
        }
    }
}

#[test]
fn flat_preset_is_flat() {
    let cfg = build_preset("flat", &Params::new()).unwrap();
    for p in sampling::sample_points(&cfg.base, 5, 1) {
        let b = riemann_brute_force(&cfg, &p).unwrap();
        assert!(b.riemann.max_abs() <= 1e-10);
    }
}

// The Ric_++ fiber term as usually written, −ξ(f)(½ξ(f) + 1), disagrees with the
// curvature tensor once f depends on v; −½ξ(f)² − e_+(ξ(f)) is what contraction gives.
#[test]
fn fiber_terms() {
    let cfg = build_preset("einstein-fiber", &Params::new()).unwrap();
    let mut worst_literal: f64 = 0.0;
    for p in sampling::sample_points(&cfg.base, 10, 2) {
        let r = curvature_report(&cfg, &p).unwrap();
        let d = cfg.dim();
        let n = cfg.base.n();
        let brute = r.brute_ricci_frame[n + n * d];
        let cf = cfg.closed_form(&p).unwrap();
        let xi_f = cf.df(&cf.frame.xi);
        let mut ep_xi_f = 0.0;
        for a in 0..d {
            for b in 0..d {
                ep_xi_f += cf.frame.e_plus[a] * cf.frame.xi[b] * cf.f.h(a, b);
            }
        }
        let ours = r.closed_ricci.plus_plus;
        let literal = ours + 0.5 * xi_f * xi_f + ep_xi_f - xi_f * (0.5 * xi_f + 1.0);
        assert!(relative_discrepancy(ours, brute) <= 1e-8);
        worst_literal = worst_literal.max(relative_discrepancy(literal, brute));
    }
    assert!(worst_literal > 1e-2, "{}", worst_literal);

    // On a flat torus with η = du only the Ψ-divergence survives in Ric_i+, so a
    // flipped sign there would show up as Ric_i+ = −brute.
    let cfg = build_preset("noncommuting-torus3", &Params::new()).unwrap();
    let n = cfg.base.n();
    let d = cfg.dim();
    let mut seen: f64 = 0.0;
    for p in sampling::sample_points(&cfg.base, 10, 3) {
        let r = curvature_report(&cfg, &p).unwrap();
        for i in 0..n {
            let brute = r.brute_ricci_frame[i + n * d];
            assert!((r.closed_ricci.i_plus[i] - brute).abs() <= 1e-9);
            seen = seen.max(brute.abs());
        }
    }
    assert!(seen > 0.1);
}

#[test]
fn einstein_obstruction_detects_fiber_dependence() {
    let cfg = build_preset("einstein-fiber", &Params::new()).unwrap();
    let o = einstein_obstruction(&cfg).unwrap();
    assert!(o.sup_half_hess_xixi > 0.1);
    assert!(o.fiber_variation > 0.1);
    for name in ["flat", "type4", "warped-mixed"] {
        let cfg = build_preset(name, &Params::new()).unwrap();
        let o = einstein_obstruction(&cfg).unwrap();
        assert!(o.sup_half_hess_xixi <= 1e-12, "{}", name);
    }
}

#[test]
fn relative_discrepancy_floor() {
    assert_eq!(relative_discrepancy(1e-8, 0.0), 1e-5);
    assert!((relative_discrepancy(2.00002, 2.0) - 1e-5).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn type4_curvature_agrees_for_random_parameters(
        amp in 0.2f64..2.0,
        c in prop::sample::select(vec![-2i32, -1, 1, 3]),
        cc in -1.0f64..1.0,
        exp_warp in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let params = Params::new()
            .with("amplitude", amp)
            .with("offset", c)
            .with("C", cc)
            .with("warp", if exp_warp { "exp" } else { "flat" });
        let cfg = build_preset("type4", &params).unwrap();
        for p in sampling::sample_points(&cfg.base, 2, seed) {
            let r = curvature_report(&cfg, &p).unwrap();
            prop_assert!(r.riemann_discrepancy <= 1e-7, "{}", r.worst_riemann_component);
            prop_assert!(r.ricci_discrepancy <= 1e-7, "{}", r.worst_ricci_component);
            prop_assert!(r.unlisted_max <= 1e-8);
        }
    }

    #[test]
    fn ricci_xi_plus_is_half_hessian(a in -2.0f64..2.0, seed in 0u64..1000) {
        let cfg = build_preset("einstein-fiber", &Params::new().with("a", a)).unwrap();
        let p = &sampling::sample_points(&cfg.base, 1, seed)[0];
        let cf = cfg.closed_form(p).unwrap();
        let r = ricci_closed_form(&cfg, p).unwrap();
        prop_assert!((r.xi_plus + 0.5 * cf.hess_f(FrameLabel::Xi, FrameLabel::Xi)).abs() <= 1e-14);
    }
}
