//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//! Exits non-zero only if a computation errors out; a failed criterion is
//! reported, not hidden.

use std::time::Instant;

use lorbundle::base_geometry::{ProductBase, U};
use lorbundle::bundle_chart::{BundleConfig, FrameLabel};
use lorbundle::curvature::{curvature_report, relative_discrepancy, ricci_brute_force};
use lorbundle::expr;
use lorbundle::field::{expr_field, Field, OneForm};
use lorbundle::geodesics::{
    completeness_probe, integrate_geodesic, killing_constant, probe_initial_state, structured_geodesic,
    trajectory_discrepancy, u_affine_residual, GeodesicState, Tolerances,
};
use lorbundle::holonomy::{
    commuting_exponential, sample_holonomy_algebra, transport_screen_ode, type4_verify, ChartPath,
    HolonomySampling, LoopSpec, PhiWeights,
};
use lorbundle::par::Exec;
use lorbundle::presets::{build_preset, build_type4, Params, PRESET_NAMES};
use lorbundle::ricci_flat::{build_ricci_flat_config, gauge_shift, metric_discrepancy, TorusGridField};
use lorbundle::sampling;

const CONNECTION_TOL: f64 = 1e-6;
const CURVATURE_TOL: f64 = 1e-5;
const UNLISTED_TOL: f64 = 1e-7;
const F_B_TOL: f64 = 1e-10;
const RICCI_FLAT_TOL: f64 = 1e-7;
const EINSTEIN_TOL: f64 = 1e-7;
const FIBER_CONSTANT_TOL: f64 = 1e-9;
const ENERGY_TOL: f64 = 1e-7;
const STRUCTURED_TOL: f64 = 1e-6;
const U_AFFINE_TOL: f64 = 1e-9;
const PROBE_HORIZON: f64 = 1000.0;
const PROBE_SEEDS: usize = 100;
const ORTHOGONALITY_TOL: f64 = 1e-9;
const EXPONENTIAL_TOL: f64 = 1e-8;
const TYPE4_TOL: f64 = 1e-6;
const TYPE4_LOOPS: usize = 20;
const GAUGE_SHIFT_TOL: f64 = 1e-12;

type Outcome = lorbundle::Result<(bool, String)>;

fn preset(name: &str) -> BundleConfig {
    build_preset(name, &Params::new()).expect("preset builds")
}

fn field(base: &ProductBase, src: &str) -> Field {
    let names = base.coord_names();
    let vars: Vec<&str> = names.iter().map(String::as_str).collect();
    expr_field(expr::parse(src, &vars).expect("expression"), base.chart_dim(), src)
}

fn connection_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for name in PRESET_NAMES {
        let cfg = preset(name);
        let labels = FrameLabel::connection_labels(cfg.base.n());
        for p in sampling::sample_points(&cfg.base, 10, 101) {
            for &x in &labels {
                for &y in &labels {
                    let a = cfg.cov_deriv_closed_form(x, y, &p)?;
                    let b = cfg.cov_deriv_numeric(x, y, &p)?;
                    for i in 0..a.len() {
                        worst = worst.max(relative_discrepancy(a[i], b[i]));
                    }
                }
            }
            points += 1;
        }
    }
    Ok((
        worst <= CONNECTION_TOL && points >= 100,
        format!(
            "max relative discrepancy {:.2e} (tol {:.0e}) over {} points on {} presets",
            worst,
            CONNECTION_TOL,
            points,
            PRESET_NAMES.len()
        ),
    ))
}

fn curvature_oracle() -> Outcome {
    let (mut riem, mut ric, mut unlisted) = (0.0f64, 0.0f64, 0.0f64);
    let mut points = 0;
    for name in PRESET_NAMES {
        let cfg = preset(name);
        for p in sampling::sample_points(&cfg.base, 10, 202) {
            let r = curvature_report(&cfg, &p)?;
            riem = riem.max(r.riemann_discrepancy);
            ric = ric.max(r.ricci_discrepancy);
            unlisted = unlisted.max(r.unlisted_max);
            points += 1;
        }
    }
    Ok((
        riem <= CURVATURE_TOL && ric <= CURVATURE_TOL && unlisted <= UNLISTED_TOL,
        format!(
            "Riemann {:.2e}, Ricci {:.2e} (tol {:.0e}); unlisted components {:.2e} (tol {:.0e}); {} points",
            riem, ric, CURVATURE_TOL, unlisted, UNLISTED_TOL, points
        ),
    ))
}

fn ricci_flat_construction() -> Outcome {
    let base = ProductBase::flat_torus(1);
    let mut alpha = OneForm::zero(base.chart_dim());
    alpha.set(2, field(&base, "1/(2*pi) - sin(x1)"));
    let potential = field(&base, "x1/(2*pi) + cos(x1)");
    let b = build_ricci_flat_config("acceptance", &base, &alpha, Some(potential), 64, Exec::default())?;
    let want = TorusGridField::from_fn(&[64], |x| -4.0 * x[0].cos())?;
    let f_err = b.f_grid.sup_diff(&want);
    let mut ric: f64 = 0.0;
    for p in sampling::sample_points(&b.config.base, 64, 303) {
        ric = ric.max(ricci_brute_force(&b.config, &p)?.amax());
    }
    Ok((
        f_err <= F_B_TOL && ric <= RICCI_FLAT_TOL,
        format!(
            "f_B vs -4 cos x {:.2e} (tol {:.0e}); brute-force sup|Ric| {:.2e} (tol {:.0e}) at 64 points",
            f_err, F_B_TOL, ric, RICCI_FLAT_TOL
        ),
    ))
}

/// Ric(ξ, e_+) from the brute-force chart Ricci tensor.
fn ric_xi_plus(cfg: &BundleConfig, p: &[f64]) -> lorbundle::Result<f64> {
    let ric = ricci_brute_force(cfg, p)?;
    let fr = cfg.frame_at(p)?;
    Ok((fr.xi.transpose() * ric * &fr.e_plus)[(0, 0)])
}

fn einstein_obstruction() -> Outcome {
    let cfg = preset("einstein-fiber");
    let mut fiber: f64 = 0.0;
    for p in sampling::sample_points(&cfg.base, 32, 404) {
        fiber = fiber.max((ric_xi_plus(&cfg, &p)? - 0.5 * p[1].cos()).abs());
    }
    let mut constant: f64 = 0.0;
    for name in PRESET_NAMES {
        let c = preset(name);
        if !c.fiber_constant {
            continue;
        }
        for p in sampling::sample_points(&c.base, 8, 405) {
            constant = constant.max(ric_xi_plus(&c, &p)?.abs());
        }
    }
    Ok((
        fiber <= EINSTEIN_TOL && constant <= FIBER_CONSTANT_TOL,
        format!(
            "f = cos v: |Ric(xi,e+) - cos(v)/2| {:.2e} (tol {:.0e}); fiber-constant f: |Ric(xi,e+)| {:.2e} (tol {:.0e})",
            fiber, EINSTEIN_TOL, constant, FIBER_CONSTANT_TOL
        ),
    ))
}

fn geodesics() -> Outcome {
    let exec = Exec::default();
    let mut energy: f64 = 0.0;
    let mut u_affine: f64 = 0.0;
    for name in PRESET_NAMES {
        let cfg = preset(name);
        let c = killing_constant(&cfg).c;
        let u_affine_expected = cfg.base.eta.rho.as_constant().is_some() && cfg.fiber_constant;
        for i in 0..2 {
            let init = probe_initial_state(&cfg, c, 505, i)?;
            let tr = integrate_geodesic(&cfg, &init, 100.0, &Tolerances::default())?;
            energy = energy.max(tr.energy_drift);
            if u_affine_expected {
                u_affine = u_affine.max(u_affine_residual(&tr));
            }
        }
    }
    let mut structured: f64 = 0.0;
    let tol = Tolerances::reference();
    for name in ["type4", "type4-complete"] {
        let cfg = preset(name);
        let c = killing_constant(&cfg).c;
        let mut inits = vec![{
            let mut p = sampling::sample_points(&cfg.base, 1, 21).remove(0);
            p[2] = 0.4;
            let mut w: Vec<f64> = (0..cfg.dim()).map(|i| 0.3 - 0.1 * i as f64).collect();
            w[U] = 1.0;
            GeodesicState::new(&cfg, 0.0, p, w)?
        }];
        for i in 0..3 {
            inits.push(probe_initial_state(&cfg, c, 606, i)?);
        }
        for init in &inits {
            let a = integrate_geodesic(&cfg, init, 100.0, &tol)?;
            let b = structured_geodesic(&cfg, init, 100.0, &tol)?;
            structured = structured.max(trajectory_discrepancy(&b, &a));
        }
    }
    let mut probes = Vec::new();
    let mut probes_ok = true;
    for name in ["ricci-flat-torus", "type4-complete"] {
        let cfg = preset(name);
        let rep = completeness_probe(&cfg, PROBE_SEEDS, PROBE_HORIZON, 7, &Tolerances::probe(), exec)?;
        probes_ok &= rep.all_reached_horizon && !rep.step_floor_hit;
        probes.push(format!(
            "{}: {}/{} reached T={}, underflow {}",
            name,
            rep.runs.iter().filter(|r| r.reached >= PROBE_HORIZON).count(),
            rep.runs.len(),
            PROBE_HORIZON,
            rep.step_floor_hit
        ));
    }
    Ok((
        energy <= ENERGY_TOL && structured <= STRUCTURED_TOL && u_affine <= U_AFFINE_TOL && probes_ok,
        format!(
            "energy drift {:.2e} (tol {:.0e}); structured vs generic {:.2e} (tol {:.0e}); u affine {:.2e} (tol {:.0e}); {}",
            energy,
            ENERGY_TOL,
            structured,
            STRUCTURED_TOL,
            u_affine,
            U_AFFINE_TOL,
            probes.join("; ")
        ),
    ))
}

fn random_loop(cfg: &BundleConfig, seed: u64) -> lorbundle::Result<ChartPath> {
    let pts = sampling::sample_points(&cfg.base, 3, seed);
    ChartPath::new("random", vec![pts[0].clone(), pts[1].clone(), pts[2].clone(), pts[0].clone()])
}

fn holonomy() -> Outcome {
    let exec = Exec::default();
    let mut orth: f64 = 0.0;
    for name in PRESET_NAMES {
        let cfg = preset(name);
        if !cfg.fiber_constant {
            continue;
        }
        let x0 = sampling::sample_points(&cfg.base, 1, 707).remove(0);
        let mut loops = vec![LoopSpec::UCircle.build(&cfg, &x0)?];
        for s in 0..3 {
            loops.push(random_loop(&cfg, 708 + s)?);
        }
        for l in &loops {
            let s = transport_screen_ode(&cfg, l)?;
            orth = orth.max(s.orthogonality_residual);
        }
    }
    let shapes = [(4, 2, 1), (4, 2, 3), (6, 3, 1)];
    let mut exp: f64 = 0.0;
    let mut exp_used = true;
    let mut dims = Vec::new();
    let mut dims_ok = true;
    let mut type4: f64 = 0.0;
    let mut loops_ok = true;
    let mut configs: Vec<BundleConfig> = Vec::new();
    for &(k, l, m) in &shapes {
        configs.push(build_type4(&format!("type4-{}-{}-{}", k, l, m), k, m, l, "flat", 1.0, 1.0, 0.0)?);
    }
    configs.push(preset("type4-complete"));
    for (idx, cfg) in configs.iter().enumerate() {
        let x0 = sampling::sample_points(&cfg.base, 1, 709).remove(0);
        let mut loops = vec![LoopSpec::UCircle.build(cfg, &x0)?];
        for s in 0..2 {
            loops.push(random_loop(cfg, 710 + s)?);
        }
        for p in &loops {
            let e = commuting_exponential(cfg, p)?;
            exp_used &= e.used_exponential;
            exp = exp.max(e.exp_vs_ode);
            orth = orth.max(e.ode.orthogonality_residual);
        }
        let v = type4_verify(cfg, 8, TYPE4_LOOPS, 711, PhiWeights::Unit, exec)?;
        loops_ok &= v.paths >= TYPE4_LOOPS;
        for x in [
            v.preserves_s1_kills_s2,
            v.phi_of_screen_curvature,
            v.screen_curvature_on_screen,
            v.mixed_curvature,
            v.transport_compatibility,
            v.omega_vs_chart,
            v.endpoint_commutation,
        ] {
            type4 = type4.max(x);
        }
        if idx < shapes.len() {
            let (k, l, m) = shapes[idx];
            let h = sample_holonomy_algebra(cfg, &HolonomySampling::default(), exec)?;
            dims_ok &= h.orthogonal.rank == l && h.orthogonal.determined;
            dims.push(format!("({},{},{})->{}", k, l, m, h.orthogonal.rank));
        }
    }
    Ok((
        orth <= ORTHOGONALITY_TOL && exp_used && exp <= EXPONENTIAL_TOL && dims_ok && type4 <= TYPE4_TOL && loops_ok,
        format!(
            "Omega orthogonality {:.2e} (tol {:.0e}); exp vs ODE {:.2e} (tol {:.0e}); orthogonal dim {}; type-4 conditions {:.2e} (tol {:.0e}) on {} loops per config",
            orth,
            ORTHOGONALITY_TOL,
            exp,
            EXPONENTIAL_TOL,
            dims.join(" "),
            type4,
            TYPE4_TOL,
            TYPE4_LOOPS
        ),
    ))
}

fn screen_integrability() -> Outcome {
    let non = preset("torus-non-integrable-screen").screen_integrability();
    let mut ok = !non.integrable;
    let mut parts = vec![format!("torus-non-integrable-screen -> {}", non.integrable)];
    for name in ["ricci-flat-torus", "ricci-flat-torus2", "recurrent-eta"] {
        let s = preset(name).screen_integrability();
        ok &= s.integrable;
        parts.push(format!("{} -> {}", name, s.integrable));
    }
    Ok((ok, parts.join("; ")))
}

fn gauge_shift_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    let names = ["ricci-flat-torus", "ricci-flat-torus2", "recurrent-eta", "type4", "einstein-fiber", "warped-mixed"];
    for name in names {
        let cfg = preset(name);
        let first = cfg.coord_names()[2].clone();
        for src in [format!("0.3*cos({})", first), format!("0.5*sin({}) + 0.1*cos(u)", first)] {
            let phi = field(&cfg.base, &src);
            let shifted = gauge_shift(&cfg, &phi)?;
            worst = worst.max(metric_discrepancy(&cfg, &shifted, 100, 808));
        }
    }
    Ok((
        worst <= GAUGE_SHIFT_TOL,
        format!("sup |g - g_shifted| {:.2e} (tol {:.0e}) on {} presets, 2 shifts each", worst, GAUGE_SHIFT_TOL, names.len()),
    ))
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 8] = [
        ("connection oracle", 30.0, connection_oracle),
        ("curvature and Ricci oracle", 60.0, curvature_oracle),
        ("Ricci-flat construction", 30.0, ricci_flat_construction),
        ("Einstein obstruction", f64::INFINITY, einstein_obstruction),
        ("geodesics and completeness probes", 180.0, geodesics),
        ("holonomy", 120.0, holonomy),
        ("screen integrability", f64::INFINITY, screen_integrability),
        ("gauge-shift identity", f64::INFINITY, gauge_shift_identity),
    ];
    println!("acceptance ({} worker threads)", Exec::default().threads());
    let mut passed = 0;
    let mut errors = 0;
    for (name, budget, run) in criteria {
        let t = Instant::now();
        let res = run();
        let secs = t.elapsed().as_secs_f64();
        let time = if budget.is_finite() {
            format!("{:.1} s, budget {:.0} s", secs, budget)
        } else {
            format!("{:.1} s", secs)
        };
        match res {
            Ok((ok, detail)) => {
                let ok = ok && secs <= budget;
                passed += ok as usize;
                println!("{} {}: {} [{}]", if ok { "PASS" } else { "FAIL" }, name, detail, time);
            }
            Err(e) => {
                errors += 1;
                println!("FAIL {}: error: {} [{}]", name, e, time);
            }
        }
    }
    println!("{}/{} criteria passed", passed, criteria.len());
    if errors > 0 {
        std::process::exit(1);
    }
}
