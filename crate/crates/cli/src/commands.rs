//! One function per subcommand. Each returns the run summary, its CSV tables
//! and the tolerance checks; nothing here touches the file system.

use std::path::Path;

use anyhow::{bail, Context};
use lorbundle::base_geometry::{U, V};
use lorbundle::bundle_chart::{BundleConfig, FrameLabel, GaugeStrategy, Shape};
use lorbundle::config::ConfigSource;
use lorbundle::curvature::{curvature_report, ricci_brute_force, ricci_flat_residual_at, riemann_brute_force};
use lorbundle::geodesics::{
    completeness_probe, integrate_geodesic, killing_constant, probe_initial_state, structured_geodesic,
    trajectory_discrepancy, u_affine_residual, GeodesicTrajectory, Tolerances,
};
use lorbundle::holonomy::{
    commuting_exponential, sample_holonomy_algebra, transport_generic_chart, type4_verify,
    xi_recurrence_report, HolonomySampling, LoopSpec, PhiWeights, RankEstimate,
};
use lorbundle::par::Exec;
use lorbundle::presets::{descriptor, descriptors};
use lorbundle::report::{format_f64, write_artifacts, Checks, Table};
use lorbundle::ricci_flat::build_ricci_flat_config;
use lorbundle::sampling;
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::Common;

// Tolerances pinned for the command-line checks.
const CONNECTION_TOL: f64 = 1e-6;
const CURVATURE_TOL: f64 = 1e-5;
const UNLISTED_TOL: f64 = 1e-7;
const SYMMETRY_TOL: f64 = 1e-8;
const RICCI_FLAT_TOL: f64 = 1e-7;
const POISSON_EQUATION_TOL: f64 = 1e-8;
const SOLVER_VS_ANALYTIC_TOL: f64 = 1e-10;
const ENERGY_TOL: f64 = 1e-7;
const U_AFFINE_TOL: f64 = 1e-9;
const STRUCTURED_TOL: f64 = 1e-6;
const METRIC_PRESERVATION_TOL: f64 = 1e-8;
const ORTHOGONALITY_TOL: f64 = 1e-9;
const EXPONENTIAL_TOL: f64 = 1e-8;
const SCREEN_VS_GENERIC_TOL: f64 = 1e-7;
const TYPE4_ALGEBRAIC_TOL: f64 = 1e-8;
const TYPE4_CURVATURE_TOL: f64 = 1e-7;
const TYPE4_TRANSPORT_TOL: f64 = 1e-6;
const TYPE4_MIN_PATHS: usize = 20;

pub struct Outcome {
    pub command: &'static str,
    source: Value,
    bundle: String,
    dimension: usize,
    options: Value,
    results: Value,
    tables: Vec<(String, Table)>,
    pub checks: Checks,
}

impl Outcome {
    fn new(command: &'static str, src: &ConfigSource, cfg: &BundleConfig, options: Value) -> Outcome {
        Outcome {
            command,
            source: src.to_json(),
            bundle: cfg.name.clone(),
            dimension: cfg.dim(),
            options,
            results: Value::Null,
            tables: Vec::new(),
            checks: Checks::default(),
        }
    }

    pub fn summary(&self) -> Value {
        json!({
            "command": self.command,
            "config": self.source,
            "bundle": self.bundle,
            "dimension": self.dimension,
            "options": self.options,
            "results": self.results,
            "checks": self.checks,
            "passed": self.checks.all_passed(),
        })
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<Vec<String>> {
        let mut tables = self.tables.clone();
        let mut checks = Table::new(["check", "value", "tolerance", "passed"]);
        for c in &self.checks.0 {
            checks.push(vec![
                c.name.clone(),
                format_f64(c.value),
                format_f64(c.tolerance),
                c.passed.to_string(),
            ]);
        }
        tables.push(("checks.csv".into(), checks));
        Ok(write_artifacts(dir, &self.summary(), &tables)?)
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result types serialize")
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn fold_max(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, f64::max)
}

/// Relative sup-norm difference, relative to max(1, ‖b‖).
fn relative(a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

pub fn preset_listing() -> String {
    let mut s = String::new();
    for d in descriptors() {
        s.push_str(&format!("{:<28} {}\n", d.name, d.summary));
        for (name, default, meaning) in &d.params {
            s.push_str(&format!("    {:<20} {}\n", format!("{}={}", name, default), meaning));
        }
    }
    s
}

pub fn check_curvature(src: &ConfigSource, o: &Common) -> anyhow::Result<Outcome> {
    let cfg = src.build()?;
    let n_points = o.points.unwrap_or(50);
    let mut out = Outcome::new("check-curvature", src, &cfg, json!({"points": n_points, "seed": o.seed}));
    let pts = sampling::sample_points(&cfg.base, n_points, o.seed);
    let labels = FrameLabel::connection_labels(cfg.base.n());
    let rows = Exec::default().map(&pts, |_, p| -> lorbundle::Result<(f64, _, f64)> {
        let mut conn: f64 = 0.0;
        for &x in &labels {
            for &y in &labels {
                let a = cfg.cov_deriv_closed_form(x, y, p)?;
                let b = cfg.cov_deriv_numeric(x, y, p)?;
                conn = conn.max(relative(&a, &b));
            }
        }
        let rep = curvature_report(&cfg, p)?;
        let sup = riemann_brute_force(&cfg, p)?.riemann.max_abs();
        Ok((conn, rep, sup))
    });
    let names = cfg.coord_names();
    let mut header: Vec<String> = names.clone();
    header.extend(
        [
            "connection_discrepancy",
            "riemann_discrepancy",
            "ricci_discrepancy",
            "unlisted_max",
            "symmetry_residual",
            "riemann_sup",
            "ricci_sup",
            "scalar_curvature",
        ]
        .map(String::from),
    );
    let mut table = Table::new(header);
    let mut worst_riemann = (0.0, String::new());
    let mut worst_ricci = (0.0, String::new());
    let (mut conn, mut unlisted, mut sym, mut riem_sup, mut ric_sup) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (p, r) in pts.iter().zip(rows) {
        let (c, rep, sup) = r?;
        let mut row = p.clone();
        row.extend([
            c,
            rep.riemann_discrepancy,
            rep.ricci_discrepancy,
            rep.unlisted_max,
            rep.symmetry_residual,
            sup,
            rep.ricci_sup,
            rep.scalar_curvature,
        ]);
        table.push_numbers(&row);
        conn = conn.max(c);
        unlisted = unlisted.max(rep.unlisted_max);
        sym = sym.max(rep.symmetry_residual);
        riem_sup = riem_sup.max(sup);
        ric_sup = ric_sup.max(rep.ricci_sup);
        if rep.riemann_discrepancy >= worst_riemann.0 {
            worst_riemann = (rep.riemann_discrepancy, rep.worst_riemann_component.clone());
        }
        if rep.ricci_discrepancy >= worst_ricci.0 {
            worst_ricci = (rep.ricci_discrepancy, rep.worst_ricci_component.clone());
        }
    }
    out.results = json!({
        "max_connection_discrepancy": conn,
        "max_riemann_discrepancy": worst_riemann.0,
        "worst_riemann_component": worst_riemann.1,
        "max_ricci_discrepancy": worst_ricci.0,
        "worst_ricci_component": worst_ricci.1,
        "max_unlisted_component": unlisted,
        "max_symmetry_residual": sym,
        "riemann_sup": riem_sup,
        "ricci_sup": ric_sup,
        "screen_integrability": to_json(&cfg.screen_integrability()),
        "fiber_constant": cfg.fiber_constant,
    });
    out.tables.push(("curvature_points.csv".into(), table));
    out.checks.at_most("connection closed form vs brute force (relative)", conn, CONNECTION_TOL);
    out.checks.at_most("Riemann closed form vs brute force (relative)", worst_riemann.0, CURVATURE_TOL);
    out.checks.at_most("Ricci closed form vs brute force (relative)", worst_ricci.0, CURVATURE_TOL);
    out.checks.at_most("components outside the closed-form list", unlisted, UNLISTED_TOL);
    out.checks.at_most("Riemann symmetries", sym, SYMMETRY_TOL);
    Ok(out)
}

pub fn ricci_flat(src: &ConfigSource, o: &Common) -> anyhow::Result<Outcome> {
    let cfg = src.build()?;
    let res = o.resolution.unwrap_or(64);
    let mut out = Outcome::new("ricci-flat", src, &cfg, json!({"resolution": res}));
    let (alpha, potential) = match &cfg.gauge {
        GaugeStrategy::AlphaWedgeEta { alpha, alpha_potential } => (alpha.clone(), alpha_potential.clone()),
        _ => bail!("ricci-flat needs a configuration with Psi = alpha ^ eta (alpha_wedge_eta gauge)"),
    };
    let exec = Exec::default();
    let build = build_ricci_flat_config(&cfg.name, &cfg.base, &alpha, potential, res, exec)?;
    let built = &build.config;
    let torus: Vec<usize> = (2..cfg.dim()).collect();
    let chart_point = |x: &[f64]| {
        let mut p = vec![0.0; cfg.dim()];
        p[U] = 0.5;
        p[V] = 0.25;
        for (a, &c) in torus.iter().enumerate() {
            p[c] = x[a];
        }
        p
    };
    let grid = &build.f_grid;
    let rows = exec.map_range(grid.len(), |i| -> lorbundle::Result<[f64; 3]> {
        let p = chart_point(&grid.point(i));
        let ric = ricci_brute_force(built, &p)?.amax();
        let eq = ricci_flat_residual_at(built, &p)?.abs();
        Ok([cfg.f.value(&p), eq, ric])
    });
    let rows = rows.into_iter().collect::<lorbundle::Result<Vec<_>>>()?;
    let names = cfg.coord_names();
    let mut header: Vec<String> = torus.iter().map(|&c| names[c].clone()).collect();
    header.extend(["f_solver", "f_config", "rhs", "equation_residual", "ricci_sup"].map(String::from));
    let mut table = Table::new(header);
    let config_mean = rows.iter().map(|r| r[0]).sum::<f64>() / rows.len() as f64;
    let mut vs_config: f64 = 0.0;
    for (i, r) in rows.iter().enumerate() {
        let mut row = grid.point(i);
        row.extend([grid.values[i], r[0], build.rhs_grid.values[i], r[1], r[2]]);
        table.push_numbers(&row);
        vs_config = vs_config.max((grid.values[i] - (r[0] - config_mean)).abs());
    }
    let eq = fold_max(rows.iter().map(|r| r[1]));
    let ric = fold_max(rows.iter().map(|r| r[2]));
    let analytic = matches!(cfg.shape, Shape::RicciFlat(_));
    out.results = json!({
        "build": to_json(&build),
        "solver_vs_config_f": if analytic { json!(vs_config) } else { Value::Null },
        "equation_residual_sup": eq,
        "ricci_sup": ric,
        "grid_points": grid.len(),
    });
    out.tables.push(("residual.csv".into(), table));
    if analytic {
        out.checks.at_most("solver f_B vs analytic f_B", vs_config, SOLVER_VS_ANALYTIC_TOL);
    }
    out.checks.at_most("Poisson solver residual", build.solver_residual, POISSON_EQUATION_TOL);
    out.checks.at_most("Laplacian f_B + 4 div alpha on the grid", eq, POISSON_EQUATION_TOL);
    out.checks.at_most("brute-force Ricci sup", ric, RICCI_FLAT_TOL);
    Ok(out)
}

fn trajectory_rows(table: &mut Table, index: usize, tr: &GeodesicTrajectory) {
    for (k, st) in tr.points.iter().enumerate() {
        let mut row = vec![index as f64, st.t];
        row.extend((0..st.position.len()).map(|i| if i == V { st.position[i] } else { tr.unwrapped(k, i) }));
        row.extend(&st.velocity);
        row.push(st.energy);
        table.push_numbers(&row);
    }
}

pub fn geodesic(src: &ConfigSource, o: &Common) -> anyhow::Result<Outcome> {
    let cfg = src.build()?;
    let (n, horizon) = (o.n.unwrap_or(1), o.t.unwrap_or(100.0));
    let mut out = Outcome::new("geodesic", src, &cfg, json!({"n": n, "T": horizon, "seed": o.seed}));
    let tol = Tolerances::reference();
    let c = killing_constant(&cfg).c;
    let structured = matches!(cfg.shape, Shape::Type4(_));
    let u_affine = cfg.base.eta.rho.as_constant().is_some() && cfg.fiber_constant;
    let runs = Exec::default().map_range(n, |i| -> lorbundle::Result<_> {
        let init = probe_initial_state(&cfg, c, o.seed, i)?;
        let tr = integrate_geodesic(&cfg, &init, horizon, &tol)?;
        let st = if structured {
            Some(structured_geodesic(&cfg, &init, horizon, &tol)?)
        } else {
            None
        };
        Ok((tr, st))
    });
    let names = cfg.coord_names();
    let mut header = vec!["geodesic".to_string(), "t".to_string()];
    header.extend(names.iter().cloned());
    header.extend(names.iter().map(|x| format!("d{}", x)));
    header.push("energy".into());
    let mut table = Table::new(header);
    let mut summaries = Vec::new();
    for (i, r) in runs.into_iter().enumerate() {
        let (tr, st) = r?;
        trajectory_rows(&mut table, i, &tr);
        let ua = u_affine_residual(&tr);
        let disc = st.as_ref().map(|s| trajectory_discrepancy(s, &tr));
        out.checks.holds(format!("geodesic {} reaches T", i), tr.completed() && tr.reached >= horizon);
        out.checks.at_most(format!("geodesic {} energy drift", i), tr.energy_drift, ENERGY_TOL);
        if u_affine {
            out.checks.at_most(format!("geodesic {} u(t) affine", i), ua, U_AFFINE_TOL);
        }
        if let Some(d) = disc {
            out.checks.at_most(format!("geodesic {} structured vs generic", i), d, STRUCTURED_TOL);
        }
        summaries.push(json!({
            "index": i,
            "start": tr.points[0].position,
            "start_velocity": tr.points[0].velocity,
            "reached": tr.reached,
            "step_floor_hit": tr.step_floor_hit,
            "failure": tr.failure,
            "energy": tr.points[0].energy,
            "energy_drift": tr.energy_drift,
            "u_affine_residual": ua,
            "structured_discrepancy": disc,
            "accepted_steps": tr.accepted_steps,
        }));
    }
    out.results = json!({ "tolerances": to_json(&tol), "geodesics": summaries });
    out.tables.push(("trajectory.csv".into(), table));
    Ok(out)
}

pub fn probe(src: &ConfigSource, o: &Common) -> anyhow::Result<Outcome> {
    let cfg = src.build()?;
    let (n, horizon) = (o.n.unwrap_or(100), o.t.unwrap_or(1000.0));
    let mut out = Outcome::new("probe", src, &cfg, json!({"n": n, "T": horizon, "seed": o.seed}));
    let tol = Tolerances::probe();
    let rep = completeness_probe(&cfg, n, horizon, o.seed, &tol, Exec::default())?;
    let mut table = Table::new([
        "index",
        "reached",
        "step_floor_hit",
        "energy_drift",
        "sup_g_r",
        "sup_lie",
        "sup_lie_first_half",
        "sup_lie_second_half",
        "killing_rate_residual",
        "equation_residual",
        "accepted_steps",
    ]);
    for r in &rep.runs {
        table.push(vec![
            r.index.to_string(),
            format_f64(r.reached),
            r.step_floor_hit.to_string(),
            format_f64(r.energy_drift),
            format_f64(r.sup_g_r),
            format_f64(r.sup_lie),
            format_f64(r.sup_lie_first_half),
            format_f64(r.sup_lie_second_half),
            format_f64(r.killing_rate_residual),
            format_f64(r.equation_residual),
            r.accepted_steps.to_string(),
        ]);
    }
    out.checks.holds("no step-size underflow", !rep.step_floor_hit);
    out.checks.holds("every geodesic reaches T", rep.all_reached_horizon);
    let mut results = to_json(&rep);
    results["no_underflow"] = json!(!rep.step_floor_hit);
    results["tolerances"] = to_json(&tol);
    out.results = results;
    out.tables.push(("probe_runs.csv".into(), table));
    Ok(out)
}

pub fn holonomy(src: &ConfigSource, o: &Common, specs: &[String]) -> anyhow::Result<Outcome> {
    let cfg = src.build()?;
    let base = sampling::sample_points(&cfg.base, 1, o.seed).remove(0);
    let mut loops = Vec::new();
    if specs.is_empty() {
        loops.push(LoopSpec::UCircle);
        for c in 2..cfg.dim() {
            if cfg.base.is_periodic(c) {
                loops.push(LoopSpec::Cycle(c));
            }
        }
        if cfg.dim() > 2 {
            loops.push(LoopSpec::Rectangle { i: U, j: 2, side: 0.5 });
        }
    } else {
        for s in specs {
            loops.push(LoopSpec::parse(s, &cfg)?);
        }
    }
    let labels: Vec<String> = loops.iter().map(|l| l.label(&cfg)).collect();
    let mut out = Outcome::new(
        "holonomy",
        src,
        &cfg,
        json!({"seed": o.seed, "basepoint": base, "loops": labels}),
    );
    let mut table = Table::new(["loop", "matrix", "row", "col", "value"]);
    let mut per_loop = Vec::new();
    for l in &loops {
        let path = l.build(&cfg, &base).with_context(|| format!("loop {}", l.label(&cfg)))?;
        let g = transport_generic_chart(&cfg, &path)?;
        let mut entry = to_json(&g);
        let mut mats = vec![("chart", g.chart.clone()), ("frame", g.frame.clone())];
        out.checks
            .at_most(format!("{}: metric preserved", path.label), g.metric_residual, METRIC_PRESERVATION_TOL);
        if cfg.fiber_constant {
            let e = commuting_exponential(&cfg, &path)?;
            let s = &e.ode;
            let screen_vs_generic = (&g.frame - &s.frame).amax();
            out.checks
                .at_most(format!("{}: Omega orthogonal", path.label), s.orthogonality_residual, ORTHOGONALITY_TOL);
            out.checks
                .at_most(format!("{}: det Omega = 1", path.label), (s.determinant - 1.0).abs(), ORTHOGONALITY_TOL);
            out.checks
                .at_most(format!("{}: screen ODE vs generic transport", path.label), screen_vs_generic, SCREEN_VS_GENERIC_TOL);
            if e.used_exponential {
                out.checks.at_most(format!("{}: exponential vs ODE", path.label), e.exp_vs_ode, EXPONENTIAL_TOL);
                out.checks
                    .at_most(format!("{}: endpoint commutation", path.label), e.endpoint_commutation, EXPONENTIAL_TOL);
            }
            entry["omega"] = matrix_json(&e.omega);
            entry["fiber"] = json!(s.fiber.iter().copied().collect::<Vec<f64>>());
            entry["orthogonality_residual"] = json!(s.orthogonality_residual);
            entry["determinant"] = json!(s.determinant);
            entry["screen_vs_generic"] = json!(screen_vs_generic);
            entry["used_exponential"] = json!(e.used_exponential);
            entry["commutator_sup"] = json!(e.commutator_sup);
            entry["exp_vs_ode"] = json!(e.exp_vs_ode);
            entry["endpoint_commutation"] = json!(e.endpoint_commutation);
            mats.push(("omega", e.omega.clone()));
        }
        for (name, m) in mats {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    table.push(vec![
                        path.label.clone(),
                        name.to_string(),
                        r.to_string(),
                        c.to_string(),
                        format_f64(m[(r, c)]),
                    ]);
                }
            }
        }
        per_loop.push(entry);
    }
    out.results = json!({ "fiber_constant": cfg.fiber_constant, "loops": per_loop });
    out.tables.push(("transport_matrices.csv".into(), table));
    Ok(out)
}

fn rank_rows(table: &mut Table, part: &str, r: &RankEstimate) {
    for (i, s) in r.singular_values.iter().enumerate() {
        table.push(vec![part.into(), i.to_string(), format_f64(*s), (i < r.rank).to_string()]);
    }
}

pub fn classify(src: &ConfigSource, o: &Common) -> anyhow::Result<Outcome> {
    let cfg = src.build()?;
    let opts = HolonomySampling {
        points: o.points.unwrap_or(HolonomySampling::default().points),
        seed: o.seed,
        ..Default::default()
    };
    let mut out = Outcome::new("classify", src, &cfg, json!({"points": opts.points, "seed": o.seed}));
    let h = sample_holonomy_algebra(&cfg, &opts, Exec::default())?;
    let xi = xi_recurrence_report(&cfg, 16, o.seed)?;
    let mut table = Table::new(["part", "index", "singular_value", "counted"]);
    for (part, r) in [
        ("full", &h.full),
        ("scaling", &h.scaling),
        ("orthogonal", &h.orthogonal),
        ("translation", &h.translation),
    ] {
        rank_rows(&mut table, part, r);
        out.checks.holds(format!("{} rank is separated from the noise", part), r.determined);
    }
    if let Some(want) = src.preset_name().and_then(|n| descriptor(n).ok()).and_then(|d| d.expected.holonomy) {
        out.checks
            .holds(format!("holonomy type {} (expected {})", h.holonomy_type, want), h.holonomy_type == want);
    }
    out.results = json!({
        "holonomy": to_json(&h),
        "xi_recurrence": to_json(&xi),
        "screen_integrability": to_json(&cfg.screen_integrability()),
    });
    out.tables.push(("singular_values.csv".into(), table));
    Ok(out)
}

pub fn verify_type4(src: &ConfigSource, o: &Common) -> anyhow::Result<Outcome> {
    let cfg = src.build()?;
    let (points, paths) = (o.points.unwrap_or(8), o.n.unwrap_or(TYPE4_MIN_PATHS));
    let mut out = Outcome::new(
        "verify-type4",
        src,
        &cfg,
        json!({"points": points, "paths": paths, "seed": o.seed}),
    );
    let exec = Exec::default();
    let v = type4_verify(&cfg, points, paths, o.seed, PhiWeights::Unit, exec)?;
    let h = sample_holonomy_algebra(
        &cfg,
        &HolonomySampling {
            seed: o.seed,
            ..Default::default()
        },
        exec,
    )?;
    let c = &mut out.checks;
    c.at_most("curvature preserves S1 and kills S2", v.preserves_s1_kills_s2, TYPE4_ALGEBRAIC_TOL);
    c.at_most("phi of screen curvature on the screen", v.phi_of_screen_curvature, TYPE4_CURVATURE_TOL);
    c.at_most("screen curvature on the screen", v.screen_curvature_on_screen, TYPE4_CURVATURE_TOL);
    c.at_most("mixed curvature R(e+, X)Y matches phi", v.mixed_curvature, TYPE4_CURVATURE_TOL);
    c.at_most("phi is compatible with transport", v.transport_compatibility, TYPE4_TRANSPORT_TOL);
    c.at_most("screen ODE vs chart transport on S1", v.omega_vs_chart, TYPE4_CURVATURE_TOL);
    c.at_most("psi commutes with Omega at the endpoint", v.endpoint_commutation, TYPE4_ALGEBRAIC_TOL);
    c.holds(format!("at least {} transport paths ({})", TYPE4_MIN_PATHS, v.paths), v.paths >= TYPE4_MIN_PATHS);
    c.holds(
        format!("orthogonal part has dimension l = {} (found {})", v.l, h.orthogonal.rank),
        h.orthogonal.rank == v.l && h.orthogonal.determined,
    );
    c.holds(format!("holonomy type {} is 4", h.holonomy_type), h.holonomy_type == "4");
    let mut table = Table::new(["condition", "value"]);
    for (name, x) in [
        ("preserves_s1_kills_s2", v.preserves_s1_kills_s2),
        ("phi_of_screen_curvature", v.phi_of_screen_curvature),
        ("screen_curvature_on_screen", v.screen_curvature_on_screen),
        ("mixed_curvature", v.mixed_curvature),
        ("transport_compatibility", v.transport_compatibility),
        ("omega_vs_chart", v.omega_vs_chart),
        ("endpoint_commutation", v.endpoint_commutation),
    ] {
        table.push(vec![name.into(), format_f64(x)]);
    }
    out.results = json!({ "verification": to_json(&v), "holonomy": to_json(&h) });
    out.tables.push(("conditions.csv".into(), table));
    Ok(out)
}

pub fn report(src: &ConfigSource, o: &Common) -> anyhow::Result<Outcome> {
    let cfg = src.build()?;
    let points = o.points.unwrap_or(24);
    let (n, horizon) = (o.n.unwrap_or(8), o.t.unwrap_or(100.0));
    let mut out = Outcome::new(
        "report",
        src,
        &cfg,
        json!({"points": points, "n": n, "T": horizon, "seed": o.seed}),
    );
    let exec = Exec::default();
    let screen = cfg.screen_integrability();
    let pts = sampling::sample_points(&cfg.base, points, o.seed);
    let ric = exec
        .map(&pts, |_, p| ricci_brute_force(&cfg, p).map(|r| r.amax()))
        .into_iter()
        .collect::<lorbundle::Result<Vec<f64>>>()?;
    let ric = fold_max(ric);
    let h = sample_holonomy_algebra(
        &cfg,
        &HolonomySampling {
            points,
            seed: o.seed,
            ..Default::default()
        },
        exec,
    )?;
    let probe = completeness_probe(&cfg, n, horizon, o.seed, &Tolerances::probe(), exec)?;
    let complete = probe.all_reached_horizon && !probe.step_floor_hit;
    let observed = json!({
        "screen_integrable": screen.integrable,
        "ricci_flat": ric <= RICCI_FLAT_TOL,
        "fiber_constant": cfg.fiber_constant,
        "holonomy": h.holonomy_type,
        "complete": complete,
    });
    let mut table = Table::new(["property", "expected", "observed"]);
    let expected = src.preset_name().and_then(|n| descriptor(n).ok()).map(|d| d.expected);
    let mut row = |name: &str, want: Option<String>, got: String, checks: &mut Checks| {
        if let Some(w) = &want {
            checks.holds(format!("{}: expected {}, observed {}", name, w, got), *w == got);
        }
        table.push(vec![name.into(), want.unwrap_or_default(), got]);
    };
    let e = expected.as_ref();
    row("screen_integrable", e.map(|e| e.screen_integrable.to_string()), screen.integrable.to_string(), &mut out.checks);
    row("ricci_flat", e.map(|e| e.ricci_flat.to_string()), (ric <= RICCI_FLAT_TOL).to_string(), &mut out.checks);
    row("fiber_constant", e.map(|e| e.fiber_constant.to_string()), cfg.fiber_constant.to_string(), &mut out.checks);
    row(
        "holonomy",
        e.and_then(|e| e.holonomy.map(String::from)),
        h.holonomy_type.clone(),
        &mut out.checks,
    );
    row("complete", e.and_then(|e| e.complete.map(|c| c.to_string())), complete.to_string(), &mut out.checks);
    out.results = json!({
        "expected": expected.map(|e| to_json(&e)),
        "observed": observed,
        "max_eta_wedge_psi": screen.max_eta_wedge_psi,
        "ricci_sup": ric,
        "holonomy": to_json(&h),
        "probe": {
            "all_reached_horizon": probe.all_reached_horizon,
            "step_floor_hit": probe.step_floor_hit,
            "max_energy_drift": probe.max_energy_drift,
            "sup_g_r": probe.sup_g_r,
            "sup_lie": probe.sup_lie,
        },
    });
    out.tables.push(("expected_outcomes.csv".into(), table));
    Ok(out)
}
