//! Parallel transport along chart paths, the sampled holonomy algebra, and the
//! type-4 structure checks.
//!
//! Paths are piecewise straight in chart coordinates and may leave [0, 2π) in
//! periodic directions. A path whose end is identified with its start through
//! the chart transitions is closed; its transport is composed with the
//! Jacobian of those transitions so that it acts on the tangent space at the
//! start.
//!
//! Frame matrices are always written in the basis (e_1..e_n, e_+, ξ) with
//! columns holding images.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ode_solvers::dop_shared::OutputType;
use ode_solvers::{Dop853, System};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Serialize, Serializer};

use crate::base_geometry::{U, V};
use crate::bundle_chart::{BundleConfig, Shape, Type4Shape};
use crate::curvature::riemann_brute_force;
use crate::error::{Error, Result};
use crate::field::Order;
use crate::par::Exec;
use crate::sampling;

pub const TRANSPORT_RTOL: f64 = 1e-12;
pub const TRANSPORT_ATOL: f64 = 1e-14;
/// Largest sampled ‖[A(s), A(t)]‖ for which the exponential shortcut is used.
pub const COMMUTATION_TOL: f64 = 1e-10;
/// Singular values below this fraction of the largest one count as zero.
pub const RANK_FLOOR: f64 = 1e-7;
/// Minimum ratio between the last kept and first dropped singular value.
pub const RANK_GAP: f64 = 1e3;
/// ξ-parallel when sup |∂_v f| stays below this.
pub const XI_PARALLEL_TOL: f64 = 1e-10;
const CLOSE_TOL: f64 = 1e-9;
/// Sample points per segment for domain checks and generator sampling.
const SEGMENT_SAMPLES: usize = 16;

pub(crate) fn matrix_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows.serialize(s)
}

fn vector_entries<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.as_slice().serialize(s)
}

// ---------------------------------------------------------------------------
// Paths and loops

/// Piecewise-linear path through chart waypoints.
#[derive(Clone, Debug, Serialize)]
pub struct ChartPath {
    pub label: String,
    pub waypoints: Vec<Vec<f64>>,
}

impl ChartPath {
    pub fn new(label: impl Into<String>, waypoints: Vec<Vec<f64>>) -> Result<ChartPath> {
        if waypoints.len() < 2 {
            return Err(Error::Domain("a path needs at least two waypoints".into()));
        }
        let d = waypoints[0].len();
        if waypoints.iter().any(|w| w.len() != d || w.iter().any(|x| !x.is_finite())) {
            return Err(Error::Domain(
                "path waypoints must be finite and of equal dimension".into(),
            ));
        }
        Ok(ChartPath {
            label: label.into(),
            waypoints,
        })
    }

    pub fn dim(&self) -> usize {
        self.waypoints[0].len()
    }

    pub fn start(&self) -> &[f64] {
        &self.waypoints[0]
    }

    pub fn end(&self) -> &[f64] {
        self.waypoints.last().expect("at least two waypoints")
    }

    pub fn segments(&self) -> impl Iterator<Item = (&[f64], &[f64])> + '_ {
        self.waypoints.windows(2).map(|w| (&w[0][..], &w[1][..]))
    }

    /// `self` followed by `next`; the chart end of `self` must be the start of `next`.
    pub fn then(&self, next: &ChartPath) -> Result<ChartPath> {
        let gap = self
            .end()
            .iter()
            .zip(next.start())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if next.dim() != self.dim() || gap > 1e-12 {
            return Err(Error::Domain(format!(
                "cannot concatenate '{}' and '{}': endpoints differ by {:.3e}",
                self.label, next.label, gap
            )));
        }
        let mut w = self.waypoints.clone();
        w.extend(next.waypoints[1..].iter().cloned());
        ChartPath::new(format!("{}*{}", self.label, next.label), w)
    }

    pub fn reversed(&self) -> ChartPath {
        let mut w = self.waypoints.clone();
        w.reverse();
        ChartPath {
            label: format!("{}^-1", self.label),
            waypoints: w,
        }
    }
}

/// Named loop generators.
#[derive(Clone, Debug, PartialEq)]
pub enum LoopSpec {
    /// Once around the u circle.
    UCircle,
    /// Once around the periodic chart coordinate with this index.
    Cycle(usize),
    /// Square in the (i, j) chart plane traversed +j, +i, −j, −i, so that its
    /// transport is I + side²·R(∂_i, ∂_j) + O(side³).
    Rectangle { i: usize, j: usize, side: f64 },
    Waypoints(Vec<Vec<f64>>),
}

impl LoopSpec {
    /// Parses `u-circle`, `torus-cycle(c)`, `rectangle(c1,c2,side)` or a
    /// `;`-separated list of comma-separated waypoints. A coordinate `c` is a
    /// name such as `x1` or a 1-based base factor number.
    pub fn parse(src: &str, cfg: &BundleConfig) -> Result<LoopSpec> {
        let s = src.trim();
        let bad = |m: String| Error::Parse {
            path: "loop".into(),
            message: m,
        };
        let coord = |t: &str| -> Result<usize> {
            let t = t.trim();
            if let Ok(i) = t.parse::<usize>() {
                if i >= 1 && i <= cfg.base.n() {
                    return Ok(i + 1);
                }
                return Err(bad(format!("base factor {} out of range 1..={}", i, cfg.base.n())));
            }
            cfg.base
                .coord_index(t)
                .ok_or_else(|| bad(format!("unknown coordinate '{}'", t)))
        };
        let args = |head: &str| -> Option<Vec<String>> {
            s.strip_prefix(head)
                .and_then(|r| r.strip_prefix('('))
                .and_then(|r| r.strip_suffix(')'))
                .map(|r| r.split(',').map(|x| x.trim().to_string()).collect())
        };
        if s == "u-circle" {
            return Ok(LoopSpec::UCircle);
        }
        if let Some(a) = args("torus-cycle") {
            if a.len() != 1 {
                return Err(bad("torus-cycle takes one coordinate".into()));
            }
            return Ok(LoopSpec::Cycle(coord(&a[0])?));
        }
        if let Some(a) = args("rectangle") {
            if a.len() != 3 {
                return Err(bad("rectangle takes two coordinates and a side".into()));
            }
            let side: f64 = a[2]
                .parse()
                .map_err(|_| bad(format!("side '{}' is not a number", a[2])))?;
            return Ok(LoopSpec::Rectangle {
                i: coord(&a[0])?,
                j: coord(&a[1])?,
                side,
            });
        }
        let mut pts = Vec::new();
        for (k, chunk) in s.split(';').enumerate() {
            let p: std::result::Result<Vec<f64>, _> = chunk.split(',').map(|x| x.trim().parse::<f64>()).collect();
            match p {
                Ok(p) if p.len() == cfg.dim() => pts.push(p),
                _ => {
                    return Err(Error::Parse {
                        path: format!("loop[{}]", k),
                        message: format!("expected {} comma-separated numbers", cfg.dim()),
                    })
                }
            }
        }
        Ok(LoopSpec::Waypoints(pts))
    }

    pub fn label(&self, cfg: &BundleConfig) -> String {
        let names = cfg.coord_names();
        match self {
            LoopSpec::UCircle => "u-circle".into(),
            LoopSpec::Cycle(c) => format!("torus-cycle({})", names[*c]),
            LoopSpec::Rectangle { i, j, side } => format!("rectangle({},{},{})", names[*i], names[*j], side),
            LoopSpec::Waypoints(w) => format!("waypoints({})", w.len()),
        }
    }

    /// Chart path of this loop starting at `base`.
    pub fn build(&self, cfg: &BundleConfig, base: &[f64]) -> Result<ChartPath> {
        let d = cfg.dim();
        if base.len() != d {
            return Err(Error::Domain(format!("basepoint needs {} coordinates", d)));
        }
        let label = self.label(cfg);
        match self {
            LoopSpec::UCircle => ChartPath::new(label, vec![base.to_vec(), cycle_end(cfg, base, U)?]),
            LoopSpec::Cycle(c) => {
                if *c == V {
                    return Err(Error::Domain("the fiber circle is not a base cycle".into()));
                }
                ChartPath::new(label, vec![base.to_vec(), cycle_end(cfg, base, *c)?])
            }
            LoopSpec::Rectangle { i, j, side } => {
                if i == j || *i >= d || *j >= d || *i == V || *j == V {
                    return Err(Error::Domain("rectangle needs two distinct base coordinates".into()));
                }
                let mut a = base.to_vec();
                let mut w = vec![a.clone()];
                a[*j] += side;
                w.push(a.clone());
                a[*i] += side;
                w.push(a.clone());
                a[*j] -= side;
                w.push(a.clone());
                w.push(base.to_vec());
                ChartPath::new(label, w)
            }
            LoopSpec::Waypoints(pts) => {
                let mut w = vec![base.to_vec()];
                w.extend(pts.iter().cloned());
                if w.last().map(|l| l.as_slice()) != Some(base) {
                    w.push(base.to_vec());
                }
                ChartPath::new(label, w)
            }
        }
    }
}

/// Chart end point of one turn around coordinate `c`: c grows by 2π and v is
/// adjusted so that the transition brings the end back to `start`.
fn cycle_end(cfg: &BundleConfig, start: &[f64], c: usize) -> Result<Vec<f64>> {
    let t = cfg
        .transitions
        .iter()
        .find(|t| t.coord == c)
        .ok_or_else(|| Error::Domain(format!("coordinate {} has no chart transition", cfg.coord_names()[c])))?;
    let mut end = start.to_vec();
    end[c] += 2.0 * PI;
    for _ in 0..6 {
        let (q, _) = cfg.apply_transition(t, &end);
        end[V] += start[V] - q[V];
    }
    Ok(end)
}

/// Jacobian of the transitions identifying `end` with `start`, if they are identified.
pub fn closing_map(cfg: &BundleConfig, start: &[f64], end: &[f64]) -> Option<DMatrix<f64>> {
    let d = cfg.dim();
    let mut q = end.to_vec();
    let mut jac = DMatrix::<f64>::identity(d, d);
    for _ in 0..8 {
        let mut moved = false;
        for t in &cfg.transitions {
            let c = t.coord;
            let mut guard = 0;
            while q[c] - start[c] > PI && guard < 64 {
                let (q2, j) = cfg.apply_transition(t, &q);
                jac = j * jac;
                q = q2;
                moved = true;
                guard += 1;
            }
            while q[c] - start[c] < -PI && guard < 64 {
                // preimage under the forward transition
                let mut up = q.clone();
                up[c] += 2.0 * PI;
                for _ in 0..6 {
                    let (img, _) = cfg.apply_transition(t, &up);
                    up[V] += q[V] - img[V];
                }
                let (_, j) = cfg.apply_transition(t, &up);
                jac = j.try_inverse()? * jac;
                q = up;
                moved = true;
                guard += 1;
            }
        }
        if !moved {
            break;
        }
    }
    let closed = (0..d).all(|i| (q[i] - start[i]).abs() <= CLOSE_TOL * (1.0 + start[i].abs()));
    closed.then_some(jac)
}

fn point_on(a: &[f64], dir: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(dir).map(|(x, v)| x + t * v).collect()
}

fn direction(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| y - x).collect()
}

/// Checks that the metric and its connection exist along the path.
fn validate_path(cfg: &BundleConfig, path: &ChartPath) -> Result<()> {
    if path.dim() != cfg.dim() {
        return Err(Error::Domain(format!(
            "path '{}' has dimension {}, config has {}",
            path.label,
            path.dim(),
            cfg.dim()
        )));
    }
    for (a, b) in path.segments() {
        let dir = direction(a, b);
        for s in 0..=SEGMENT_SAMPLES {
            let p = point_on(a, &dir, s as f64 / SEGMENT_SAMPLES as f64);
            let ok = cfg
                .christoffel_g_numeric(&p)
                .map(|g| g.data.iter().all(|x| x.is_finite()))
                .unwrap_or(false);
            if !ok {
                return Err(Error::Domain(format!(
                    "path '{}' leaves the chart domain near {:?}",
                    path.label, p
                )));
            }
        }
    }
    Ok(())
}

/// Integrates over t ∈ [0, 1]. The systems read t from the last state
/// component: Dop853 in ode_solvers loses its order on non-autonomous systems.
fn integrate_segment<F: System<f64, DVector<f64>>>(f: F, y0: DVector<f64>) -> Result<(DVector<f64>, usize)> {
    let mut y0 = y0.push(0.0);
    let last = y0.len() - 1;
    y0[last] = 0.0;
    // stiffness detection misfires on these smooth linear systems
    let mut solver = Dop853::from_param(
        f,
        0.0,
        1.0,
        1.0,
        y0,
        TRANSPORT_RTOL,
        TRANSPORT_ATOL,
        0.9,
        0.0,
        0.333,
        6.0,
        1.0,
        0.0,
        1_000_000,
        u32::MAX,
        OutputType::Sparse,
    );
    let stats = solver
        .integrate()
        .map_err(|e| Error::Numerical(format!("transport integration failed: {:?}", e)))?;
    let y = solver
        .y_out()
        .last()
        .cloned()
        .ok_or_else(|| Error::Numerical("transport integration produced no output".into()))?;
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("transport left the chart domain".into()));
    }
    Ok((y.rows(0, last).into_owned(), stats.accepted_steps as usize))
}

// ---------------------------------------------------------------------------
// Generic chart transport

struct ChartTransport<'a> {
    cfg: &'a BundleConfig,
    a: &'a [f64],
    dir: Vec<f64>,
}

impl System<f64, DVector<f64>> for ChartTransport<'_> {
    fn system(&self, _: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let d = self.cfg.dim();
        let p = point_on(self.a, &self.dir, y[d * d]);
        dy[d * d] = 1.0;
        let gamma = match self.cfg.christoffel_g_numeric(&p) {
            Ok(g) => g,
            Err(_) => {
                dy.fill(f64::NAN);
                return;
            }
        };
        // G[a][c] = Γ^a_bc γ̇^b
        let mut gv = vec![0.0; d * d];
        for a in 0..d {
            for (b, &vb) in self.dir.iter().enumerate() {
                if vb == 0.0 {
                    continue;
                }
                for c in 0..d {
                    gv[a * d + c] += gamma.get(a, b, c) * vb;
                }
            }
        }
        for j in 0..d {
            for a in 0..d {
                let s: f64 = (0..d).map(|c| gv[a * d + c] * y[c + d * j]).sum();
                dy[a + d * j] = -s;
            }
        }
    }
}

/// Parallel transport operator of a path.
#[derive(Clone, Debug, Serialize)]
pub struct TransportOperator {
    pub label: String,
    pub closed: bool,
    /// Chart components; for closed paths composed with the closing transitions.
    #[serde(serialize_with = "matrix_rows")]
    pub chart: DMatrix<f64>,
    /// The same map between adapted frames at the start and at the (identified) end.
    #[serde(serialize_with = "matrix_rows")]
    pub frame: DMatrix<f64>,
    /// ‖Mᵀ g_end M − g_start‖ relative to ‖g_start‖.
    pub metric_residual: f64,
    pub steps: usize,
}

/// Integrates Ẋ = −Γ(γ̇)X for the chart basis along the path.
pub fn transport_generic_chart(cfg: &BundleConfig, path: &ChartPath) -> Result<TransportOperator> {
    validate_path(cfg, path)?;
    let d = cfg.dim();
    let mut y = DVector::from_column_slice(DMatrix::<f64>::identity(d, d).as_slice());
    let mut steps = 0;
    for (a, b) in path.segments() {
        let sys = ChartTransport {
            cfg,
            a,
            dir: direction(a, b),
        };
        let (y1, s) = integrate_segment(sys, y)?;
        y = y1;
        steps += s;
    }
    let m = DMatrix::from_column_slice(d, d, y.as_slice());
    let start = path.start();
    let (chart, end_point, closed) = match closing_map(cfg, start, path.end()) {
        Some(j) => (j * m, start.to_vec(), true),
        None => (m, path.end().to_vec(), false),
    };
    let g0 = cfg.metric(start);
    let g1 = cfg.metric(&end_point);
    let metric_residual = (chart.transpose() * &g1 * &chart - &g0).amax() / (1.0 + g0.amax());
    let f0 = cfg.frame_at(start)?.basis();
    let f1 = cfg.frame_at(&end_point)?.basis();
    let frame = solve(&f1, &(&chart * &f0))?;
    Ok(TransportOperator {
        label: path.label.clone(),
        closed,
        chart,
        frame,
        metric_residual,
        steps,
    })
}

fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular frame matrix".into()))
}

// ---------------------------------------------------------------------------
// Screen transport

/// A = −ω(δ̇) − η(γ̇)ψ on the screen, in the basis E_1..E_n. ω is the connection
/// form of the base frame, zero on flat product bases.
pub fn screen_generator(cfg: &BundleConfig, p: &[f64], dir: &[f64]) -> Result<DMatrix<f64>> {
    let base = &cfg.base;
    let n = base.n();
    let bf = base.frame(p)?;
    let gh = base.christoffel_h(p)?;
    let h = base.metric(p);
    let mut delta = DVector::from_column_slice(dir);
    delta[V] = 0.0;
    let mut omega = DMatrix::zeros(n, n);
    for i in 0..n {
        let nab = &bf.de[i] * &delta + gh.contract(&delta, &bf.e[i]);
        let hn = &h * nab;
        for j in 0..n {
            omega[(j, i)] = bf.e[j].dot(&hn);
        }
    }
    let psi = base.psi_endomorphism(&cfg.psi.matrix(p), p)?.restricted;
    let eta_dot = base.rho(p) * dir[U];
    Ok(-omega - psi * eta_dot)
}

/// Frame coefficients of ∇_γ̇ e_i (columns i = 0..n) from the chart connection.
fn chart_screen_coefficients(cfg: &BundleConfig, p: &[f64], dir: &[f64]) -> Result<DMatrix<f64>> {
    let fr = cfg.frame_at(p)?;
    let gamma = cfg.christoffel_g_numeric(p)?;
    let w = DVector::from_column_slice(dir);
    let cols: Vec<DVector<f64>> = fr
        .e
        .iter()
        .zip(&fr.de)
        .map(|(e, de)| de * &w + gamma.contract(&w, e))
        .collect();
    let rhs = DMatrix::from_columns(&cols);
    solve(&fr.basis(), &rhs)
}

struct ScreenSystem<'a> {
    cfg: &'a BundleConfig,
    a: &'a [f64],
    dir: Vec<f64>,
}

impl System<f64, DVector<f64>> for ScreenSystem<'_> {
    fn system(&self, _: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let n = self.cfg.base.n();
        let p = point_on(self.a, &self.dir, y[2 * n * n + n]);
        dy[2 * n * n + n] = 1.0;
        let (a, c) = match (
            screen_generator(self.cfg, &p, &self.dir),
            chart_screen_coefficients(self.cfg, &p, &self.dir),
        ) {
            (Ok(a), Ok(c)) => (a, c),
            _ => {
                dy.fill(f64::NAN);
                return;
            }
        };
        let omega = DMatrix::from_column_slice(n, n, &y.as_slice()[..n * n]);
        let d_omega = &a * &omega;
        dy.as_mut_slice()[..n * n].copy_from_slice(d_omega.as_slice());
        dy.as_mut_slice()[n * n..2 * n * n].copy_from_slice(a.as_slice());
        // ċ_j = −ξ-coefficient of ∇_γ̇ (Σ_i Ω_ij e_i)
        for j in 0..n {
            let s: f64 = (0..n).map(|i| omega[(i, j)] * c[(n + 1, i)]).sum();
            dy[2 * n * n + j] = -s;
        }
    }
}

/// Screen transport: Ω̇ = AΩ with Ω(0) = I together with the ξ-coefficients C.
#[derive(Clone, Debug, Serialize)]
pub struct ScreenTransport {
    pub label: String,
    pub closed: bool,
    #[serde(serialize_with = "matrix_rows")]
    pub omega: DMatrix<f64>,
    /// ∫A along the path.
    #[serde(serialize_with = "matrix_rows")]
    pub integral: DMatrix<f64>,
    /// P(e_j) = Σ_i Ω_ij e_i + C_j ξ.
    #[serde(serialize_with = "vector_entries")]
    pub fiber: DVector<f64>,
    pub orthogonality_residual: f64,
    pub determinant: f64,
    /// Largest disagreement between A and the screen part of the chart connection.
    pub consistency_residual: f64,
    /// Full transport in the adapted frame, assembled from Ω and C.
    #[serde(serialize_with = "matrix_rows")]
    pub frame: DMatrix<f64>,
    pub steps: usize,
}

fn require_parallel_xi(cfg: &BundleConfig) -> Result<()> {
    if !cfg.fiber_constant {
        return Err(Error::Shape(format!(
            "'{}': screen transport needs ξ parallel (f independent of v)",
            cfg.name
        )));
    }
    Ok(())
}

/// Screen transport along a path; requires ∂_v f = 0.
pub fn transport_screen_ode(cfg: &BundleConfig, path: &ChartPath) -> Result<ScreenTransport> {
    require_parallel_xi(cfg)?;
    validate_path(cfg, path)?;
    let n = cfg.base.n();
    let d = cfg.dim();
    let mut y = DVector::zeros(2 * n * n + n);
    for i in 0..n {
        y[i + n * i] = 1.0;
    }
    let mut steps = 0;
    let mut consistency: f64 = 0.0;
    for (a, b) in path.segments() {
        let dir = direction(a, b);
        for s in 0..=SEGMENT_SAMPLES {
            let p = point_on(a, &dir, s as f64 / SEGMENT_SAMPLES as f64);
            let gen = screen_generator(cfg, &p, &dir)?;
            let c = chart_screen_coefficients(cfg, &p, &dir)?;
            let screen = (&gen + c.rows(0, n)).amax();
            consistency = consistency.max(screen).max(c.row(n).amax());
        }
        let (y1, st) = integrate_segment(ScreenSystem { cfg, a, dir }, y)?;
        y = y1;
        steps += st;
    }
    let omega = DMatrix::from_column_slice(n, n, &y.as_slice()[..n * n]);
    let integral = DMatrix::from_column_slice(n, n, &y.as_slice()[n * n..2 * n * n]);
    let fiber = DVector::from_column_slice(&y.as_slice()[2 * n * n..]);
    let orthogonality_residual = (omega.transpose() * &omega - DMatrix::identity(n, n)).amax();
    let determinant = omega.determinant();
    let mut frame = assemble_frame(&omega, &fiber);
    let start = path.start();
    let closed = match closing_map(cfg, start, path.end()) {
        Some(j) => {
            // the transitions may move the adapted frame by a null rotation
            let f0 = cfg.frame_at(start)?.basis();
            let f1 = cfg.frame_at(path.end())?.basis();
            frame = solve(&f0, &(j * f1))? * frame;
            true
        }
        None => false,
    };
    debug_assert_eq!(frame.nrows(), d);
    Ok(ScreenTransport {
        label: path.label.clone(),
        closed,
        omega,
        integral,
        fiber,
        orthogonality_residual,
        determinant,
        consistency_residual: consistency,
        frame,
        steps,
    })
}

/// The ξ-fixing isometry with screen block Ω and ξ-row C.
///
/// P(e_+) = e_+ + Ωc·e + ½|c|²ξ is forced by g(Pe_+, ξ) = −1, g(Pe_+, Pe_j) = 0
/// and g(Pe_+, Pe_+) = 1.
pub fn assemble_frame(omega: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let n = omega.nrows();
    let mut m = DMatrix::zeros(n + 2, n + 2);
    m.view_mut((0, 0), (n, n)).copy_from(omega);
    for j in 0..n {
        m[(n + 1, j)] = c[j];
    }
    let b = omega * c;
    for i in 0..n {
        m[(i, n)] = b[i];
    }
    m[(n, n)] = 1.0;
    m[(n + 1, n)] = 0.5 * b.norm_squared();
    m[(n + 1, n + 1)] = 1.0;
    m
}

/// Outcome of the exponential shortcut Ω = exp(∫A).
#[derive(Clone, Debug, Serialize)]
pub struct ExponentialTransport {
    /// Largest sampled ‖[A(s), A(t)]‖.
    pub commutator_sup: f64,
    /// False when the commutation precondition failed and the ODE result is returned.
    pub used_exponential: bool,
    #[serde(serialize_with = "matrix_rows")]
    pub omega: DMatrix<f64>,
    /// ‖exp(∫A) − Ω_ode‖, reported even when the shortcut was refused.
    pub exp_vs_ode: f64,
    /// ‖ψ(δ(1))Ω − Ωψ(δ(1))‖ for the returned Ω.
    pub endpoint_commutation: f64,
    pub ode: ScreenTransport,
}

/// exp(∫A) when the sampled generators commute; otherwise the ODE transport.
pub fn commuting_exponential(cfg: &BundleConfig, path: &ChartPath) -> Result<ExponentialTransport> {
    let ode = transport_screen_ode(cfg, path)?;
    let mut gens = Vec::new();
    for (a, b) in path.segments() {
        let dir = direction(a, b);
        for s in 0..=SEGMENT_SAMPLES {
            let p = point_on(a, &dir, s as f64 / SEGMENT_SAMPLES as f64);
            gens.push(screen_generator(cfg, &p, &dir)?);
        }
    }
    let mut commutator_sup: f64 = 0.0;
    for (i, x) in gens.iter().enumerate() {
        for y in &gens[i + 1..] {
            commutator_sup = commutator_sup.max((x * y - y * x).amax());
        }
    }
    let exp = ode.integral.clone().exp();
    let exp_vs_ode = (&exp - &ode.omega).amax();
    let used_exponential = commutator_sup <= COMMUTATION_TOL;
    let omega = if used_exponential { exp } else { ode.omega.clone() };
    let end = path.end();
    let psi = cfg.base.psi_endomorphism(&cfg.psi.matrix(end), end)?.restricted;
    let endpoint_commutation = (&psi * &omega - &omega * &psi).amax();
    Ok(ExponentialTransport {
        commutator_sup,
        used_exponential,
        omega,
        exp_vs_ode,
        endpoint_commutation,
        ode,
    })
}

// ---------------------------------------------------------------------------
// ξ recurrence

#[derive(Clone, Debug, Serialize)]
pub struct XiRecurrence {
    pub parallel: bool,
    pub sup_dv_f: f64,
    /// max |∇_a ξ − θ_a ξ| with θ = −½ ξ(f) π*η.
    pub theta_residual: f64,
    pub samples: usize,
}

/// Tests ∇ξ = θ ⊗ ξ with θ = −½ξ(f)π*η at sampled points.
pub fn xi_recurrence_report(cfg: &BundleConfig, samples: usize, seed: u64) -> Result<XiRecurrence> {
    let d = cfg.dim();
    let mut sup_dv_f: f64 = 0.0;
    let mut theta_residual: f64 = 0.0;
    let mut xi = DVector::zeros(d);
    xi[V] = -1.0;
    for p in sampling::sample_points(&cfg.base, samples, seed) {
        let dv = cfg.f.jet(&p, Order::First).grad[V];
        sup_dv_f = sup_dv_f.max(dv.abs());
        let xi_f = -dv;
        let eta = cfg.base.eta_form().values(&p);
        let gamma = cfg.christoffel_g_numeric(&p)?;
        for a in 0..d {
            let mut e = DVector::zeros(d);
            e[a] = 1.0;
            let nab = gamma.contract(&e, &xi);
            let want = &xi * (-0.5 * xi_f * eta[a]);
            theta_residual = theta_residual.max((nab - want).amax());
        }
    }
    Ok(XiRecurrence {
        parallel: sup_dv_f <= XI_PARALLEL_TOL,
        sup_dv_f,
        theta_residual,
        samples,
    })
}

// ---------------------------------------------------------------------------
// Holonomy algebra

#[derive(Clone, Debug, Serialize)]
pub struct RankEstimate {
    pub rank: usize,
    /// s_rank / s_(rank+1), infinite when nothing was dropped.
    pub gap: f64,
    pub determined: bool,
    pub singular_values: Vec<f64>,
}

/// Numerical rank of the row span, thresholded against `scale`.
pub fn estimate_rank(rows: &[Vec<f64>], scale: f64) -> RankEstimate {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || cols == 0 {
        return RankEstimate {
            rank: 0,
            gap: f64::INFINITY,
            determined: true,
            singular_values: vec![],
        };
    }
    // singular values from the (small) Gram matrix
    let m = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    let gram = m.transpose() * &m;
    let mut sv: Vec<f64> = gram
        .symmetric_eigenvalues()
        .iter()
        .map(|x| x.max(0.0).sqrt())
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let floor = RANK_FLOOR * scale.max(1e-300);
    let rank = sv.iter().filter(|&&s| s > floor && s > 1e-12).count();
    let gap = match (rank, sv.get(rank)) {
        (0, _) | (_, None) => f64::INFINITY,
        (r, Some(&next)) => {
            if next == 0.0 {
                f64::INFINITY
            } else {
                sv[r - 1] / next
            }
        }
    };
    RankEstimate {
        rank,
        gap,
        determined: gap >= RANK_GAP,
        singular_values: sv,
    }
}

#[derive(Clone, Debug)]
pub struct HolonomySampling {
    pub points: usize,
    /// Coordinate planes per point; all planes when this is at least D(D−1)/2.
    pub planes: usize,
    pub seed: u64,
    pub basepoint: Option<Vec<f64>>,
}

impl Default for HolonomySampling {
    fn default() -> Self {
        HolonomySampling {
            points: 24,
            planes: usize::MAX,
            seed: 7,
            basepoint: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HolonomyAlgebra {
    pub basepoint: Vec<f64>,
    pub n: usize,
    pub elements: usize,
    /// Largest curvature endomorphism, used as the rank scale.
    pub scale: f64,
    /// Largest component of Aξ off the ξ line.
    pub xi_preservation: f64,
    pub full: RankEstimate,
    /// ℝ part: the ξ-eigenvalue of each element.
    pub scaling: RankEstimate,
    /// so(n) block.
    pub orthogonal: RankEstimate,
    /// ℝⁿ block: screen components of A e_+.
    pub translation: RankEstimate,
    /// dim h − dim g − (ℝ part), the translations that occur on their own.
    pub pure_translations: usize,
    pub xi_parallel: bool,
    /// "trivial", "1", "2", "4", "decomposable" or "indeterminate".
    pub holonomy_type: String,
}

/// Curvature endomorphism R(∂_a, ∂_b) in chart components.
fn curvature_endomorphisms(cfg: &BundleConfig, p: &[f64], planes: &[(usize, usize)]) -> Result<Vec<DMatrix<f64>>> {
    let d = cfg.dim();
    let b = riemann_brute_force(cfg, p)?;
    Ok(planes
        .iter()
        .map(|&(x, y)| {
            // R(X,Y)^c_z = g^{cw} R(X,Y,z,w)
            DMatrix::from_fn(d, d, |c, z| (0..d).map(|w| b.inverse[(c, w)] * b.riemann.get(x, y, z, w)).sum())
        })
        .collect())
}

/// Ambrose–Singer sample: curvature endomorphisms at random points, brought
/// back to the basepoint along straight chart paths, decomposed in the frame.
pub fn sample_holonomy_algebra(cfg: &BundleConfig, opts: &HolonomySampling, exec: Exec) -> Result<HolonomyAlgebra> {
    let d = cfg.dim();
    let n = cfg.base.n();
    let x0 = match &opts.basepoint {
        Some(b) if b.len() == d => b.clone(),
        Some(_) => return Err(Error::Domain(format!("basepoint needs {} coordinates", d))),
        None => sampling::sample_points(&cfg.base, 1, opts.seed ^ 0x5eed)[0].clone(),
    };
    let mut all: Vec<(usize, usize)> = (0..d).flat_map(|a| (a + 1..d).map(move |b| (a, b))).collect();
    let mut rng = sampling::rng(opts.seed);
    all.shuffle(&mut rng);
    all.truncate(opts.planes.max(1));
    all.sort();
    let points = sampling::sample_points(&cfg.base, opts.points, opts.seed);
    let f0 = cfg.frame_at(&x0)?.basis();
    let per_point: Vec<Result<Vec<DMatrix<f64>>>> = exec.map(&points, |_, y| {
        let path = ChartPath::new("radial", vec![x0.clone(), y.clone()])?;
        let t = transport_generic_chart(cfg, &path)?;
        let pinv = t
            .chart
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular transport".into()))?;
        let ends = curvature_endomorphisms(cfg, y, &all)?;
        ends.into_iter()
            .map(|r| solve(&f0, &(&pinv * r * &t.chart * &f0)))
            .collect()
    });
    let mut elements = Vec::new();
    for r in per_point {
        elements.extend(r?);
    }
    // the basepoint itself
    for r in curvature_endomorphisms(cfg, &x0, &all)? {
        elements.push(solve(&f0, &(r * &f0))?);
    }
    let xi_parallel = xi_recurrence_report(cfg, 16, opts.seed)?.parallel;
    Ok(classify_elements(&x0, n, &elements, xi_parallel))
}

/// Decomposes frame matrices of elements of the ξ-stabilizer and classifies their span.
pub fn classify_elements(basepoint: &[f64], n: usize, elements: &[DMatrix<f64>], xi_parallel: bool) -> HolonomyAlgebra {
    let plus = n;
    let xi = n + 1;
    let scale = elements.iter().map(|m| m.amax()).fold(0.0, f64::max);
    let mut xi_preservation: f64 = 0.0;
    let mut full = Vec::new();
    let mut scaling = Vec::new();
    let mut orthogonal = Vec::new();
    let mut translation = Vec::new();
    for m in elements {
        for r in 0..=n {
            xi_preservation = xi_preservation.max(m[(r, xi)].abs());
        }
        let a = m[(xi, xi)];
        let skew: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
        let z: Vec<f64> = (0..n).map(|i| m[(i, plus)]).collect();
        let mut row = vec![a];
        row.extend(&skew);
        row.extend(&z);
        full.push(row);
        scaling.push(vec![a]);
        orthogonal.push(skew);
        translation.push(z);
    }
    let full = estimate_rank(&full, scale);
    let scaling = estimate_rank(&scaling, scale);
    let orthogonal = estimate_rank(&orthogonal, scale);
    let translation = estimate_rank(&translation, scale);
    let pure_translations = full.rank.saturating_sub(orthogonal.rank + scaling.rank);
    let determined = full.determined && scaling.determined && orthogonal.determined && translation.determined;
    let holonomy_type = if !determined {
        "indeterminate"
    } else if full.rank == 0 {
        "trivial"
    } else if scaling.rank > 0 || !xi_parallel {
        "1"
    } else if translation.rank < n {
        "decomposable"
    } else if pure_translations == n {
        "2"
    } else {
        "4"
    };
    HolonomyAlgebra {
        basepoint: basepoint.to_vec(),
        n,
        elements: elements.len(),
        scale,
        xi_preservation,
        full,
        scaling,
        orthogonal,
        translation,
        pure_translations,
        xi_parallel,
        holonomy_type: holonomy_type.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Type-4 structure

/// How φ: so(k) → ℝ^m weights the line directions.
/// `Coordinate` is φ(A) = Σ A_ij φ_λ(y_λ) ∂_λ read literally; it breaks the
/// transport compatibility on warped lines, which `Unit` satisfies. Both agree
/// when every φ_λ ≡ 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiWeights {
    Coordinate,
    /// φ(A) = Σ A_ij s_λ with s_λ = ∂_λ / φ_λ the unit line vector.
    #[default]
    Unit,
}

/// φ(A) in the unit line frame s_1..s_m, for A an endomorphism of S₁ = T(T^k)
/// written in the orthonormal torus frame with columns holding images.
pub fn phi_map(shape: &Type4Shape, a: &DMatrix<f64>, warps: &[f64], weights: PhiWeights) -> Vec<f64> {
    let mut out = vec![0.0; shape.m];
    for &(i, j, lam) in &shape.lambda_set {
        // A_ij = g(A E_i, E_j), the convention in which Ψ_ij = g(ψ E_i, E_j)
        let aij = a[(j - 1, i - 1)];
        let w = match weights {
            PhiWeights::Coordinate => warps[lam - 1] * warps[lam - 1],
            PhiWeights::Unit => 1.0,
        };
        out[lam - 1] += aij * w;
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct Type4Verification {
    pub k: usize,
    pub m: usize,
    pub l: usize,
    pub points: usize,
    pub paths: usize,
    pub weights: PhiWeights,
    /// R^{∇S}(X,Y) maps S₁ into S₁ and kills S₂.
    pub preserves_s1_kills_s2: f64,
    /// φ(R^{∇S}(X,Y)) for X, Y in the screen.
    pub phi_of_screen_curvature: f64,
    /// sup ‖R^{∇S}(X,Y)‖ for X, Y in the screen.
    pub screen_curvature_on_screen: f64,
    /// R̂(e_+,X)Y − g(φ(R^{∇S}(e_+,X)),Y)ξ for X ∈ S₁, Y ∈ S₂, and R̂(e_+,S₂)S₂.
    pub mixed_curvature: f64,
    /// Transport compatibility of φ along sampled paths.
    pub transport_compatibility: f64,
    /// ‖S₁-block of the chart transport − Ω from the screen ODE‖ on those paths.
    pub omega_vs_chart: f64,
    /// ‖ψ(δ(1))Ω − Ωψ(δ(1))‖ on those paths.
    pub endpoint_commutation: f64,
}

/// Per-point curvature data in the adapted frame.
struct FrameCurvature {
    /// Lowered frame components R(a,b,c,d).
    r: crate::curvature::Tensor4,
    /// Frame metric inverse.
    ginv: DMatrix<f64>,
    warps: Vec<f64>,
}

impl FrameCurvature {
    fn at(cfg: &BundleConfig, shape: &Type4Shape, p: &[f64]) -> Result<FrameCurvature> {
        let fr = cfg.frame_at(p)?.basis();
        let b = riemann_brute_force(cfg, p)?;
        let r = b.riemann.in_basis(&fr);
        let gf = fr.transpose() * &b.metric * &fr;
        let ginv = gf
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular frame metric".into()))?;
        let h = cfg.base.metric(p);
        let warps = shape.line_coords.iter().map(|&c| h[(c, c)].sqrt()).collect();
        Ok(FrameCurvature { r, ginv, warps })
    }

    /// Frame matrix of R(X,Y), columns holding images.
    fn endo(&self, x: usize, y: usize) -> DMatrix<f64> {
        let d = self.r.dim;
        DMatrix::from_fn(d, d, |c, z| (0..d).map(|w| self.ginv[(c, w)] * self.r.get(x, y, z, w)).sum())
    }
}

/// Checks the type-4 structure conditions at sampled points and along sampled paths.
pub fn type4_verify(
    cfg: &BundleConfig,
    points: usize,
    paths: usize,
    seed: u64,
    weights: PhiWeights,
    exec: Exec,
) -> Result<Type4Verification> {
    let shape = match &cfg.shape {
        Shape::Type4(s) => s.clone(),
        _ => return Err(Error::Shape(format!("'{}' is not a type-4 configuration", cfg.name))),
    };
    require_parallel_xi(cfg)?;
    let n = cfg.base.n();
    let d = cfg.dim();
    let m = shape.m;
    let k = shape.k;
    let plus = n;
    // screen indices: lines 0..m, torus m..n
    let s1 = m..n;
    let s2 = 0..m;
    let pts = sampling::sample_points(&cfg.base, points, seed);
    let pointwise: Vec<Result<(f64, f64, f64, f64)>> = exec.map(&pts, |_, p| {
        let fc = FrameCurvature::at(cfg, &shape, p)?;
        let mut cond_i: f64 = 0.0;
        let mut phi_ss: f64 = 0.0;
        let mut rs_ss: f64 = 0.0;
        let mut mixed: f64 = 0.0;
        for x in 0..d {
            for y in 0..d {
                let e = fc.endo(x, y);
                let rs = e.view((0, 0), (n, n)).clone_owned();
                for c in s2.clone() {
                    for z in s1.clone() {
                        cond_i = cond_i.max(rs[(c, z)].abs());
                    }
                }
                for c in 0..n {
                    for z in s2.clone() {
                        cond_i = cond_i.max(rs[(c, z)].abs());
                    }
                }
                if x < n && y < n {
                    rs_ss = rs_ss.max(rs.amax());
                    let a = rs.view((m, m), (k, k)).clone_owned();
                    let ph = phi_map(&shape, &a, &fc.warps, weights);
                    phi_ss = ph.iter().fold(phi_ss, |w, v| w.max(v.abs()));
                }
            }
        }
        for x in s1.clone().chain(s2.clone()) {
            let e = fc.endo(plus, x);
            let a = e.view((m, m), (k, k)).clone_owned();
            let ph = phi_map(&shape, &a, &fc.warps, weights);
            for yl in s2.clone() {
                // R̂ = R − R^{∇S}: only the e_+ and ξ rows survive
                let ep = e[(plus, yl)];
                let xi = e[(plus + 1, yl)];
                let want = if x >= m { ph[yl] } else { 0.0 };
                mixed = mixed.max(ep.abs()).max((xi - want).abs());
            }
        }
        Ok((cond_i, phi_ss, rs_ss, mixed))
    });
    let mut cond_i: f64 = 0.0;
    let mut phi_ss: f64 = 0.0;
    let mut rs_ss: f64 = 0.0;
    let mut mixed: f64 = 0.0;
    for r in pointwise {
        let (a, b, c, e) = r?;
        cond_i = cond_i.max(a);
        phi_ss = phi_ss.max(b);
        rs_ss = rs_ss.max(c);
        mixed = mixed.max(e);
    }

    let x0 = sampling::sample_points(&cfg.base, 1, seed ^ 0x7a7)[0].clone();
    let mut rng = sampling::rng(seed.wrapping_add(1));
    let mut path_list = Vec::with_capacity(paths);
    for q in 0..paths {
        let path = if q % 2 == 0 {
            // closed loop through u and one torus direction
            let c = shape.torus_coords[rng.gen_range(0..k)];
            let side = rng.gen_range(0.3..1.5);
            LoopSpec::Rectangle { i: U, j: c, side }.build(cfg, &x0)?
        } else {
            let mid = sampling::random_point(&cfg.base, &mut rng);
            let end = sampling::random_point(&cfg.base, &mut rng);
            ChartPath::new(format!("open-{}", q), vec![x0.clone(), mid, end])?
        };
        path_list.push(path);
    }
    let fc0 = FrameCurvature::at(cfg, &shape, &x0)?;
    let along: Vec<Result<(f64, f64, f64)>> = exec.map(&path_list, |_, path| {
        let st = transport_screen_ode(cfg, path)?;
        let gt = transport_generic_chart(cfg, path)?;
        let omega_vs_chart = (gt.frame.view((0, 0), (n, n)) - &st.omega).amax();
        let y = if st.closed { path.start().to_vec() } else { path.end().to_vec() };
        let fc = if st.closed {
            None
        } else {
            Some(FrameCurvature::at(cfg, &shape, &y)?)
        };
        let fc = fc.as_ref().unwrap_or(&fc0);
        let om = st.omega.view((m, m), (k, k)).clone_owned();
        let mut worst: f64 = 0.0;
        for xa in s1.clone() {
            let a = fc.endo(plus, xa).view((m, m), (k, k)).clone_owned();
            let lhs_img = phi_map(&shape, &a, &fc.warps, weights);
            let pulled = om.transpose() * &a * &om;
            let rhs = phi_map(&shape, &pulled, &fc0.warps, weights);
            for l in 0..m {
                // g_y(φ_y(A), P s_l(x)): P s_l = Σ_i Ω_il s_i + Cξ
                let lhs: f64 = (0..m).map(|i| lhs_img[i] * st.omega[(i, l)]).sum();
                worst = worst.max((lhs - rhs[l]).abs());
            }
        }
        let psi = cfg.base.psi_endomorphism(&cfg.psi.matrix(&y), &y)?.restricted;
        let comm = (&psi * &st.omega - &st.omega * &psi).amax();
        Ok((worst, omega_vs_chart, comm))
    });
    let mut compat: f64 = 0.0;
    let mut ovc: f64 = 0.0;
    let mut comm: f64 = 0.0;
    for r in along {
        let (a, b, c) = r?;
        compat = compat.max(a);
        ovc = ovc.max(b);
        comm = comm.max(c);
    }
    Ok(Type4Verification {
        k,
        m,
        l: shape.l,
        points,
        paths,
        weights,
        preserves_s1_kills_s2: cond_i,
        phi_of_screen_curvature: phi_ss,
        screen_curvature_on_screen: rs_ss,
        mixed_curvature: mixed,
        transport_compatibility: compat,
        omega_vs_chart: ovc,
        endpoint_commutation: comm,
    })
}
