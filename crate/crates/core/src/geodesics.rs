//! Geodesics of the chart metric, the reduced type-4 system, and completeness probes.
//!
//! Trajectories are integrated in chunks. Between chunks every periodic coordinate
//! is brought back into [0, 2π) through the config's chart transitions, and the
//! number of wraps is counted per coordinate.

use std::f64::consts::PI;

use nalgebra::allocator::Allocator;
use nalgebra::{Const, DMatrix, DVector, DefaultAllocator, Dim, Dyn, OVector, U1};
use ode_solvers::dop_shared::{IntegrationError, OutputType};
use ode_solvers::{Dop853, System};
use rand::Rng;
use serde::Serialize;

use crate::base_geometry::{U, V};
use crate::bundle_chart::{BundleConfig, ChartTransition, MetricDerivs, Shape, VectorField};
use crate::error::{Error, Result};
use crate::field::Order;
use crate::par::Exec;
use crate::sampling;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Length of one integration chunk; also the sampling interval of the trajectory.
    pub chunk: f64,
}

impl Default for Tolerances {
    fn default() -> Tolerances {
        Tolerances {
            rtol: 1e-11,
            atol: 1e-13,
            chunk: 1.0,
        }
    }
}

impl Tolerances {
    /// Tight setting for cross-checking two integrators against each other.
    pub fn reference() -> Tolerances {
        Tolerances {
            rtol: 1e-13,
            atol: 1e-15,
            chunk: 1.0,
        }
    }

    /// Looser setting for long completeness probes, sampled four times per unit time.
    pub fn probe() -> Tolerances {
        Tolerances {
            rtol: 1e-9,
            atol: 1e-12,
            chunk: 0.25,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GeodesicState {
    pub t: f64,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// g(γ̇, γ̇).
    pub energy: f64,
}

impl GeodesicState {
    pub fn new(cfg: &BundleConfig, t: f64, position: Vec<f64>, velocity: Vec<f64>) -> Result<Self> {
        let d = cfg.dim();
        if position.len() != d || velocity.len() != d {
            return Err(Error::Domain(format!(
                "initial state needs {} position and velocity components",
                d
            )));
        }
        if position.iter().chain(&velocity).any(|x| !x.is_finite()) {
            return Err(Error::Domain("initial state is not finite".into()));
        }
        let energy = energy(cfg, &position, &velocity);
        Ok(GeodesicState {
            t,
            position,
            velocity,
            energy,
        })
    }
}

/// g(w, w) at p.
pub fn energy(cfg: &BundleConfig, p: &[f64], w: &[f64]) -> f64 {
    let g = cfg.metric(p);
    let w = DVector::from_column_slice(w);
    (w.transpose() * g * &w)[(0, 0)]
}

/// −Γ(ẋ, ẋ) from the Koszul formula.
pub fn geodesic_acceleration(cfg: &BundleConfig, p: &[f64], w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cfg.dim()];
    geodesic_acceleration_into(cfg, p, w, &mut out);
    out
}

/// Same as [`geodesic_acceleration`], written into `out`.
///
/// Uses the sparsity of the chart metric: the only nonzero entries are g_uv,
/// g_uu, g_ua and the diagonal base block, so g x = r is solved by substitution.
pub fn geodesic_acceleration_into(cfg: &BundleConfig, p: &[f64], w: &[f64], out: &mut [f64]) {
    let d = cfg.dim();
    let rho = cfg.base.rho_jet(p, Order::First);
    let f = cfg.f.jet(p, Order::First);
    let hd = cfg.base.metric_diag_jets(p, Order::First);
    let rho2 = rho.square();
    let mut guu = f.mul(&rho2).add_const(1.0);
    // lowered Koszul term L_e = Σ (∂_a g_eb − ½ ∂_e g_ab) w^a w^b
    let mut l = [0.0; crate::field::MAX_DIM];
    let dir = |j: &crate::field::Jet| (0..d).map(|c| j.grad[c] * w[c]).sum::<f64>();
    let off = |l: &mut [f64; crate::field::MAX_DIM], a: usize, b: usize, j: &crate::field::Jet| {
        let dj = dir(j);
        l[a] += dj * w[b];
        l[b] += dj * w[a];
        let ww = w[a] * w[b];
        for e in 0..d {
            l[e] -= j.grad[e] * ww;
        }
    };
    let mut gua = [0.0; crate::field::MAX_DIM];
    for a in 2..d {
        if let Some(pa) = &cfg.potential.comps[a] {
            let j = rho.mul(&pa.jet(p, Order::First));
            gua[a] = j.value;
            off(&mut l, U, a, &j);
        }
    }
    if let Some(pu) = &cfg.potential.comps[U] {
        guu = guu.add(&rho.mul(&pu.jet(p, Order::First)).scale(2.0));
    }
    off(&mut l, U, V, &rho);
    let diag = |l: &mut [f64; crate::field::MAX_DIM], a: usize, j: &crate::field::Jet| {
        let dj = dir(j);
        l[a] += dj * w[a];
        let ww = 0.5 * w[a] * w[a];
        for e in 0..d {
            l[e] -= j.grad[e] * ww;
        }
    };
    diag(&mut l, U, &guu);
    for a in 2..d {
        diag(&mut l, a, &hd[a]);
    }
    // g x = −L: the v row fixes x_u, base rows fix x_a, the u row fixes x_v.
    if rho.value == 0.0 {
        out[..d].fill(f64::NAN);
        return;
    }
    let xu = -l[V] / rho.value;
    out[U] = xu;
    let mut rest = -l[U] - guu.value * xu;
    for a in 2..d {
        let xa = (-l[a] - gua[a] * xu) / hd[a].value;
        out[a] = xa;
        rest -= gua[a] * xa;
    }
    out[V] = rest / rho.value;
}

/// Chart speed treated as escape to infinity.
pub const ESCAPE_SPEED: f64 = 1e8;

struct ChartGeodesic<'a> {
    cfg: &'a BundleConfig,
}

impl<D: Dim> System<f64, OVector<f64, D>> for ChartGeodesic<'_>
where
    DefaultAllocator: Allocator<D>,
{
    fn system(&self, _t: f64, y: &OVector<f64, D>, dy: &mut OVector<f64, D>) {
        let d = self.cfg.dim();
        let (pos, vel) = y.as_slice().split_at(d);
        let (dp, dv) = dy.as_mut_slice().split_at_mut(d);
        dp.copy_from_slice(vel);
        if vel.iter().any(|x| x.abs() > ESCAPE_SPEED) {
            // every step is rejected from here on, so the run ends in a step-size underflow
            dv.fill(f64::NAN);
            return;
        }
        geodesic_acceleration_into(self.cfg, pos, vel, dv);
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GeodesicTrajectory {
    /// States at the chunk boundaries, starting with the initial state.
    pub points: Vec<GeodesicState>,
    /// Net wraps per chart coordinate, aligned with `points`.
    pub windings: Vec<Vec<i64>>,
    pub horizon: f64,
    pub reached: f64,
    /// The integrator could not continue (step size underflow or step budget exhausted).
    pub step_floor_hit: bool,
    pub failure: Option<String>,
    /// max |g(γ̇,γ̇)(t) − g(γ̇,γ̇)(0)| over the sampled states.
    pub energy_drift: f64,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
}

impl GeodesicTrajectory {
    pub fn completed(&self) -> bool {
        !self.step_floor_hit && self.failure.is_none()
    }

    pub fn last(&self) -> &GeodesicState {
        self.points.last().expect("trajectory has its initial state")
    }

    /// Coordinate `i` of point `k` with the wraps undone (meaningless for v).
    pub fn unwrapped(&self, k: usize, i: usize) -> f64 {
        self.points[k].position[i] + 2.0 * PI * self.windings[k][i] as f64
    }
}

fn inverse_transition(cfg: &BundleConfig, t: &ChartTransition, p: &mut [f64], w: &mut [f64]) {
    p[t.coord] += 2.0 * PI;
    if let Some(s) = &t.v_shift {
        let j = s.jet(p, Order::First);
        let ds: f64 = (0..cfg.dim()).map(|a| j.grad[a] * w[a]).sum();
        p[V] -= j.value;
        w[V] -= ds;
    }
}

/// Moves every coordinate that has a chart transition into [0, 2π).
pub fn wrap_state(cfg: &BundleConfig, p: &mut Vec<f64>, w: &mut Vec<f64>, windings: &mut [i64]) {
    // a transition may shift v, so sweep until every coordinate is in range
    for _ in 0..8 {
        let mut moved = false;
        for t in &cfg.transitions {
            let c = t.coord;
            let mut guard = 0;
            while p[c] >= 2.0 * PI && guard < 1_000_000 {
                let (q, jac) = cfg.apply_transition(t, p);
                let nw = &jac * DVector::from_column_slice(w);
                *p = q;
                *w = nw.iter().copied().collect();
                windings[c] += 1;
                guard += 1;
                moved = true;
            }
            while p[c] < 0.0 && guard < 1_000_000 {
                inverse_transition(cfg, t, p, w);
                windings[c] -= 1;
                guard += 1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Initial step for the next chunk, taken from the previous chunk's step sequence.
fn last_step(ts: &[f64]) -> f64 {
    match ts.len() {
        0 | 1 => 0.0,
        2 => ts[1] - ts[0],
        n => ts[n - 2] - ts[n - 3],
    }
}

type Chunk<V> = (std::result::Result<(), IntegrationError>, Vec<f64>, V, u64, u64);

fn run_chunk<D: Dim, F: System<f64, OVector<f64, D>>>(
    f: F,
    t0: f64,
    t1: f64,
    y0: OVector<f64, D>,
    h0: f64,
    tol: &Tolerances,
) -> Chunk<OVector<f64, D>>
where
    DefaultAllocator: Allocator<D>,
{
    let mut solver = Dop853::from_param(
        f,
        t0,
        t1,
        t1 - t0,
        y0.clone(),
        tol.rtol,
        tol.atol,
        0.9,
        0.0,
        0.333,
        6.0,
        t1 - t0,
        h0,
        2_000_000,
        u32::MAX,
        OutputType::Sparse,
    );
    let res = solver.integrate();
    let ts = solver.x_out().clone();
    let last = solver.y_out().last().cloned().unwrap_or(y0);
    match res {
        Ok(stats) => (
            Ok(()),
            ts,
            last,
            stats.accepted_steps as u64,
            stats.rejected_steps as u64,
        ),
        Err(e) => (Err(e), ts, last, 0, 0),
    }
}

/// One chunk of the chart geodesic flow. The state lives on the stack for the
/// dimensions that occur in practice; the solver's vector temporaries otherwise
/// dominate the step cost.
fn run_chart_chunk(cfg: &BundleConfig, t0: f64, t1: f64, y0: &[f64], h0: f64, tol: &Tolerances) -> Chunk<Vec<f64>> {
    fn go<D: Dim>(d: D, cfg: &BundleConfig, t0: f64, t1: f64, y0: &[f64], h0: f64, tol: &Tolerances) -> Chunk<Vec<f64>>
    where
        DefaultAllocator: Allocator<D>,
    {
        let y = OVector::<f64, D>::from_column_slice_generic(d, U1, y0);
        let (res, ts, y, acc, rej) = run_chunk(ChartGeodesic { cfg }, t0, t1, y, h0, tol);
        (res, ts, y.as_slice().to_vec(), acc, rej)
    }
    macro_rules! fixed {
        ($($n:literal)*) => {
            match y0.len() {
                $($n => go(Const::<$n>, cfg, t0, t1, y0, h0, tol),)*
                n => go(Dyn(n), cfg, t0, t1, y0, h0, tol),
            }
        };
    }
    fixed!(8 10 12 14 16 18 20 22 24)
}

/// Integrates the geodesic equation from `init` up to `init.t + horizon`.
pub fn integrate_geodesic(
    cfg: &BundleConfig,
    init: &GeodesicState,
    horizon: f64,
    tol: &Tolerances,
) -> Result<GeodesicTrajectory> {
    if !(horizon >= 0.0) || !(tol.chunk > 0.0) || !(tol.rtol > 0.0) || !(tol.atol > 0.0) {
        return Err(Error::Domain("horizon, chunk and tolerances must be positive".into()));
    }
    let d = cfg.dim();
    let mut p = init.position.clone();
    let mut w = init.velocity.clone();
    let mut windings = vec![0i64; d];
    wrap_state(cfg, &mut p, &mut w, &mut windings);
    let mut traj = GeodesicTrajectory {
        points: vec![GeodesicState::new(cfg, init.t, p.clone(), w.clone())?],
        windings: vec![windings.clone()],
        horizon,
        reached: init.t,
        step_floor_hit: false,
        failure: None,
        energy_drift: 0.0,
        accepted_steps: 0,
        rejected_steps: 0,
    };
    let e0 = init.energy;
    let end = init.t + horizon;
    let mut t = init.t;
    let mut h = 0.0;
    while t < end {
        let t1 = (t + tol.chunk).min(end);
        let y0: Vec<f64> = p.iter().chain(&w).copied().collect();
        let (res, ts, y, acc, rej) = run_chart_chunk(cfg, t, t1, &y0, h, tol);
        traj.accepted_steps += acc;
        traj.rejected_steps += rej;
        match res {
            Ok(()) => {}
            Err(IntegrationError::StepSizeUnderflow { x })
            | Err(IntegrationError::MaxNumStepReached { x, .. }) => {
                traj.step_floor_hit = true;
                traj.reached = x;
                return Ok(traj);
            }
            Err(e) => {
                traj.failure = Some(e.to_string());
                traj.reached = t;
                return Ok(traj);
            }
        }
        h = last_step(&ts);
        if y.iter().any(|x| !x.is_finite()) {
            traj.failure = Some(format!("state became non-finite near t = {}", t1));
            traj.reached = t;
            return Ok(traj);
        }
        p = y[..d].to_vec();
        w = y[d..].to_vec();
        wrap_state(cfg, &mut p, &mut w, &mut windings);
        let st = GeodesicState::new(cfg, t1, p.clone(), w.clone())?;
        traj.energy_drift = traj.energy_drift.max((st.energy - e0).abs());
        traj.points.push(st);
        traj.windings.push(windings.clone());
        t = t1;
        traj.reached = t;
    }
    Ok(traj)
}

/// Five equally spaced states t0, t0+s, …, t0+4s from the dense output.
pub fn dense_window(cfg: &BundleConfig, init: &GeodesicState, s: f64, tol: &Tolerances) -> Result<Vec<GeodesicState>> {
    let d = cfg.dim();
    let mut y0 = DVector::zeros(2 * d);
    for i in 0..d {
        y0[i] = init.position[i];
        y0[d + i] = init.velocity[i];
    }
    let mut solver = Dop853::new(ChartGeodesic { cfg }, init.t, init.t + 4.0 * s, s, y0, tol.rtol, tol.atol);
    solver
        .integrate()
        .map_err(|e| Error::Numerical(format!("dense window: {}", e)))?;
    let ts = solver.x_out();
    let ys = solver.y_out();
    if ts.len() < 5 {
        return Err(Error::Numerical("dense window returned too few states".into()));
    }
    (0..5)
        .map(|k| {
            GeodesicState::new(
                cfg,
                ts[k],
                ys[k].as_slice()[..d].to_vec(),
                ys[k].as_slice()[d..].to_vec(),
            )
        })
        .collect()
}

/// Five-point central difference at the middle of a window.
fn stencil(v: [f64; 5], s: f64) -> f64 {
    (v[0] - 8.0 * v[1] + 8.0 * v[3] - v[4]) / (12.0 * s)
}

/// Largest relative geodesic-equation residual at the middle of a dense window:
/// differentiated positions against velocities and differentiated velocities
/// against −Γ(γ̇, γ̇).
pub fn equation_residual(cfg: &BundleConfig, init: &GeodesicState, tol: &Tolerances) -> Result<f64> {
    let speed = init.velocity.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let s = 1e-2 / speed;
    let win = dense_window(cfg, init, s, tol)?;
    let mid = &win[2];
    let acc = geodesic_acceleration(cfg, &mid.position, &mid.velocity);
    let mut worst: f64 = 0.0;
    for i in 0..cfg.dim() {
        let dp = stencil(std::array::from_fn(|k| win[k].position[i]), s);
        let dv = stencil(std::array::from_fn(|k| win[k].velocity[i]), s);
        worst = worst.max((dp - mid.velocity[i]).abs() / mid.velocity[i].abs().max(1.0));
        worst = worst.max((dv - acc[i]).abs() / acc[i].abs().max(1.0));
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Reduced type-4 system

/// Reduced geodesic system for configs with η = du, f independent of u and v and
/// P_u = 0. u(t) = u₀ + u₁t is solved exactly, the base curve δ obeys
///
///   ∇^h δ̇ = (u₁²/2) grad_h f̂ + 2u₁ h⁻¹Ψ(δ̇, ·),
///
/// and v follows from the conserved u-momentum: v̇ = k₀ − u₁ f̂(δ) − P(δ̇).
/// With ξ = −∂_v this is v̇ = −𝒯 − P(δ̇), where 𝒯 is the ξ-coefficient of γ̇ and
/// 𝒯' = u₁ df̂(δ̇).
struct ReducedType4<'a> {
    cfg: &'a BundleConfig,
    u0: f64,
    u1: f64,
    t0: f64,
    k0: f64,
}

impl ReducedType4<'_> {
    /// Layout: [base coords (D−2), base velocities (D−2), v].
    fn full_point(&self, t: f64, y: &DVector<f64>) -> Vec<f64> {
        let d = self.cfg.dim();
        let nb = d - 2;
        let mut p = vec![0.0; d];
        p[U] = self.u0 + self.u1 * (t - self.t0);
        p[V] = y[2 * nb];
        p[2..].copy_from_slice(&y.as_slice()[..nb]);
        p
    }
}

impl System<f64, DVector<f64>> for ReducedType4<'_> {
    fn system(&self, t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let cfg = self.cfg;
        let d = cfg.dim();
        let nb = d - 2;
        let p = self.full_point(t, y);
        let wv = &y.as_slice()[nb..2 * nb];
        let mut w = vec![0.0; d];
        w[2..].copy_from_slice(wv);
        let f = cfg.f.jet(&p, Order::First);
        let psi = cfg.psi.matrix(&p);
        let pot = cfg.potential.values(&p);
        let (gamma, hinv) = match (cfg.base.christoffel_h(&p), cfg.base.metric_inverse(&p)) {
            (Ok(g), Ok(h)) => (g, h),
            _ => {
                dy.fill(f64::NAN);
                return;
            }
        };
        let wd = DVector::from_column_slice(&w);
        let geo = gamma.contract(&wd, &wd);
        let u1 = self.u1;
        // lowered force: (u₁²/2) ∂_b f̂ + 2u₁ Ψ_bc ẋ^c
        let lowered: Vec<f64> = (0..d)
            .map(|b| {
                if b < 2 {
                    return 0.0;
                }
                0.5 * u1 * u1 * f.grad[b] + 2.0 * u1 * (2..d).map(|c| psi[(b, c)] * w[c]).sum::<f64>()
            })
            .collect();
        for a in 2..d {
            let force: f64 = (2..d).map(|b| hinv[(a, b)] * lowered[b]).sum();
            dy[a - 2] = w[a];
            dy[nb + a - 2] = -geo[a] + force;
        }
        let p_dot: f64 = (2..d).map(|a| pot[a] * w[a]).sum();
        dy[2 * nb] = self.k0 - u1 * f.value - p_dot;
    }
}

fn check_reducible(cfg: &BundleConfig) -> Result<()> {
    if !matches!(cfg.shape, Shape::Type4(_)) {
        return Err(Error::Shape(format!(
            "structured geodesics need a type-4 config, '{}' is not one",
            cfg.name
        )));
    }
    let deps = cfg.f.dependencies();
    if deps & ((1 << U) | (1 << V)) != 0 || cfg.potential.comps[U].is_some() {
        return Err(Error::Shape("f must not depend on u, v and P_u must vanish".into()));
    }
    if cfg.base.eta.rho.as_constant() != Some(1.0) {
        return Err(Error::Shape("structured geodesics need eta = du".into()));
    }
    Ok(())
}

/// The reduced integration of a type-4 geodesic, reported in chart variables.
pub fn structured_geodesic(
    cfg: &BundleConfig,
    init: &GeodesicState,
    horizon: f64,
    tol: &Tolerances,
) -> Result<GeodesicTrajectory> {
    check_reducible(cfg)?;
    let d = cfg.dim();
    let nb = d - 2;
    let mut p = init.position.clone();
    let mut w = init.velocity.clone();
    let mut windings = vec![0i64; d];
    wrap_state(cfg, &mut p, &mut w, &mut windings);
    let mut traj = GeodesicTrajectory {
        points: vec![GeodesicState::new(cfg, init.t, p.clone(), w.clone())?],
        windings: vec![windings.clone()],
        horizon,
        reached: init.t,
        step_floor_hit: false,
        failure: None,
        energy_drift: 0.0,
        accepted_steps: 0,
        rejected_steps: 0,
    };
    let e0 = init.energy;
    let u1 = w[U];
    let end = init.t + horizon;
    let mut t = init.t;
    let mut h = 0.0;
    while t < end {
        let t1 = (t + tol.chunk).min(end);
        let pot = cfg.potential.values(&p);
        let p_dot: f64 = (2..d).map(|a| pot[a] * w[a]).sum();
        let sys = ReducedType4 {
            cfg,
            u0: p[U],
            u1,
            t0: t,
            k0: w[V] + u1 * cfg.f.value(&p) + p_dot,
        };
        let mut y0 = DVector::zeros(2 * nb + 1);
        for i in 0..nb {
            y0[i] = p[2 + i];
            y0[nb + i] = w[2 + i];
        }
        y0[2 * nb] = p[V];
        let k0 = sys.k0;
        let (u0, t0) = (sys.u0, sys.t0);
        let (res, ts, y, acc, rej) = run_chunk(sys, t, t1, y0, h, tol);
        traj.accepted_steps += acc;
        traj.rejected_steps += rej;
        if let Err(e) = res {
            match e {
                IntegrationError::StepSizeUnderflow { x } | IntegrationError::MaxNumStepReached { x, .. } => {
                    traj.step_floor_hit = true;
                    traj.reached = x;
                }
                other => {
                    traj.failure = Some(other.to_string());
                    traj.reached = t;
                }
            }
            return Ok(traj);
        }
        h = last_step(&ts);
        p[U] = u0 + u1 * (t1 - t0);
        p[V] = y[2 * nb];
        for i in 0..nb {
            p[2 + i] = y[i];
            w[2 + i] = y[nb + i];
        }
        let pot = cfg.potential.values(&p);
        let p_dot: f64 = (2..d).map(|a| pot[a] * w[a]).sum();
        w[U] = u1;
        w[V] = k0 - u1 * cfg.f.value(&p) - p_dot;
        if p.iter().chain(&w).any(|x| !x.is_finite()) {
            traj.failure = Some(format!("state became non-finite near t = {}", t1));
            return Ok(traj);
        }
        wrap_state(cfg, &mut p, &mut w, &mut windings);
        let st = GeodesicState::new(cfg, t1, p.clone(), w.clone())?;
        traj.energy_drift = traj.energy_drift.max((st.energy - e0).abs());
        traj.points.push(st);
        traj.windings.push(windings.clone());
        t = t1;
        traj.reached = t;
    }
    Ok(traj)
}

/// Pointwise comparison of two trajectories sampled at the same times. Coordinates
/// are compared unwrapped (v as is), each relative to max(1, |value|).
pub fn trajectory_discrepancy(a: &GeodesicTrajectory, b: &GeodesicTrajectory) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..a.points.len().min(b.points.len()) {
        let (pa, pb) = (&a.points[k], &b.points[k]);
        for i in 0..pa.position.len() {
            let (x, y) = if i == V {
                (pa.position[i], pb.position[i])
            } else {
                (a.unwrapped(k, i), b.unwrapped(k, i))
            };
            worst = worst.max((x - y).abs() / y.abs().max(1.0));
            let (x, y) = (pa.velocity[i], pb.velocity[i]);
            worst = worst.max((x - y).abs() / y.abs().max(1.0));
        }
    }
    worst
}

/// max |u(t) − u₀ − u₁t| along a trajectory.
pub fn u_affine_residual(traj: &GeodesicTrajectory) -> f64 {
    let first = &traj.points[0];
    let (u0, u1, t0) = (first.position[U], first.velocity[U], first.t);
    (0..traj.points.len())
        .map(|k| (traj.unwrapped(k, U) - u0 - u1 * (traj.points[k].t - t0)).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Completeness probes

/// ε in C = max g(ζ,ζ) + ε.
pub const KILLING_EPSILON: f64 = 0.1;
/// Relative safety margin on the sampled maximum of g(ζ,ζ).
pub const KILLING_MARGIN: f64 = 0.05;
const GRID_BUDGET: usize = 32_768;
/// Monitor growth exponents up to this count as affine. For |a + bt| the ratio of
/// second-half to first-half sup is at most 3 (when the sign flips near T/4);
/// 10% on top covers sampling between chunks. Pure quadratic growth gives 4.
pub const MAX_GROWTH_EXPONENT: f64 = 1.722_466_024_471_091; // log2(3.3)

#[derive(Clone, Debug, Serialize)]
pub struct KillingConstant {
    pub max_zeta_norm: f64,
    pub c: f64,
    pub grid_points: usize,
    pub per_axis: usize,
}

/// C from a tensor grid over the coordinates that g(ζ,ζ) = f + 1/ρ² depends on
/// (32 per axis while the grid stays within budget).
pub fn killing_constant(cfg: &BundleConfig) -> KillingConstant {
    let d = cfg.dim();
    let deps = cfg.f.dependencies() | cfg.base.eta.rho.dependencies();
    let axes: Vec<usize> = (0..d).filter(|&i| deps & (1 << i) != 0).collect();
    let mut per_axis = 32usize;
    while !axes.is_empty() && per_axis.pow(axes.len() as u32) > GRID_BUDGET {
        per_axis -= 1;
    }
    let total = per_axis.pow(axes.len() as u32);
    let k = cfg.killing_candidate(0.0);
    let mut max = f64::NEG_INFINITY;
    let mut p = vec![0.0; d];
    for idx in 0..total {
        let mut r = idx;
        for &a in &axes {
            let j = r % per_axis;
            r /= per_axis;
            p[a] = if cfg.base.is_periodic(a) {
                2.0 * PI * j as f64 / per_axis as f64
            } else {
                let h = sampling::LINE_HALF_WIDTH;
                -h + 2.0 * h * j as f64 / (per_axis - 1) as f64
            };
        }
        let (z, _) = k.eval(&p);
        max = max.max(energy(cfg, &p, z.as_slice()));
    }
    KillingConstant {
        max_zeta_norm: max,
        c: max + KILLING_MARGIN * max.abs() + KILLING_EPSILON,
        grid_points: total,
        per_axis,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeSample {
    pub t: f64,
    pub g_kk: f64,
    pub g_k_gamma: f64,
    /// g(γ̇,γ̇) − 2 g(K,γ̇)²/g(K,K); only meaningful while g(K,K) < 0.
    pub g_r: f64,
    pub lie: f64,
    /// α(ẋ) for configs with Ψ = α∧η.
    pub pi_alpha: Option<f64>,
}

fn probe_sample(cfg: &BundleConfig, c: f64, st: &GeodesicState, alpha: Option<&crate::field::OneForm>) -> Result<ProbeSample> {
    let k = cfg.killing_candidate(c);
    let (kv, _) = k.eval(&st.position);
    let g = cfg.metric(&st.position);
    let w = DVector::from_column_slice(&st.velocity);
    let gkk = (kv.transpose() * &g * &kv)[(0, 0)];
    let gkw = (kv.transpose() * &g * &w)[(0, 0)];
    let lie_m: DMatrix<f64> = cfg.lie_derivative_g(&k, &st.position)?;
    let lie = (w.transpose() * lie_m * &w)[(0, 0)];
    let pi_alpha = alpha.map(|a| {
        a.values(&st.position)
            .iter()
            .zip(&st.velocity)
            .map(|(x, y)| x * y)
            .sum()
    });
    Ok(ProbeSample {
        t: st.t,
        g_kk: gkk,
        g_k_gamma: gkw,
        g_r: st.energy - 2.0 * gkw * gkw / gkk,
        lie,
        pi_alpha,
    })
}

/// |d/dt g(K,γ̇) − ½(ℒ_K g)(γ̇,γ̇)| at a state, relative to the largest term.
///
/// The rate is differentiated along the flow with the chain rule and the geodesic
/// acceleration, while ℒ_K g comes from ∇K, so the two sides share no formula.
pub fn killing_rate_residual(cfg: &BundleConfig, c: f64, st: &GeodesicState) -> Result<f64> {
    let d = cfg.dim();
    let p = &st.position;
    let w = &st.velocity;
    let k = cfg.killing_candidate(c);
    let (kv, dk) = k.eval(p);
    let mut m = MetricDerivs::new(d);
    cfg.metric_derivs(p, Order::First, &mut m);
    let acc = geodesic_acceleration(cfg, p, w);
    let (mut t1, mut t2, mut t3) = (0.0, 0.0, 0.0);
    for a in 0..d {
        for b in 0..d {
            let g = m.g(a, b);
            for e in 0..d {
                t1 += m.dg(e, a, b) * w[e] * kv[a] * w[b];
                t2 += g * dk[(a, e)] * w[e] * w[b];
            }
            t3 += g * kv[a] * acc[b];
        }
    }
    let wv = DVector::from_column_slice(w);
    let half_lie = 0.5 * (wv.transpose() * cfg.lie_derivative_g(&k, p)? * &wv)[(0, 0)];
    let scale = [t1, t2, t3, half_lie].iter().fold(1.0f64, |m, x| m.max(x.abs()));
    Ok((t1 + t2 + t3 - half_lie).abs() / scale)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeGeodesic {
    pub index: usize,
    pub start: Vec<f64>,
    pub start_velocity: Vec<f64>,
    pub reached: f64,
    pub step_floor_hit: bool,
    pub failure: Option<String>,
    pub energy_drift: f64,
    pub sup_g_r: f64,
    pub sup_lie: f64,
    pub sup_lie_first_half: f64,
    pub sup_lie_second_half: f64,
    pub timelike_failures: usize,
    pub killing_rate_residual: f64,
    pub equation_residual: f64,
    pub sup_pi_alpha: Option<f64>,
    pub pi_alpha_bound: Option<f64>,
    pub accepted_steps: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub config: String,
    pub horizon: f64,
    pub geodesics: usize,
    pub seed: u64,
    pub killing: KillingConstant,
    pub all_reached_horizon: bool,
    pub step_floor_hit: bool,
    pub floor_hits: usize,
    pub sup_g_r: f64,
    pub sup_lie: f64,
    /// Largest log₂(second-half sup / first-half sup) of |ℒ_K g(γ̇,γ̇)| over the runs,
    /// with both sups floored at 1e-6. Linear growth from zero gives 1, quadratic 2.
    pub lie_growth_exponent: f64,
    /// `lie_growth_exponent` ≤ [`MAX_GROWTH_EXPONENT`].
    pub lie_at_most_affine: bool,
    /// Samples where K failed to be timelike.
    pub timelike_warnings: usize,
    pub max_energy_drift: f64,
    pub max_killing_rate_residual: f64,
    pub max_equation_residual: f64,
    /// For Ψ = α∧η configs: every sampled |α(ẋ)| ≤ 1.01 × sup‖α‖_h · sup‖δ̇‖_h.
    pub pi_alpha_within_bound: Option<bool>,
    pub runs: Vec<ProbeGeodesic>,
}

/// Random start point and velocity, normalized to g^R(γ̇,γ̇) = 1 when K is timelike there.
pub fn probe_initial_state(cfg: &BundleConfig, c: f64, seed: u64, index: usize) -> Result<GeodesicState> {
    let mut rng = sampling::rng(seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let p = sampling::random_point(&cfg.base, &mut rng);
    let w: Vec<f64> = (0..cfg.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let st = GeodesicState::new(cfg, 0.0, p.clone(), w.clone())?;
    let s = probe_sample(cfg, c, &st, None)?;
    let scale = if s.g_kk < 0.0 && s.g_r > 0.0 { 1.0 / s.g_r.sqrt() } else { 1.0 };
    GeodesicState::new(cfg, 0.0, p, w.iter().map(|x| x * scale).collect())
}

fn alpha_sup_norm(cfg: &BundleConfig, alpha: &crate::field::OneForm) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for p in sampling::sample_points(&cfg.base, 256, 41) {
        let a = DVector::from_vec(alpha.values(&p));
        let sharp = cfg.base.sharp(&p, &a)?;
        sup = sup.max(a.dot(&sharp).max(0.0).sqrt());
    }
    Ok(sup)
}

fn base_speed(cfg: &BundleConfig, st: &GeodesicState) -> f64 {
    let h = cfg.base.metric(&st.position);
    let mut w = DVector::from_column_slice(&st.velocity);
    w[U] = 0.0;
    w[V] = 0.0;
    (w.transpose() * h * &w)[(0, 0)].max(0.0).sqrt()
}

/// Integrates `n` random geodesics to `horizon` and monitors the Killing-candidate
/// quantities along each one.
pub fn completeness_probe(
    cfg: &BundleConfig,
    n: usize,
    horizon: f64,
    seed: u64,
    tol: &Tolerances,
    exec: Exec,
) -> Result<ProbeReport> {
    let killing = killing_constant(cfg);
    let c = killing.c;
    let alpha = match &cfg.shape {
        Shape::RicciFlat(s) => Some(s.alpha.clone()),
        _ => None,
    };
    let alpha_sup = match &alpha {
        Some(a) => Some(alpha_sup_norm(cfg, a)?),
        None => None,
    };
    let runs: Vec<Result<ProbeGeodesic>> = exec.map_range(n, |i| {
        let init = probe_initial_state(cfg, c, seed, i)?;
        let traj = integrate_geodesic(cfg, &init, horizon, tol)?;
        let mut run = ProbeGeodesic {
            index: i,
            start: init.position.clone(),
            start_velocity: init.velocity.clone(),
            reached: traj.reached,
            step_floor_hit: traj.step_floor_hit,
            failure: traj.failure.clone(),
            energy_drift: traj.energy_drift,
            sup_g_r: 0.0,
            sup_lie: 0.0,
            sup_lie_first_half: 0.0,
            sup_lie_second_half: 0.0,
            timelike_failures: 0,
            killing_rate_residual: 0.0,
            equation_residual: equation_residual(cfg, &init, tol)?,
            sup_pi_alpha: alpha.as_ref().map(|_| 0.0),
            pi_alpha_bound: None,
            accepted_steps: traj.accepted_steps,
        };
        let mut sup_speed: f64 = 0.0;
        for st in &traj.points {
            let s = probe_sample(cfg, c, st, alpha.as_ref())?;
            if s.g_kk < 0.0 {
                run.sup_g_r = run.sup_g_r.max(s.g_r);
            } else {
                run.timelike_failures += 1;
            }
            run.sup_lie = run.sup_lie.max(s.lie.abs());
            run.killing_rate_residual = run.killing_rate_residual.max(killing_rate_residual(cfg, c, st)?);
            if st.t <= horizon / 2.0 {
                run.sup_lie_first_half = run.sup_lie_first_half.max(s.lie.abs());
            } else {
                run.sup_lie_second_half = run.sup_lie_second_half.max(s.lie.abs());
            }
            if let (Some(v), Some(sup)) = (s.pi_alpha, run.sup_pi_alpha.as_mut()) {
                *sup = sup.max(v.abs());
            }
            sup_speed = sup_speed.max(base_speed(cfg, st));
        }
        if let Some(a) = alpha_sup {
            run.pi_alpha_bound = Some(a * sup_speed);
        }
        if traj.completed() {
            let last = traj.last();
            run.equation_residual = run.equation_residual.max(equation_residual(cfg, last, tol)?);
        }
        Ok(run)
    });
    let runs: Vec<ProbeGeodesic> = runs.into_iter().collect::<Result<_>>()?;
    let lie_growth_exponent = runs
        .iter()
        .map(|r| (r.sup_lie_second_half.max(1e-6) / r.sup_lie_first_half.max(1e-6)).log2())
        .reduce(f64::max)
        .unwrap_or(0.0);
    let pi_alpha_within_bound = alpha.as_ref().map(|_| {
        runs.iter().all(|r| match (r.sup_pi_alpha, r.pi_alpha_bound) {
            (Some(s), Some(b)) => s <= 1.01 * b + 1e-12,
            _ => false,
        })
    });
    Ok(ProbeReport {
        config: cfg.name.clone(),
        horizon,
        geodesics: n,
        seed,
        all_reached_horizon: runs.iter().all(|r| r.reached >= horizon * (1.0 - 1e-12)),
        step_floor_hit: runs.iter().any(|r| r.step_floor_hit),
        floor_hits: runs.iter().filter(|r| r.step_floor_hit).count(),
        sup_g_r: runs.iter().map(|r| r.sup_g_r).fold(0.0, f64::max),
        sup_lie: runs.iter().map(|r| r.sup_lie).fold(0.0, f64::max),
        lie_growth_exponent,
        lie_at_most_affine: lie_growth_exponent <= MAX_GROWTH_EXPONENT,
        timelike_warnings: runs.iter().map(|r| r.timelike_failures).sum(),
        max_energy_drift: runs.iter().map(|r| r.energy_drift).fold(0.0, f64::max),
        max_killing_rate_residual: runs.iter().map(|r| r.killing_rate_residual).fold(0.0, f64::max),
        max_equation_residual: runs.iter().map(|r| r.equation_residual).fold(0.0, f64::max),
        pi_alpha_within_bound,
        killing,
        runs,
    })
}
