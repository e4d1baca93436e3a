//! The Lorentzian metric g = 2iA⊙η + f η⊙η + h on a circle bundle, written in
//! chart coordinates (u, v, x) through a gauge potential P with iA = dv + P.
//!
//! With η = ρ(u) du and ⊙ the ½-normalized symmetric product the components are
//! g_uv = ρ, g_uu = fρ² + 1 + 2ρP_u, g_ua = ρP_a, g_ab = h_ab and g_vv = g_va = 0.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::base_geometry::{BaseFrame, Christoffel, ProductBase, U, V};
use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::field::{expr_field, Field, Jet, OneForm, Order, ProductField, SumField, TwoForm};
use crate::sampling;

/// Tolerance for dP = 2Ψ at sampled points.
pub const GAUGE_TOL: f64 = 1e-8;
/// Tolerance for dΨ = 0.
pub const CLOSED_TOL: f64 = 1e-9;
/// Tolerance for algebraic frame identities.
pub const FRAME_TOL: f64 = 1e-10;

const VALIDATION_POINTS: usize = 48;
const VALIDATION_SEED: u64 = 0x5eed;

/// One block Ψ_{ab} = amplitude·sin x_a sin x_b + offset on a pair of torus coordinates.
#[derive(Clone, Debug, Serialize)]
pub struct TorusBlock {
    pub first: usize,
    pub second: usize,
    pub amplitude: f64,
    pub offset: f64,
}

#[derive(Clone, Debug)]
pub enum GaugeStrategy {
    /// Ψ = α∧η with α a closed base 1-form; `alpha_potential` is a primitive of α
    /// on the universal cover (used only for chart transitions along u).
    AlphaWedgeEta {
        alpha: OneForm,
        alpha_potential: Option<Field>,
    },
    TorusBlocks(Vec<TorusBlock>),
    Explicit(OneForm),
}

impl GaugeStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            GaugeStrategy::AlphaWedgeEta { .. } => "alpha_wedge_eta",
            GaugeStrategy::TorusBlocks(_) => "torus_blocks",
            GaugeStrategy::Explicit(_) => "explicit",
        }
    }

    /// The 2-form the strategy encodes, when it determines one.
    pub fn psi(&self, base: &ProductBase) -> Option<TwoForm> {
        let d = base.chart_dim();
        match self {
            GaugeStrategy::AlphaWedgeEta { alpha, .. } => {
                let mut psi = TwoForm::zero(d);
                for (a, comp) in alpha.comps.iter().enumerate() {
                    if let Some(al) = comp {
                        // (α∧η)_{a u} = α_a ρ
                        let f: Field = Arc::new(ProductField(al.clone(), base.eta.rho.clone()));
                        psi.insert(a, U, f);
                    }
                }
                Some(psi)
            }
            GaugeStrategy::TorusBlocks(blocks) => {
                let mut psi = TwoForm::zero(d);
                for b in blocks {
                    let e = block_expr(b);
                    let label = format!("{}*sin(x)sin(y)+{}", b.amplitude, b.offset);
                    psi.insert(b.first, b.second, expr_field(e, d, label));
                }
                Some(psi)
            }
            GaugeStrategy::Explicit(_) => None,
        }
    }
}

fn block_expr(b: &TorusBlock) -> Expr {
    expr::add(
        expr::mul(
            Expr::Num(b.amplitude),
            expr::mul(
                Expr::Sin(Box::new(Expr::Var(b.first))),
                Expr::Sin(Box::new(Expr::Var(b.second))),
            ),
        ),
        Expr::Num(b.offset),
    )
}

/// Builds a potential P with dP = 2Ψ for the chosen strategy.
pub fn gauge_potential(
    base: &ProductBase,
    psi: &TwoForm,
    strategy: &GaugeStrategy,
) -> Result<OneForm> {
    let d = base.chart_dim();
    let p = match strategy {
        GaugeStrategy::AlphaWedgeEta { alpha, .. } => {
            let r = base.eta.antiderivative.clone().ok_or_else(|| {
                Error::Config("alpha_wedge_eta gauge needs an antiderivative of rho".into())
            })?;
            let mut p = OneForm::zero(d);
            for (a, comp) in alpha.comps.iter().enumerate() {
                if let Some(al) = comp {
                    let prod: Field = Arc::new(ProductField(r.clone(), al.clone()));
                    p.set(a, Arc::new(SumField(vec![(-2.0, prod)])));
                }
            }
            p
        }
        GaugeStrategy::TorusBlocks(blocks) => {
            let mut comps: Vec<Expr> = vec![Expr::Num(0.0); d];
            for b in blocks {
                // P_second = 2c x_first − 2a cos x_first sin x_second
                let lin = expr::mul(Expr::Num(2.0 * b.offset), Expr::Var(b.first));
                let osc = expr::mul(
                    Expr::Num(-2.0 * b.amplitude),
                    expr::mul(
                        Expr::Cos(Box::new(Expr::Var(b.first))),
                        Expr::Sin(Box::new(Expr::Var(b.second))),
                    ),
                );
                let old = std::mem::replace(&mut comps[b.second], Expr::Num(0.0));
                comps[b.second] = expr::add(old, expr::add(lin, osc));
            }
            let mut p = OneForm::zero(d);
            for (a, e) in comps.into_iter().enumerate() {
                if !e.is_zero() {
                    p.set(a, expr_field(e, d, format!("P_{}", a)));
                }
            }
            p
        }
        GaugeStrategy::Explicit(p) => p.clone(),
    };
    let residual = gauge_residual(base, &p, psi);
    if !(residual <= GAUGE_TOL) {
        return Err(Error::Gauge {
            residual,
            tolerance: GAUGE_TOL,
        });
    }
    Ok(p)
}

/// Sampled sup of |dP − 2Ψ|.
pub fn gauge_residual(base: &ProductBase, p: &OneForm, psi: &TwoForm) -> f64 {
    sampling::sample_points(base, VALIDATION_POINTS, VALIDATION_SEED)
        .iter()
        .map(|x| (p.exterior_derivative(x) - 2.0 * psi.matrix(x)).amax())
        .fold(0.0, f64::max)
}

/// Recoordinatization applied when `coord` leaves [0, 2π): the coordinate drops
/// by 2π and v gains `v_shift` evaluated at the pre-wrap point.
#[derive(Clone, Debug)]
pub struct ChartTransition {
    pub coord: usize,
    pub v_shift: Option<Field>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Type4Shape {
    pub k: usize,
    pub m: usize,
    pub l: usize,
    /// Chart indices of y_1..y_m.
    pub line_coords: Vec<usize>,
    /// Chart indices of x_1..x_k.
    pub torus_coords: Vec<usize>,
    /// (i, j, λ) with 1-based torus indices i < j and λ = λ_i^j ≤ m.
    pub lambda_set: Vec<(usize, usize, usize)>,
    pub offsets: Vec<f64>,
    pub warp: String,
}

#[derive(Clone, Debug)]
pub struct RicciFlatShape {
    pub alpha: OneForm,
    pub f_b: Field,
    pub torus_coords: Vec<usize>,
}

#[derive(Clone, Debug)]
pub enum Shape {
    General,
    RicciFlat(RicciFlatShape),
    Type4(Type4Shape),
}

/// Everything needed to write g in a chart: base, Ψ, potential, f.
#[derive(Clone, Debug)]
pub struct BundleConfig {
    pub name: String,
    pub base: ProductBase,
    pub psi: TwoForm,
    pub potential: OneForm,
    pub f: Field,
    pub fiber_constant: bool,
    pub gauge: GaugeStrategy,
    pub transitions: Vec<ChartTransition>,
    pub shape: Shape,
}

impl BundleConfig {
    /// Validates every invariant at sampled points and derives the potential.
    /// `psi` may be omitted for the explicit strategy, in which case Ψ = ½dP.
    pub fn new(
        name: impl Into<String>,
        base: ProductBase,
        psi: Option<TwoForm>,
        gauge: GaugeStrategy,
        f: Field,
        shape: Shape,
    ) -> Result<BundleConfig> {
        let d = base.chart_dim();
        let psi = match (psi, gauge.psi(&base)) {
            (Some(p), _) => p,
            (None, Some(p)) => p,
            (None, None) => match &gauge {
                GaugeStrategy::Explicit(p) => half_exterior_derivative(p, d)?,
                _ => unreachable!(),
            },
        };
        if psi.dim != d {
            return Err(Error::Config("Psi dimension does not match the base".into()));
        }
        for (a, b, c) in &psi.comps {
            if *a == V || *b == V || c.dependencies() & (1 << V) != 0 {
                return Err(Error::Config("Psi must be a form on the base".into()));
            }
        }
        let samples = sampling::sample_points(&base, VALIDATION_POINTS, VALIDATION_SEED);
        let closed = samples
            .iter()
            .map(|x| psi.closedness_residual(x))
            .fold(0.0, f64::max);
        if !(closed <= CLOSED_TOL) {
            return Err(Error::Config(format!(
                "Psi is not closed: |dPsi| = {:.3e}",
                closed
            )));
        }
        for x in &samples {
            let rho = base.rho(x);
            if !(rho.abs() > 0.0) || !rho.is_finite() {
                return Err(Error::Config(format!("eta vanishes at {:?}", x)));
            }
            let h = base.metric(x);
            for a in 2..d {
                if !(h[(a, a)] > 0.0) || !h[(a, a)].is_finite() {
                    return Err(Error::Config(format!(
                        "warp of '{}' vanishes or is non-finite at {:?}",
                        base.factors[a - 2].name(),
                        x
                    )));
                }
            }
            let deta = base.eta_form().exterior_derivative(x).amax();
            if deta > 1e-9 {
                return Err(Error::Config(format!("eta is not closed: {:.3e}", deta)));
            }
        }
        let potential = gauge_potential(&base, &psi, &gauge)?;
        if potential.comps[V].is_some()
            || potential
                .comps
                .iter()
                .flatten()
                .any(|c| c.dependencies() & (1 << V) != 0)
        {
            return Err(Error::Config("gauge potential must not involve v".into()));
        }
        // f lives on a circle bundle, so it must be 2π-periodic along the fiber.
        let mut fiber_var: f64 = 0.0;
        let mut dv_max: f64 = 0.0;
        for x in &samples {
            let mut y = x.clone();
            y[V] += 2.0 * PI;
            let a = f.value(x);
            let b = f.value(&y);
            if !a.is_finite() {
                return Err(Error::Domain(format!("f is not finite at {:?}", x)));
            }
            fiber_var = fiber_var.max((a - b).abs() / (1.0 + a.abs()));
            if f.dependencies() & (1 << V) != 0 {
                dv_max = dv_max.max(f.jet(x, Order::First).grad[V].abs());
            }
        }
        if fiber_var > 1e-9 {
            return Err(Error::Domain(format!(
                "f is not periodic along the circle fiber (mismatch {:.3e})",
                fiber_var
            )));
        }
        let fiber_constant = f.dependencies() & (1 << V) == 0 || dv_max <= 1e-10;
        let mut cfg = BundleConfig {
            name: name.into(),
            base,
            psi,
            potential,
            f,
            fiber_constant,
            gauge,
            transitions: Vec::new(),
            shape,
        };
        cfg.transitions = cfg.build_transitions(&samples);
        for x in &samples {
            let neg = cfg.negative_eigenvalues(x);
            if neg != 1 {
                return Err(Error::Config(format!(
                    "metric is not Lorentzian at {:?} ({} negative eigenvalues)",
                    x, neg
                )));
            }
        }
        Ok(cfg)
    }

    pub fn dim(&self) -> usize {
        self.base.chart_dim()
    }

    pub fn coord_names(&self) -> Vec<String> {
        self.base.coord_names()
    }

    fn negative_eigenvalues(&self, p: &[f64]) -> usize {
        let g = self.metric(p);
        g.symmetric_eigenvalues().iter().filter(|&&e| e < 0.0).count()
    }

    fn build_transitions(&self, samples: &[Vec<f64>]) -> Vec<ChartTransition> {
        let d = self.dim();
        let mut out = vec![ChartTransition {
            coord: V,
            v_shift: None,
        }];
        for c in (0..d).filter(|&c| c != V && self.base.is_periodic(c)) {
            if self.periodic_in(c, samples) {
                out.push(ChartTransition {
                    coord: c,
                    v_shift: None,
                });
                continue;
            }
            let shift: Option<Field> = match &self.gauge {
                GaugeStrategy::TorusBlocks(blocks) => {
                    // P_second jumps by 4πc when x_first drops by 2π: v' = v + 4πc·x_second.
                    let mut e = Expr::Num(0.0);
                    for b in blocks.iter().filter(|b| b.first == c) {
                        e = expr::add(
                            e,
                            expr::mul(Expr::Num(4.0 * PI * b.offset), Expr::Var(b.second)),
                        );
                    }
                    Some(expr_field(e, d, "torus-block shift"))
                }
                GaugeStrategy::AlphaWedgeEta {
                    alpha_potential: Some(phi),
                    ..
                } if c == U => {
                    // P = −2R(u)α jumps by 2Lα with L = R(2π) − R(0): v' = v − 2LΦ_α.
                    let r = self.base.eta.antiderivative.as_ref().expect("checked in gauge");
                    let mut a = vec![0.0; d];
                    let r0 = r.value(&a);
                    a[U] = 2.0 * PI;
                    let l = r.value(&a) - r0;
                    Some(Arc::new(SumField(vec![(-2.0 * l, phi.clone())])) as Field)
                }
                _ => None,
            };
            if let Some(s) = shift {
                out.push(ChartTransition {
                    coord: c,
                    v_shift: Some(s),
                });
            }
        }
        // Keep only transitions that really are isometries of the chart metric.
        out.retain(|t| self.transition_is_isometry(t, samples));
        out
    }

    fn periodic_in(&self, c: usize, samples: &[Vec<f64>]) -> bool {
        samples.iter().all(|x| {
            let mut y = x.clone();
            y[c] += 2.0 * PI;
            (self.metric(x) - self.metric(&y)).amax() <= 1e-10 * (1.0 + self.metric(x).amax())
        })
    }

    fn transition_is_isometry(&self, t: &ChartTransition, samples: &[Vec<f64>]) -> bool {
        samples.iter().all(|x| {
            let mut y = x.clone();
            y[t.coord] += 2.0 * PI;
            // map y -> y' = (y_c − 2π, v + s(y)); pullback of g at y' must equal g at y.
            let (yp, jac) = self.apply_transition(t, &y);
            let g_y = self.metric(&y);
            let g_yp = self.metric(&yp);
            let pulled = jac.transpose() * g_yp * &jac;
            (&pulled - &g_y).amax() <= 1e-9 * (1.0 + g_y.amax())
        })
    }

    /// Applies a transition to a point; also returns the Jacobian of the map.
    pub fn apply_transition(&self, t: &ChartTransition, p: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let d = self.dim();
        let mut q = p.to_vec();
        q[t.coord] -= 2.0 * PI;
        let mut jac = DMatrix::identity(d, d);
        if let Some(s) = &t.v_shift {
            let j = s.jet(p, Order::First);
            q[V] += j.value;
            for a in 0..d {
                jac[(V, a)] += j.grad[a];
            }
        }
        (q, jac)
    }

    /// Metric components at a point.
    pub fn metric(&self, p: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let rho = self.base.rho(p);
        let f = self.f.value(p);
        let pv = self.potential.values(p);
        let mut g = self.base.metric(p);
        g[(U, V)] = rho;
        g[(V, U)] = rho;
        g[(U, U)] = f * rho * rho + 1.0 + 2.0 * rho * pv[U];
        for a in 2..d {
            g[(U, a)] = rho * pv[a];
            g[(a, U)] = rho * pv[a];
        }
        g
    }

    pub fn chart_metric(&self) -> ChartMetric<'_> {
        ChartMetric { cfg: self }
    }

    /// Adapted frame of the metric at `p`; checks its algebraic identities.
    pub fn frame_at(&self, p: &[f64]) -> Result<AdaptedFrame> {
        let fr = self.frame_unchecked(p)?;
        let g = self.metric(p);
        let worst = fr.identity_residual(&g, &self.base.eta_form().values(p));
        if worst > FRAME_TOL * (1.0 + g.amax()) {
            return Err(Error::Consistency(format!(
                "adapted frame identities fail by {:.3e} at {:?}",
                worst, p
            )));
        }
        Ok(fr)
    }

    fn frame_unchecked(&self, p: &[f64]) -> Result<AdaptedFrame> {
        let d = self.dim();
        let bf = self.base.frame(p)?;
        let pj = self.potential.jets(p, Order::First);
        let rho = self.base.rho_jet(p, Order::First);
        let f = self.f.jet(p, Order::First);
        let lift = |v: &DVector<f64>, dv: &DMatrix<f64>| {
            let mut w = v.clone();
            let mut dw = dv.clone();
            w[V] = -(0..d).map(|a| pj[a].value * v[a]).sum::<f64>();
            for b in 0..d {
                dw[(V, b)] = -(0..d)
                    .map(|a| pj[a].grad[b] * v[a] + pj[a].value * dv[(a, b)])
                    .sum::<f64>();
            }
            (w, dw)
        };
        let (zeta, d_zeta) = lift(&bf.e_eta, &bf.de_eta);
        let mut e = Vec::with_capacity(bf.e.len());
        let mut de = Vec::with_capacity(bf.e.len());
        for (v, dv) in bf.e.iter().zip(&bf.de) {
            let (w, dw) = lift(v, dv);
            e.push(w);
            de.push(dw);
        }
        let inv2 = rho.recip().square();
        let h_jet = f.add(&inv2).add_const(-1.0);
        let mut xi = DVector::zeros(d);
        xi[V] = -1.0;
        let e_plus = &zeta + 0.5 * h_jet.value * &xi;
        let mut d_e_plus = d_zeta.clone();
        for b in 0..d {
            d_e_plus[(V, b)] -= 0.5 * h_jet.grad[b];
        }
        let e_minus = &e_plus + &xi;
        let z = 0.5 * &xi - &e_minus;
        Ok(AdaptedFrame {
            point: p.to_vec(),
            h: h_jet.value,
            dh: DVector::from_fn(d, |b, _| h_jet.grad[b]),
            xi,
            zeta,
            e_plus,
            e_minus,
            z,
            e,
            d_zeta,
            d_e_plus,
            de,
        })
    }

    /// Closed-form connection data at a point.
    pub fn closed_form(&self, p: &[f64]) -> Result<ClosedFormConnection> {
        ClosedFormConnection::new(self, p)
    }

    /// ∇_X Y from the closed-form formulas.
    pub fn cov_deriv_closed_form(
        &self,
        x: FrameLabel,
        y: FrameLabel,
        p: &[f64],
    ) -> Result<DVector<f64>> {
        Ok(self.closed_form(p)?.nabla(x, y))
    }

    /// ∇_X Y by contracting the brute-force Christoffels with the frame fields.
    pub fn cov_deriv_numeric(
        &self,
        x: FrameLabel,
        y: FrameLabel,
        p: &[f64],
    ) -> Result<DVector<f64>> {
        let fr = self.frame_unchecked(p)?;
        let gamma = self.christoffel_g_numeric(p)?;
        let xv = fr.vector(x);
        let yv = fr.vector(y);
        let dy = fr.derivative(y);
        Ok(&dy * &xv + gamma.contract(&xv, &yv))
    }

    /// Metric, first and second partials. Layout documented on [`MetricDerivs`].
    pub fn metric_derivs(&self, p: &[f64], order: Order, out: &mut MetricDerivs) {
        let d = self.dim();
        out.reset(d, order);
        let rho = self.base.rho_jet(p, order);
        let f = self.f.jet(p, order);
        let pj = self.potential.jets(p, order);
        let hd = self.base.metric_diag_jets(p, order);
        out.set(U, V, &rho);
        let guu = f
            .mul(&rho.square())
            .add(&rho.mul(&pj[U]).scale(2.0))
            .add_const(1.0);
        out.set(U, U, &guu);
        for a in 2..d {
            if self.potential.comps[a].is_some() {
                out.set(U, a, &rho.mul(&pj[a]));
            }
            out.set(a, a, &hd[a]);
        }
    }

    /// Christoffel symbols of g from the Koszul formula with a generic inverse.
    pub fn christoffel_g_numeric(&self, p: &[f64]) -> Result<Christoffel> {
        let d = self.dim();
        let mut m = MetricDerivs::new(d);
        self.metric_derivs(p, Order::First, &mut m);
        let ginv = m
            .metric()
            .try_inverse()
            .ok_or_else(|| Error::Numerical(format!("singular metric at {:?}", p)))?;
        let lowered = m.lowered_christoffel();
        let mut gamma = Christoffel::zeros(d);
        for a in 0..d {
            for b in 0..d {
                for c in b..d {
                    let mut s = 0.0;
                    for e in 0..d {
                        s += ginv[(a, e)] * lowered[(e * d + b) * d + c];
                    }
                    gamma.set(a, b, c, s);
                    gamma.set(a, c, b, s);
                }
            }
        }
        Ok(gamma)
    }

    /// Sup over samples of the 3-form η∧Ψ; integrable when ≤ 1e-10.
    pub fn screen_integrability(&self) -> ScreenIntegrability {
        let d = self.dim();
        let eta = self.base.eta_form();
        let mut worst: f64 = 0.0;
        for x in sampling::sample_points(&self.base, 64, 11) {
            let e = eta.values(&x);
            let s = self.psi.matrix(&x);
            for a in 0..d {
                for b in a + 1..d {
                    for c in b + 1..d {
                        let w = e[a] * s[(b, c)] + e[b] * s[(c, a)] + e[c] * s[(a, b)];
                        worst = worst.max(w.abs());
                    }
                }
            }
        }
        ScreenIntegrability {
            integrable: worst <= 1e-10,
            max_eta_wedge_psi: worst,
        }
    }

    /// (ℒ_K g)_ab = g(∇_a K, ∂_b) + g(∂_a, ∇_b K) using the numeric Christoffels.
    pub fn lie_derivative_g(&self, k: &dyn VectorField, p: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let gamma = self.christoffel_g_numeric(p)?;
        let (kv, dk) = k.eval(p);
        let g = self.metric(p);
        // (∇_a K)^c = ∂_a K^c + Γ^c_ab K^b
        let nk = DMatrix::from_fn(d, d, |c, a| {
            dk[(c, a)] + (0..d).map(|b| gamma.get(c, a, b) * kv[b]).sum::<f64>()
        });
        let gn = &g * &nk;
        Ok(&gn + gn.transpose())
    }

    /// Killing candidate K = ζ + (C/2)ξ.
    pub fn killing_candidate(&self, c: f64) -> KillingCandidate<'_> {
        KillingCandidate { cfg: self, c }
    }

    /// Frame-independent ξ-parallelism data used by several modules.
    pub fn xi_derivative_sup(&self, p: &[f64]) -> Result<f64> {
        let gamma = self.christoffel_g_numeric(p)?;
        let d = self.dim();
        let mut xi = DVector::zeros(d);
        xi[V] = -1.0;
        let mut worst: f64 = 0.0;
        for a in 0..d {
            let mut e = DVector::zeros(d);
            e[a] = 1.0;
            worst = worst.max(gamma.contract(&e, &xi).amax());
        }
        Ok(worst)
    }
}

fn half_exterior_derivative(p: &OneForm, d: usize) -> Result<TwoForm> {
    // Ψ_ab = ½(∂_a P_b − ∂_b P_a); symbolic when the potential is expression-backed.
    let mut psi = TwoForm::zero(d);
    for a in 0..d {
        for b in a + 1..d {
            let comp = |i: usize, j: usize| -> Option<Expr> {
                match &p.comps[j] {
                    None => Some(Expr::Num(0.0)),
                    Some(f) => f.expression().map(|e| e.diff(i)),
                }
            };
            match (comp(a, b), comp(b, a)) {
                (Some(x), Some(y)) => {
                    let e = expr::mul(Expr::Num(0.5), expr::sub(x, y));
                    if !e.is_zero() {
                        psi.insert(a, b, expr_field(e, d, format!("Psi_{}{}", a, b)));
                    }
                }
                _ => {
                    return Err(Error::Config(
                        "explicit gauge without Psi needs expression potentials".into(),
                    ))
                }
            }
        }
    }
    Ok(psi)
}

#[derive(Clone, Debug, Serialize)]
pub struct ScreenIntegrability {
    pub integrable: bool,
    pub max_eta_wedge_psi: f64,
}

/// Borrowed view exposing component, inverse and derivative evaluators.
#[derive(Clone, Copy)]
pub struct ChartMetric<'a> {
    cfg: &'a BundleConfig,
}

impl ChartMetric<'_> {
    pub fn dim(&self) -> usize {
        self.cfg.dim()
    }

    pub fn components(&self, p: &[f64]) -> DMatrix<f64> {
        self.cfg.metric(p)
    }

    /// Closed-form inverse: g^{uu}=0, g^{uv}=1/ρ, g^{vv}=−g_uu/ρ²+Pᵀh⁻¹P, g^{va}=−(h⁻¹P)_a.
    pub fn inverse(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let cfg = self.cfg;
        let d = cfg.dim();
        let rho = cfg.base.rho(p);
        let hinv = cfg.base.metric_inverse(p)?;
        let mut pv = DVector::from_vec(cfg.potential.values(p));
        pv[U] = 0.0;
        pv[V] = 0.0;
        let guu = cfg.metric(p)[(U, U)];
        let b = -(&hinv * &pv);
        let mut m = hinv.clone();
        m[(U, U)] = 0.0;
        m[(U, V)] = 1.0 / rho;
        m[(V, U)] = 1.0 / rho;
        m[(V, V)] = -guu / (rho * rho) - pv.dot(&b);
        for a in 2..d {
            m[(V, a)] = b[a];
            m[(a, V)] = b[a];
        }
        Ok(m)
    }

    /// ∂_c g_ab as `out[c]`.
    pub fn derivatives(&self, p: &[f64]) -> Vec<DMatrix<f64>> {
        let d = self.dim();
        let mut m = MetricDerivs::new(d);
        self.cfg.metric_derivs(p, Order::First, &mut m);
        (0..d)
            .map(|c| DMatrix::from_fn(d, d, |a, b| m.dg(c, a, b)))
            .collect()
    }
}

/// Reusable buffers: g[a][b], ∂_c g_ab and ∂_c ∂_e g_ab.
#[derive(Clone, Debug)]
pub struct MetricDerivs {
    pub dim: usize,
    pub order: Order,
    pub g: Vec<f64>,
    pub dg: Vec<f64>,
    pub ddg: Vec<f64>,
}

impl MetricDerivs {
    pub fn new(dim: usize) -> MetricDerivs {
        MetricDerivs {
            dim,
            order: Order::First,
            g: vec![0.0; dim * dim],
            dg: vec![0.0; dim * dim * dim],
            ddg: Vec::new(),
        }
    }

    fn reset(&mut self, dim: usize, order: Order) {
        self.dim = dim;
        self.order = order;
        self.g.clear();
        self.g.resize(dim * dim, 0.0);
        self.dg.clear();
        self.dg.resize(dim * dim * dim, 0.0);
        self.ddg.clear();
        if order == Order::Second {
            self.ddg.resize(dim * dim * dim * dim, 0.0);
        }
    }

    fn set(&mut self, a: usize, b: usize, j: &Jet) {
        let d = self.dim;
        self.g[a * d + b] = j.value;
        self.g[b * d + a] = j.value;
        if self.order == Order::Value {
            return;
        }
        for c in 0..d {
            self.dg[(c * d + a) * d + b] = j.grad[c];
            self.dg[(c * d + b) * d + a] = j.grad[c];
        }
        if self.order == Order::Second {
            for c in 0..d {
                for e in 0..d {
                    let v = j.h(c, e);
                    self.ddg[((c * d + e) * d + a) * d + b] = v;
                    self.ddg[((c * d + e) * d + b) * d + a] = v;
                }
            }
        }
    }

    #[inline]
    pub fn g(&self, a: usize, b: usize) -> f64 {
        self.g[a * self.dim + b]
    }

    #[inline]
    pub fn dg(&self, c: usize, a: usize, b: usize) -> f64 {
        self.dg[(c * self.dim + a) * self.dim + b]
    }

    #[inline]
    pub fn ddg(&self, c: usize, e: usize, a: usize, b: usize) -> f64 {
        let d = self.dim;
        self.ddg[((c * d + e) * d + a) * d + b]
    }

    pub fn metric(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.g)
    }

    /// Γ_{d,bc} = ½(∂_b g_dc + ∂_c g_db − ∂_d g_bc), flat layout [(d*D + b)*D + c].
    pub fn lowered_christoffel(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d * d];
        for e in 0..d {
            for b in 0..d {
                for c in 0..d {
                    out[(e * d + b) * d + c] =
                        0.5 * (self.dg(b, e, c) + self.dg(c, e, b) - self.dg(e, b, c));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FrameLabel {
    /// Screen vector e_i (0-based).
    E(usize),
    Plus,
    Xi,
    Minus,
    Z,
}

impl FrameLabel {
    pub fn name(&self) -> String {
        match self {
            FrameLabel::E(i) => format!("e{}", i + 1),
            FrameLabel::Plus => "e+".into(),
            FrameLabel::Xi => "xi".into(),
            FrameLabel::Minus => "e-".into(),
            FrameLabel::Z => "Z".into(),
        }
    }

    /// The labels the closed-form connection formulas are stated for.
    pub fn connection_labels(n: usize) -> Vec<FrameLabel> {
        let mut v: Vec<FrameLabel> = (0..n).map(FrameLabel::E).collect();
        v.push(FrameLabel::Plus);
        v.push(FrameLabel::Xi);
        v
    }
}

#[derive(Clone, Debug)]
pub struct AdaptedFrame {
    pub point: Vec<f64>,
    pub h: f64,
    /// ∂_a H.
    pub dh: DVector<f64>,
    pub xi: DVector<f64>,
    pub zeta: DVector<f64>,
    pub e_plus: DVector<f64>,
    pub e_minus: DVector<f64>,
    pub z: DVector<f64>,
    pub e: Vec<DVector<f64>>,
    /// Chart derivatives `[(component, a)] = ∂_a (vector)^component`.
    pub d_zeta: DMatrix<f64>,
    pub d_e_plus: DMatrix<f64>,
    pub de: Vec<DMatrix<f64>>,
}

impl AdaptedFrame {
    pub fn vector(&self, l: FrameLabel) -> DVector<f64> {
        match l {
            FrameLabel::E(i) => self.e[i].clone(),
            FrameLabel::Plus => self.e_plus.clone(),
            FrameLabel::Xi => self.xi.clone(),
            FrameLabel::Minus => self.e_minus.clone(),
            FrameLabel::Z => self.z.clone(),
        }
    }

    pub fn derivative(&self, l: FrameLabel) -> DMatrix<f64> {
        let d = self.xi.len();
        match l {
            FrameLabel::E(i) => self.de[i].clone(),
            FrameLabel::Plus | FrameLabel::Minus => self.d_e_plus.clone(),
            FrameLabel::Xi => DMatrix::zeros(d, d),
            FrameLabel::Z => -&self.d_e_plus,
        }
    }

    /// Matrix whose columns are e_1..e_n, e_+, ξ (a basis of the tangent space).
    pub fn basis(&self) -> DMatrix<f64> {
        let mut cols = self.e.clone();
        cols.push(self.e_plus.clone());
        cols.push(self.xi.clone());
        DMatrix::from_columns(&cols)
    }

    /// Largest violation of the algebraic frame identities.
    pub fn identity_residual(&self, g: &DMatrix<f64>, eta: &[f64]) -> f64 {
        let ip = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * g * b)[(0, 0)];
        let mut worst: f64 = 0.0;
        let mut check = |x: f64, want: f64| worst = worst.max((x - want).abs());
        check(ip(&self.xi, &self.xi), 0.0);
        check(ip(&self.xi, &self.zeta), -1.0);
        check(ip(&self.e_plus, &self.e_plus), 1.0);
        check(ip(&self.e_minus, &self.e_minus), -1.0);
        check(ip(&self.e_plus, &self.e_minus), 0.0);
        check(ip(&self.xi, &self.z), 1.0);
        for (i, ei) in self.e.iter().enumerate() {
            check(ip(ei, &self.e_plus), 0.0);
            check(ip(ei, &self.e_minus), 0.0);
            for (j, ej) in self.e.iter().enumerate() {
                check(ip(ei, ej), if i == j { 1.0 } else { 0.0 });
            }
        }
        // π*η = −g(ξ,·)
        let gx = g * &self.xi;
        for a in 0..eta.len() {
            check(-gx[a], eta[a]);
        }
        worst
    }
}

/// All base data the closed-form connection and curvature formulas consume at a point.
pub struct ClosedFormConnection {
    pub point: Vec<f64>,
    pub frame: AdaptedFrame,
    pub base_frame: BaseFrame,
    pub gamma_h: Christoffel,
    pub h: DMatrix<f64>,
    /// Ψ components and their partials.
    pub psi: DMatrix<f64>,
    pub dpsi: Vec<DMatrix<f64>>,
    /// ψ as an operator on chart vectors (base block).
    pub psi_op: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub potential: DVector<f64>,
    pub f: Jet,
    pub rho: f64,
}

impl ClosedFormConnection {
    pub fn new(cfg: &BundleConfig, p: &[f64]) -> Result<ClosedFormConnection> {
        let frame = cfg.frame_at(p)?;
        let base_frame = cfg.base.frame(p)?;
        let gamma_h = cfg.base.christoffel_h(p)?;
        let (psi, dpsi) = cfg.psi.matrix_with_derivatives(p);
        let psi_op = cfg.base.psi_endomorphism(&psi, p)?.operator;
        Ok(ClosedFormConnection {
            point: p.to_vec(),
            h: cfg.base.metric(p),
            eta: DVector::from_vec(cfg.base.eta_form().values(p)),
            potential: DVector::from_vec(cfg.potential.values(p)),
            f: cfg.f.jet(p, Order::Second),
            rho: cfg.base.rho(p),
            frame,
            base_frame,
            gamma_h,
            psi,
            dpsi,
            psi_op,
        })
    }

    pub fn n(&self) -> usize {
        self.frame.e.len()
    }

    fn base_vec(&self, i: Option<usize>) -> (&DVector<f64>, &DMatrix<f64>) {
        match i {
            Some(i) => (&self.base_frame.e[i], &self.base_frame.de[i]),
            None => (&self.base_frame.e_eta, &self.base_frame.de_eta),
        }
    }

    /// ∇^h_{E_a} E_b with `None` standing for E_η.
    pub fn nabla_h(&self, a: Option<usize>, b: Option<usize>) -> DVector<f64> {
        let (x, _) = self.base_vec(a);
        let (y, dy) = self.base_vec(b);
        dy * x + self.gamma_h.contract(x, y)
    }

    /// Projection onto ker η along E_η.
    pub fn bar(&self, v: &DVector<f64>) -> DVector<f64> {
        v - &self.base_frame.e_eta * self.eta.dot(v)
    }

    /// Horizontal lift X* = X − P(X)∂_v of a base vector.
    pub fn lift(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut w = v.clone();
        w[V] = -self.potential.dot(v);
        w
    }

    pub fn psi_form(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (x.transpose() * &self.psi * y)[(0, 0)]
    }

    /// Directional derivative of f along a chart vector.
    pub fn df(&self, x: &DVector<f64>) -> f64 {
        (0..x.len()).map(|a| self.f.grad[a] * x[a]).sum()
    }

    /// grad_g f = Σ e_i(f) e_i + e_+(f) e_+ − e_−(f) e_−.
    pub fn grad_f(&self) -> DVector<f64> {
        let fr = &self.frame;
        let mut g = &fr.e_plus * self.df(&fr.e_plus) - &fr.e_minus * self.df(&fr.e_minus);
        for e in &fr.e {
            g += e * self.df(e);
        }
        g
    }

    fn xi_f(&self) -> f64 {
        self.df(&self.frame.xi)
    }

    /// The closed-form ∇_X Y for frame labels.
    pub fn nabla(&self, x: FrameLabel, y: FrameLabel) -> DVector<f64> {
        use FrameLabel::*;
        let fr = &self.frame;
        let xi = &fr.xi;
        match (x, y) {
            (Minus, _) => self.nabla(Plus, y) + self.nabla(Xi, y),
            (Z, _) => -self.nabla(Plus, y) - 0.5 * self.nabla(Xi, y),
            (_, Minus) => self.nabla(x, Plus) + self.nabla(x, Xi),
            (_, Z) => -self.nabla(x, Plus) - 0.5 * self.nabla(x, Xi),
            // (e) ∇_X ξ = −½ ξ(f) η(X) ξ
            (_, Xi) => {
                let xv = fr.vector(x);
                xi * (-0.5 * self.xi_f() * self.eta.dot(&xv))
            }
            // [ξ, e_j] = 0
            (Xi, E(_)) => self.nabla(y, Xi),
            // [ξ, e_+] = ½ ξ(f) ξ
            (Xi, Plus) => self.nabla(Plus, Xi) + xi * (0.5 * self.xi_f()),
            // (a)
            (E(i), E(j)) => {
                let nh = self.nabla_h(Some(i), Some(j));
                let c = self.psi_form(&self.base_frame.e[i], &self.base_frame.e[j])
                    - (self.base_frame.e_eta.transpose() * &self.h * &nh)[(0, 0)];
                self.lift(&self.bar(&nh)) + xi * c
            }
            // (b)
            (Plus, E(j)) => {
                let ej = &self.base_frame.e[j];
                let nh = self.nabla_h(None, Some(j));
                let pe = &self.psi_op * ej;
                let c = 2.0 * self.psi_form(ej, &self.base_frame.e_eta)
                    + 0.5 * fr.dh.dot(&fr.e[j]);
                self.lift(&self.bar(&nh)) + self.lift(&self.bar(&pe)) - xi * c
            }
            // (c)
            (E(i), Plus) => {
                let nh = self.nabla_h(Some(i), None);
                let pe = &self.psi_op * &self.base_frame.e[i];
                self.lift(&self.bar(&nh)) + self.lift(&self.bar(&pe))
            }
            // (d)
            (Plus, Plus) => {
                let nh = self.nabla_h(None, None);
                let pe = &self.psi_op * &self.base_frame.e_eta;
                self.lift(&self.bar(&nh)) + 2.0 * self.lift(&self.bar(&pe))
                    - 0.5 * self.grad_f()
                    - xi * (0.5 * self.df(&fr.e_plus))
            }
        }
    }

    /// Hess_g f(X, Y) = X(Y f) − (∇_X Y) f with the closed-form connection.
    pub fn hess_f(&self, x: FrameLabel, y: FrameLabel) -> f64 {
        let xv = self.frame.vector(x);
        let yv = self.frame.vector(y);
        let dy = self.frame.derivative(y);
        let d = xv.len();
        let mut xyf = 0.0;
        for a in 0..d {
            if xv[a] == 0.0 {
                continue;
            }
            for b in 0..d {
                xyf += xv[a] * (dy[(b, a)] * self.f.grad[b] + yv[b] * self.f.h(a, b));
            }
        }
        xyf - self.df(&self.nabla(x, y))
    }
}

/// A chart vector field with its first partials.
pub trait VectorField: Sync {
    /// Components K^c and the matrix `[(c, a)] = ∂_a K^c`.
    fn eval(&self, p: &[f64]) -> (DVector<f64>, DMatrix<f64>);
}

/// K = ζ + (C/2)ξ = (1/ρ)∂_u − (P_u/ρ + C/2)∂_v.
pub struct KillingCandidate<'a> {
    cfg: &'a BundleConfig,
    pub c: f64,
}

impl VectorField for KillingCandidate<'_> {
    fn eval(&self, p: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.cfg.dim();
        let rinv = self.cfg.base.rho_jet(p, Order::First).recip();
        let pu = match &self.cfg.potential.comps[U] {
            Some(f) => f.jet(p, Order::First),
            None => Jet::constant(d, 0.0, Order::First),
        };
        let kv_jet = pu.mul(&rinv).add_const(0.5 * self.c).scale(-1.0);
        let mut k = DVector::zeros(d);
        let mut dk = DMatrix::zeros(d, d);
        k[U] = rinv.value;
        k[V] = kv_jet.value;
        for a in 0..d {
            dk[(U, a)] = rinv.grad[a];
            dk[(V, a)] = kv_jet.grad[a];
        }
        (k, dk)
    }
}
