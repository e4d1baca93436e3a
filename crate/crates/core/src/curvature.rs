//! Riemann and Ricci tensors: closed-form frame components and a brute-force
//! oracle built from second derivatives of the chart metric.
//!
//! Convention: R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z and
//! R(X,Y,Z,W) = g(R(X,Y)Z, W). Ric(Y,Z) = tr(X ↦ R(X,Y)Z).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::base_geometry::{kulkarni_nomizu, V};
use crate::bundle_chart::{BundleConfig, ClosedFormConnection, FrameLabel, MetricDerivs, Shape};
use crate::error::{Error, Result};
use crate::field::Order;
use crate::sampling;

/// Fully lowered 4-tensor with flat layout `[((x*d + y)*d + z)*d + w]`.
#[derive(Clone, Debug)]
pub struct Tensor4 {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dim: usize) -> Tensor4 {
        Tensor4 {
            dim,
            data: vec![0.0; dim.pow(4)],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize, w: usize) -> usize {
        ((x * self.dim + y) * self.dim + z) * self.dim + w
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, w: usize) -> f64 {
        self.data[self.idx(x, y, z, w)]
    }

    /// Components in the basis given by the columns of `b`.
    pub fn in_basis(&self, b: &DMatrix<f64>) -> Tensor4 {
        let d = self.dim;
        let mut cur = self.data.clone();
        // Contract one slot at a time; slot s is the s-th index in the flat layout.
        for slot in 0..4 {
            let mut next = vec![0.0; d.pow(4)];
            let stride = d.pow(3 - slot as u32);
            for base in 0..d.pow(4) {
                let old = (base / stride) % d;
                let rest = base - old * stride;
                let v = cur[base];
                if v == 0.0 {
                    continue;
                }
                for new in 0..d {
                    let c = b[(old, new)];
                    if c != 0.0 {
                        next[rest + new * stride] += v * c;
                    }
                }
            }
            cur = next;
        }
        Tensor4 { dim: d, data: cur }
    }

    /// Largest violation of the pair symmetries and the first Bianchi identity.
    pub fn symmetry_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for x in 0..d {
            for y in 0..d {
                for z in 0..d {
                    for w in 0..d {
                        let r = self.get(x, y, z, w);
                        worst = worst
                            .max((r + self.get(y, x, z, w)).abs())
                            .max((r + self.get(x, y, w, z)).abs())
                            .max((r - self.get(z, w, x, y)).abs())
                            .max((r + self.get(y, z, x, w) + self.get(z, x, y, w)).abs());
                    }
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Brute-force curvature of the chart metric at one point.
#[derive(Clone, Debug)]
pub struct BruteCurvature {
    pub point: Vec<f64>,
    pub metric: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub riemann: Tensor4,
    pub ricci: DMatrix<f64>,
}

/// Chart Riemann and Ricci tensors from Christoffels and their derivatives.
pub fn riemann_brute_force(cfg: &BundleConfig, p: &[f64]) -> Result<BruteCurvature> {
    let d = cfg.dim();
    let mut m = MetricDerivs::new(d);
    cfg.metric_derivs(p, Order::Second, &mut m);
    let g = m.metric();
    let ginv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("singular metric at {:?}", p)))?;
    let low = m.lowered_christoffel();
    let li = |e: usize, b: usize, c: usize| low[(e * d + b) * d + c];
    // Γ^a_bc
    let mut gam = vec![0.0; d * d * d];
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                gam[(a * d + b) * d + c] = (0..d).map(|e| ginv[(a, e)] * li(e, b, c)).sum();
            }
        }
    }
    let ga = |a: usize, b: usize, c: usize| gam[(a * d + b) * d + c];
    // ∂_f g^{ae} = −g^{ap} ∂_f g_pq g^{qe}
    let dginv: Vec<DMatrix<f64>> = (0..d)
        .map(|f| {
            let dgf = DMatrix::from_fn(d, d, |p, q| m.dg(f, p, q));
            -(&ginv * dgf * &ginv)
        })
        .collect();
    // ∂_f Γ^a_bc
    let mut dgam = vec![0.0; d * d * d * d];
    for f in 0..d {
        for a in 0..d {
            for b in 0..d {
                for c in b..d {
                    let mut s = 0.0;
                    for e in 0..d {
                        let dlow =
                            0.5 * (m.ddg(f, b, e, c) + m.ddg(f, c, e, b) - m.ddg(f, e, b, c));
                        s += dginv[f][(a, e)] * li(e, b, c) + ginv[(a, e)] * dlow;
                    }
                    dgam[((f * d + a) * d + b) * d + c] = s;
                    dgam[((f * d + a) * d + c) * d + b] = s;
                }
            }
        }
    }
    let dga = |f: usize, a: usize, b: usize, c: usize| dgam[((f * d + a) * d + b) * d + c];
    let mut riem = Tensor4::zeros(d);
    for x in 0..d {
        for y in 0..d {
            if x == y {
                continue;
            }
            for z in 0..d {
                // (R(∂x,∂y)∂z)^a
                let mut ra = vec![0.0; d];
                for (a, r) in ra.iter_mut().enumerate() {
                    let mut s = dga(x, a, y, z) - dga(y, a, x, z);
                    for e in 0..d {
                        s += ga(a, x, e) * ga(e, y, z) - ga(a, y, e) * ga(e, x, z);
                    }
                    *r = s;
                }
                for w in 0..d {
                    let idx = riem.idx(x, y, z, w);
                    riem.data[idx] = (0..d).map(|a| g[(w, a)] * ra[a]).sum();
                }
            }
        }
    }
    let ricci = ricci_from_riemann(&riem, &ginv);
    Ok(BruteCurvature {
        point: p.to_vec(),
        metric: g,
        inverse: ginv,
        riemann: riem,
        ricci,
    })
}

/// Ric(Y,Z) = g^{aw} R(∂_a, Y, Z, ∂_w).
pub fn ricci_from_riemann(r: &Tensor4, ginv: &DMatrix<f64>) -> DMatrix<f64> {
    let d = r.dim;
    DMatrix::from_fn(d, d, |y, z| {
        let mut s = 0.0;
        for a in 0..d {
            for w in 0..d {
                s += ginv[(a, w)] * r.get(a, y, z, w);
            }
        }
        s
    })
}

/// Brute-force chart Ricci tensor.
pub fn ricci_brute_force(cfg: &BundleConfig, p: &[f64]) -> Result<DMatrix<f64>> {
    Ok(riemann_brute_force(cfg, p)?.ricci)
}

/// T_η(X, Y) for chart vectors (projected to the base).
pub fn t_eta(cfg: &BundleConfig, x: &DVector<f64>, y: &DVector<f64>, p: &[f64]) -> Result<f64> {
    let mut xb = x.clone();
    let mut yb = y.clone();
    xb[V] = 0.0;
    yb[V] = 0.0;
    cfg.base.t_eta(p, &xb, &yb)
}

/// Closed-form Riemann components in the frame (e_1..e_n, e_+, ξ).
#[derive(Clone, Debug, Serialize)]
pub struct RiemannComponents {
    /// R_ijkl, flat n⁴ layout.
    pub ijkl: Vec<f64>,
    /// R_i++j, n×n row-major.
    pub i_pp_j: Vec<f64>,
    /// R_ijk+, n³ layout.
    pub ijk_p: Vec<f64>,
    /// R_i++ξ.
    pub i_pp_xi: Vec<f64>,
    /// R_+ξξ+.
    pub p_xixi_p: f64,
}

/// Closed-form Ricci components.
#[derive(Clone, Debug, Serialize)]
pub struct RicciComponents {
    pub ij: Vec<f64>,
    pub i_plus: Vec<f64>,
    pub plus_plus: f64,
    pub xi_plus: f64,
}

struct BaseData {
    cf: ClosedFormConnection,
    rh: Tensor4,
    nabla_eta: DMatrix<f64>,
    /// ∇^h Ψ as `[c][(a,b)] = (∇_c Ψ)_ab`.
    nabla_psi: Vec<DMatrix<f64>>,
    eta_norm2: f64,
    hinv: DMatrix<f64>,
}

impl BaseData {
    fn new(cfg: &BundleConfig, p: &[f64]) -> Result<BaseData> {
        let cf = ClosedFormConnection::new(cfg, p)?;
        let d = cfg.dim();
        let rh = Tensor4 {
            dim: d,
            data: cfg.base.riemann_h(p)?,
        };
        let nabla_eta = cfg.base.nabla_eta(p)?;
        let g = &cf.gamma_h;
        let nabla_psi = (0..d)
            .map(|c| {
                DMatrix::from_fn(d, d, |a, b| {
                    let mut s = cf.dpsi[c][(a, b)];
                    for e in 0..d {
                        s -= g.get(e, c, a) * cf.psi[(e, b)] + g.get(e, c, b) * cf.psi[(a, e)];
                    }
                    s
                })
            })
            .collect();
        Ok(BaseData {
            eta_norm2: cfg.base.eta_norm(p).powi(2),
            hinv: cfg.base.metric_inverse(p)?,
            cf,
            rh,
            nabla_eta,
            nabla_psi,
        })
    }

    fn rh4(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let d = self.rh.dim;
        let mut s = 0.0;
        for a in 0..d {
            if x[a] == 0.0 {
                continue;
            }
            for b in 0..d {
                if y[b] == 0.0 {
                    continue;
                }
                for c in 0..d {
                    if z[c] == 0.0 {
                        continue;
                    }
                    for e in 0..d {
                        s += self.rh.get(a, b, c, e) * x[a] * y[b] * z[c] * w[e];
                    }
                }
            }
        }
        s
    }

    fn kn(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, w: &DVector<f64>) -> f64 {
        kulkarni_nomizu(&self.nabla_eta, &self.nabla_eta, x, y, z, w) / self.eta_norm2
    }

    fn nabla_psi(&self, c: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for (k, m) in self.nabla_psi.iter().enumerate() {
            if c[k] != 0.0 {
                s += c[k] * (a.transpose() * m * b)[(0, 0)];
            }
        }
        s
    }

    /// Base Ricci tensor applied to two base vectors.
    fn ric_h(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let d = self.rh.dim;
        let mut s = 0.0;
        for a in 0..d {
            for w in 0..d {
                if self.hinv[(a, w)] == 0.0 {
                    continue;
                }
                for b in 0..d {
                    for c in 0..d {
                        s += self.hinv[(a, w)] * self.rh.get(a, b, c, w) * x[b] * y[c];
                    }
                }
            }
        }
        s
    }

    /// A = Ψ(·, E_η) and B_X = ∇η(X, ·) as covectors.
    fn psi_e_eta(&self) -> DVector<f64> {
        &self.cf.psi * &self.cf.base_frame.e_eta
    }

    fn nabla_eta_along(&self, x: &DVector<f64>) -> DVector<f64> {
        self.nabla_eta.transpose() * x
    }

    fn t_eta(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for ek in &self.cf.base_frame.e {
            s += self.kn(x, ek, ek, y);
        }
        s
    }
}

/// Evaluates every closed-form Riemann component at `p`.
pub fn riemann_closed_form(cfg: &BundleConfig, p: &[f64]) -> Result<RiemannComponents> {
    let bd = BaseData::new(cfg, p)?;
    let n = cfg.base.n();
    let cf = &bd.cf;
    let e = &cf.base_frame.e;
    let ee = &cf.base_frame.e_eta;
    let a_form = bd.psi_e_eta();
    let b_eta = bd.nabla_eta_along(ee);
    let psibar: Vec<DVector<f64>> = e.iter().map(|v| cf.bar(&(&cf.psi_op * v))).collect();
    let mut ijkl = vec![0.0; n * n * n * n];
    let mut i_pp_j = vec![0.0; n * n];
    let mut ijk_p = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    ijkl[((i * n + j) * n + k) * n + l] =
                        bd.rh4(&e[i], &e[j], &e[k], &e[l]) + bd.kn(&e[i], &e[j], &e[k], &e[l]);
                }
                let bk = bd.nabla_eta_along(&e[k]);
                let wedge = a_form.dot(&e[i]) * bk.dot(&e[j]) - bk.dot(&e[i]) * a_form.dot(&e[j]);
                ijk_p[(i * n + j) * n + k] = bd.rh4(&e[i], &e[j], &e[k], ee)
                    + bd.kn(&e[i], &e[j], &e[k], ee)
                    + wedge
                    + bd.nabla_psi(&e[k], &e[i], &e[j]);
            }
            let sym = a_form.dot(&e[i]) * b_eta.dot(&e[j]) + a_form.dot(&e[j]) * b_eta.dot(&e[i]);
            i_pp_j[i * n + j] = bd.rh4(&e[i], ee, ee, &e[j])
                + bd.kn(&e[i], ee, ee, &e[j])
                + sym
                + bd.nabla_psi(&e[i], ee, &e[j])
                + bd.nabla_psi(&e[j], ee, &e[i])
                + (psibar[i].transpose() * &cf.h * &psibar[j])[(0, 0)]
                - 0.5 * cf.hess_f(FrameLabel::E(i), FrameLabel::E(j));
        }
    }
    let i_pp_xi = (0..n)
        .map(|i| -0.5 * cf.hess_f(FrameLabel::E(i), FrameLabel::Xi))
        .collect();
    Ok(RiemannComponents {
        ijkl,
        i_pp_j,
        ijk_p,
        i_pp_xi,
        p_xixi_p: -0.5 * cf.hess_f(FrameLabel::Xi, FrameLabel::Xi),
    })
}

/// div_g of the pullback of a base 2-form T (given as a matrix field through `t`),
/// evaluated on `y`: Σ_k ε_k (∇_{e_k} T)(e_k, y).
fn div_g_two_form(
    cf: &ClosedFormConnection,
    t: &DMatrix<f64>,
    dt: &[DMatrix<f64>],
    y: FrameLabel,
) -> f64 {
    let fr = &cf.frame;
    let n = cf.n();
    let mut frame: Vec<(FrameLabel, f64)> = (0..n).map(|i| (FrameLabel::E(i), 1.0)).collect();
    frame.push((FrameLabel::Plus, 1.0));
    frame.push((FrameLabel::Minus, -1.0));
    let tv = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * t * b)[(0, 0)];
    let yv = fr.vector(y);
    let dy = fr.derivative(y);
    let mut s = 0.0;
    for (ek, eps) in frame {
        let xv = fr.vector(ek);
        let dx = fr.derivative(ek);
        // e_k(T(e_k, y)) = Σ_a x^a ∂_a (x^b T_bc y^c)
        let mut deriv = 0.0;
        for a in 0..xv.len() {
            if xv[a] == 0.0 {
                continue;
            }
            let dxa = dx.column(a).into_owned();
            let dya = dy.column(a).into_owned();
            deriv += xv[a] * (tv(&dxa, &yv) + tv(&xv, &dya) + (xv.transpose() * &dt[a] * &yv)[(0, 0)]);
        }
        let val = deriv - tv(&cf.nabla(ek, ek), &yv) - tv(&xv, &cf.nabla(ek, y));
        s += eps * val;
    }
    s
}

/// div_g of the pullback of η: Σ_k ε_k (∇_{e_k} η)(e_k).
fn div_g_eta(cfg: &BundleConfig, cf: &ClosedFormConnection) -> Result<f64> {
    let fr = &cf.frame;
    let n = cf.n();
    let d = cfg.dim();
    let eta_jets = cfg.base.eta_form().jets(&cf.point, Order::First);
    let mut frame: Vec<(FrameLabel, f64)> = (0..n).map(|i| (FrameLabel::E(i), 1.0)).collect();
    frame.push((FrameLabel::Plus, 1.0));
    frame.push((FrameLabel::Minus, -1.0));
    let mut s = 0.0;
    for (ek, eps) in frame {
        let xv = fr.vector(ek);
        let dx = fr.derivative(ek);
        let mut deriv = 0.0;
        for a in 0..d {
            for b in 0..d {
                deriv += xv[a] * (eta_jets[b].grad[a] * xv[b] + eta_jets[b].value * dx[(b, a)]);
            }
        }
        let val = deriv - cf.eta.dot(&cf.nabla(ek, ek));
        s += eps * val;
    }
    Ok(s)
}

/// Evaluates the closed-form Ricci components at `p`.
pub fn ricci_closed_form(cfg: &BundleConfig, p: &[f64]) -> Result<RicciComponents> {
    let bd = BaseData::new(cfg, p)?;
    let n = cfg.base.n();
    let cf = &bd.cf;
    let e = &cf.base_frame.e;
    let ee = &cf.base_frame.e_eta;
    let d = cfg.dim();
    let a_form = bd.psi_e_eta();
    let b_eta = bd.nabla_eta_along(ee);
    let div_eta = div_g_eta(cfg, cf)?;
    let mut ij = vec![0.0; n * n];
    let mut i_plus = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            ij[i * n + j] = bd.ric_h(&e[i], &e[j]) + bd.t_eta(&e[i], &e[j]);
        }
        // ∇^h_{E_i} η♯
        let mut d_eta_sharp = DVector::zeros(d);
        for k in 0..d {
            let mut s = 0.0;
            for a in 0..d {
                s += bd.hinv[(k, k)] * bd.nabla_eta[(a, k)] * e[i][a];
            }
            d_eta_sharp[k] = s;
        }
        i_plus[i] = bd.ric_h(&e[i], ee)
            + bd.t_eta(&e[i], ee)
            // Sign fixed by contracting R_ijk+; see the fiber_terms test.
            - div_g_two_form(cf, &cf.psi, &cf.dpsi, FrameLabel::E(i))
            - cf.psi_form(&cf.frame.e[i], &cf.frame.zeta) * div_eta
            - cf.psi_form(&d_eta_sharp, ee)
            - 0.5 * cf.hess_f(FrameLabel::E(i), FrameLabel::Xi);
    }
    // tr_h [Ψ(·,E_η) ⊙ ∇η(E_η)] = h^{ab} A_a B_b
    let tr_sym = (0..d).map(|a| bd.hinv[(a, a)] * a_form[a] * b_eta[a]).sum::<f64>();
    // (div_h Ψ)(E_η) = h^{ab} (∇_a Ψ)(∂_b, E_η)
    let mut div_psi = 0.0;
    for a in 0..d {
        if bd.hinv[(a, a)] == 0.0 {
            continue;
        }
        div_psi += bd.hinv[(a, a)] * (bd.nabla_psi[a].row(a) * ee)[(0, 0)];
    }
    let psibar_sq: f64 = e
        .iter()
        .map(|v| {
            let w = cf.bar(&(&cf.psi_op * v));
            (w.transpose() * &cf.h * &w)[(0, 0)]
        })
        .sum();
    let lap_g: f64 = (0..n)
        .map(|i| cf.hess_f(FrameLabel::E(i), FrameLabel::E(i)))
        .sum::<f64>()
        + cf.hess_f(FrameLabel::Plus, FrameLabel::Plus)
        - cf.hess_f(FrameLabel::Minus, FrameLabel::Minus);
    let xi_f = cf.df(&cf.frame.xi);
    // e_+(ξ(f)); ξ has constant components so only second partials of f enter.
    let ep = &cf.frame.e_plus;
    let xi = &cf.frame.xi;
    let mut ep_xi_f = 0.0;
    for a in 0..d {
        for b in 0..d {
            ep_xi_f += ep[a] * xi[b] * cf.f.h(a, b);
        }
    }
    let plus_plus = bd.ric_h(ee, ee) + bd.t_eta(ee, ee) + 2.0 * tr_sym - 2.0 * div_psi + psibar_sq
        - 0.5 * lap_g
        - 0.5 * xi_f * xi_f
        - ep_xi_f;
    Ok(RicciComponents {
        ij,
        i_plus,
        plus_plus,
        xi_plus: -0.5 * cf.hess_f(FrameLabel::Xi, FrameLabel::Xi),
    })
}

/// Index type of a frame slot.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Slot {
    Screen,
    Plus,
    Xi,
}

/// Whether a frame component belongs to the orbit of a listed nonzero type.
fn listed_type(t: [Slot; 4]) -> bool {
    use Slot::*;
    let pair = |a: Slot, b: Slot| if a <= b { (a, b) } else { (b, a) };
    let p1 = pair(t[0], t[1]);
    let p2 = pair(t[2], t[3]);
    let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
    matches!(
        (lo, hi),
        ((Screen, Screen), (Screen, Screen))
            | ((Screen, Plus), (Screen, Plus))
            | ((Screen, Screen), (Screen, Plus))
            | ((Screen, Plus), (Plus, Xi))
            | ((Plus, Xi), (Plus, Xi))
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvatureReport {
    pub point: Vec<f64>,
    pub riemann_discrepancy: f64,
    pub worst_riemann_component: String,
    pub ricci_discrepancy: f64,
    pub worst_ricci_component: String,
    pub symmetry_residual: f64,
    /// Largest brute-force frame component outside the listed types.
    pub unlisted_max: f64,
    pub closed_riemann: RiemannComponents,
    pub closed_ricci: RicciComponents,
    pub brute_ricci_frame: Vec<f64>,
    pub ricci_sup: f64,
    pub scalar_curvature: f64,
}

/// |a − b| / max(|b|, 1e-3). At most 1e-5 exactly when |a − b| ≤ max(1e-5·|b|, 1e-8).
pub fn relative_discrepancy(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-3)
}

/// Closed-form components next to the brute-force frame contraction.
pub fn curvature_report(cfg: &BundleConfig, p: &[f64]) -> Result<CurvatureReport> {
    let n = cfg.base.n();
    let brute = riemann_brute_force(cfg, p)?;
    let fr = cfg.frame_at(p)?;
    let basis = fr.basis();
    let rf = brute.riemann.in_basis(&basis);
    let plus = n;
    let xi = n + 1;
    let closed = riemann_closed_form(cfg, p)?;
    let mut worst = (0.0f64, String::new());
    let mut cmp = |name: String, a: f64, b: f64| {
        let e = relative_discrepancy(a, b);
        if e >= worst.0 {
            worst = (e, name);
        }
    };
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    cmp(
                        format!("R_{}{}{}{}", i + 1, j + 1, k + 1, l + 1),
                        closed.ijkl[((i * n + j) * n + k) * n + l],
                        rf.get(i, j, k, l),
                    );
                }
                cmp(
                    format!("R_{}{}{}+", i + 1, j + 1, k + 1),
                    closed.ijk_p[(i * n + j) * n + k],
                    rf.get(i, j, k, plus),
                );
            }
            cmp(
                format!("R_{}++{}", i + 1, j + 1),
                closed.i_pp_j[i * n + j],
                rf.get(i, plus, plus, j),
            );
        }
        cmp(
            format!("R_{}++xi", i + 1),
            closed.i_pp_xi[i],
            rf.get(i, plus, plus, xi),
        );
    }
    cmp("R_+xixi+".into(), closed.p_xixi_p, rf.get(plus, xi, xi, plus));
    let (riemann_discrepancy, worst_riemann_component) = worst;

    let slot = |a: usize| {
        if a < n {
            Slot::Screen
        } else if a == plus {
            Slot::Plus
        } else {
            Slot::Xi
        }
    };
    let d = n + 2;
    let mut unlisted_max: f64 = 0.0;
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for e in 0..d {
                    if !listed_type([slot(a), slot(b), slot(c), slot(e)]) {
                        unlisted_max = unlisted_max.max(rf.get(a, b, c, e).abs());
                    }
                }
            }
        }
    }

    let ric_frame = basis.transpose() * &brute.ricci * &basis;
    let cr = ricci_closed_form(cfg, p)?;
    let mut worst = (0.0f64, String::new());
    let mut cmp = |name: String, a: f64, b: f64| {
        let e = relative_discrepancy(a, b);
        if e >= worst.0 {
            worst = (e, name);
        }
    };
    for i in 0..n {
        for j in 0..n {
            cmp(format!("Ric_{}{}", i + 1, j + 1), cr.ij[i * n + j], ric_frame[(i, j)]);
        }
        cmp(format!("Ric_{}+", i + 1), cr.i_plus[i], ric_frame[(i, plus)]);
        // listed as vanishing
        cmp(format!("Ric_{}xi", i + 1), 0.0, ric_frame[(i, xi)]);
    }
    cmp("Ric_++".into(), cr.plus_plus, ric_frame[(plus, plus)]);
    cmp("Ric_xi+".into(), cr.xi_plus, ric_frame[(xi, plus)]);
    cmp("Ric_xixi".into(), 0.0, ric_frame[(xi, xi)]);
    let scalar = (brute.inverse.component_mul(&brute.ricci)).sum();
    Ok(CurvatureReport {
        point: p.to_vec(),
        riemann_discrepancy,
        worst_riemann_component,
        ricci_discrepancy: worst.0,
        worst_ricci_component: worst.1,
        symmetry_residual: brute.riemann.symmetry_residual(),
        unlisted_max,
        closed_riemann: closed,
        closed_ricci: cr,
        brute_ricci_frame: ric_frame.iter().copied().collect(),
        ricci_sup: brute.ricci.amax(),
        scalar_curvature: scalar,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EinsteinObstruction {
    /// sup over samples of |½ Hess f(ξ,ξ)|.
    pub sup_half_hess_xixi: f64,
    /// Variation of ½ Hess f(ξ,ξ) along sampled fibers (max − min).
    pub fiber_variation: f64,
}

/// The cosmological-constant candidate ½ Hess f(ξ,ξ) over sampled fibers.
pub fn einstein_obstruction(cfg: &BundleConfig) -> Result<EinsteinObstruction> {
    let mut sup: f64 = 0.0;
    let mut var: f64 = 0.0;
    for p in sampling::sample_points(&cfg.base, 16, 23) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..16 {
            let mut q = p.clone();
            q[V] = s as f64 * std::f64::consts::PI / 8.0;
            let cf = cfg.closed_form(&q)?;
            let val = 0.5 * cf.hess_f(FrameLabel::Xi, FrameLabel::Xi);
            sup = sup.max(val.abs());
            lo = lo.min(val);
            hi = hi.max(val);
        }
        var = var.max(hi - lo);
    }
    Ok(EinsteinObstruction {
        sup_half_hess_xixi: sup,
        fiber_variation: var,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RicciFlatResidual {
    pub sup: f64,
    pub samples: usize,
}

/// Δ_{h_B} f_B + 4 div_{h_B} α at one point.
pub fn ricci_flat_residual_at(cfg: &BundleConfig, p: &[f64]) -> Result<f64> {
    let shape = match &cfg.shape {
        Shape::RicciFlat(s) => s,
        _ => {
            return Err(Error::Shape(
                "config is not of the form B x S1, eta = du, Psi = alpha ^ eta".into(),
            ))
        }
    };
    let lap = cfg.base.calculus(&shape.f_b, p)?.laplacian;
    let div = cfg.base.div_one_form(&shape.alpha, p)?;
    Ok(lap + 4.0 * div)
}

/// Sup of the Ricci-flatness residual over sampled points.
pub fn ricci_flat_residual(cfg: &BundleConfig, samples: usize) -> Result<RicciFlatResidual> {
    let mut sup: f64 = 0.0;
    for p in sampling::sample_points(&cfg.base, samples, 31) {
        sup = sup.max(ricci_flat_residual_at(cfg, &p)?.abs());
    }
    Ok(RicciFlatResidual { sup, samples })
}
