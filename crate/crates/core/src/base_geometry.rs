//! The Riemannian base N = (warped lines) × (flat circles) × S¹(u) and its calculus.
//!
//! Base objects live in chart coordinates (u, v, x¹..xⁿ) with the fiber slot
//! `v` (index 1) ignored: base vectors are chart vectors with zero v-component
//! and base tensors have vanishing v rows and columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::{Field, Jet, OneForm, Order, MAX_DIM};

pub const U: usize = 0;
pub const V: usize = 1;

#[derive(Clone, Debug)]
pub enum Factor {
    /// ℝ with metric φ(y)² dy². The warp must depend on its own coordinate only.
    WarpedLine { name: String, warp: Field },
    /// Flat circle of period 2π.
    TorusCircle { name: String },
}

impl Factor {
    pub fn name(&self) -> &str {
        match self {
            Factor::WarpedLine { name, .. } | Factor::TorusCircle { name } => name,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, Factor::TorusCircle { .. })
    }
}

/// η = ρ(u) du together with an optional antiderivative R(u) of ρ.
#[derive(Clone, Debug)]
pub struct Eta {
    pub rho: Field,
    pub antiderivative: Option<Field>,
}

#[derive(Clone, Debug)]
pub struct ProductBase {
    pub factors: Vec<Factor>,
    pub eta: Eta,
}

/// Christoffel symbols Γ^k_ij stored as `[k][i][j]` in a flat buffer.
#[derive(Clone, Debug)]
pub struct Christoffel {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(dim: usize) -> Christoffel {
        Christoffel {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.dim + i) * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.data[(k * self.dim + i) * self.dim + j] = v;
    }

    /// (∇_X Y)^k contribution Γ^k_ij X^i Y^j.
    pub fn contract(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let d = self.dim;
        DVector::from_fn(d, |k, _| {
            let mut s = 0.0;
            for i in 0..d {
                if x[i] == 0.0 {
                    continue;
                }
                for j in 0..d {
                    s += self.get(k, i, j) * x[i] * y[j];
                }
            }
            s
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Orthonormal frame of the base at a point.
#[derive(Clone, Debug)]
pub struct BaseFrame {
    pub point: Vec<f64>,
    /// E_1..E_n spanning ker η.
    pub e: Vec<DVector<f64>>,
    /// E_η = η♯ / ‖η♯‖².
    pub e_eta: DVector<f64>,
    /// Chart derivatives: `de[i][(k, a)] = ∂_a (E_i)^k`.
    pub de: Vec<DMatrix<f64>>,
    pub de_eta: DMatrix<f64>,
}

/// Output of [`ProductBase::calculus`].
#[derive(Clone, Debug)]
pub struct Calculus {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub laplacian: f64,
}

/// ψ as an operator (column convention, ψ(X) = Ψ(X,·)♯) and as the table h(ψ ∂_a, ∂_b).
#[derive(Clone, Debug)]
pub struct PsiEndomorphism {
    pub operator: DMatrix<f64>,
    pub table: DMatrix<f64>,
    /// pr_{ker η} ∘ ψ restricted to ker η, in the basis E_1..E_n.
    pub restricted: DMatrix<f64>,
}

impl ProductBase {
    pub fn new(factors: Vec<Factor>, eta: Eta) -> Result<ProductBase> {
        if factors.len() + 2 > MAX_DIM {
            return Err(Error::Config(format!(
                "chart dimension {} exceeds the supported maximum {}",
                factors.len() + 2,
                MAX_DIM
            )));
        }
        let base = ProductBase { factors, eta };
        for (i, fac) in base.factors.iter().enumerate() {
            if let Factor::WarpedLine { warp, .. } = fac {
                let own = 1u64 << (i + 2);
                if warp.dependencies() & !own != 0 {
                    return Err(Error::Config(format!(
                        "warp of factor '{}' must depend on its own coordinate only",
                        fac.name()
                    )));
                }
            }
        }
        if base.eta.rho.dependencies() & !1u64 != 0 {
            return Err(Error::Config("eta density rho must depend on u only".into()));
        }
        Ok(base)
    }

    /// Flat T^k × S¹ with η = du.
    pub fn flat_torus(k: usize) -> ProductBase {
        let factors = (1..=k)
            .map(|i| Factor::TorusCircle {
                name: format!("x{}", i),
            })
            .collect();
        ProductBase::new(factors, Eta::unit(k + 2)).expect("flat torus base")
    }

    pub fn n(&self) -> usize {
        self.factors.len()
    }

    pub fn chart_dim(&self) -> usize {
        self.factors.len() + 2
    }

    pub fn coord_names(&self) -> Vec<String> {
        let mut v = vec!["u".to_string(), "v".to_string()];
        v.extend(self.factors.iter().map(|f| f.name().to_string()));
        v
    }

    /// Chart index of a named coordinate.
    pub fn coord_index(&self, name: &str) -> Option<usize> {
        self.coord_names().iter().position(|n| n == name)
    }

    /// Coordinates that are circles (u, v and torus factors).
    pub fn is_periodic(&self, coord: usize) -> bool {
        coord < 2 || self.factors[coord - 2].is_periodic()
    }

    /// Chart indices of the base directions (everything except v).
    pub fn base_indices(&self) -> Vec<usize> {
        let mut v = vec![U];
        v.extend(2..self.chart_dim());
        v
    }

    fn warp_jet(&self, i: usize, p: &[f64], order: Order) -> Option<Jet> {
        match &self.factors[i] {
            Factor::WarpedLine { warp, .. } => Some(warp.jet(p, order)),
            Factor::TorusCircle { .. } => None,
        }
    }

    pub fn rho(&self, p: &[f64]) -> f64 {
        self.eta.rho.value(p)
    }

    pub fn rho_jet(&self, p: &[f64], order: Order) -> Jet {
        self.eta.rho.jet(p, order)
    }

    /// η as a chart 1-form.
    pub fn eta_form(&self) -> OneForm {
        let mut f = OneForm::zero(self.chart_dim());
        f.set(U, self.eta.rho.clone());
        f
    }

    /// Diagonal metric entries h_aa as jets (entry for v is zero).
    pub fn metric_diag_jets(&self, p: &[f64], order: Order) -> Vec<Jet> {
        let d = self.chart_dim();
        let mut out = Vec::with_capacity(d);
        out.push(Jet::constant(d, 1.0, order));
        out.push(Jet::constant(d, 0.0, order));
        for i in 0..self.n() {
            match self.warp_jet(i, p, order) {
                Some(j) => out.push(j.square()),
                None => out.push(Jet::constant(d, 1.0, order)),
            }
        }
        out
    }

    pub fn metric(&self, p: &[f64]) -> DMatrix<f64> {
        let d = self.chart_dim();
        let mut h = DMatrix::zeros(d, d);
        h[(U, U)] = 1.0;
        for (i, fac) in self.factors.iter().enumerate() {
            h[(i + 2, i + 2)] = match fac {
                Factor::WarpedLine { warp, .. } => warp.value(p).powi(2),
                Factor::TorusCircle { .. } => 1.0,
            };
        }
        h
    }

    /// Inverse of the base block, padded with zeros in the v slot.
    pub fn metric_inverse(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let h = self.metric(p);
        let d = self.chart_dim();
        let mut inv = DMatrix::zeros(d, d);
        for a in self.base_indices() {
            let x = h[(a, a)];
            if !x.is_finite() || x == 0.0 {
                return Err(Error::Domain(format!(
                    "base metric degenerate or non-finite in direction {} at {:?}",
                    a, p
                )));
            }
            inv[(a, a)] = 1.0 / x;
        }
        Ok(inv)
    }

    fn check_point(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.chart_dim() || p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("invalid chart point {:?}", p)));
        }
        Ok(())
    }

    /// Christoffel symbols of h (zero in every v slot).
    pub fn christoffel_h(&self, p: &[f64]) -> Result<Christoffel> {
        self.check_point(p)?;
        let d = self.chart_dim();
        let jets = self.metric_diag_jets(p, Order::First);
        let mut g = Christoffel::zeros(d);
        for k in self.base_indices() {
            let hkk = jets[k].value;
            if !hkk.is_finite() || hkk == 0.0 {
                return Err(Error::Domain(format!(
                    "warp value non-finite or zero in direction {} at {:?}",
                    k, p
                )));
            }
            for i in self.base_indices() {
                for j in self.base_indices() {
                    // ½ h^{kk} (∂_i h_jk + ∂_j h_ik - ∂_k h_ij), h diagonal.
                    let mut s = 0.0;
                    if j == k {
                        s += jets[k].grad[i];
                    }
                    if i == k {
                        s += jets[k].grad[j];
                    }
                    if i == j {
                        s -= jets[i].grad[k];
                    }
                    if s != 0.0 {
                        g.set(k, i, j, 0.5 * s / hkk);
                    }
                }
            }
        }
        Ok(g)
    }

    /// Partial derivatives ∂_l Γ^k_ij, stored as `out[l]`.
    pub fn christoffel_h_derivatives(&self, p: &[f64]) -> Result<Vec<Christoffel>> {
        self.check_point(p)?;
        let d = self.chart_dim();
        let jets = self.metric_diag_jets(p, Order::Second);
        let mut out = vec![Christoffel::zeros(d); d];
        let base = self.base_indices();
        for k in base.iter().copied() {
            let hkk = jets[k].value;
            if !hkk.is_finite() || hkk == 0.0 {
                return Err(Error::Domain(format!("degenerate warp at {:?}", p)));
            }
            for i in base.iter().copied() {
                for j in base.iter().copied() {
                    for l in base.iter().copied() {
                        let mut s = 0.0;
                        let mut ds = 0.0;
                        if j == k {
                            s += jets[k].grad[i];
                            ds += jets[k].h(i, l);
                        }
                        if i == k {
                            s += jets[k].grad[j];
                            ds += jets[k].h(j, l);
                        }
                        if i == j {
                            s -= jets[i].grad[k];
                            ds -= jets[i].h(k, l);
                        }
                        if s == 0.0 && ds == 0.0 {
                            continue;
                        }
                        let dinv = -jets[k].grad[l] / (hkk * hkk);
                        out[l].set(k, i, j, 0.5 * (ds / hkk + s * dinv));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Lowered Riemann tensor of h: `r[((x*d + y)*d + z)*d + w] = h(R(∂x,∂y)∂z, ∂w)`.
    pub fn riemann_h(&self, p: &[f64]) -> Result<Vec<f64>> {
        let d = self.chart_dim();
        let g = self.christoffel_h(p)?;
        let dg = self.christoffel_h_derivatives(p)?;
        let h = self.metric(p);
        let mut r = vec![0.0; d * d * d * d];
        let base = self.base_indices();
        for &x in &base {
            for &y in &base {
                for &z in &base {
                    // (R(∂x,∂y)∂z)^a = ∂x Γ^a_yz - ∂y Γ^a_xz + Γ^a_xe Γ^e_yz - Γ^a_ye Γ^e_xz
                    for &a in &base {
                        let mut s = dg[x].get(a, y, z) - dg[y].get(a, x, z);
                        for &e in &base {
                            s += g.get(a, x, e) * g.get(e, y, z) - g.get(a, y, e) * g.get(e, x, z);
                        }
                        if s == 0.0 {
                            continue;
                        }
                        for &w in &base {
                            r[((x * d + y) * d + z) * d + w] += s * h[(a, w)];
                        }
                    }
                }
            }
        }
        Ok(r)
    }

    /// Value, gradient, Hessian and Laplacian of a scalar field on the base.
    pub fn calculus(&self, f: &Field, p: &[f64]) -> Result<Calculus> {
        let jet = f.jet(p, Order::Second);
        self.calculus_from_jet(&jet, p)
    }

    pub fn calculus_from_jet(&self, jet: &Jet, p: &[f64]) -> Result<Calculus> {
        let d = self.chart_dim();
        let g = self.christoffel_h(p)?;
        let hinv = self.metric_inverse(p)?;
        let base = self.base_indices();
        let mut df = DVector::zeros(d);
        for &a in &base {
            df[a] = jet.grad[a];
        }
        let grad = &hinv * &df;
        let mut hess = DMatrix::zeros(d, d);
        for &a in &base {
            for &b in &base {
                let mut s = jet.h(a, b);
                for &c in &base {
                    s -= g.get(c, a, b) * jet.grad[c];
                }
                hess[(a, b)] = s;
            }
        }
        let laplacian = (&hinv.component_mul(&hess)).sum();
        Ok(Calculus {
            value: jet.value,
            grad,
            hessian: hess,
            laplacian,
        })
    }

    /// Index raising of a covector (v slot dropped).
    pub fn sharp(&self, p: &[f64], alpha: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.metric_inverse(p)? * alpha)
    }

    pub fn flat(&self, p: &[f64], x: &DVector<f64>) -> DVector<f64> {
        self.metric(p) * x
    }

    /// Divergence of a 1-form: Σ h^{ab}(∂_a α_b − Γ^c_ab α_c).
    pub fn div_one_form(&self, alpha: &OneForm, p: &[f64]) -> Result<f64> {
        let g = self.christoffel_h(p)?;
        let hinv = self.metric_inverse(p)?;
        let jets = alpha.jets(p, Order::First);
        let base = self.base_indices();
        let mut s = 0.0;
        for &a in &base {
            let mut t = jets[a].grad[a];
            for &c in &base {
                t -= g.get(c, a, a) * jets[c].value;
            }
            s += hinv[(a, a)] * t;
        }
        Ok(s)
    }

    /// Divergence of a vector field from component jets: ∂_a X^a + Γ^a_ab X^b.
    pub fn div_vector(&self, comps: &[Jet], p: &[f64]) -> Result<f64> {
        let g = self.christoffel_h(p)?;
        let base = self.base_indices();
        let mut s = 0.0;
        for &a in &base {
            s += comps[a].grad[a];
            for &b in &base {
                s += g.get(a, a, b) * comps[b].value;
            }
        }
        Ok(s)
    }

    /// Covariant derivative ∇η as a (2,0) tensor. Errors when it is not symmetric.
    pub fn nabla_eta(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.chart_dim();
        let g = self.christoffel_h(p)?;
        let eta = self.eta_form();
        let jets = eta.jets(p, Order::First);
        let base = self.base_indices();
        let mut m = DMatrix::zeros(d, d);
        for &a in &base {
            for &b in &base {
                let mut s = jets[b].grad[a];
                for &c in &base {
                    s -= g.get(c, a, b) * jets[c].value;
                }
                m[(a, b)] = s;
            }
        }
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-9 {
            return Err(Error::Consistency(format!(
                "nabla eta not symmetric (asymmetry {:.3e}); eta is not closed",
                asym
            )));
        }
        Ok(m)
    }

    /// True when ∇η is a multiple of η⊗η at `p`.
    pub fn eta_is_recurrent_at(&self, p: &[f64]) -> Result<bool> {
        let m = self.nabla_eta(p)?;
        let eta = DVector::from_vec(self.eta_form().values(p));
        let norm2 = eta.norm_squared();
        let coeff = (eta.transpose() * &m * &eta)[(0, 0)] / (norm2 * norm2);
        let resid = (&m - coeff * &eta * eta.transpose()).amax();
        Ok(resid <= 1e-9 * (1.0 + m.amax()))
    }

    /// ‖η♯‖_h.
    pub fn eta_norm(&self, p: &[f64]) -> f64 {
        self.rho(p).abs()
    }

    pub fn frame(&self, p: &[f64]) -> Result<BaseFrame> {
        self.check_point(p)?;
        let d = self.chart_dim();
        let n = self.n();
        let mut e = Vec::with_capacity(n);
        let mut de = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = DVector::zeros(d);
            let mut dv = DMatrix::zeros(d, d);
            match self.warp_jet(i, p, Order::First) {
                Some(j) => {
                    if j.value == 0.0 || !j.value.is_finite() {
                        return Err(Error::Domain(format!("warp vanishes at {:?}", p)));
                    }
                    let r = j.recip();
                    v[i + 2] = r.value;
                    for a in 0..d {
                        dv[(i + 2, a)] = r.grad[a];
                    }
                }
                None => v[i + 2] = 1.0,
            }
            e.push(v);
            de.push(dv);
        }
        let rho = self.rho_jet(p, Order::First);
        if rho.value == 0.0 || !rho.value.is_finite() {
            return Err(Error::Domain(format!("eta vanishes at {:?}", p)));
        }
        let r = rho.recip();
        let mut e_eta = DVector::zeros(d);
        e_eta[U] = r.value;
        let mut de_eta = DMatrix::zeros(d, d);
        for a in 0..d {
            de_eta[(U, a)] = r.grad[a];
        }
        Ok(BaseFrame {
            point: p.to_vec(),
            e,
            e_eta,
            de,
            de_eta,
        })
    }

    /// ψ for a base 2-form given by its component matrix at `p`.
    pub fn psi_endomorphism(&self, psi: &DMatrix<f64>, p: &[f64]) -> Result<PsiEndomorphism> {
        let hinv = self.metric_inverse(p)?;
        // ψ(X)^j = h^{jk} Ψ_ik X^i, so the operator is h⁻¹ Ψᵀ.
        let operator = &hinv * psi.transpose();
        let h = self.metric(p);
        let table = (&h * &operator).transpose();
        let frame = self.frame(p)?;
        let n = self.n();
        let eta = DVector::from_vec(self.eta_form().values(p));
        let mut restricted = DMatrix::zeros(n, n);
        for i in 0..n {
            let img = &operator * &frame.e[i];
            let proj = &img - frame.e_eta.clone() * eta.dot(&img);
            for j in 0..n {
                restricted[(j, i)] = (frame.e[j].transpose() * &h * &proj)[(0, 0)];
            }
        }
        Ok(PsiEndomorphism {
            operator,
            table,
            restricted,
        })
    }

    /// Sum over the screen frame of a Kulkarni–Nomizu square of ∇η, divided by ‖η♯‖².
    ///
    /// T_η(X,Y) = ‖η♯‖⁻² Σ_k (∇η ⊼ ∇η)(X, E_k, E_k, Y).
    pub fn t_eta(&self, p: &[f64], x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let m = self.nabla_eta(p)?;
        let frame = self.frame(p)?;
        let norm2 = self.eta_norm(p).powi(2);
        let mut s = 0.0;
        for ek in &frame.e {
            s += kulkarni_nomizu(&m, &m, x, ek, ek, y);
        }
        Ok(s / norm2)
    }
}

impl Eta {
    /// η = du.
    pub fn unit(dim: usize) -> Eta {
        use crate::expr::Expr;
        use crate::field::expr_field;
        Eta {
            rho: crate::field::constant(1.0, dim),
            antiderivative: Some(expr_field(Expr::Var(U), dim, "u")),
        }
    }
}

/// (A ⊼ B)(X,Y,Z,W) = A(X,W)B(Y,Z) + A(Y,Z)B(X,W) − A(X,Z)B(Y,W) − A(Y,W)B(X,Z).
pub fn kulkarni_nomizu(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    w: &DVector<f64>,
) -> f64 {
    let q = |m: &DMatrix<f64>, p: &DVector<f64>, r: &DVector<f64>| (p.transpose() * m * r)[(0, 0)];
    q(a, x, w) * q(b, y, z) + q(a, y, z) * q(b, x, w) - q(a, x, z) * q(b, y, w) - q(a, y, w) * q(b, x, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::field::{expr_field, TwoForm};

    fn warped_mixed() -> ProductBase {
        let vars = ["u", "v", "y", "x"];
        let warp = expr_field(parse("exp(y)", &vars).unwrap(), 4, "exp(y)");
        ProductBase::new(
            vec![
                Factor::WarpedLine {
                    name: "y".into(),
                    warp,
                },
                Factor::TorusCircle { name: "x".into() },
            ],
            Eta::unit(4),
        )
        .unwrap()
    }

    #[test]
    fn flat_base_has_zero_christoffels() {
        let b = ProductBase::flat_torus(2);
        assert_eq!(b.christoffel_h(&[0.3, 0.0, 1.0, 2.0]).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn warped_line_christoffel() {
        let b = warped_mixed();
        let g = b.christoffel_h(&[0.0, 0.0, 0.0, 0.5]).unwrap();
        // Γ^y_yy = φ'/φ = 1 for φ = e^y; product: no cross terms with x.
        assert!((g.get(2, 2, 2) - 1.0).abs() < 1e-14);
        assert_eq!(g.get(2, 3, 3), 0.0);
        assert_eq!(g.get(3, 2, 3), 0.0);
    }

    #[test]
    fn metric_compatibility() {
        let b = warped_mixed();
        let p = [0.2, 0.0, 0.7, 1.1];
        let g = b.christoffel_h(&p).unwrap();
        let jets = b.metric_diag_jets(&p, Order::First);
        let h = b.metric(&p);
        // ∂_c h_ab = Γ^e_ca h_eb + Γ^e_cb h_ae
        for c in b.base_indices() {
            for a in b.base_indices() {
                for bb in b.base_indices() {
                    let lhs = if a == bb { jets[a].grad[c] } else { 0.0 };
                    let mut rhs = 0.0;
                    for e in b.base_indices() {
                        rhs += g.get(e, c, a) * h[(e, bb)] + g.get(e, c, bb) * h[(a, e)];
                    }
                    assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn psi_endomorphism_on_flat_torus() {
        let b = ProductBase::flat_torus(2);
        let mut psi = TwoForm::zero(4);
        psi.insert(2, 3, crate::field::constant(0.7, 4));
        let p = [0.0; 4];
        let e = b.psi_endomorphism(&psi.matrix(&p), &p).unwrap();
        // ψ(∂x) = c ∂y, so h(ψ∂x, ∂y) = c.
        assert!((e.operator[(3, 2)] - 0.7).abs() < 1e-15);
        assert!((e.table[(2, 3)] - 0.7).abs() < 1e-15);
        assert!((e.table[(3, 2)] + 0.7).abs() < 1e-15);
    }

    #[test]
    fn recurrent_eta_nabla() {
        let vars = ["u", "v", "x"];
        let rho = expr_field(parse("2+cos(u)", &vars).unwrap(), 3, "rho");
        let b = ProductBase::new(
            vec![Factor::TorusCircle { name: "x".into() }],
            Eta {
                rho,
                antiderivative: None,
            },
        )
        .unwrap();
        let m = b.nabla_eta(&[0.0, 0.0, 0.0]).unwrap();
        assert!(m.amax() < 1e-15);
        let m = b.nabla_eta(&[1.0, 0.0, 0.0]).unwrap();
        assert!((m[(0, 0)] + 1f64.sin()).abs() < 1e-14);
        assert!(b.eta_is_recurrent_at(&[1.0, 0.0, 0.0]).unwrap());
    }
}
