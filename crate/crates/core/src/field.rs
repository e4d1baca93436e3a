//! Scalar fields on the chart with value, gradient and Hessian access.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::expr::Expr;

/// Largest chart dimension the fixed-size jet buffers support.
pub const MAX_DIM: usize = 12;

/// Finite-difference step used when a field has no analytic partials.
pub const FD_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    First,
    Second,
}

/// Value of a field together with its first and (optionally) second partials.
#[derive(Clone, Debug)]
pub struct Jet {
    pub dim: usize,
    pub value: f64,
    pub grad: [f64; MAX_DIM],
    pub hess: Option<Box<[[f64; MAX_DIM]; MAX_DIM]>>,
}

impl Jet {
    pub fn constant(dim: usize, value: f64, order: Order) -> Jet {
        Jet {
            dim,
            value,
            grad: [0.0; MAX_DIM],
            hess: (order == Order::Second).then(|| Box::new([[0.0; MAX_DIM]; MAX_DIM])),
        }
    }

    pub fn order(&self) -> Order {
        if self.hess.is_some() {
            Order::Second
        } else {
            Order::First
        }
    }

    pub fn h(&self, i: usize, j: usize) -> f64 {
        self.hess.as_ref().map(|h| h[i][j]).unwrap_or(0.0)
    }

    pub fn add(&self, o: &Jet) -> Jet {
        let mut r = self.clone();
        r.value += o.value;
        for i in 0..self.dim {
            r.grad[i] += o.grad[i];
        }
        if let (Some(h), Some(oh)) = (r.hess.as_mut(), o.hess.as_ref()) {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    h[i][j] += oh[i][j];
                }
            }
        }
        r
    }

    pub fn scale(&self, s: f64) -> Jet {
        let mut r = self.clone();
        r.value *= s;
        for i in 0..self.dim {
            r.grad[i] *= s;
        }
        if let Some(h) = r.hess.as_mut() {
            for row in h.iter_mut().take(self.dim) {
                for x in row.iter_mut().take(self.dim) {
                    *x *= s;
                }
            }
        }
        r
    }

    pub fn add_const(&self, c: f64) -> Jet {
        let mut r = self.clone();
        r.value += c;
        r
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let d = self.dim;
        let mut r = Jet::constant(d, self.value * o.value, Order::First);
        for i in 0..d {
            r.grad[i] = self.grad[i] * o.value + self.value * o.grad[i];
        }
        if self.hess.is_some() && o.hess.is_some() {
            let mut h = Box::new([[0.0; MAX_DIM]; MAX_DIM]);
            for i in 0..d {
                for j in 0..d {
                    h[i][j] = self.h(i, j) * o.value
                        + self.grad[i] * o.grad[j]
                        + self.grad[j] * o.grad[i]
                        + self.value * o.h(i, j);
                }
            }
            r.hess = Some(h);
        }
        r
    }

    /// Compose with a scalar function given its value and first two derivatives.
    pub fn compose(&self, g: f64, dg: f64, ddg: f64) -> Jet {
        let d = self.dim;
        let mut r = Jet::constant(d, g, Order::First);
        for i in 0..d {
            r.grad[i] = dg * self.grad[i];
        }
        if self.hess.is_some() {
            let mut h = Box::new([[0.0; MAX_DIM]; MAX_DIM]);
            for i in 0..d {
                for j in 0..d {
                    h[i][j] = ddg * self.grad[i] * self.grad[j] + dg * self.h(i, j);
                }
            }
            r.hess = Some(h);
        }
        r
    }

    pub fn recip(&self) -> Jet {
        let x = self.value;
        self.compose(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x))
    }

    pub fn square(&self) -> Jet {
        self.mul(self)
    }
}

pub trait ScalarField: Send + Sync + fmt::Debug {
    fn value(&self, p: &[f64]) -> f64;

    /// Value and partials. The default differentiates numerically.
    fn jet(&self, p: &[f64], order: Order) -> Jet {
        numeric_jet(self, p, order)
    }

    /// Bitmask of chart coordinates the field can depend on.
    fn dependencies(&self) -> u64 {
        u64::MAX
    }

    fn has_analytic_derivatives(&self) -> bool {
        false
    }

    fn as_constant(&self) -> Option<f64> {
        None
    }

    /// The defining expression, for fields that have one.
    fn expression(&self) -> Option<&Expr> {
        None
    }

    fn describe(&self) -> String {
        format!("{:?}", self)
    }
}

pub type Field = Arc<dyn ScalarField>;

/// Fourth-order central differences with step [`FD_STEP`].
pub fn numeric_jet<F: ScalarField + ?Sized>(f: &F, p: &[f64], order: Order) -> Jet {
    let d = p.len();
    let deps = f.dependencies();
    let h = FD_STEP;
    let mut q = p.to_vec();
    let f0 = f.value(p);
    let mut jet = Jet::constant(d, f0, order);
    if order == Order::Value {
        return jet;
    }
    let active: Vec<usize> = (0..d).filter(|i| deps & (1u64 << i) != 0).collect();
    let at = |q: &mut Vec<f64>, shifts: &[(usize, f64)]| {
        for &(i, s) in shifts {
            q[i] += s;
        }
        let val = f.value(q);
        for &(i, s) in shifts {
            q[i] -= s;
        }
        val
    };
    let mut second_diag = [0.0; MAX_DIM];
    for &i in &active {
        let fp1 = at(&mut q, &[(i, h)]);
        let fm1 = at(&mut q, &[(i, -h)]);
        let fp2 = at(&mut q, &[(i, 2.0 * h)]);
        let fm2 = at(&mut q, &[(i, -2.0 * h)]);
        jet.grad[i] = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h);
        second_diag[i] = (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * h * h);
    }
    if order == Order::Second {
        let w = [1.0, -8.0, 8.0, -1.0];
        let s = [2.0 * h, h, -h, -2.0 * h];
        let mut hess = Box::new([[0.0; MAX_DIM]; MAX_DIM]);
        for (ai, &i) in active.iter().enumerate() {
            hess[i][i] = second_diag[i];
            for &j in &active[ai + 1..] {
                let mut acc = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        acc += w[a] * w[b] * at(&mut q, &[(i, s[a]), (j, s[b])]);
                    }
                }
                let v = acc / (144.0 * h * h);
                hess[i][j] = v;
                hess[j][i] = v;
            }
        }
        jet.hess = Some(hess);
    }
    jet
}

/// Field given by an expression, with symbolic first and second partials.
#[derive(Clone)]
pub struct ExprField {
    expr: Expr,
    deps: u64,
    grad: Vec<Expr>,
    hess: Vec<(usize, usize, Expr)>,
    label: String,
}

impl fmt::Debug for ExprField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExprField({})", self.label)
    }
}

impl ExprField {
    pub fn new(expr: Expr, dim: usize, label: impl Into<String>) -> ExprField {
        let deps = expr.dependencies();
        let grad: Vec<Expr> = (0..dim).map(|i| expr.diff(i)).collect();
        let mut hess = Vec::new();
        for i in 0..dim {
            for j in i..dim {
                let e = grad[i].diff(j);
                if !e.is_zero() {
                    hess.push((i, j, e));
                }
            }
        }
        ExprField {
            expr,
            deps,
            grad,
            hess,
            label: label.into(),
        }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }
}

impl ScalarField for ExprField {
    fn value(&self, p: &[f64]) -> f64 {
        self.expr.eval(p)
    }

    fn jet(&self, p: &[f64], order: Order) -> Jet {
        let d = p.len();
        let mut jet = Jet::constant(d, self.expr.eval(p), order);
        if order == Order::Value {
            return jet;
        }
        for (i, g) in self.grad.iter().enumerate().take(d) {
            if !g.is_zero() {
                jet.grad[i] = g.eval(p);
            }
        }
        if let Some(h) = jet.hess.as_mut() {
            for (i, j, e) in &self.hess {
                let v = e.eval(p);
                h[*i][*j] = v;
                h[*j][*i] = v;
            }
        }
        jet
    }

    fn dependencies(&self) -> u64 {
        self.deps
    }

    fn has_analytic_derivatives(&self) -> bool {
        true
    }

    fn as_constant(&self) -> Option<f64> {
        self.expr.as_const()
    }

    fn expression(&self) -> Option<&Expr> {
        Some(&self.expr)
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Closure-backed field; partials come from finite differences.
pub struct FnField {
    f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    deps: u64,
    label: String,
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnField({})", self.label)
    }
}

impl FnField {
    pub fn new(
        label: impl Into<String>,
        deps: u64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> FnField {
        FnField {
            f: Box::new(f),
            deps,
            label: label.into(),
        }
    }
}

impl ScalarField for FnField {
    fn value(&self, p: &[f64]) -> f64 {
        (self.f)(p)
    }

    fn dependencies(&self) -> u64 {
        self.deps
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

pub fn expr_field(expr: Expr, dim: usize, label: impl Into<String>) -> Field {
    Arc::new(ExprField::new(expr, dim, label))
}

pub fn constant(c: f64, dim: usize) -> Field {
    Arc::new(ExprField::new(Expr::Num(c), dim, format!("{}", c)))
}

pub fn is_zero_field(f: &Field) -> bool {
    f.as_constant() == Some(0.0)
}

/// A 1-form on the chart. `None` components are identically zero.
#[derive(Clone, Debug)]
pub struct OneForm {
    pub comps: Vec<Option<Field>>,
}

impl OneForm {
    pub fn zero(dim: usize) -> OneForm {
        OneForm {
            comps: vec![None; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn set(&mut self, i: usize, f: Field) {
        self.comps[i] = if is_zero_field(&f) { None } else { Some(f) };
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|c| c.is_none())
    }

    pub fn values(&self, p: &[f64]) -> Vec<f64> {
        self.comps
            .iter()
            .map(|c| c.as_ref().map(|f| f.value(p)).unwrap_or(0.0))
            .collect()
    }

    pub fn jets(&self, p: &[f64], order: Order) -> Vec<Jet> {
        let d = p.len();
        self.comps
            .iter()
            .map(|c| match c {
                Some(f) => f.jet(p, order),
                None => Jet::constant(d, 0.0, order),
            })
            .collect()
    }

    /// Exterior derivative as an antisymmetric matrix, (dP)_ab = ∂_a P_b - ∂_b P_a.
    pub fn exterior_derivative(&self, p: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let jets = self.jets(p, Order::First);
        DMatrix::from_fn(d, d, |a, b| jets[b].grad[a] - jets[a].grad[b])
    }
}

/// A 2-form stored through its strictly upper components.
#[derive(Clone, Debug)]
pub struct TwoForm {
    pub dim: usize,
    pub comps: Vec<(usize, usize, Field)>,
}

impl TwoForm {
    pub fn zero(dim: usize) -> TwoForm {
        TwoForm {
            dim,
            comps: Vec::new(),
        }
    }

    /// Add `f` to the (a,b) component; (b,a) gets the opposite sign.
    pub fn insert(&mut self, a: usize, b: usize, f: Field) {
        assert!(a != b, "2-form component on the diagonal");
        if is_zero_field(&f) {
            return;
        }
        if a < b {
            self.comps.push((a, b, f));
        } else {
            let neg = Arc::new(NegField(f));
            self.comps.push((b, a, neg));
        }
    }

    pub fn is_zero(&self) -> bool {
        self.comps.is_empty()
    }

    pub fn matrix(&self, p: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (a, b, f) in &self.comps {
            let v = f.value(p);
            m[(*a, *b)] += v;
            m[(*b, *a)] -= v;
        }
        m
    }

    /// Component matrix and its partial derivatives: `out[c][(a,b)] = ∂_c Ψ_ab`.
    pub fn matrix_with_derivatives(&self, p: &[f64]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let d = self.dim;
        let mut m = DMatrix::zeros(d, d);
        let mut dm = vec![DMatrix::zeros(d, d); d];
        for (a, b, f) in &self.comps {
            let j = f.jet(p, Order::First);
            m[(*a, *b)] += j.value;
            m[(*b, *a)] -= j.value;
            for (c, dmc) in dm.iter_mut().enumerate() {
                dmc[(*a, *b)] += j.grad[c];
                dmc[(*b, *a)] -= j.grad[c];
            }
        }
        (m, dm)
    }

    /// Sup over components of the exterior derivative dΨ at `p`.
    pub fn closedness_residual(&self, p: &[f64]) -> f64 {
        let (_, dm) = self.matrix_with_derivatives(p);
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for a in 0..d {
            for b in a + 1..d {
                for c in b + 1..d {
                    let r = dm[a][(b, c)] + dm[b][(c, a)] + dm[c][(a, b)];
                    worst = worst.max(r.abs());
                }
            }
        }
        worst
    }
}

#[derive(Debug)]
struct NegField(Field);

impl ScalarField for NegField {
    fn value(&self, p: &[f64]) -> f64 {
        -self.0.value(p)
    }
    fn jet(&self, p: &[f64], order: Order) -> Jet {
        self.0.jet(p, order).scale(-1.0)
    }
    fn dependencies(&self) -> u64 {
        self.0.dependencies()
    }
    fn has_analytic_derivatives(&self) -> bool {
        self.0.has_analytic_derivatives()
    }
    fn as_constant(&self) -> Option<f64> {
        self.0.as_constant().map(|c| -c)
    }
    fn describe(&self) -> String {
        format!("-({})", self.0.describe())
    }
}

/// Sum of fields (used for gauge shifts and composite potentials).
#[derive(Debug)]
pub struct SumField(pub Vec<(f64, Field)>);

impl ScalarField for SumField {
    fn value(&self, p: &[f64]) -> f64 {
        self.0.iter().map(|(c, f)| c * f.value(p)).sum()
    }
    fn jet(&self, p: &[f64], order: Order) -> Jet {
        let mut acc = Jet::constant(p.len(), 0.0, order);
        for (c, f) in &self.0 {
            acc = acc.add(&f.jet(p, order).scale(*c));
        }
        acc
    }
    fn dependencies(&self) -> u64 {
        self.0.iter().fold(0, |m, (_, f)| m | f.dependencies())
    }
    fn has_analytic_derivatives(&self) -> bool {
        self.0.iter().all(|(_, f)| f.has_analytic_derivatives())
    }
    fn describe(&self) -> String {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(c, f)| format!("{}*({})", c, f.describe()))
            .collect();
        parts.join(" + ")
    }
}

/// Pointwise product of two fields.
#[derive(Debug)]
pub struct ProductField(pub Field, pub Field);

impl ScalarField for ProductField {
    fn value(&self, p: &[f64]) -> f64 {
        self.0.value(p) * self.1.value(p)
    }
    fn jet(&self, p: &[f64], order: Order) -> Jet {
        if order == Order::Value {
            return Jet::constant(p.len(), self.value(p), order);
        }
        self.0.jet(p, order).mul(&self.1.jet(p, order))
    }
    fn dependencies(&self) -> u64 {
        self.0.dependencies() | self.1.dependencies()
    }
    fn has_analytic_derivatives(&self) -> bool {
        self.0.has_analytic_derivatives() && self.1.has_analytic_derivatives()
    }
    fn describe(&self) -> String {
        format!("({})*({})", self.0.describe(), self.1.describe())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn numeric_matches_symbolic_jet() {
        let e = parse("exp(0.3*x)*sin(y) + x^3*cos(y)", &["x", "y"]).unwrap();
        let sym = ExprField::new(e.clone(), 2, "test");
        let num = FnField::new("test", 0b11, move |p| e.eval(p));
        let p = [0.4, -1.3];
        let a = sym.jet(&p, Order::Second);
        let b = num.jet(&p, Order::Second);
        assert!((a.value - b.value).abs() < 1e-15);
        for i in 0..2 {
            assert!((a.grad[i] - b.grad[i]).abs() < 1e-9, "grad {}", i);
            for j in 0..2 {
                assert!((a.h(i, j) - b.h(i, j)).abs() < 1e-6, "hess {} {}", i, j);
            }
        }
    }

    #[test]
    fn jet_product_rule() {
        let f = ExprField::new(parse("sin(x)*y", &["x", "y"]).unwrap(), 2, "f");
        let g = ExprField::new(parse("exp(x)+y^2", &["x", "y"]).unwrap(), 2, "g");
        let fg = ExprField::new(parse("(sin(x)*y)*(exp(x)+y^2)", &["x", "y"]).unwrap(), 2, "fg");
        let p = [0.2, 0.9];
        let prod = f.jet(&p, Order::Second).mul(&g.jet(&p, Order::Second));
        let direct = fg.jet(&p, Order::Second);
        for i in 0..2 {
            assert!((prod.grad[i] - direct.grad[i]).abs() < 1e-13);
            for j in 0..2 {
                assert!((prod.h(i, j) - direct.h(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_form_antisymmetric() {
        let mut psi = TwoForm::zero(3);
        psi.insert(2, 0, constant(1.5, 3));
        let m = psi.matrix(&[0.0; 3]);
        assert_eq!(m[(0, 2)], -1.5);
        assert_eq!(m[(2, 0)], 1.5);
        assert_eq!(m, -m.transpose());
    }
}
