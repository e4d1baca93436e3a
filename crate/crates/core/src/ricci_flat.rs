//! Spectral Poisson solver on flat tori and the Ricci-flat metric builder.
//!
//! On B × S¹ with η = du, Ψ = α∧η and f = f_B the metric is Ricci-flat iff
//! Δ f_B = −4 div α. The right-hand side always has zero mean on a closed
//! torus, so a zero-mean solution exists and is unique.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::base_geometry::{Factor, ProductBase, U, V};
use crate::bundle_chart::{BundleConfig, GaugeStrategy, RicciFlatShape, Shape};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{
    constant, expr_field, Field, Jet, OneForm, Order, ProductField, ScalarField, SumField,
    TwoForm, MAX_DIM,
};
use crate::par::Exec;
use crate::sampling;

/// Zero-mean tolerance for a solvable right-hand side.
pub const SOLVABILITY_TOL: f64 = 1e-10;
pub const DEFAULT_RESOLUTION: usize = 64;

/// Real samples of a function on the uniform periodic grid of T^k.
/// Row-major with the last axis fastest; axis a samples x_a = 2π j / N_a.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusGridField {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TorusGridField {
    pub fn zeros(shape: &[usize]) -> Result<TorusGridField> {
        if shape.is_empty() {
            return Err(Error::Config("grid needs at least one axis".into()));
        }
        for &n in shape {
            if n < 8 || n % 2 != 0 {
                return Err(Error::Config(format!(
                    "grid resolution must be even and >= 8 (got {})",
                    n
                )));
            }
        }
        Ok(TorusGridField {
            shape: shape.to_vec(),
            values: vec![0.0; shape.iter().product()],
        })
    }

    /// Samples `f` at the grid points.
    pub fn from_fn(shape: &[usize], f: impl Fn(&[f64]) -> f64 + Sync) -> Result<TorusGridField> {
        Self::from_fn_with(shape, Exec::Sequential, f)
    }

    pub fn from_fn_with(
        shape: &[usize],
        exec: Exec,
        f: impl Fn(&[f64]) -> f64 + Sync,
    ) -> Result<TorusGridField> {
        let mut g = Self::zeros(shape)?;
        let gref = &g;
        g.values = exec.map_range(g.len(), |i| f(&gref.point(i)));
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.shape.len()
    }

    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        for a in (0..self.dims()).rev() {
            idx[a] = i % self.shape[a];
            i /= self.shape[a];
        }
        idx
    }

    /// Torus coordinates of grid point `i`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.multi_index(i)
            .iter()
            .zip(&self.shape)
            .map(|(&j, &n)| 2.0 * PI * j as f64 / n as f64)
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn sup_diff(&self, other: &TorusGridField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Grid inner product normalized by the cell volume, Σ u v (2π)^k / N.
    pub fn inner(&self, other: &TorusGridField) -> f64 {
        let vol = (2.0 * PI).powi(self.dims() as i32) / self.len() as f64;
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * vol
    }

    /// Header and rows for CSV output: one column per axis, then the value.
    pub fn table(&self, axis_names: &[String]) -> (Vec<String>, Vec<Vec<f64>>) {
        let mut header: Vec<String> = axis_names
            .iter()
            .zip(&self.shape)
            .map(|(n, s)| format!("{}[{}]", n, s))
            .collect();
        header.push("value".into());
        let rows = (0..self.len())
            .map(|i| {
                let mut r = self.point(i);
                r.push(self.values[i]);
                r
            })
            .collect();
        (header, rows)
    }

    /// Discrete Fourier coefficients, normalized so that f = Σ c_k e^{ik·x}.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_nd(&mut data, &self.shape, false);
        let n = self.len() as f64;
        for c in &mut data {
            *c /= n;
        }
        data
    }

    pub fn from_spectrum(shape: &[usize], spec: &[Complex64]) -> Result<TorusGridField> {
        let mut g = Self::zeros(shape)?;
        let mut data = spec.to_vec();
        fft_nd(&mut data, shape, true);
        g.values = data.iter().map(|c| c.re).collect();
        Ok(g)
    }

    /// Signed wavenumbers of spectral index `i` (Nyquist reported as +N/2).
    pub fn wavenumbers(&self, i: usize) -> Vec<f64> {
        self.multi_index(i)
            .iter()
            .zip(&self.shape)
            .map(|(&j, &n)| if j <= n / 2 { j as f64 } else { j as f64 - n as f64 })
            .collect()
    }

    fn is_nyquist(&self, i: usize) -> bool {
        self.multi_index(i)
            .iter()
            .zip(&self.shape)
            .any(|(&j, &n)| j == n / 2)
    }

    /// Spectral Laplacian.
    pub fn laplacian(&self) -> TorusGridField {
        let mut spec = self.spectrum();
        for (i, c) in spec.iter_mut().enumerate() {
            let k2: f64 = self.wavenumbers(i).iter().map(|k| k * k).sum();
            *c *= -k2;
        }
        TorusGridField::from_spectrum(&self.shape, &spec).expect("same shape")
    }

    /// Spectral partial derivative along `axis` (Nyquist mode dropped).
    pub fn derivative(&self, axis: usize) -> TorusGridField {
        let mut spec = self.spectrum();
        for (i, c) in spec.iter_mut().enumerate() {
            if self.is_nyquist(i) {
                *c = Complex64::new(0.0, 0.0);
            } else {
                *c *= Complex64::new(0.0, self.wavenumbers(i)[axis]);
            }
        }
        TorusGridField::from_spectrum(&self.shape, &spec).expect("same shape")
    }
}

/// In-place multi-dimensional FFT. The inverse is unnormalized.
fn fft_nd(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let total: usize = shape.iter().product();
    let mut stride = 1;
    for a in (0..shape.len()).rev() {
        let n = shape[a];
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for start in 0..total {
            // visit each line once: its first element has axis index 0
            if (start / stride) % n != 0 {
                continue;
            }
            for j in 0..n {
                line[j] = data[start + j * stride];
            }
            fft.process(&mut line);
            for j in 0..n {
                data[start + j * stride] = line[j];
            }
        }
        stride *= n;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PoissonSolution {
    #[serde(skip)]
    pub field: TorusGridField,
    /// sup |Δ(solution) − rhs| at solver resolution.
    pub residual: f64,
    pub rhs_mean: f64,
}

/// Solves Δu = rhs on the flat torus, returning the zero-mean solution.
pub fn poisson_solve(rhs: &TorusGridField) -> Result<PoissonSolution> {
    let mean = rhs.mean();
    if !(mean.abs() <= SOLVABILITY_TOL) {
        return Err(Error::Solvability { mean });
    }
    let mut spec = rhs.spectrum();
    for (i, c) in spec.iter_mut().enumerate() {
        let k2: f64 = rhs.wavenumbers(i).iter().map(|k| k * k).sum();
        *c = if k2 == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            *c / -k2
        };
    }
    let field = TorusGridField::from_spectrum(&rhs.shape, &spec)?;
    let lap = field.laplacian();
    // The mean of rhs is not representable by Δ; compare against the zero-mean part.
    let residual = lap
        .values
        .iter()
        .zip(&rhs.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - (b - mean)).abs()));
    Ok(PoissonSolution {
        field,
        residual,
        rhs_mean: mean,
    })
}

/// Trigonometric interpolant of a grid field, as a chart scalar field with
/// exact derivatives of the interpolant.
#[derive(Clone, Debug)]
pub struct SpectralField {
    /// Chart index of each grid axis.
    coords: Vec<usize>,
    /// (wavenumbers, coefficient) for the retained modes.
    modes: Vec<(Vec<f64>, Complex64)>,
    label: String,
}

impl SpectralField {
    /// Keeps modes whose magnitude exceeds `1e-16 · max|c|`.
    pub fn new(grid: &TorusGridField, coords: Vec<usize>, label: impl Into<String>) -> SpectralField {
        assert_eq!(coords.len(), grid.dims());
        let spec = grid.spectrum();
        let cmax = spec.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        let modes = spec
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > 1e-16 * cmax && c.norm() > 0.0)
            .map(|(i, c)| (grid.wavenumbers(i), *c))
            .collect();
        SpectralField {
            coords,
            modes,
            label: label.into(),
        }
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }
}

impl ScalarField for SpectralField {
    fn value(&self, p: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|(k, c)| {
                let th: f64 = k.iter().zip(&self.coords).map(|(k, &a)| k * p[a]).sum();
                (c * Complex64::from_polar(1.0, th)).re
            })
            .sum()
    }

    fn jet(&self, p: &[f64], order: Order) -> Jet {
        let d = p.len();
        let mut jet = Jet::constant(d, 0.0, order);
        let mut hess = [[0.0; MAX_DIM]; MAX_DIM];
        for (k, c) in &self.modes {
            let th: f64 = k.iter().zip(&self.coords).map(|(k, &a)| k * p[a]).sum();
            let z = c * Complex64::from_polar(1.0, th);
            jet.value += z.re;
            if order == Order::Value {
                continue;
            }
            for (ka, &a) in k.iter().zip(&self.coords) {
                jet.grad[a] -= ka * z.im;
                if order == Order::Second {
                    for (kb, &b) in k.iter().zip(&self.coords) {
                        hess[a][b] -= ka * kb * z.re;
                    }
                }
            }
        }
        if order == Order::Second {
            jet.hess = Some(Box::new(hess));
        }
        jet
    }

    fn dependencies(&self) -> u64 {
        self.coords.iter().fold(0, |m, &a| m | (1u64 << a))
    }

    fn has_analytic_derivatives(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!("{} ({} modes)", self.label, self.modes.len())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RicciFlatBuild {
    #[serde(skip)]
    pub config: BundleConfig,
    #[serde(skip)]
    pub f_grid: TorusGridField,
    #[serde(skip)]
    pub rhs_grid: TorusGridField,
    pub resolution: usize,
    /// Periods ∮α along each torus axis (integers for an integral class).
    pub periods: Vec<f64>,
    pub solver_residual: f64,
    /// sup |Δ f_B + 4 div α| over the grid, with f_B's analytic derivatives.
    pub equation_residual: f64,
    /// div α ≡ 0 on the grid.
    pub harmonic: bool,
    /// Exact-form branch: sup |solver − (−4β)| when α = dβ and β is known.
    pub shortcut_discrepancy: Option<f64>,
    pub f_b_description: String,
}

fn check_flat_torus_base(base: &ProductBase) -> Result<Vec<usize>> {
    if base
        .factors
        .iter()
        .any(|f| !matches!(f, Factor::TorusCircle { .. }))
    {
        return Err(Error::Shape(
            "the Ricci-flat builder needs a flat torus base B = T^k".into(),
        ));
    }
    if base.eta.rho.as_constant() != Some(1.0) {
        return Err(Error::Shape("the Ricci-flat builder needs eta = du".into()));
    }
    Ok((2..base.chart_dim()).collect())
}

/// Solves for f_B and assembles the Ricci-flat configuration.
///
/// `alpha_potential` is a function Φ with dΦ = α on the universal cover; it
/// enables the u-wrap chart transition and, when α is exact, the f_B = −4Φ
/// shortcut.
pub fn build_ricci_flat_config(
    name: &str,
    base: &ProductBase,
    alpha: &OneForm,
    alpha_potential: Option<Field>,
    resolution: usize,
    exec: Exec,
) -> Result<RicciFlatBuild> {
    let torus = check_flat_torus_base(base)?;
    let d = base.chart_dim();
    for idx in [U, V] {
        if alpha.comps[idx].is_some() {
            return Err(Error::Shape("alpha must be a 1-form on B (no du, dv part)".into()));
        }
    }
    if alpha
        .comps
        .iter()
        .flatten()
        .any(|c| c.dependencies() & 0b11 != 0)
    {
        return Err(Error::Shape("alpha must not depend on u or v".into()));
    }
    let closed = sampling::sample_points(base, 32, 17)
        .iter()
        .map(|p| alpha.exterior_derivative(p).amax())
        .fold(0.0, f64::max);
    if closed > 1e-9 {
        return Err(Error::Config(format!("alpha is not closed: |d alpha| = {:.3e}", closed)));
    }
    let shape = vec![resolution; torus.len()];
    let chart_point = |x: &[f64]| {
        let mut p = vec![0.0; d];
        for (a, &c) in torus.iter().enumerate() {
            p[c] = x[a];
        }
        p
    };
    let div = TorusGridField::from_fn_with(&shape, exec, |x| {
        base.div_one_form(alpha, &chart_point(x)).unwrap_or(f64::NAN)
    })?;
    if div.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("div alpha is not finite on the grid".into()));
    }
    let rhs = TorusGridField {
        shape: shape.clone(),
        values: div.values.iter().map(|v| -4.0 * v).collect(),
    };
    let mut periods = Vec::new();
    for &c in &torus {
        let comp = TorusGridField::from_fn(&shape, |x| {
            alpha.comps[c]
                .as_ref()
                .map(|f| f.value(&chart_point(x)))
                .unwrap_or(0.0)
        })?;
        let period = 2.0 * PI * comp.mean();
        if (period - period.round()).abs() > 1e-8 {
            return Err(Error::Config(format!(
                "class of alpha is not integral: period along {} is {:.12}",
                base.coord_names()[c],
                period
            )));
        }
        periods.push(period);
    }
    let sol = poisson_solve(&rhs)?;
    let harmonic = div.sup_abs() <= 1e-14;
    let exact = periods.iter().all(|p| p.abs() <= 1e-8);
    let mut shortcut_discrepancy = None;
    let f_b: Field = if harmonic {
        constant(0.0, d)
    } else if let (true, Some(beta)) = (exact, alpha_potential.as_ref()) {
        // α = dβ ⇒ α = −¼ d f_B with f_B = −4(β − mean β).
        let bgrid = TorusGridField::from_fn(&shape, |x| beta.value(&chart_point(x)))?;
        let mean = bgrid.mean();
        let short = TorusGridField {
            shape: shape.clone(),
            values: bgrid.values.iter().map(|b| -4.0 * (b - mean)).collect(),
        };
        shortcut_discrepancy = Some(short.sup_diff(&sol.field));
        Arc::new(SumField(vec![(-4.0, beta.clone()), (4.0 * mean, constant(1.0, d))]))
    } else {
        Arc::new(SpectralField::new(&sol.field, torus.clone(), "f_B"))
    };
    let equation_residual = exec
        .map_range(rhs.len(), |i| {
            let p = chart_point(&rhs.point(i));
            let lap = base.calculus(&f_b, &p).map(|c| c.laplacian).unwrap_or(f64::NAN);
            (lap - rhs.values[i]).abs()
        })
        .into_iter()
        .fold(0.0, f64::max);
    let f_b_description = f_b.describe();
    let config = BundleConfig::new(
        name,
        base.clone(),
        None,
        GaugeStrategy::AlphaWedgeEta {
            alpha: alpha.clone(),
            alpha_potential,
        },
        f_b.clone(),
        Shape::RicciFlat(RicciFlatShape {
            alpha: alpha.clone(),
            f_b,
            torus_coords: torus,
        }),
    )?;
    Ok(RicciFlatBuild {
        config,
        f_grid: sol.field,
        rhs_grid: rhs,
        resolution,
        periods,
        solver_residual: sol.residual,
        equation_residual,
        harmonic,
        shortcut_discrepancy,
        f_b_description,
    })
}

/// Re-expresses a configuration in the shifted gauge  = A + 2πi φ η:
/// P̂ = P − 2πφρ du, f̂ = f + 4πφ, Ψ̂ = Ψ − π dφ∧η. The chart metric is unchanged.
///
/// φ must be an expression-backed function on the base.
pub fn gauge_shift(cfg: &BundleConfig, phi: &Field) -> Result<BundleConfig> {
    let d = cfg.dim();
    if phi.dependencies() & (1 << V) != 0 {
        return Err(Error::Config("gauge shift function must not depend on v".into()));
    }
    let phi_expr: Expr = phi
        .expression()
        .cloned()
        .ok_or_else(|| Error::Config("gauge shift function needs an expression".into()))?;
    let rho = cfg.base.eta.rho.clone();
    let phi_rho: Field = Arc::new(ProductField(phi.clone(), rho.clone()));
    let mut p = cfg.potential.clone();
    let pu: Field = match &cfg.potential.comps[U] {
        Some(old) => Arc::new(SumField(vec![(1.0, old.clone()), (-2.0 * PI, phi_rho)])),
        None => Arc::new(SumField(vec![(-2.0 * PI, phi_rho)])),
    };
    p.set(U, pu);
    let f: Field = Arc::new(SumField(vec![(1.0, cfg.f.clone()), (4.0 * PI, phi.clone())]));
    let mut psi = TwoForm {
        dim: d,
        comps: cfg.psi.comps.clone(),
    };
    for a in cfg.base.base_indices() {
        if a == U {
            continue;
        }
        let dphi = phi_expr.diff(a);
        if dphi.is_zero() {
            continue;
        }
        // (dφ∧η)_{a u} = ∂_a φ · ρ
        let comp: Field = Arc::new(ProductField(expr_field(dphi, d, format!("d{}phi", a)), rho.clone()));
        psi.insert(a, U, Arc::new(SumField(vec![(-PI, comp)])));
    }
    BundleConfig::new(
        format!("{}-shifted", cfg.name),
        cfg.base.clone(),
        Some(psi),
        GaugeStrategy::Explicit(p),
        f,
        Shape::General,
    )
}

/// sup over sampled points of |g − ĝ| between two configurations.
pub fn metric_discrepancy(a: &BundleConfig, b: &BundleConfig, points: usize, seed: u64) -> f64 {
    sampling::sample_points(&a.base, points, seed)
        .iter()
        .map(|p| (a.metric(p) - b.metric(p)).amax())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let g = TorusGridField::from_fn(&[16, 8], |x| (x[0].sin() + x[1].cos()).exp()).unwrap();
        let back = TorusGridField::from_spectrum(&g.shape, &g.spectrum()).unwrap();
        assert!(g.sup_diff(&back) <= 1e-12);
    }

    #[test]
    fn rejects_bad_resolution() {
        assert!(TorusGridField::zeros(&[7]).is_err());
        assert!(TorusGridField::zeros(&[6]).is_err());
    }

    #[test]
    fn spectral_field_interpolates() {
        let g = TorusGridField::from_fn(&[32], |x| (3.0 * x[0]).cos() + 0.5 * x[0].sin()).unwrap();
        let f = SpectralField::new(&g, vec![2], "t");
        let p = [0.0, 0.0, 0.7];
        let j = f.jet(&p, Order::Second);
        assert!((j.value - ((2.1f64).cos() + 0.5 * (0.7f64).sin())).abs() < 1e-13);
        assert!((j.grad[2] - (-3.0 * (2.1f64).sin() + 0.5 * (0.7f64).cos())).abs() < 1e-12);
        assert!((j.h(2, 2) - (-9.0 * (2.1f64).cos() - 0.5 * (0.7f64).sin())).abs() < 1e-11);
    }
}
