//! Named example configurations with their expected diagnostic outcomes.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::base_geometry::{Eta, Factor, ProductBase};
use crate::bundle_chart::{
    BundleConfig, GaugeStrategy, RicciFlatShape, Shape, TorusBlock, Type4Shape,
};
use crate::error::{Error, Result};
use crate::expr;
use crate::field::{constant, expr_field, Field, OneForm, TwoForm};

/// String-valued preset parameters with typed accessors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params(pub BTreeMap<String, String>);

impl Params {
    pub fn new() -> Params {
        Params::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Params {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    /// Parses `key=value`.
    pub fn insert_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::Parse {
            path: "param".into(),
            message: format!("expected key=value, got '{}'", pair),
        })?;
        self.0.insert(k.trim().to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| Error::Parse {
                path: format!("params.{}", key),
                message: format!("'{}' is not a number", s),
            }),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.0.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| Error::Parse {
                path: format!("params.{}", key),
                message: format!("'{}' is not a non-negative integer", s),
            }),
        }
    }

    pub fn str<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.0.get(key).map(String::as_str).unwrap_or(default)
    }

    fn check_known(&self, preset: &str, known: &[&str]) -> Result<()> {
        for k in self.0.keys() {
            if !known.contains(&k.as_str()) {
                return Err(Error::Parse {
                    path: format!("params.{}", k),
                    message: format!(
                        "unknown parameter for preset '{}' (known: {})",
                        preset,
                        known.join(", ")
                    ),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Expected {
    pub screen_integrable: bool,
    pub ricci_flat: bool,
    pub fiber_constant: bool,
    /// "trivial", "1", "2" or "4" when the classifier is expected to decide.
    pub holonomy: Option<&'static str>,
    /// Completeness probe expected to reach the horizon.
    pub complete: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PresetDescriptor {
    pub name: &'static str,
    pub summary: &'static str,
    /// (name, default, meaning)
    pub params: Vec<(&'static str, &'static str, &'static str)>,
    pub expected: Expected,
}

pub const PRESET_NAMES: &[&str] = &[
    "flat",
    "constant-psi-torus",
    "torus-non-integrable-screen",
    "ricci-flat-torus",
    "ricci-flat-torus2",
    "einstein-fiber",
    "recurrent-eta",
    "warped-mixed",
    "type4",
    "type4-complete",
    "noncommuting-torus3",
];

pub fn descriptors() -> Vec<PresetDescriptor> {
    PRESET_NAMES
        .iter()
        .map(|n| descriptor(n).expect("listed preset"))
        .collect()
}

pub fn descriptor(name: &str) -> Result<PresetDescriptor> {
    let exp = |screen_integrable, ricci_flat, fiber_constant, holonomy, complete| Expected {
        screen_integrable,
        ricci_flat,
        fiber_constant,
        holonomy,
        complete,
    };
    let d = match name {
        "flat" => PresetDescriptor {
            name: "flat",
            summary: "flat T^k base, Psi = 0, f = 0",
            params: vec![("k", "2", "number of torus circles")],
            expected: exp(true, true, true, Some("trivial"), Some(true)),
        },
        "constant-psi-torus" => PresetDescriptor {
            name: "constant-psi-torus",
            summary: "T^2 base, Psi = c dx1^dx2, f = 0",
            params: vec![("c", "1", "constant coefficient of Psi")],
            expected: exp(false, false, true, Some("2"), Some(true)),
        },
        "torus-non-integrable-screen" => PresetDescriptor {
            name: "torus-non-integrable-screen",
            summary: "T^2 base, eta = du, Psi = c dx1^dx2, f = a cos x1",
            params: vec![
                ("c", "1", "constant coefficient of Psi"),
                ("a", "0.3", "amplitude of f"),
            ],
            expected: exp(false, false, true, Some("2"), Some(true)),
        },
        "ricci-flat-torus" => PresetDescriptor {
            name: "ricci-flat-torus",
            summary: "T^1 x S^1 base, Psi = alpha^du, alpha = omega dx + beta d(cos x), f = -4 beta cos x",
            params: vec![
                ("omega", "1/(2 pi)", "harmonic coefficient of alpha"),
                ("beta", "1", "amplitude of the exact part of alpha"),
            ],
            expected: exp(true, true, true, Some("trivial"), Some(true)),
        },
        "ricci-flat-torus2" => PresetDescriptor {
            name: "ricci-flat-torus2",
            summary: "T^2 x S^1 base, alpha = omega dx1 + beta d(cos x1 cos x2), f = -4 beta cos x1 cos x2",
            params: vec![
                ("omega", "1/(2 pi)", "harmonic coefficient of alpha"),
                ("beta", "1", "amplitude of the exact part of alpha"),
            ],
            expected: exp(true, true, true, Some("trivial"), Some(true)),
        },
        "einstein-fiber" => PresetDescriptor {
            name: "einstein-fiber",
            summary: "flat T^k base, Psi = 0, fiber-dependent f = a cos v",
            params: vec![
                ("k", "2", "number of torus circles"),
                ("a", "1", "amplitude of f"),
            ],
            expected: exp(true, false, false, Some("1"), None),
        },
        "recurrent-eta" => PresetDescriptor {
            name: "recurrent-eta",
            summary: "T^2 x S^1 base, eta = (2 + cos u) du, Psi = alpha^eta, f = a cos x1",
            params: vec![("a", "0.3", "amplitude of f")],
            expected: exp(true, false, true, None, None),
        },
        "warped-mixed" => PresetDescriptor {
            name: "warped-mixed",
            summary: "R(phi = exp(0.3 y)) x T^1 x S^1 base, Psi = c dy^dx, mixed f",
            params: vec![("c", "0.5", "coefficient of Psi")],
            expected: exp(false, false, true, None, None),
        },
        "type4" => PresetDescriptor {
            name: "type4",
            summary: "R^m x T^k x S^1 base with l sin-sin blocks in Psi and the type-4 function f",
            params: vec![
                ("k", "4", "torus dimension"),
                ("m", "1", "number of lines, 0 < m <= k(k-1)/2"),
                ("l", "2", "number of 2x2 blocks, 2l <= k"),
                ("warp", "flat", "line warps: flat (phi = 1) or exp (phi = e^y)"),
                ("amplitude", "1", "a in chi = a sin sin + c"),
                ("offset", "1", "c in chi, the integer class of each block"),
                ("C", "0", "value of each antiderivative Phi_i at 0"),
            ],
            expected: exp(false, false, true, Some("4"), None),
        },
        "type4-complete" => PresetDescriptor {
            name: "type4-complete",
            summary: "type4 with k = 4, m = 1, l = 2 and flat warps",
            params: vec![
                ("amplitude", "1", "a in chi = a sin sin + c"),
                ("offset", "1", "c in chi, the integer class of each block"),
                ("C", "0", "value of the antiderivative Phi_1 at 0"),
            ],
            expected: exp(false, false, true, Some("4"), Some(true)),
        },
        "noncommuting-torus3" => PresetDescriptor {
            name: "noncommuting-torus3",
            summary: "T^3 base with overlapping blocks sin x1 sin x2 dx1^dx2 + sin x2 sin x3 dx2^dx3",
            params: vec![],
            expected: exp(false, false, true, None, None),
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{}' (known: {})",
                other,
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(d)
}

fn num(x: f64) -> String {
    format!("({:?})", x)
}

fn field(src: &str, base: &ProductBase) -> Result<Field> {
    let names = base.coord_names();
    let vars: Vec<&str> = names.iter().map(String::as_str).collect();
    let e = expr::parse(src, &vars)?;
    Ok(expr_field(e, base.chart_dim(), src))
}

fn torus_base(k: usize, eta: Option<Eta>) -> Result<ProductBase> {
    let factors = (1..=k)
        .map(|i| Factor::TorusCircle {
            name: format!("x{}", i),
        })
        .collect();
    ProductBase::new(factors, eta.unwrap_or_else(|| Eta::unit(k + 2)))
}

fn one_form(base: &ProductBase, comps: &[(&str, String)]) -> Result<OneForm> {
    let mut a = OneForm::zero(base.chart_dim());
    for (coord, src) in comps {
        let idx = base
            .coord_index(coord)
            .ok_or_else(|| Error::Config(format!("no coordinate '{}'", coord)))?;
        a.set(idx, field(src, base)?);
    }
    Ok(a)
}

/// Builds a named preset.
pub fn build_preset(name: &str, params: &Params) -> Result<BundleConfig> {
    let desc = descriptor(name)?;
    let known: Vec<&str> = desc.params.iter().map(|p| p.0).collect();
    params.check_known(name, &known)?;
    match name {
        "flat" => {
            let k = params.usize("k", 2)?;
            if k == 0 || k + 3 > crate::field::MAX_DIM {
                return Err(Error::Parameter(format!("flat: need 1 <= k <= {}", crate::field::MAX_DIM - 3)));
            }
            let base = torus_base(k, None)?;
            let d = base.chart_dim();
            BundleConfig::new(
                name,
                base,
                Some(TwoForm::zero(d)),
                GaugeStrategy::Explicit(OneForm::zero(d)),
                constant(0.0, d),
                Shape::General,
            )
        }
        "constant-psi-torus" | "torus-non-integrable-screen" => {
            let c = params.f64("c", 1.0)?;
            let a = if name == "constant-psi-torus" {
                0.0
            } else {
                params.f64("a", 0.3)?
            };
            let base = torus_base(2, None)?;
            let f = field(&format!("{}*cos(x1)", num(a)), &base)?;
            BundleConfig::new(
                name,
                base,
                None,
                GaugeStrategy::TorusBlocks(vec![TorusBlock {
                    first: 2,
                    second: 3,
                    amplitude: 0.0,
                    offset: c,
                }]),
                f,
                Shape::General,
            )
        }
        "ricci-flat-torus" | "ricci-flat-torus2" => {
            let omega = params.f64("omega", 1.0 / (2.0 * PI))?;
            let beta = params.f64("beta", 1.0)?;
            let two = name == "ricci-flat-torus2";
            let base = torus_base(if two { 2 } else { 1 }, None)?;
            let (alpha, potential, f_b) = if two {
                (
                    one_form(
                        &base,
                        &[
                            ("x1", format!("{} - {}*sin(x1)*cos(x2)", num(omega), num(beta))),
                            ("x2", format!("-{}*cos(x1)*sin(x2)", num(beta))),
                        ],
                    )?,
                    format!("{}*x1 + {}*cos(x1)*cos(x2)", num(omega), num(beta)),
                    format!("-4*{}*cos(x1)*cos(x2)", num(beta)),
                )
            } else {
                (
                    one_form(&base, &[("x1", format!("{} - {}*sin(x1)", num(omega), num(beta)))])?,
                    format!("{}*x1 + {}*cos(x1)", num(omega), num(beta)),
                    format!("-4*{}*cos(x1)", num(beta)),
                )
            };
            let f_b = field(&f_b, &base)?;
            let torus_coords = (2..base.chart_dim()).collect();
            BundleConfig::new(
                name,
                base.clone(),
                None,
                GaugeStrategy::AlphaWedgeEta {
                    alpha: alpha.clone(),
                    alpha_potential: Some(field(&potential, &base)?),
                },
                f_b.clone(),
                Shape::RicciFlat(RicciFlatShape {
                    alpha,
                    f_b,
                    torus_coords,
                }),
            )
        }
        "einstein-fiber" => {
            let k = params.usize("k", 2)?;
            if k == 0 || k + 3 > crate::field::MAX_DIM {
                return Err(Error::Parameter(format!(
                    "einstein-fiber: need 1 <= k <= {}",
                    crate::field::MAX_DIM - 3
                )));
            }
            let a = params.f64("a", 1.0)?;
            let base = torus_base(k, None)?;
            let d = base.chart_dim();
            let f = field(&format!("{}*cos(v)", num(a)), &base)?;
            BundleConfig::new(
                name,
                base,
                Some(TwoForm::zero(d)),
                GaugeStrategy::Explicit(OneForm::zero(d)),
                f,
                Shape::General,
            )
        }
        "recurrent-eta" => {
            let a = params.f64("a", 0.3)?;
            let probe = torus_base(2, None)?;
            let eta = Eta {
                rho: field("2 + cos(u)", &probe)?,
                antiderivative: Some(field("2*u + sin(u)", &probe)?),
            };
            let base = torus_base(2, Some(eta))?;
            let alpha = one_form(
                &base,
                &[("x1", "1/(2*pi)".to_string()), ("x2", "cos(x2)".to_string())],
            )?;
            let f = field(&format!("{}*cos(x1)", num(a)), &base)?;
            BundleConfig::new(
                name,
                base.clone(),
                None,
                GaugeStrategy::AlphaWedgeEta {
                    alpha,
                    alpha_potential: Some(field("x1/(2*pi) + sin(x2)", &base)?),
                },
                f,
                Shape::General,
            )
        }
        "warped-mixed" => {
            let c = params.f64("c", 0.5)?;
            let probe = ProductBase::new(
                vec![
                    Factor::TorusCircle { name: "y".into() },
                    Factor::TorusCircle { name: "x".into() },
                ],
                Eta::unit(4),
            )?;
            let warp = field("exp(0.3*y)", &probe)?;
            let base = ProductBase::new(
                vec![
                    Factor::WarpedLine {
                        name: "y".into(),
                        warp,
                    },
                    Factor::TorusCircle { name: "x".into() },
                ],
                Eta::unit(4),
            )?;
            let p = one_form(&base, &[("x", format!("2*{}*y", num(c)))])?;
            let f = field("0.3*cos(x) + 0.2*sin(u) + 0.1*y", &base)?;
            BundleConfig::new(name, base, None, GaugeStrategy::Explicit(p), f, Shape::General)
        }
        "type4" => {
            let k = params.usize("k", 4)?;
            let m = params.usize("m", 1)?;
            let l = params.usize("l", 2)?;
            let warp = params.str("warp", "flat").to_string();
            build_type4(
                name,
                k,
                m,
                l,
                &warp,
                params.f64("amplitude", 1.0)?,
                params.f64("offset", 1.0)?,
                params.f64("C", 0.0)?,
            )
        }
        "type4-complete" => build_type4(
            name,
            4,
            1,
            2,
            "flat",
            params.f64("amplitude", 1.0)?,
            params.f64("offset", 1.0)?,
            params.f64("C", 0.0)?,
        ),
        "noncommuting-torus3" => {
            let base = torus_base(3, None)?;
            BundleConfig::new(
                name,
                base,
                None,
                GaugeStrategy::TorusBlocks(vec![
                    TorusBlock {
                        first: 2,
                        second: 3,
                        amplitude: 1.0,
                        offset: 0.0,
                    },
                    TorusBlock {
                        first: 3,
                        second: 4,
                        amplitude: 1.0,
                        offset: 0.0,
                    },
                ]),
                constant(0.0, 5),
                Shape::General,
            )
        }
        _ => unreachable!("descriptor() rejects unknown names"),
    }
}

/// λ_i^j = (j−2)(j−1)/2 + i for 1-based i < j.
pub fn lambda_index(i: usize, j: usize) -> usize {
    (j - 2) * (j - 1) / 2 + i
}

/// Λ = {(i, j, λ_i^j) : i < j ≤ k, λ_i^j ≤ m}.
pub fn lambda_set(k: usize, m: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for j in 2..=k {
        for i in 1..j {
            let lam = lambda_index(i, j);
            if lam <= m {
                out.push((i, j, lam));
            }
        }
    }
    out.sort_by_key(|t| t.2);
    out
}

/// The type-4 construction on R^m × T^k × S¹ with l diagonal sin-sin blocks.
#[allow(clippy::too_many_arguments)]
pub fn build_type4(
    name: &str,
    k: usize,
    m: usize,
    l: usize,
    warp: &str,
    amplitude: f64,
    offset: f64,
    c0: f64,
) -> Result<BundleConfig> {
    if k < 2 {
        return Err(Error::Parameter(format!("type4 requires k >= 2 (got k = {})", k)));
    }
    if m == 0 || m > k * (k - 1) / 2 {
        return Err(Error::Parameter(format!(
            "type4 requires k(k-1)/2 >= m > 0 (got k = {}, m = {})",
            k, m
        )));
    }
    if l == 0 || 2 * l > k {
        return Err(Error::Parameter(format!(
            "type4 requires 1 <= l and 2l <= k (got k = {}, l = {})",
            k, l
        )));
    }
    if m + k + 2 > crate::field::MAX_DIM {
        return Err(Error::Parameter(format!(
            "type4 requires m + k + 2 <= {} (got {})",
            crate::field::MAX_DIM,
            m + k + 2
        )));
    }
    if offset == 0.0 || offset.fract() != 0.0 {
        return Err(Error::Parameter(format!(
            "type4 requires a nonzero integer class per block, offset != 0 integer (got {})",
            offset
        )));
    }
    if amplitude == 0.0 {
        return Err(Error::Parameter(
            "type4 requires a non-harmonic Psi, amplitude != 0".into(),
        ));
    }
    let (warp_src, phi_src): (fn(&str) -> String, fn(&str, f64) -> String) = match warp {
        "flat" => (|_| "1".to_string(), |y, c| format!("{} + {}", y, num(c))),
        "exp" => (
            |y| format!("exp({})", y),
            |y, c| format!("exp({}) + {} - 1", y, num(c)),
        ),
        other => {
            return Err(Error::Parameter(format!(
                "type4 warp must be 'flat' or 'exp' (got '{}')",
                other
            )))
        }
    };
    let mut names: Vec<String> = (1..=m).map(|i| format!("y{}", i)).collect();
    names.extend((1..=k).map(|j| format!("x{}", j)));
    // Probe base with every coordinate periodic, only used to parse warps.
    let probe = ProductBase::new(
        names
            .iter()
            .map(|n| Factor::TorusCircle { name: n.clone() })
            .collect(),
        Eta::unit(m + k + 2),
    )?;
    let mut factors = Vec::new();
    for i in 1..=m {
        let y = format!("y{}", i);
        factors.push(Factor::WarpedLine {
            name: y.clone(),
            warp: field(&warp_src(&y), &probe)?,
        });
    }
    for j in 1..=k {
        factors.push(Factor::TorusCircle {
            name: format!("x{}", j),
        });
    }
    let base = ProductBase::new(factors, Eta::unit(m + k + 2))?;
    let line_coords: Vec<usize> = (0..m).map(|i| 2 + i).collect();
    let torus_coords: Vec<usize> = (0..k).map(|j| 2 + m + j).collect();
    let blocks: Vec<TorusBlock> = (0..l)
        .map(|b| TorusBlock {
            first: torus_coords[2 * b],
            second: torus_coords[2 * b + 1],
            amplitude,
            offset,
        })
        .collect();
    let lam = lambda_set(k, m);
    // f̂ = −2 Σ_Λ Ψ_ij(x) Φ_λ(y_λ); Ψ_ij is nonzero only on the diagonal blocks.
    let mut terms = Vec::new();
    for &(i, j, lambda) in &lam {
        if j == i + 1 && i % 2 == 1 && (i + 1) / 2 <= l {
            let chi = format!(
                "({}*sin(x{})*sin(x{}) + {})",
                num(amplitude),
                i,
                j,
                num(offset)
            );
            let phi = phi_src(&format!("y{}", lambda), c0);
            terms.push(format!("{}*({})", chi, phi));
        }
    }
    let f = if terms.is_empty() {
        constant(0.0, base.chart_dim())
    } else {
        field(&format!("-2*({})", terms.join(" + ")), &base)?
    };
    BundleConfig::new(
        name,
        base,
        None,
        GaugeStrategy::TorusBlocks(blocks),
        f,
        Shape::Type4(Type4Shape {
            k,
            m,
            l,
            line_coords,
            torus_coords,
            lambda_set: lam,
            offsets: vec![c0; m],
            warp: warp.to_string(),
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_set(4, 1), vec![(1, 2, 1)]);
        assert_eq!(lambda_set(3, 3), vec![(1, 2, 1), (1, 3, 2), (2, 3, 3)]);
        assert_eq!(lambda_index(1, 2), 1);
    }

    #[test]
    fn every_preset_builds() {
        for name in PRESET_NAMES {
            let cfg = build_preset(name, &Params::new()).unwrap_or_else(|e| panic!("{}: {}", name, e));
            assert_eq!(cfg.name, *name);
            let exp = descriptor(name).unwrap().expected;
            assert_eq!(cfg.fiber_constant, exp.fiber_constant, "{}", name);
        }
    }

    #[test]
    fn type4_range_errors_name_the_inequality() {
        let e = build_type4("t", 4, 7, 2, "flat", 1.0, 1.0, 0.0).unwrap_err();
        assert!(e.to_string().contains("k(k-1)/2 >= m > 0"));
        let e = build_type4("t", 1, 1, 1, "flat", 1.0, 1.0, 0.0).unwrap_err();
        assert!(e.to_string().contains("k >= 2"));
    }

    #[test]
    fn unknown_param_is_reported_with_path() {
        let e = build_preset("flat", &Params::new().with("q", 1)).unwrap_err();
        assert!(e.to_string().contains("params.q"));
    }
}
