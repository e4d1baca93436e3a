//! JSON configuration files: either a named preset with parameters or a raw
//! bundle description. Every error names the offending key path.
//!
//! Raw schema (all expressions use the tiny grammar of [`crate::expr`] over the
//! coordinate names `u`, `v` and the factor names):
//!
//! ```json
//! {
//!   "name": "my-bundle",
//!   "base": {
//!     "factors": [{"line": "y1", "warp": "exp(0.3*y1)"}, {"circle": "x1"}],
//!     "rho": "1", "rho_antiderivative": "u"
//!   },
//!   "psi": [{"pair": ["y1", "x1"], "value": "cos(y1)"}],
//!   "gauge": {"strategy": "explicit", "potential": {"x1": "2*sin(y1)"}},
//!   "f": "cos(x1)"
//! }
//! ```
//!
//! Other gauge strategies: `{"strategy": "alpha_wedge_eta", "alpha": {..},
//! "alpha_potential": ".."}` (Ψ = α∧η, `psi` must be absent) and
//! `{"strategy": "torus_blocks", "blocks": [{"first": "x1", "second": "x2",
//! "amplitude": 1, "offset": 0}]}`. For the explicit strategy `psi` may be
//! omitted, in which case Ψ = ½dP.

use serde_json::{Map, Value};

use crate::base_geometry::{Eta, Factor, ProductBase, V};
use crate::bundle_chart::{BundleConfig, GaugeStrategy, Shape, TorusBlock};
use crate::error::{Error, Result};
use crate::expr;
use crate::field::{constant, expr_field, Field, OneForm, TwoForm};
use crate::presets::{build_preset, Params};

/// Where a configuration came from, kept for the run summary.
#[derive(Clone, Debug, PartialEq)]
pub enum ConfigSource {
    Preset { name: String, params: Params },
    Raw(Value),
}

impl ConfigSource {
    pub fn preset(name: &str, params: Params) -> ConfigSource {
        ConfigSource::Preset {
            name: name.to_string(),
            params,
        }
    }

    pub fn preset_name(&self) -> Option<&str> {
        match self {
            ConfigSource::Preset { name, .. } => Some(name),
            ConfigSource::Raw(_) => None,
        }
    }

    /// Canonical JSON form (parameters sorted by key).
    pub fn to_json(&self) -> Value {
        match self {
            ConfigSource::Preset { name, params } => {
                let p: Map<String, Value> = params
                    .0
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                    .collect();
                serde_json::json!({ "preset": name, "params": p })
            }
            ConfigSource::Raw(v) => v.clone(),
        }
    }

    /// Applies `key=value` overrides; only presets take parameters.
    pub fn with_overrides(mut self, overrides: &Params) -> Result<ConfigSource> {
        if overrides.0.is_empty() {
            return Ok(self);
        }
        match &mut self {
            ConfigSource::Preset { params, .. } => {
                for (k, v) in &overrides.0 {
                    params.0.insert(k.clone(), v.clone());
                }
                Ok(self)
            }
            ConfigSource::Raw(_) => Err(Error::Parse {
                path: "param".into(),
                message: "parameters only apply to preset configurations".into(),
            }),
        }
    }

    pub fn build(&self) -> Result<BundleConfig> {
        match self {
            ConfigSource::Preset { name, params } => build_preset(name, params),
            ConfigSource::Raw(v) => build_raw(v),
        }
    }
}

/// Parses a configuration file's text. Raw descriptions are fully validated
/// here so that key-path errors surface before any work starts.
pub fn parse_config(src: &str) -> Result<ConfigSource> {
    let v: Value = serde_json::from_str(src).map_err(|e| Error::Parse {
        path: "$".into(),
        message: format!("invalid JSON: {}", e),
    })?;
    let obj = as_object(&v, "$")?;
    if let Some(name) = obj.get("preset") {
        check_keys(obj, "$", &["preset", "params"])?;
        let name = as_str(name, "preset")?;
        let mut params = Params::new();
        if let Some(p) = obj.get("params") {
            for (k, val) in as_object(p, "params")? {
                let path = format!("params.{}", k);
                let s = match val {
                    Value::String(s) => s.clone(),
                    Value::Number(n) => n.to_string(),
                    Value::Bool(b) => b.to_string(),
                    _ => return Err(parse_err(&path, "expected a number or string")),
                };
                params.0.insert(k.clone(), s);
            }
        }
        crate::presets::descriptor(name).map_err(|_| parse_err("preset", &format!("unknown preset '{}'", name)))?;
        return Ok(ConfigSource::preset(name, params));
    }
    build_raw(&v)?;
    Ok(ConfigSource::Raw(v))
}

pub fn load_config_file(path: &std::path::Path) -> Result<ConfigSource> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: "$".into(),
        message: format!("cannot read {}: {}", path.display(), e),
    })?;
    parse_config(&text)
}

fn parse_err(path: &str, message: &str) -> Error {
    Error::Parse {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| parse_err(path, "expected an object"))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| parse_err(path, "expected a string"))
}

fn as_f64(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| parse_err(path, "expected a number"))
}

fn check_keys(obj: &Map<String, Value>, path: &str, known: &[&str]) -> Result<()> {
    for k in obj.keys() {
        if !known.contains(&k.as_str()) {
            let at = if path == "$" { k.clone() } else { format!("{}.{}", path, k) };
            return Err(parse_err(&at, &format!("unknown key (expected one of: {})", known.join(", "))));
        }
    }
    Ok(())
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    let at = if path == "$" { key.to_string() } else { format!("{}.{}", path, key) };
    obj.get(key).ok_or_else(|| parse_err(&at, "missing required key"))
}

struct Names {
    names: Vec<String>,
}

impl Names {
    fn vars(&self) -> Vec<&str> {
        self.names.iter().map(String::as_str).collect()
    }

    fn index(&self, name: &str, path: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| parse_err(path, &format!("unknown coordinate '{}' (have: {})", name, self.names.join(", "))))
    }

    fn field(&self, v: &Value, path: &str) -> Result<Field> {
        let src = match v {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            _ => return Err(parse_err(path, "expected an expression string")),
        };
        let e = expr::parse_at(&src, &self.vars(), path)?;
        Ok(expr_field(e, self.names.len(), src))
    }

    fn one_form(&self, v: &Value, path: &str) -> Result<OneForm> {
        let mut form = OneForm::zero(self.names.len());
        for (k, comp) in as_object(v, path)? {
            let at = format!("{}.{}", path, k);
            let idx = self.index(k, &at)?;
            form.set(idx, self.field(comp, &at)?);
        }
        Ok(form)
    }
}

fn build_raw(v: &Value) -> Result<BundleConfig> {
    let obj = as_object(v, "$")?;
    check_keys(obj, "$", &["name", "base", "psi", "gauge", "f"])?;
    let name = match obj.get("name") {
        Some(n) => as_str(n, "name")?.to_string(),
        None => "custom".to_string(),
    };

    let base_v = as_object(required(obj, "base", "$")?, "base")?;
    check_keys(base_v, "base", &["factors", "rho", "rho_antiderivative"])?;
    let factors_v = required(base_v, "factors", "base")?
        .as_array()
        .ok_or_else(|| parse_err("base.factors", "expected an array"))?;
    let mut names = Names {
        names: vec!["u".into(), "v".into()],
    };
    let mut pending = Vec::new();
    for (i, f) in factors_v.iter().enumerate() {
        let path = format!("base.factors[{}]", i);
        let fo = as_object(f, &path)?;
        let (kind, fname) = match (fo.get("line"), fo.get("circle")) {
            (Some(n), None) => ("line", as_str(n, &format!("{}.line", path))?),
            (None, Some(n)) => ("circle", as_str(n, &format!("{}.circle", path))?),
            _ => return Err(parse_err(&path, "expected exactly one of 'line' or 'circle'")),
        };
        if kind == "line" {
            check_keys(fo, &path, &["line", "warp"])?;
        } else {
            check_keys(fo, &path, &["circle"])?;
        }
        let ok = fname.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
            && fname.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !ok || names.names.iter().any(|n| n == fname) || expr::parse(fname, &[]).is_ok() {
            return Err(parse_err(&path, &format!("bad or duplicate coordinate name '{}'", fname)));
        }
        names.names.push(fname.to_string());
        pending.push((kind, fname.to_string(), fo.get("warp").cloned(), path));
    }
    let mut factors = Vec::new();
    for (kind, fname, warp, path) in pending {
        factors.push(match kind {
            "line" => Factor::WarpedLine {
                warp: match warp {
                    Some(w) => names.field(&w, &format!("{}.warp", path))?,
                    None => constant(1.0, names.names.len()),
                },
                name: fname,
            },
            _ => Factor::TorusCircle { name: fname },
        });
    }
    let d = names.names.len();
    let eta = match base_v.get("rho") {
        None => {
            if base_v.contains_key("rho_antiderivative") {
                return Err(parse_err("base.rho_antiderivative", "given without 'rho'"));
            }
            Eta::unit(d)
        }
        Some(r) => Eta {
            rho: names.field(r, "base.rho")?,
            antiderivative: match base_v.get("rho_antiderivative") {
                Some(a) => Some(names.field(a, "base.rho_antiderivative")?),
                None => None,
            },
        },
    };
    let base = ProductBase::new(factors, eta).map_err(|e| parse_err("base", &e.to_string()))?;

    let gauge_v = as_object(required(obj, "gauge", "$")?, "gauge")?;
    let strategy = as_str(required(gauge_v, "strategy", "gauge")?, "gauge.strategy")?;
    let gauge = match strategy {
        "explicit" => {
            check_keys(gauge_v, "gauge", &["strategy", "potential"])?;
            GaugeStrategy::Explicit(match gauge_v.get("potential") {
                Some(p) => names.one_form(p, "gauge.potential")?,
                None => OneForm::zero(d),
            })
        }
        "alpha_wedge_eta" => {
            check_keys(gauge_v, "gauge", &["strategy", "alpha", "alpha_potential"])?;
            GaugeStrategy::AlphaWedgeEta {
                alpha: names.one_form(required(gauge_v, "alpha", "gauge")?, "gauge.alpha")?,
                alpha_potential: match gauge_v.get("alpha_potential") {
                    Some(a) => Some(names.field(a, "gauge.alpha_potential")?),
                    None => None,
                },
            }
        }
        "torus_blocks" => {
            check_keys(gauge_v, "gauge", &["strategy", "blocks"])?;
            let blocks_v = required(gauge_v, "blocks", "gauge")?
                .as_array()
                .ok_or_else(|| parse_err("gauge.blocks", "expected an array"))?;
            let mut blocks = Vec::new();
            for (i, b) in blocks_v.iter().enumerate() {
                let path = format!("gauge.blocks[{}]", i);
                let bo = as_object(b, &path)?;
                check_keys(bo, &path, &["first", "second", "amplitude", "offset"])?;
                let coord = |key: &str| -> Result<usize> {
                    let at = format!("{}.{}", path, key);
                    let idx = names.index(as_str(required(bo, key, &path)?, &at)?, &at)?;
                    if idx < 2 || !base.is_periodic(idx) {
                        return Err(parse_err(&at, "torus blocks need circle factors"));
                    }
                    Ok(idx)
                };
                let num = |key: &str| -> Result<f64> {
                    match bo.get(key) {
                        Some(x) => as_f64(x, &format!("{}.{}", path, key)),
                        None => Ok(0.0),
                    }
                };
                blocks.push(TorusBlock {
                    first: coord("first")?,
                    second: coord("second")?,
                    amplitude: num("amplitude")?,
                    offset: num("offset")?,
                });
            }
            GaugeStrategy::TorusBlocks(blocks)
        }
        other => {
            return Err(parse_err(
                "gauge.strategy",
                &format!("unknown strategy '{}' (explicit, alpha_wedge_eta, torus_blocks)", other),
            ))
        }
    };

    let psi = match obj.get("psi") {
        None => None,
        Some(p) => {
            if !matches!(gauge, GaugeStrategy::Explicit(_)) {
                return Err(parse_err("psi", "only the explicit gauge takes a separate psi"));
            }
            let arr = p.as_array().ok_or_else(|| parse_err("psi", "expected an array"))?;
            let mut psi = TwoForm::zero(d);
            for (i, c) in arr.iter().enumerate() {
                let path = format!("psi[{}]", i);
                let co = as_object(c, &path)?;
                check_keys(co, &path, &["pair", "value"])?;
                let pair = required(co, "pair", &path)?
                    .as_array()
                    .filter(|a| a.len() == 2)
                    .ok_or_else(|| parse_err(&format!("{}.pair", path), "expected two coordinate names"))?;
                let a = names.index(as_str(&pair[0], &format!("{}.pair[0]", path))?, &format!("{}.pair[0]", path))?;
                let b = names.index(as_str(&pair[1], &format!("{}.pair[1]", path))?, &format!("{}.pair[1]", path))?;
                if a == b || a == V || b == V {
                    return Err(parse_err(&format!("{}.pair", path), "need two distinct base coordinates"));
                }
                psi.insert(a, b, names.field(required(co, "value", &path)?, &format!("{}.value", path))?);
            }
            Some(psi)
        }
    };
    let f = match obj.get("f") {
        Some(f) => names.field(f, "f")?,
        None => constant(0.0, d),
    };
    BundleConfig::new(name, base, psi, gauge, f, Shape::General)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_of(e: Error) -> String {
        match e {
            Error::Parse { path, .. } => path,
            other => panic!("not a parse error: {}", other),
        }
    }

    #[test]
    fn preset_form() {
        let c = parse_config(r#"{"preset": "type4", "params": {"k": 4, "warp": "exp"}}"#).unwrap();
        assert_eq!(c.preset_name(), Some("type4"));
        assert!(c.build().is_ok());
        let e = parse_config(r#"{"preset": "nope"}"#).unwrap_err();
        assert_eq!(path_of(e), "preset");
        let e = parse_config(r#"{"preset": "flat", "param": {}}"#).unwrap_err();
        assert_eq!(path_of(e), "param");
        let e = parse_config(r#"{"preset": "flat", "params": {"k": [1]}}"#).unwrap_err();
        assert_eq!(path_of(e), "params.k");
    }

    #[test]
    fn raw_form_builds() {
        let src = r#"{
            "name": "raw",
            "base": {"factors": [{"line": "y1", "warp": "exp(0.3*y1)"}, {"circle": "x1"}]},
            "psi": [{"pair": ["y1", "x1"], "value": "cos(y1)"}],
            "gauge": {"strategy": "explicit", "potential": {"x1": "2*sin(y1)"}},
            "f": "cos(x1)"
        }"#;
        let cfg = parse_config(src).unwrap().build().unwrap();
        assert_eq!(cfg.dim(), 4);
        assert_eq!(cfg.name, "raw");
    }

    #[test]
    fn errors_carry_key_paths() {
        let cases = [
            (r#"{"base": {"factors": []}, "gauge": {"strategy": "explicit"}, "f": "sin("}"#, "f"),
            (r#"{"base": {"factors": [{"circle": "x1"}, {"line": "x1"}]}, "gauge": {"strategy": "explicit"}}"#, "base.factors[1]"),
            (r#"{"base": {"factors": [{"line": "y", "warp": "q"}]}, "gauge": {"strategy": "explicit"}}"#, "base.factors[0].warp"),
            (r#"{"base": {"factors": [{"circle": "x1"}]}, "gauge": {"strategy": "explicit", "potential": {"z": "1"}}}"#, "gauge.potential.z"),
            (r#"{"base": {"factors": [{"circle": "x1"}]}, "gauge": {"strategy": "magic"}}"#, "gauge.strategy"),
            (r#"{"base": {"factors": [{"circle": "x1"}, {"circle": "x2"}]}, "gauge": {"strategy": "torus_blocks", "blocks": [{"first": "x1", "second": "x2", "amplitude": "big"}]}}"#, "gauge.blocks[0].amplitude"),
            (r#"{"base": {"factors": [{"circle": "x1"}]}, "psi": [{"pair": ["x1", "x1"], "value": "1"}], "gauge": {"strategy": "explicit"}}"#, "psi[0].pair"),
            (r#"{"base": {"factors": [{"circle": "x1"}]}}"#, "gauge"),
            (r#"{"base": {"factors": [{"circle": "x1"}]}, "gauge": {"strategy": "explicit"}, "extra": 1}"#, "extra"),
            (r#"[1, 2]"#, "$"),
            (r#"{"base": "#, "$"),
        ];
        for (src, want) in cases {
            assert_eq!(path_of(parse_config(src).unwrap_err()), want, "{}", src);
        }
    }

    #[test]
    fn invalid_geometry_is_not_a_parse_error() {
        // dP = 0 but Ψ ≠ 0
        let src = r#"{"base": {"factors": [{"circle": "x1"}, {"circle": "x2"}]},
            "psi": [{"pair": ["x1", "x2"], "value": "1"}], "gauge": {"strategy": "explicit"}}"#;
        assert!(matches!(parse_config(src), Err(Error::Gauge { .. })));
    }

    #[test]
    fn overrides() {
        let c = ConfigSource::preset("flat", Params::new());
        let c = c.with_overrides(&Params::new().with("k", 3)).unwrap();
        assert_eq!(c.build().unwrap().dim(), 5);
        let raw = ConfigSource::Raw(serde_json::json!({}));
        assert!(raw.with_overrides(&Params::new().with("k", 3)).is_err());
        assert_eq!(c.to_json()["params"]["k"], "3");
    }
}
