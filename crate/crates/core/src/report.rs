//! Run artifacts: a JSON summary with every float written to 17 significant
//! digits, CSV tables, and itemized tolerance checks.
//!
//! Same inputs give byte-identical files. JSON has no NaN or infinity, so
//! non-finite values appear as `null` there and as `NaN`/`inf` in CSVs.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};

/// `x` with 17 significant digits in scientific notation.
pub fn format_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{:.16e}", x)
    }
}

/// Pretty JSON layout with fixed-width floats.
struct FixedFloats<'a>(PrettyFormatter<'a>);

impl Formatter for FixedFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_f64(value).as_bytes())
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloats(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Numerical(format!("cannot serialize summary: {}", e)))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// One tolerance check of a run.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Ordered list of checks; a run fails if any of them fails.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Checks(pub Vec<Check>);

impl Checks {
    /// Passes when `value ≤ tolerance` (NaN fails).
    pub fn at_most(&mut self, name: impl Into<String>, value: f64, tolerance: f64) {
        self.0.push(Check {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        });
    }

    /// A yes/no condition, recorded as value 1 (true) or 0 against tolerance 0.
    pub fn holds(&mut self, name: impl Into<String>, ok: bool) {
        self.0.push(Check {
            name: name.into(),
            value: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
            passed: ok,
        });
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.0.iter().filter(|c| !c.passed).collect()
    }

    pub fn all_passed(&self) -> bool {
        self.0.iter().all(|c| c.passed)
    }

    /// One line per failed check.
    pub fn itemize_failures(&self) -> String {
        self.failures()
            .iter()
            .map(|c| {
                if c.tolerance == 0.0 && (c.value == 0.0 || c.value == 1.0) {
                    format!("FAIL {}\n", c.name)
                } else {
                    format!(
                        "FAIL {}: {} exceeds {}\n",
                        c.name,
                        format_f64(c.value),
                        format_f64(c.tolerance)
                    )
                }
            })
            .collect()
    }
}

/// A CSV table with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Table {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&x| format_f64(x)).collect());
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Numerical(format!("csv: {}", e));
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv: {}", e)))?;
        Ok(String::from_utf8(bytes).expect("csv of UTF-8 strings"))
    }
}

/// Writes `summary.json` and the named CSV tables into `dir`, one file at a time.
pub fn write_artifacts<T: Serialize>(dir: &Path, summary: &T, tables: &[(String, Table)]) -> Result<Vec<String>> {
    let io_err = |p: &Path, e: io::Error| Error::Config(format!("cannot write {}: {}", p.display(), e));
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    let p = dir.join("summary.json");
    std::fs::write(&p, to_json_string(summary)?).map_err(|e| io_err(&p, e))?;
    written.push("summary.json".to_string());
    for (name, t) in tables {
        let p = dir.join(name);
        std::fs::write(&p, t.to_csv_string()?).map_err(|e| io_err(&p, e))?;
        written.push(name.clone());
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(format_f64(-2.0), "-2.0000000000000000e0");
        assert_eq!(format_f64(0.0), "0.0000000000000000e0");
        for x in [0.1, 1.0 / 3.0, std::f64::consts::PI, 6.02e23, -1e-300, f64::MIN_POSITIVE] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(format_f64(f64::NAN), "NaN");
    }

    #[test]
    fn json_is_valid_and_stable() {
        #[derive(Serialize)]
        struct S {
            a: f64,
            b: Vec<f64>,
            n: usize,
            s: &'static str,
            bad: f64,
        }
        let s = S {
            a: 0.1,
            b: vec![1.0, 2.5e-12],
            n: 3,
            s: "x",
            bad: f64::INFINITY,
        };
        let text = to_json_string(&s).unwrap();
        assert_eq!(text, to_json_string(&s).unwrap());
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
        assert_eq!(back["b"][1].as_f64(), Some(2.5e-12));
        assert_eq!(back["n"].as_u64(), Some(3));
        assert!(back["bad"].is_null());
        assert!(text.contains("\"a\": 1.0000000000000001e-1"));
    }

    #[test]
    fn checks_and_tables() {
        let mut c = Checks::default();
        c.at_most("small", 1e-12, 1e-10);
        c.at_most("nan", f64::NAN, 1.0);
        c.holds("flag", false);
        assert!(!c.all_passed());
        assert_eq!(c.failures().len(), 2);
        let text = c.itemize_failures();
        assert!(text.contains("FAIL nan") && text.contains("FAIL flag"));

        let mut t = Table::new(["x", "label"]);
        t.push(vec![format_f64(1.5), "a,b".into()]);
        assert_eq!(t.to_csv_string().unwrap(), "x,label\n1.5000000000000000e0,\"a,b\"\n");
    }
}
