//! Deterministic run artifacts: CSV tables and the summary JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::evolver::DecoherenceRecord;

pub const ARTIFACT: &str = "microchannel";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RNG_NAME: &str = "ChaCha8Rng";

/// Seventeen significant digits, round-trip exact.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Csv {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| format_number(x)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// Columns `t, purity, coherence_l1, trace_distance, leakage` then
/// `w_re_{r}_{r'}, w_im_{r}_{r'}` for each channel-matrix entry, row-major.
pub fn decoherence_csv(records: &[DecoherenceRecord]) -> Csv {
    let k = records.first().map_or(0, |r| r.w.nrows());
    let mut header: Vec<String> = ["t", "purity", "coherence_l1", "trace_distance", "leakage"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for r in 0..k {
        for rp in 0..k {
            header.push(format!("w_re_{r}_{rp}"));
            header.push(format!("w_im_{r}_{rp}"));
        }
    }
    let mut csv = Csv::new(header);
    for rec in records {
        let mut row = vec![rec.t, rec.purity, rec.coherence_l1, rec.trace_distance, rec.leakage];
        for r in 0..k {
            for rp in 0..k {
                row.push(rec.w[(r, rp)].re);
                row.push(rec.w[(r, rp)].im);
            }
        }
        csv.push(row);
    }
    csv
}

/// A reported invariant: `lower ≤ value ≤ upper`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, upper: f64) -> Self {
        Self::within(name, value, None, Some(upper))
    }

    pub fn at_least(name: impl Into<String>, value: f64, lower: f64) -> Self {
        Self::within(name, value, Some(lower), None)
    }

    pub fn within(name: impl Into<String>, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let pass = !value.is_nan() && lower.is_none_or(|l| value >= l) && upper.is_none_or(|u| value <= u);
        Self {
            name: name.into(),
            value,
            lower,
            upper,
            pass,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub artifact: &'static str,
    pub version: &'static str,
    pub experiment: String,
    pub config_sha256: String,
    pub seed: u64,
    pub rng: &'static str,
    pub scalars: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
}

impl Summary {
    pub fn new(experiment: &str, config_bytes: &[u8], seed: u64) -> Self {
        Self {
            artifact: ARTIFACT,
            version: VERSION,
            experiment: experiment.into(),
            config_sha256: sha256_hex(config_bytes),
            seed,
            rng: RNG_NAME,
            scalars: BTreeMap::new(),
            checks: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn scalar(&mut self, name: &str, value: impl Serialize) {
        self.scalars
            .insert(name.into(), serde_json::to_value(value).expect("scalar serializes"));
    }

    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            let s = format_number(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_number(f64::NAN), "nan");
        assert_eq!(format_number(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn csv_layout() {
        let mut c = Csv::new(vec!["a".into(), "b".into()]);
        c.push(vec![1.0, 2.0]);
        assert_eq!(c.render(), "a,b\n1.0000000000000000e0,2.0000000000000000e0\n");
    }

    #[test]
    fn check_bounds() {
        assert!(Check::at_most("x", 1e-12, 1e-10).pass);
        assert!(!Check::at_most("x", f64::NAN, 1e-10).pass);
        assert!(!Check::within("s", 2.4, Some(1.7), Some(2.3)).pass);
        assert!(Check::at_least("m", -1e-13, -1e-12).pass);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
