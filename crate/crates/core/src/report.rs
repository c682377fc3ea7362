//! Verification reports: named checks with residuals, a global verdict and
//! the parameters needed to reproduce the run.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// Largest residual seen (or smallest margin, see `detail`).
    pub worst: f64,
    pub tolerance: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_at: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckResult {
    /// Passes when `worst <= tolerance`.
    pub fn at_most(name: &str, worst: f64, tolerance: f64, samples: usize) -> Self {
        Self {
            name: name.to_string(),
            pass: worst <= tolerance,
            worst,
            tolerance,
            samples,
            worst_at: None,
            detail: None,
        }
    }

    /// Passes when `worst >= tolerance`.
    pub fn at_least(name: &str, worst: f64, tolerance: f64, samples: usize) -> Self {
        Self {
            pass: worst >= tolerance,
            ..Self::at_most(name, worst, tolerance, samples)
        }
    }

    pub fn failed(name: &str, samples: usize, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            pass: false,
            worst: f64::NAN,
            tolerance: f64::NAN,
            samples,
            worst_at: None,
            detail: Some(detail.into()),
        }
    }

    pub fn at(mut self, location: impl Into<String>) -> Self {
        self.worst_at = Some(location.into());
        self
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    /// `ok`/`FAIL` line for terminals.
    pub fn summary_line(&self) -> String {
        format!(
            "{} {:<28} worst={:.3e} tol={:.1e} n={}{}",
            if self.pass { "ok  " } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.samples,
            self.worst_at.as_ref().map(|w| format!(" at {w}")).unwrap_or_default()
        )
    }
}

/// Tracks the worst residual of a sweep together with where it occurred.
#[derive(Clone, Debug, Default)]
pub struct Worst {
    pub value: f64,
    pub at: Option<String>,
    pub count: usize,
}

impl Worst {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64, at: impl FnOnce() -> String) {
        self.count += 1;
        if self.value.is_nan() {
            return;
        }
        if value.is_nan() || value > self.value || self.at.is_none() {
            self.value = value;
            self.at = Some(at());
        }
    }

    pub fn check(&self, name: &str, tolerance: f64) -> CheckResult {
        let mut c = CheckResult::at_most(name, self.value, tolerance, self.count);
        c.pass &= !self.value.is_nan();
        c.worst_at = self.at.clone();
        c
    }
}

/// Tracks the smallest value of a sweep.
#[derive(Clone, Debug)]
pub struct Least {
    pub value: f64,
    pub at: Option<String>,
    pub count: usize,
}

impl Default for Least {
    fn default() -> Self {
        Self { value: f64::INFINITY, at: None, count: 0 }
    }
}

impl Least {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64, at: impl FnOnce() -> String) {
        self.count += 1;
        if self.value.is_nan() {
            return;
        }
        if value.is_nan() || value < self.value {
            self.value = value;
            self.at = Some(at());
        }
    }

    pub fn check(&self, name: &str, floor: f64) -> CheckResult {
        let mut c = CheckResult::at_least(name, self.value, floor, self.count);
        c.worst_at = self.at.clone();
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario: String,
    /// SHA-256 of the canonical scenario JSON.
    pub scenario_sha256: String,
    pub seed: u64,
    pub mesh: usize,
    pub tolerances: serde_json::Value,
}

impl Provenance {
    pub fn new(scenario: &str, canonical_json: &str, seed: u64, mesh: usize, tolerances: serde_json::Value) -> Self {
        Self {
            scenario: scenario.to_string(),
            scenario_sha256: sha256_hex(canonical_json.as_bytes()),
            seed,
            mesh,
            tolerances,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub pass: bool,
    pub checks: Vec<CheckResult>,
    pub provenance: Provenance,
}

impl VerificationReport {
    pub fn new(checks: Vec<CheckResult>, provenance: Provenance) -> Self {
        Self {
            pass: !checks.is_empty() && checks.iter().all(|c| c.pass),
            checks,
            provenance,
        }
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Pretty JSON; non-finite numbers become `null`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_pass_is_conjunction() {
        let prov = Provenance::new("x", "{}", 42, 64, serde_json::json!({}));
        let ok = CheckResult::at_most("a", 1e-12, 1e-10, 3);
        let bad = CheckResult::at_least("b", 1e-9, 1e-8, 3);
        assert!(ok.pass && !bad.pass);
        assert!(VerificationReport::new(vec![ok.clone()], prov.clone()).pass);
        assert!(!VerificationReport::new(vec![ok, bad], prov.clone()).pass);
        assert!(!VerificationReport::new(vec![], prov).pass);
    }

    #[test]
    fn worst_tracks_location() {
        let mut w = Worst::new();
        w.push(1.0, || "a".into());
        w.push(3.0, || "b".into());
        w.push(2.0, || "c".into());
        let c = w.check("x", 2.5);
        assert!(!c.pass);
        assert_eq!(c.worst_at.as_deref(), Some("b"));
        assert_eq!(c.samples, 3);
        let mut w = Worst::new();
        w.push(f64::NAN, || "nan".into());
        w.push(0.0, || "zero".into());
        assert!(!w.check("x", 1.0).pass);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
