//! Certificate reports: verdicts, margins, witnesses, tolerances.
//!
//! Every check in the toolkit produces a [`CertificateReport`]. Margins are
//! always oriented as `LHS - RHS` of the inequality under test, so a positive
//! margin beyond tolerance means the inequality failed and the report carries
//! the witness attaining it.

use crate::sim::InputSignal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// The inequality held on every provided sample.
    Holds,
    /// A randomized search exhausted its budget without a counterexample.
    NoViolationFound,
    /// A witness exceeding tolerance was found.
    Violated,
    /// The check could not decide (e.g. every sample was kink-adjacent).
    Inconclusive,
}

impl Verdict {
    pub fn is_violation(self) -> bool {
        matches!(self, Verdict::Violated)
    }
}

/// Tolerances in force when a report was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Absolute slack granted to the inequality.
    pub abs_tol: f64,
    /// Extra allowance for accumulated integrator error (`10 * dt^4` by default).
    pub integration_allowance: f64,
    /// Grid step used by any trajectory integration involved.
    pub dt: f64,
}

impl Tolerances {
    pub fn for_dt(dt: f64) -> Self {
        Tolerances {
            abs_tol: crate::DEFAULT_ABS_TOL,
            integration_allowance: 10.0 * dt.powi(4),
            dt,
        }
    }

    /// Pointwise samples with no integration involved.
    pub fn pointwise(abs_tol: f64) -> Self {
        Tolerances {
            abs_tol,
            integration_allowance: 0.0,
            dt: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.abs_tol + self.integration_allowance
    }
}

/// The sample attaining the worst margin of a check. Serialized flattened
/// into the report as `witness_xi`, `witness_input`, `witness_time`,
/// `witness_lhs`, `witness_rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(rename = "witness_xi")]
    pub xi: Vec<f64>,
    #[serde(rename = "witness_input", skip_serializing_if = "Option::is_none")]
    pub input: Option<InputSignal>,
    #[serde(rename = "witness_time")]
    pub time: f64,
    #[serde(rename = "witness_lhs")]
    pub lhs: f64,
    #[serde(rename = "witness_rhs")]
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub check: String,
    pub verdict: Verdict,
    /// Worst observed `LHS - RHS` over all samples and times.
    pub margin: f64,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    pub tolerances: Tolerances,
    pub samples_evaluated: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl CertificateReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// A named scalar carried by a [`ComparisonReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub name: String,
    pub value: f64,
}

/// Side-by-side outcome of two routes to the same conclusion, or a purely
/// diagnostic sweep (`agree: None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub check: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agree: Option<bool>,
    pub quantities: Vec<Quantity>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub sub_reports: Vec<CertificateReport>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn quantity(&self, name: &str) -> Option<f64> {
        self.quantities
            .iter()
            .find(|q| q.name == name)
            .map(|q| q.value)
    }
}

/// Running worst-margin accumulator. Merging is associative and keeps the
/// first witness on ties so that parallel sample loops, reduced in index
/// order, stay deterministic.
#[derive(Debug, Clone, Default)]
pub struct MarginTracker {
    worst: Option<(f64, Witness)>,
    pub samples: usize,
}

impl MarginTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, margin: f64, witness: impl FnOnce() -> Witness) {
        match &self.worst {
            Some((m, _)) if *m >= margin => {}
            _ => self.worst = Some((margin, witness())),
        }
    }

    pub fn absorb(&mut self, other: MarginTracker) {
        self.samples += other.samples;
        if let Some((m, w)) = other.worst {
            match &self.worst {
                Some((m0, _)) if *m0 >= m => {}
                _ => self.worst = Some((m, w)),
            }
        }
    }

    pub fn margin(&self) -> f64 {
        self.worst.as_ref().map(|(m, _)| *m).unwrap_or(f64::MIN)
    }

    pub fn into_report(
        self,
        check: &str,
        tolerances: Tolerances,
        searched: bool,
    ) -> CertificateReport {
        let (margin, witness) = match self.worst {
            Some((m, w)) => (m, Some(w)),
            None => (f64::MIN, None),
        };
        let verdict = if margin > tolerances.total() {
            Verdict::Violated
        } else if searched {
            Verdict::NoViolationFound
        } else {
            Verdict::Holds
        };
        CertificateReport {
            check: check.to_string(),
            verdict,
            margin,
            witness,
            tolerances,
            samples_evaluated: self.samples,
            seed: None,
            notes: Vec::new(),
        }
    }
}
