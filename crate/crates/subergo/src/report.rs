//! Check reports: the uniform outcome type for every verification routine.
//!
//! A check evaluates an inequality (or a family of inequalities indexed by
//! grid points, pairs, or states) and reports pass/fail together with the
//! worst margin observed and any constants it extracted along the way.
//! Violations are data, not errors: a failing check still returns `Ok`.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

/// A single violated inequality, with enough context to locate it.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    /// Where the violation happened, e.g. `state=3` or `t=1.5,x=0`.
    pub location: String,
    /// Left-hand side of the violated inequality.
    pub lhs: f64,
    /// Right-hand side of the violated inequality.
    pub rhs: f64,
    /// `lhs - rhs` (positive means violated).
    pub margin: f64,
}

/// Outcome of a condition check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    /// Number of points/pairs/states evaluated.
    pub checked: usize,
    /// Most adverse value of `lhs - rhs` over all evaluated points.
    /// Negative means the inequality held everywhere with that slack.
    pub worst_margin: f64,
    /// Location of the worst margin.
    pub worst_location: Option<String>,
    /// Violating entries, capped at [`CheckReport::MAX_VIOLATIONS`].
    pub violations: Vec<Violation>,
    /// Extracted constants (K, kappa, eta, r0, ...), keyed by name.
    pub constants: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub const MAX_VIOLATIONS: usize = 32;

    pub fn new(name: impl Into<String>) -> Self {
        CheckReport {
            name: name.into(),
            passed: true,
            checked: 0,
            worst_margin: f64::NEG_INFINITY,
            worst_location: None,
            violations: Vec::new(),
            constants: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// Record one inequality evaluation `lhs <= rhs + tolerance`.
    /// A non-finite margin counts as a violation.
    pub fn record(&mut self, location: impl fmt::Display, lhs: f64, rhs: f64, tolerance: f64) {
        self.checked += 1;
        let margin = lhs - rhs;
        if margin > self.worst_margin || self.worst_location.is_none() {
            self.worst_margin = margin;
            self.worst_location = Some(location.to_string());
        }
        if !(margin <= tolerance) {
            self.passed = false;
            if self.violations.len() < Self::MAX_VIOLATIONS {
                self.violations.push(Violation {
                    location: location.to_string(),
                    lhs,
                    rhs,
                    margin,
                });
            }
        }
    }

    /// Record a named boolean predicate (no numeric margin).
    pub fn record_predicate(&mut self, location: impl fmt::Display, ok: bool) {
        self.checked += 1;
        if !ok {
            self.passed = false;
            if self.violations.len() < Self::MAX_VIOLATIONS {
                self.violations.push(Violation {
                    location: location.to_string(),
                    lhs: f64::NAN,
                    rhs: f64::NAN,
                    margin: f64::NAN,
                });
            }
        }
    }

    pub fn set_constant(&mut self, key: impl Into<String>, value: f64) {
        self.constants.insert(key.into(), value);
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// Merge another report into this one (associative; used by parallel checks).
    pub fn merge(&mut self, other: CheckReport) {
        self.checked += other.checked;
        self.passed &= other.passed;
        if other.worst_margin > self.worst_margin {
            self.worst_margin = other.worst_margin;
            self.worst_location = other.worst_location;
        }
        for v in other.violations {
            if self.violations.len() < Self::MAX_VIOLATIONS {
                self.violations.push(v);
            }
        }
        self.constants.extend(other.constants);
        self.notes.extend(other.notes);
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {} points, worst margin {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.worst_margin,
        )?;
        if let Some(loc) = &self.worst_location {
            write!(f, " at {loc}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_worst_margin() {
        let mut r = CheckReport::new("demo");
        r.record("a", 1.0, 2.0, 0.0);
        r.record("b", 3.0, 2.5, 0.0);
        assert!(!r.passed);
        assert_eq!(r.worst_location.as_deref(), Some("b"));
        assert!((r.worst_margin - 0.5).abs() < 1e-15);
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn merge_keeps_worst() {
        let mut a = CheckReport::new("a");
        a.record("p", 0.0, 1.0, 0.0);
        let mut b = CheckReport::new("b");
        b.record("q", 5.0, 1.0, 0.0);
        a.merge(b);
        assert!(!a.passed);
        assert_eq!(a.checked, 2);
        assert_eq!(a.worst_location.as_deref(), Some("q"));
    }
}
