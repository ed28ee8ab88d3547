use serde::{Deserialize, Serialize};

/// Tolerant numeric equality shared by voting, verification, scoring and
/// reward computation.
///
/// Two answers match when `|a - b| <= max(abs, rel * max(|a|, |b|))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-6, rel: 1e-4 }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    pub fn matches(&self, a: f64, b: f64) -> bool {
        if !a.is_finite() || !b.is_finite() {
            return false;
        }
        let bound = self.abs.max(self.rel * a.abs().max(b.abs()));
        (a - b).abs() <= bound
    }

    /// `Some` answers are compared; `None` never matches anything.
    pub fn matches_opt(&self, a: Option<f64>, b: f64) -> bool {
        a.is_some_and(|a| self.matches(a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_and_absolute_branches() {
        let t = Tolerance::default();
        assert!(t.matches(12.500001, 12.5));
        assert!(t.matches(0.0, 5e-7));
        assert!(!t.matches(0.0, 2e-6));
        assert!(t.matches(1e6, 1e6 + 50.0));
        assert!(!t.matches(1e6, 1e6 + 200.0));
        assert!(!t.matches(12.5, -12.5));
        assert!(!t.matches(f64::NAN, f64::NAN));
    }
}
