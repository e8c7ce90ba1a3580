use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observations of a scalar covariate and outcome, with optional treatment
/// (`d`) and selection (`s`) indicators.
///
/// When selection flags are present, outcomes of unselected rows are not
/// observed and are stored as `NaN`; every other value must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Option<Vec<bool>>,
    s: Option<Vec<bool>>,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::build(x, y, None, None)
    }

    pub fn build(x: Vec<f64>, y: Vec<f64>, d: Option<Vec<bool>>, s: Option<Vec<bool>>) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::invalid("sample is empty"));
        }
        if y.len() != n {
            return Err(Error::invalid(format!("x has {n} rows but y has {}", y.len())));
        }
        for (name, col) in [("d", &d), ("s", &s)] {
            if let Some(c) = col {
                if c.len() != n {
                    return Err(Error::invalid(format!("x has {n} rows but {name} has {}", c.len())));
                }
            }
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("x[{i}] is not finite")));
        }
        for (i, v) in y.iter().enumerate() {
            let observed = s.as_ref().is_none_or(|s| s[i]);
            if observed && !v.is_finite() {
                return Err(Error::invalid(format!("y[{i}] is not finite")));
            }
        }
        Ok(Sample { x, y, d, s })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> Option<&[bool]> {
        self.d.as_deref()
    }

    pub fn s(&self) -> Option<&[bool]> {
        self.s.as_deref()
    }

    /// Same covariates and indicators with a replaced outcome column.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Sample> {
        Sample::build(self.x.clone(), y, self.d.clone(), self.s.clone())
    }

    /// Rows for which `keep(i)` is true. Returns `None` if no row is kept.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> Option<Sample> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        if idx.is_empty() {
            return None;
        }
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pick_b = |v: &Vec<bool>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Some(Sample {
            x: pick(&self.x),
            y: pick(&self.y),
            d: self.d.as_ref().map(pick_b),
            s: self.s.as_ref().map(pick_b),
        })
    }
}

/// Which observations enter a local fit at `x0`.
///
/// One-sided fits use observations strictly below (`LeftOfCutoff`) or at or
/// above (`RightOfCutoff`) the evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSide {
    #[default]
    TwoSided,
    LeftOfCutoff,
    RightOfCutoff,
}

impl EvalSide {
    #[inline]
    pub fn admits(self, x: f64, x0: f64) -> bool {
        match self {
            EvalSide::TwoSided => true,
            EvalSide::LeftOfCutoff => x < x0,
            EvalSide::RightOfCutoff => x >= x0,
        }
    }

    pub fn is_one_sided(self) -> bool {
        self != EvalSide::TwoSided
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        assert!(Sample::new(vec![], vec![]).is_err());
        assert!(Sample::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(Sample::new(vec![f64::NAN], vec![1.0]).is_err());
        assert!(Sample::new(vec![1.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn unselected_outcomes_may_be_missing() {
        let s = Sample::build(
            vec![0.0, 1.0],
            vec![f64::NAN, 2.0],
            Some(vec![true, false]),
            Some(vec![false, true]),
        )
        .unwrap();
        assert_eq!(s.len(), 2);
        let bad = Sample::build(vec![0.0], vec![f64::NAN], None, Some(vec![true]));
        assert!(bad.is_err());
    }

    #[test]
    fn one_sided_membership() {
        assert!(EvalSide::LeftOfCutoff.admits(-0.1, 0.0));
        assert!(!EvalSide::LeftOfCutoff.admits(0.0, 0.0));
        assert!(EvalSide::RightOfCutoff.admits(0.0, 0.0));
        assert!(!EvalSide::RightOfCutoff.admits(-1e-12, 0.0));
    }
}
