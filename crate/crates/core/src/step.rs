//! Piecewise-constant functions of time.
//!
//! Every survival curve, cumulative hazard and linearization weight in the
//! crate is a [`StepFunction`]. Integrals are exact sums over the pieces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of a knot the jump is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Continuity {
    /// `f(knot_j) = values[j]`: the usual convention for cumulative hazards.
    Right,
    /// `f(knot_j) = values[j - 1]`: the convention for `t -> P(T >= t)`.
    Left,
}

/// Piecewise-constant function with jumps at strictly increasing knots.
///
/// Away from the knots, the function equals `value_before_first` on
/// `(-inf, knots[0])` and `values[j]` on `(knots[j], knots[j + 1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    value_before_first: f64,
    continuity: Continuity,
}

impl StepFunction {
    pub fn new(
        knots: Vec<f64>,
        values: Vec<f64>,
        value_before_first: f64,
        continuity: Continuity,
    ) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::InvalidSpec(format!(
                "step function has {} knots but {} values",
                knots.len(),
                values.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpec(
                "step function knots must be finite and strictly increasing".into(),
            ));
        }
        if !value_before_first.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("step function values must be finite".into()));
        }
        Ok(Self {
            knots,
            values,
            value_before_first,
            continuity,
        })
    }

    /// A function equal to `value` everywhere.
    pub fn constant(value: f64) -> Self {
        Self {
            knots: Vec::new(),
            values: Vec::new(),
            value_before_first: value,
            continuity: Continuity::Right,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_before_first(&self) -> f64 {
        self.value_before_first
    }

    pub fn continuity(&self) -> Continuity {
        self.continuity
    }

    /// Value on the piece that starts after `count` knots.
    #[inline]
    fn piece(&self, count: usize) -> f64 {
        if count == 0 {
            self.value_before_first
        } else {
            self.values[count - 1]
        }
    }

    /// Evaluate under the function's own continuity convention.
    pub fn eval(&self, t: f64) -> f64 {
        match self.continuity {
            Continuity::Right => self.right_limit(t),
            Continuity::Left => self.left_limit(t),
        }
    }

    /// `lim_{s -> t-} f(s)`.
    pub fn left_limit(&self, t: f64) -> f64 {
        self.piece(self.knots.partition_point(|&k| k < t))
    }

    /// `lim_{s -> t+} f(s)`.
    pub fn right_limit(&self, t: f64) -> f64 {
        self.piece(self.knots.partition_point(|&k| k <= t))
    }

    /// Exact `∫_a^b f(t) dt`; zero when `b <= a`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut idx = self.knots.partition_point(|&k| k <= a);
        let mut lo = a;
        let mut total = 0.0;
        while lo < b {
            let hi = if idx < self.knots.len() {
                self.knots[idx].min(b)
            } else {
                b
            };
            total += self.piece(idx) * (hi - lo);
            lo = hi;
            idx += 1;
        }
        total
    }

    /// Exact `∫_a^b f(t) g(t) dt`.
    pub fn integral_product(&self, other: &StepFunction, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut i = self.knots.partition_point(|&k| k <= a);
        let mut j = other.knots.partition_point(|&k| k <= a);
        let mut lo = a;
        let mut total = 0.0;
        while lo < b {
            let next_i = self.knots.get(i).copied().unwrap_or(f64::INFINITY);
            let next_j = other.knots.get(j).copied().unwrap_or(f64::INFINITY);
            let hi = next_i.min(next_j).min(b);
            total += self.piece(i) * other.piece(j) * (hi - lo);
            if next_i <= hi {
                i += 1;
            }
            if next_j <= hi {
                j += 1;
            }
            lo = hi;
        }
        total
    }

    /// Apply `f` to every value, keeping knots and continuity.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> StepFunction {
        StepFunction {
            knots: self.knots.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            value_before_first: f(self.value_before_first),
            continuity: self.continuity,
        }
    }

    /// Knots lying in the open interval `(a, b)`.
    pub fn knots_between(&self, a: f64, b: f64) -> &[f64] {
        let lo = self.knots.partition_point(|&k| k <= a);
        let hi = self.knots.partition_point(|&k| k < b);
        &self.knots[lo..hi.max(lo)]
    }

    /// Pointwise average of functions sharing one continuity convention.
    pub fn average(functions: &[StepFunction]) -> Result<StepFunction> {
        let first = functions
            .first()
            .ok_or_else(|| Error::InvalidSpec("cannot average zero functions".into()))?;
        let mut knots: Vec<f64> = functions.iter().flat_map(|f| f.knots.iter().copied()).collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let k = functions.len() as f64;
        let values = knots
            .iter()
            .map(|&t| functions.iter().map(|f| f.right_limit(t)).sum::<f64>() / k)
            .collect();
        let before = functions.iter().map(|f| f.value_before_first).sum::<f64>() / k;
        StepFunction::new(knots, values, before, first.continuity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stairs() -> StepFunction {
        StepFunction::new(vec![1.0, 2.0, 3.0], vec![0.5, 0.25, 0.0], 1.0, Continuity::Right).unwrap()
    }

    #[test]
    fn evaluation_follows_continuity() {
        let f = stairs();
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(1.0), 0.5);
        assert_eq!(f.left_limit(1.0), 1.0);
        assert_eq!(f.right_limit(2.0), 0.25);
        let g = StepFunction::new(vec![1.0, 2.0, 3.0], vec![0.5, 0.25, 0.0], 1.0, Continuity::Left)
            .unwrap();
        assert_eq!(g.eval(1.0), 1.0);
        assert_eq!(g.eval(1.5), 0.5);
    }

    #[test]
    fn integral_is_exact() {
        let f = stairs();
        assert!((f.integral(0.0, 2.5) - (1.0 + 0.5 + 0.125)).abs() < 1e-15);
        assert!((f.integral(1.5, 10.0) - (0.25 + 0.25)).abs() < 1e-15);
        assert_eq!(f.integral(2.0, 2.0), 0.0);
    }

    #[test]
    fn product_integral_merges_breakpoints() {
        let f = stairs();
        let g = StepFunction::new(vec![1.5], vec![2.0], 1.0, Continuity::Right).unwrap();
        // [0,1): 1*1, [1,1.5): .5*1, [1.5,2): .5*2, [2,2.5): .25*2
        let want = 1.0 + 0.25 + 0.5 + 0.25;
        assert!((f.integral_product(&g, 0.0, 2.5) - want).abs() < 1e-15);
    }

    #[test]
    fn rejects_unsorted_knots() {
        assert!(StepFunction::new(vec![2.0, 1.0], vec![0.0, 0.0], 1.0, Continuity::Right).is_err());
    }

    #[test]
    fn average_is_pointwise() {
        let a = StepFunction::new(vec![1.0], vec![0.0], 1.0, Continuity::Left).unwrap();
        let b = StepFunction::new(vec![2.0], vec![0.5], 1.0, Continuity::Left).unwrap();
        let avg = StepFunction::average(&[a, b]).unwrap();
        assert_eq!(avg.eval(1.0), 1.0);
        assert_eq!(avg.eval(1.5), 0.5);
        assert_eq!(avg.eval(3.0), 0.25);
    }
}
