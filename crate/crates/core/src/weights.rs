//! Normalized importance weights.
//!
//! A [`WeightSet`] keeps the normalized weights, their logarithms and the
//! effective sample size in sync. Weights are only ever mutated collectively:
//! changing one weight changes the normalization of all of them, so there is
//! no per-particle setter.

use crate::error::{Result, SmcError};

#[derive(Clone, Debug)]
pub struct WeightSet {
    weight: Vec<f64>,
    log_weight: Vec<f64>,
    scratch: Vec<f64>,
    ess: f64,
}

impl WeightSet {
    /// Creates `n` equal weights.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(SmcError::EmptySystem);
        }
        let mut ws = WeightSet {
            weight: vec![0.0; n],
            log_weight: vec![0.0; n],
            scratch: vec![0.0; n],
            ess: 0.0,
        };
        ws.set_equal_weight();
        Ok(ws)
    }

    pub fn size(&self) -> usize {
        self.weight.len()
    }

    /// Normalized weights.
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// Normalized log weights, `log_weight()[i] == weight()[i].ln()`.
    pub fn log_weight(&self) -> &[f64] {
        &self.log_weight
    }

    /// Effective sample size `1 / sum(W_i^2)`, cached on every mutation.
    pub fn ess(&self) -> f64 {
        self.ess
    }

    pub fn read_weight(&self) -> Vec<f64> {
        self.weight.clone()
    }

    pub fn read_log_weight(&self) -> Vec<f64> {
        self.log_weight.clone()
    }

    pub fn set_equal_weight(&mut self) {
        let n = self.size();
        let w = 1.0 / n as f64;
        let lw = -(n as f64).ln();
        self.weight.fill(w);
        self.log_weight.fill(lw);
        self.ess = n as f64;
    }

    /// Replaces the log weights by `values`, then normalizes.
    pub fn set_log_weight(&mut self, values: &[f64]) -> Result<()> {
        self.check_len(values.len())?;
        self.scratch.copy_from_slice(values);
        self.commit_log()
    }

    /// Adds `increments` to the log weights, then normalizes.
    pub fn add_log_weight(&mut self, increments: &[f64]) -> Result<()> {
        self.check_len(increments.len())?;
        for ((s, &lw), &inc) in self.scratch.iter_mut().zip(&self.log_weight).zip(increments) {
            *s = lw + inc;
        }
        self.commit_log()
    }

    /// Replaces the weights by the non-negative `values`, then normalizes.
    pub fn set_weight(&mut self, values: &[f64]) -> Result<()> {
        self.check_len(values.len())?;
        self.scratch.copy_from_slice(values);
        self.commit_linear()
    }

    /// Multiplies the weights by the non-negative `factors`, then normalizes.
    pub fn mul_weight(&mut self, factors: &[f64]) -> Result<()> {
        self.check_len(factors.len())?;
        for ((s, &w), &f) in self.scratch.iter_mut().zip(&self.weight).zip(factors) {
            *s = w * f;
        }
        self.commit_linear()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.size() {
            return Err(SmcError::LengthMismatch {
                expected: self.size(),
                actual: len,
            });
        }
        Ok(())
    }

    // Normalizes the unnormalized log weights held in `scratch`. On failure
    // the current weights are left untouched.
    fn commit_log(&mut self) -> Result<()> {
        let mut max = f64::NEG_INFINITY;
        for &v in &self.scratch {
            if v.is_nan() {
                return Err(SmcError::Normalization("NaN log weight"));
            }
            if v == f64::INFINITY {
                return Err(SmcError::Normalization("infinite log weight"));
            }
            if v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(SmcError::Normalization("all log weights are -inf"));
        }

        let mut sum = 0.0;
        for &v in &self.scratch {
            sum += (v - max).exp();
        }
        let log_sum = sum.ln();
        for ((lw, w), &v) in self
            .log_weight
            .iter_mut()
            .zip(self.weight.iter_mut())
            .zip(&self.scratch)
        {
            *lw = (v - max) - log_sum;
            *w = lw.exp();
        }
        self.update_ess();
        Ok(())
    }

    fn commit_linear(&mut self) -> Result<()> {
        let mut sum = 0.0;
        for &v in &self.scratch {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SmcError::Normalization(
                    "weights must be finite and non-negative",
                ));
            }
            sum += v;
        }
        if sum <= 0.0 {
            return Err(SmcError::Normalization("all weights are zero"));
        }
        let log_sum = sum.ln();
        for ((lw, w), &v) in self
            .log_weight
            .iter_mut()
            .zip(self.weight.iter_mut())
            .zip(&self.scratch)
        {
            *w = v / sum;
            *lw = v.ln() - log_sum;
        }
        self.update_ess();
        Ok(())
    }

    fn update_ess(&mut self) {
        let mut ss = 0.0;
        for &w in &self.weight {
            ss += w * w;
        }
        self.ess = 1.0 / ss;
    }
}

/// `ln(sum_i exp(values_i))` with max subtraction; `-inf` entries are skipped.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values
        .clone()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_infinite() {
        return max;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn equal_weight() {
        for n in [1usize, 4, 1000] {
            let ws = WeightSet::new(n).unwrap();
            let sum: f64 = ws.weight().iter().sum();
            assert!(close(sum, 1.0, 1e-12));
            assert_eq!(ws.ess(), n as f64);
            assert!(ws.weight().iter().all(|&w| w == 1.0 / n as f64));
        }
        assert!(matches!(WeightSet::new(0), Err(SmcError::EmptySystem)));
    }

    #[test]
    fn set_log_weight_examples() {
        let mut ws = WeightSet::new(3).unwrap();
        ws.set_log_weight(&[0.0, 0.0, 0.0]).unwrap();
        for &w in ws.weight() {
            assert!(close(w, 1.0 / 3.0, 1e-15));
        }

        let mut ws = WeightSet::new(2).unwrap();
        for c in [-700.0, -3.5, 0.0, 12.25, 800.0] {
            ws.set_log_weight(&[c, c + 2f64.ln()]).unwrap();
            assert!(close(ws.weight()[0], 1.0 / 3.0, 1e-12));
            assert!(close(ws.weight()[1], 2.0 / 3.0, 1e-12));
        }

        ws.set_log_weight(&[1000.0, 1000.0]).unwrap();
        assert_eq!(ws.weight(), &[0.5, 0.5]);
    }

    #[test]
    fn set_log_weight_rejects_degenerate_input() {
        let mut ws = WeightSet::new(3).unwrap();
        ws.set_log_weight(&[0.0, 1.0, 2.0]).unwrap();
        let before = ws.read_weight();
        let ninf = f64::NEG_INFINITY;
        assert!(ws.set_log_weight(&[ninf, ninf, ninf]).is_err());
        assert!(ws.set_log_weight(&[0.0, f64::NAN, 1.0]).is_err());
        assert!(ws.set_log_weight(&[0.0, 1.0]).is_err());
        assert_eq!(ws.read_weight(), before);
    }

    #[test]
    fn add_log_weight_examples() {
        let mut ws = WeightSet::new(4).unwrap();
        ws.add_log_weight(&[3.7; 4]).unwrap();
        for &w in ws.weight() {
            assert!(close(w, 0.25, 1e-15));
        }

        let mut ws = WeightSet::new(2).unwrap();
        ws.add_log_weight(&[3f64.ln(), 0.0]).unwrap();
        assert!(close(ws.weight()[0], 0.75, 1e-15));
        assert!(close(ws.weight()[1], 0.25, 1e-15));

        ws.set_weight(&[1.0, 0.0]).unwrap();
        ws.add_log_weight(&[0.0, 5.0]).unwrap();
        assert_eq!(ws.weight(), &[1.0, 0.0]);
        assert_eq!(ws.log_weight()[1], f64::NEG_INFINITY);

        let ninf = f64::NEG_INFINITY;
        assert!(ws.add_log_weight(&[ninf, 0.0]).is_err());
    }

    #[test]
    fn linear_domain_examples() {
        let mut ws = WeightSet::new(4).unwrap();
        ws.set_weight(&[2.0; 4]).unwrap();
        assert!(ws.weight().iter().all(|&w| close(w, 0.25, 1e-15)));

        ws.mul_weight(&[1.0, 1.0, 1.0, 3.0]).unwrap();
        let expect = [1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5];
        for (w, e) in ws.weight().iter().zip(expect) {
            assert!(close(*w, e, 1e-15));
        }

        let before = ws.read_weight();
        ws.mul_weight(&[1.0; 4]).unwrap();
        for (w, e) in ws.weight().iter().zip(before) {
            assert!(close(*w, e, 1e-15));
        }

        assert!(ws.set_weight(&[0.0; 4]).is_err());
        assert!(ws.mul_weight(&[1.0, -1.0, 1.0, 1.0]).is_err());
        assert!(ws.mul_weight(&[0.0; 4]).is_err());
    }

    #[test]
    fn ess_examples() {
        let mut ws = WeightSet::new(4).unwrap();
        assert!(close(ws.ess(), 4.0, 1e-12));
        ws.set_weight(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(close(ws.ess(), 1.0, 1e-12));
        let mut ws = WeightSet::new(3).unwrap();
        ws.set_weight(&[0.5, 0.25, 0.25]).unwrap();
        assert!(close(ws.ess(), 8.0 / 3.0, 1e-12));
    }

    #[test]
    fn read_round_trip() {
        let mut ws = WeightSet::new(2).unwrap();
        ws.set_log_weight(&[0.0, 0.0]).unwrap();
        for lw in ws.read_log_weight() {
            assert!(close(lw, -(2f64.ln()), 1e-15));
        }
        let mut ws = WeightSet::new(5).unwrap();
        ws.set_log_weight(&[0.1, -2.0, 3.0, 0.0, -0.5]).unwrap();
        let w = ws.read_weight();
        let lw = ws.read_log_weight();
        ws.set_log_weight(&lw).unwrap();
        for (a, b) in ws.weight().iter().zip(&w) {
            assert!(close(*a, *b, 1e-15));
        }
    }

    #[test]
    fn log_sum_exp_skips_neg_inf() {
        let v = [f64::NEG_INFINITY, 0.0, 0.0];
        assert!(close(log_sum_exp(v.iter().copied()), 2f64.ln(), 1e-15));
        let v = [f64::NEG_INFINITY; 2];
        assert_eq!(log_sum_exp(v.iter().copied()), f64::NEG_INFINITY);
    }
}
