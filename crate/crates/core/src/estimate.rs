//! Monitors, path sampling and the normalizing constant estimate.

use crate::error::{Result, SmcError};
use crate::weights::{log_sum_exp, WeightSet};

/// Weighted sum `sum_i W_i * values[i * dim + j]` for each `j`, in index order.
pub fn weighted_sum(weights: &[f64], values: &[f64], dim: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (w, row) in weights.iter().zip(values.chunks_exact(dim)) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += w * v;
        }
    }
}

/// Per-iteration importance sampling estimates of a vector of integrands.
#[derive(Clone, Debug)]
pub struct MonitorRecord {
    dim: usize,
    index: Vec<usize>,
    record: Vec<f64>,
}

impl MonitorRecord {
    pub fn new(dim: usize) -> Self {
        MonitorRecord {
            dim,
            index: Vec::new(),
            record: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn clear(&mut self) {
        self.index.clear();
        self.record.clear();
    }

    pub fn push(&mut self, iter: usize, estimate: &[f64]) {
        debug_assert_eq!(estimate.len(), self.dim);
        self.index.push(iter);
        self.record.extend_from_slice(estimate);
    }

    /// Iterations at which an estimate was recorded.
    pub fn index(&self) -> &[usize] {
        &self.index
    }

    /// The estimate recorded at iteration `iter`.
    pub fn estimate(&self, iter: usize) -> Result<&[f64]> {
        let k = self
            .index
            .binary_search(&iter)
            .map_err(|_| SmcError::MissingRecord(iter))?;
        Ok(&self.record[k * self.dim..(k + 1) * self.dim])
    }

    /// Row-major `len() x dim()` matrix of estimates.
    pub fn record(&self) -> &[f64] {
        &self.record
    }
}

/// Path sampling: grid points `alpha_t` and integrand estimates `U_t`, with
/// the log normalizing constant by the trapezoid rule.
#[derive(Clone, Debug, Default)]
pub struct PathRecord {
    index: Vec<usize>,
    grid: Vec<f64>,
    integrand: Vec<f64>,
    log_zconst: f64,
}

impl PathRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.index.clear();
        self.grid.clear();
        self.integrand.clear();
        self.log_zconst = 0.0;
    }

    pub fn push(&mut self, iter: usize, grid: f64, integrand: f64) {
        if let (Some(&g), Some(&u)) = (self.grid.last(), self.integrand.last()) {
            self.log_zconst += 0.5 * (grid - g) * (integrand + u);
        }
        self.index.push(iter);
        self.grid.push(grid);
        self.integrand.push(integrand);
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn index(&self) -> &[usize] {
        &self.index
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn integrand(&self) -> &[f64] {
        &self.integrand
    }

    /// `(grid, integrand)` recorded at iteration `iter`.
    pub fn at(&self, iter: usize) -> Option<(f64, f64)> {
        let k = self.index.binary_search(&iter).ok()?;
        Some((self.grid[k], self.integrand[k]))
    }

    pub fn log_zconst(&self) -> f64 {
        self.log_zconst
    }
}

/// Running estimate of `log Z_t / Z_0` from incremental weights.
///
/// Each step adds `log sum_i W_i exp(incw_i)` where `W` are the normalized
/// weights before the increment.
#[derive(Clone, Debug, Default)]
pub struct NormalizingConstant {
    log_zconst: f64,
}

impl NormalizingConstant {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn initialize(&mut self) {
        self.log_zconst = 0.0;
    }

    pub fn add_log_weight(&mut self, incw: &[f64], weights: &WeightSet) -> Result<()> {
        if incw.len() != weights.size() {
            return Err(SmcError::LengthMismatch {
                expected: weights.size(),
                actual: incw.len(),
            });
        }
        if incw.iter().any(|v| v.is_nan()) {
            return Err(SmcError::Normalization("NaN incremental weight"));
        }
        let terms = weights
            .log_weight()
            .iter()
            .zip(incw)
            .map(|(lw, inc)| if *lw == f64::NEG_INFINITY { f64::NEG_INFINITY } else { lw + inc });
        self.log_zconst += log_sum_exp(terms);
        Ok(())
    }

    pub fn log_zconst(&self) -> f64 {
        self.log_zconst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_sum_by_component() {
        let w = [0.25, 0.75];
        let v = [1.0, 10.0, 3.0, 20.0];
        let mut out = [0.0; 2];
        weighted_sum(&w, &v, 2, &mut out);
        assert_eq!(out, [2.5, 17.5]);
    }

    #[test]
    fn monitor_record_lookup() {
        let mut m = MonitorRecord::new(2);
        m.push(0, &[1.0, 2.0]);
        m.push(1, &[3.0, 4.0]);
        assert_eq!(m.estimate(1).unwrap(), &[3.0, 4.0]);
        assert!(matches!(m.estimate(2), Err(SmcError::MissingRecord(2))));
        assert_eq!(m.len(), 2);
        m.clear();
        assert!(m.is_empty());
    }

    #[test]
    fn trapezoid_rule() {
        // integral of 2a over [0, 1] is exact under the trapezoid rule
        let mut p = PathRecord::new();
        for k in 0..=10 {
            let a = k as f64 / 10.0;
            p.push(k, a, 2.0 * a);
        }
        assert!((p.log_zconst() - 1.0).abs() < 1e-14);
        assert_eq!(p.at(3), Some((0.3, 0.6)));
        assert_eq!(p.at(11), None);
    }

    #[test]
    fn normalizing_constant_increments() {
        let mut ws = WeightSet::new(2).unwrap();
        ws.set_weight(&[0.25, 0.75]).unwrap();
        let mut z = NormalizingConstant::new();
        z.add_log_weight(&[0.0, 2f64.ln()], &ws).unwrap();
        assert!((z.log_zconst() - 1.75f64.ln()).abs() < 1e-15);

        ws.set_weight(&[1.0, 0.0]).unwrap();
        let mut z = NormalizingConstant::new();
        z.add_log_weight(&[0.5, f64::INFINITY], &ws).unwrap();
        assert!((z.log_zconst() - 0.5).abs() < 1e-15);
        assert!(z.add_log_weight(&[f64::NAN, 0.0], &ws).is_err());
        assert!(z.add_log_weight(&[0.0], &ws).is_err());
    }
}
