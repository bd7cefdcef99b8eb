//! Resampling: normalized weights to replication counts to a parent map.
//!
//! Every scheme produces counts `R_i >= 0` with `sum R_i == N` and
//! `E[R_i] == N * W_i`. Randomness comes only from the stream passed in.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SmcError};
use crate::rng::Stream;

/// Tolerance on `|sum W - 1|` accepted as "normalized".
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ResampleScheme {
    Multinomial,
    Residual,
    #[default]
    Stratified,
    Systematic,
}

impl ResampleScheme {
    pub const ALL: [ResampleScheme; 4] = [
        ResampleScheme::Multinomial,
        ResampleScheme::Residual,
        ResampleScheme::Stratified,
        ResampleScheme::Systematic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResampleScheme::Multinomial => "multinomial",
            ResampleScheme::Residual => "residual",
            ResampleScheme::Stratified => "stratified",
            ResampleScheme::Systematic => "systematic",
        }
    }
}

impl fmt::Display for ResampleScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResampleScheme {
    type Err = SmcError;

    fn from_str(s: &str) -> Result<Self> {
        ResampleScheme::ALL
            .into_iter()
            .find(|scheme| scheme.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SmcError::InvalidParameter(format!("unknown resampling scheme `{s}`")))
    }
}

/// Resampling with reusable scratch buffers.
#[derive(Clone, Debug, Default)]
pub struct Resampler {
    cumsum: Vec<f64>,
    residual: Vec<f64>,
}

impl Resampler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Writes replication counts for `weights` into `counts` (same length).
    pub fn counts(
        &mut self,
        scheme: ResampleScheme,
        weights: &[f64],
        rng: &mut Stream,
        counts: &mut [usize],
    ) -> Result<()> {
        check_normalized(weights)?;
        if counts.len() != weights.len() {
            return Err(SmcError::LengthMismatch {
                expected: weights.len(),
                actual: counts.len(),
            });
        }
        counts.fill(0);
        let n = weights.len();
        match scheme {
            ResampleScheme::Multinomial => {
                multinomial_into(weights, n, rng, &mut self.cumsum, counts);
            }
            ResampleScheme::Stratified => {
                scaled_cumsum(weights, n, &mut self.cumsum);
                sweep(&self.cumsum, counts, |_| rng.uniform01());
            }
            ResampleScheme::Systematic => {
                scaled_cumsum(weights, n, &mut self.cumsum);
                let u = rng.uniform01();
                sweep(&self.cumsum, counts, |_| u);
            }
            ResampleScheme::Residual => {
                let total = neumaier_sum(weights);
                let scale = n as f64 / total;
                self.residual.clear();
                let mut assigned = 0;
                for (c, &w) in counts.iter_mut().zip(weights) {
                    let s = snap(w * scale);
                    let whole = s.floor();
                    *c = whole as usize;
                    assigned += *c;
                    self.residual.push(s - whole);
                }
                let remaining = n.saturating_sub(assigned);
                if remaining > 0 {
                    multinomial_into(&self.residual, remaining, rng, &mut self.cumsum, counts);
                }
            }
        }
        Ok(())
    }
}

fn check_normalized(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(SmcError::EmptySystem);
    }
    let mut sum = 0.0;
    for &w in weights {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(SmcError::Normalization(
                "resampling requires finite non-negative weights",
            ));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(SmcError::Normalization("resampling requires normalized weights"));
    }
    Ok(())
}

fn neumaier_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

// Values within accumulated rounding error of an integer are snapped onto it,
// so that cumulative boundaries of exactly equal weights land on the strata.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 64.0 * f64::EPSILON * x.abs().max(1.0) {
        r
    } else {
        x
    }
}

// Cumulative sums of `n * W_i` (compensated, then snapped); the last entry is
// exactly `n`.
fn scaled_cumsum(weights: &[f64], n: usize, out: &mut Vec<f64>) {
    let scale = n as f64 / neumaier_sum(weights);
    out.clear();
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &w in weights {
        let v = w * scale;
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
        out.push(snap(sum + comp));
    }
    if let Some(last) = out.last_mut() {
        *last = n as f64;
    }
}

// Assigns the positions `k + offset(k)`, k = 0..n, offsets in [0, 1), to the
// cells `[S_{i-1}, S_i)` of the cumulative sums. Comparing `S_i - k` with the
// offset avoids rounding `k + offset` up onto the next integer.
fn sweep(cumsum: &[f64], counts: &mut [usize], mut offset: impl FnMut(usize) -> f64) {
    let n = counts.len();
    let last = last_positive(cumsum);
    let mut i = 0;
    for k in 0..n {
        let u = offset(k);
        let k = k as f64;
        while i < last && cumsum[i] - k <= u {
            i += 1;
        }
        counts[i] += 1;
    }
}

// Index of the last cell with non-zero width.
fn last_positive(cumsum: &[f64]) -> usize {
    let mut prev = 0.0;
    let mut last = 0;
    for (i, &c) in cumsum.iter().enumerate() {
        if c > prev {
            last = i;
        }
        prev = c;
    }
    last
}

// Adds `draws` multinomial draws from the (unnormalized) `weights` to `counts`.
fn multinomial_into(
    weights: &[f64],
    draws: usize,
    rng: &mut Stream,
    cumsum: &mut Vec<f64>,
    counts: &mut [usize],
) {
    cumsum.clear();
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in weights {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
        cumsum.push(sum + comp);
    }
    let total = *cumsum.last().expect("non-empty weights");
    let last = last_positive(cumsum);
    for _ in 0..draws {
        let x = rng.uniform01() * total;
        let i = cumsum.partition_point(|&c| c <= x).min(last);
        counts[i] += 1;
    }
}

pub fn resample_counts(
    scheme: ResampleScheme,
    weights: &[f64],
    rng: &mut Stream,
) -> Result<Vec<usize>> {
    let mut counts = vec![0; weights.len()];
    Resampler::new().counts(scheme, weights, rng, &mut counts)?;
    Ok(counts)
}

pub fn resample_multinomial(weights: &[f64], rng: &mut Stream) -> Result<Vec<usize>> {
    resample_counts(ResampleScheme::Multinomial, weights, rng)
}

pub fn resample_stratified(weights: &[f64], rng: &mut Stream) -> Result<Vec<usize>> {
    resample_counts(ResampleScheme::Stratified, weights, rng)
}

pub fn resample_systematic(weights: &[f64], rng: &mut Stream) -> Result<Vec<usize>> {
    resample_counts(ResampleScheme::Systematic, weights, rng)
}

pub fn resample_residual(weights: &[f64], rng: &mut Stream) -> Result<Vec<usize>> {
    resample_counts(ResampleScheme::Residual, weights, rng)
}

/// Turns replication counts into a parent map.
///
/// A particle with a non-zero count is its own parent. Every particle with a
/// zero count takes, in ascending order, the lowest-indexed parent that still
/// has surplus children.
pub fn replication_to_parents(counts: &[usize], copy_from: &mut [usize]) -> Result<()> {
    let n = counts.len();
    if copy_from.len() != n {
        return Err(SmcError::LengthMismatch {
            expected: n,
            actual: copy_from.len(),
        });
    }
    let sum: usize = counts.iter().sum();
    if sum != n {
        return Err(SmcError::CountSum { sum, expected: n });
    }
    let surplus = |c: usize| c.saturating_sub(1);
    let mut from = 0;
    let mut left = counts.first().copied().map_or(0, surplus);
    for to in 0..n {
        if counts[to] != 0 {
            copy_from[to] = to;
            continue;
        }
        while left == 0 {
            from += 1;
            left = surplus(counts[from]);
        }
        copy_from[to] = from;
        left -= 1;
    }
    Ok(())
}

pub fn parents(counts: &[usize]) -> Result<Vec<usize>> {
    let mut copy_from = vec![0; counts.len()];
    replication_to_parents(counts, &mut copy_from)?;
    Ok(copy_from)
}
