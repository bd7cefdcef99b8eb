//! The particle system: values, weights and random streams.

use crate::error::{Result, SmcError};
use crate::resample::{replication_to_parents, ResampleScheme, Resampler};
use crate::rng::{RngSet, Stream};
use crate::state::{RowMut, RowsMut, SmpValue, Value};
use crate::weights::WeightSet;

pub const DEFAULT_SEED: u64 = 0x5EED;

/// Values, weights, one random stream per particle plus the global stream,
/// and the resampling scheme.
pub struct Particle<T> {
    value: T,
    weight_set: WeightSet,
    rng_set: RngSet,
    scheme: ResampleScheme,
    resampler: Resampler,
    counts: Vec<usize>,
    copy_from: Vec<usize>,
}

impl<T: Value> Particle<T> {
    pub fn new(n: usize, scheme: ResampleScheme, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(SmcError::EmptySystem);
        }
        Self::from_value(T::new(n), scheme, seed)
    }

    pub fn from_value(value: T, scheme: ResampleScheme, seed: u64) -> Result<Self> {
        let n = value.size();
        Ok(Particle {
            weight_set: WeightSet::new(n)?,
            rng_set: RngSet::new(seed, n),
            value,
            scheme,
            resampler: Resampler::new(),
            counts: vec![0; n],
            copy_from: (0..n).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.weight_set.size()
    }

    pub fn value(&self) -> &T {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut T {
        &mut self.value
    }

    pub fn weight_set(&self) -> &WeightSet {
        &self.weight_set
    }

    pub fn weight_set_mut(&mut self) -> &mut WeightSet {
        &mut self.weight_set
    }

    /// Simultaneous mutable access to the values and the weights.
    pub fn value_and_weights_mut(&mut self) -> (&mut T, &mut WeightSet) {
        (&mut self.value, &mut self.weight_set)
    }

    pub fn set_equal_weight(&mut self) {
        self.weight_set.set_equal_weight();
    }

    /// Stream of particle `i`; `i == size()` is the global stream.
    pub fn rng(&mut self, i: usize) -> Result<&mut Stream> {
        self.rng_set.stream(i)
    }

    pub fn rng_set(&self) -> &RngSet {
        &self.rng_set
    }

    /// Restarts every stream from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.rng_set = RngSet::new(seed, self.size());
    }

    pub fn resample_scheme(&self) -> ResampleScheme {
        self.scheme
    }

    pub fn set_resample_scheme(&mut self, scheme: ResampleScheme) {
        self.scheme = scheme;
    }

    /// Resamples when `ESS / N < threshold` (always when `threshold >= 1`),
    /// then resets to equal weights. Returns whether resampling happened.
    pub fn resample(&mut self, threshold: f64) -> Result<bool> {
        let n = self.size();
        let ess_over_n = self.weight_set.ess() / n as f64;
        if !(threshold >= 1.0 || ess_over_n < threshold) {
            return Ok(false);
        }
        if n > 1 {
            self.resampler.counts(
                self.scheme,
                self.weight_set.weight(),
                self.rng_set.global(),
                &mut self.counts,
            )?;
            replication_to_parents(&self.counts, &mut self.copy_from)?;
            self.value.copy(&self.copy_from)?;
        }
        self.weight_set.set_equal_weight();
        Ok(true)
    }

    /// Replication counts of the most recent resampling.
    pub fn last_counts(&self) -> &[usize] {
        &self.counts
    }

    /// Parent map of the most recent resampling.
    pub fn last_parents(&self) -> &[usize] {
        &self.copy_from
    }
}

pub(crate) struct KernelParts<'a, T: SmpValue> {
    pub rows: RowsMut<'a, T::Scalar>,
    pub streams: &'a mut [Stream],
    pub shared: &'a T::Shared,
    pub weights: &'a WeightSet,
}

impl<T: SmpValue> Particle<T> {
    /// A mutable view of particle `id`.
    pub fn sp(&mut self, id: usize) -> Result<SingleParticle<'_, T>> {
        let n = self.size();
        if id >= n {
            return Err(SmcError::OutOfRange { index: id, size: n });
        }
        let parts = self.kernel_parts();
        let (_, rest) = parts.rows.split_at(id);
        let mut rest = rest;
        let row = rest.next().expect("row in range");
        Ok(SingleParticle {
            id,
            row,
            rng: &mut parts.streams[id],
            shared: parts.shared,
            weights: parts.weights,
        })
    }

    /// A read-only view of particle `id`.
    pub fn csp(&self, id: usize) -> Result<ConstSingleParticle<'_, T>> {
        let n = self.size();
        if id >= n {
            return Err(SmcError::OutOfRange { index: id, size: n });
        }
        Ok(ConstSingleParticle { id, particle: self })
    }

    pub(crate) fn kernel_parts(&mut self) -> KernelParts<'_, T> {
        let (matrix, shared) = self.value.split_mut();
        KernelParts {
            rows: matrix.rows_mut(),
            streams: self.rng_set.particle_streams(),
            shared,
            weights: &self.weight_set,
        }
    }
}

/// One particle: mutable access to its own state and stream, read-only
/// access to the shared data and the weights.
pub struct SingleParticle<'a, T: SmpValue> {
    pub(crate) id: usize,
    pub(crate) row: RowMut<'a, T::Scalar>,
    pub(crate) rng: &'a mut Stream,
    pub(crate) shared: &'a T::Shared,
    pub(crate) weights: &'a WeightSet,
}

impl<'a, T: SmpValue> SingleParticle<'a, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn size(&self) -> usize {
        self.weights.size()
    }

    #[inline]
    pub fn state(&self, pos: usize) -> &T::Scalar {
        self.row.get(pos)
    }

    #[inline]
    pub fn state_mut(&mut self, pos: usize) -> &mut T::Scalar {
        self.row.get_mut(pos)
    }

    #[inline]
    pub fn rng(&mut self) -> &mut Stream {
        self.rng
    }

    /// State and stream at once, for kernels that draw into their state.
    #[inline]
    pub fn state_and_rng(&mut self, pos: usize) -> (&mut T::Scalar, &mut Stream) {
        (self.row.get_mut(pos), self.rng)
    }

    pub fn shared(&self) -> &'a T::Shared {
        self.shared
    }

    pub fn weight_set(&self) -> &'a WeightSet {
        self.weights
    }
}

/// Read-only view of one particle.
pub struct ConstSingleParticle<'a, T> {
    id: usize,
    particle: &'a Particle<T>,
}

impl<'a, T: SmpValue> ConstSingleParticle<'a, T> {
    pub(crate) fn new(id: usize, particle: &'a Particle<T>) -> Self {
        ConstSingleParticle { id, particle }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    #[inline]
    pub fn state(&self, pos: usize) -> &'a T::Scalar {
        self.particle.value.matrix().state(self.id, pos)
    }

    pub fn shared(&self) -> &'a T::Shared {
        self.particle.value.shared()
    }

    pub fn particle(&self) -> &'a Particle<T> {
        self.particle
    }
}
