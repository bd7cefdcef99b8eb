//! Counter-based random streams.
//!
//! Every particle owns one [`Stream`]; one extra stream (index `N`) is reserved
//! for sampler-global randomness such as resampling. A stream is Philox4x32-10
//! keyed by the 64-bit master seed, with the stream index in the upper half of
//! the 128-bit counter and a block counter in the lower half. Output is a pure
//! function of `(seed, index, position)`, so streams can be advanced from any
//! thread in any interleaving without changing what each one produces. Because
//! Philox is a bijection of the counter for a fixed key, two streams of the same
//! seed never produce the same 128-bit block.
//!
//! Variate generation is pinned:
//! - uniform: the top 53 bits of two consecutive 32-bit words (high word first);
//! - normal: Box–Muller, cosine branch only, exactly two uniforms per draw;
//! - gamma: Marsaglia–Tsang squeeze/rejection (constant `0.0331`), with the
//!   `U^(1/shape)` boost for `shape < 1`.

use crate::error::{Result, SmcError};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// The Philox4x32 block function with 10 rounds.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut ctr = counter;
    let mut key = key;
    for round in 0..10 {
        if round > 0 {
            key[0] = key[0].wrapping_add(PHILOX_W0);
            key[1] = key[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
    }
    ctr
}

/// One independent random stream.
#[derive(Clone, Debug)]
pub struct Stream {
    key: [u32; 2],
    index: u64,
    block: u64,
    buf: [u32; 4],
    pos: usize,
}

impl Stream {
    pub fn new(seed: u64, index: u64) -> Self {
        Stream {
            key: [seed as u32, (seed >> 32) as u32],
            index,
            block: 0,
            buf: [0; 4],
            pos: 4,
        }
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Number of 32-bit words consumed so far.
    pub fn words_consumed(&self) -> u64 {
        if self.pos == 4 && self.block == 0 {
            0
        } else {
            (self.block - 1) * 4 + self.pos as u64
        }
    }

    #[inline]
    pub fn next_u32(&mut self) -> u32 {
        if self.pos == 4 {
            let ctr = [
                self.block as u32,
                (self.block >> 32) as u32,
                self.index as u32,
                (self.index >> 32) as u32,
            ];
            self.buf = philox4x32_10(ctr, self.key);
            self.block = self.block.wrapping_add(1);
            self.pos = 0;
        }
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let hi = u64::from(self.next_u32());
        let lo = u64::from(self.next_u32());
        (hi << 32) | lo
    }

    /// Uniform variate in `[0, 1)`.
    #[inline]
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal variate (Box–Muller, two uniforms).
    #[inline]
    pub fn std_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform01();
        let u2 = self.uniform01();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// `N + 1` streams sharing a master seed.
#[derive(Clone, Debug)]
pub struct RngSet {
    seed: u64,
    streams: Vec<Stream>,
}

impl RngSet {
    /// Streams `0..n` belong to particles, stream `n` is the global one.
    pub fn new(seed: u64, n: usize) -> Self {
        RngSet {
            seed,
            streams: (0..=n as u64).map(|i| Stream::new(seed, i)).collect(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of particle streams (excluding the global stream).
    pub fn size(&self) -> usize {
        self.streams.len() - 1
    }

    pub fn stream(&mut self, i: usize) -> Result<&mut Stream> {
        let len = self.streams.len();
        self.streams
            .get_mut(i)
            .ok_or(SmcError::OutOfRange { index: i, size: len })
    }

    pub fn global(&mut self) -> &mut Stream {
        self.streams.last_mut().expect("rng set always has a global stream")
    }

    /// Particle streams as a mutable slice, indexed by particle id.
    pub fn particle_streams(&mut self) -> &mut [Stream] {
        let n = self.size();
        &mut self.streams[..n]
    }
}

/// Uniform variate in `[0, 1)`.
pub fn sample_uniform01(stream: &mut Stream) -> f64 {
    stream.uniform01()
}

pub fn sample_normal(stream: &mut Stream, mean: f64, sd: f64) -> Result<f64> {
    Ok(Normal::new(mean, sd)?.sample(stream))
}

pub fn sample_gamma(stream: &mut Stream, shape: f64, scale: f64) -> Result<f64> {
    Ok(Gamma::new(shape, scale)?.sample(stream))
}

#[derive(Clone, Copy, Debug)]
pub struct Normal {
    mean: f64,
    sd: f64,
}

impl Normal {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
            return Err(SmcError::InvalidParameter(format!(
                "normal distribution requires finite mean and sd > 0 (mean = {mean}, sd = {sd})"
            )));
        }
        Ok(Normal { mean, sd })
    }

    #[inline]
    pub fn sample(&self, stream: &mut Stream) -> f64 {
        self.mean + self.sd * stream.std_normal()
    }
}

/// Gamma distribution with `shape` and `scale` (mean `shape * scale`).
#[derive(Clone, Copy, Debug)]
pub struct Gamma {
    shape: f64,
    scale: f64,
}

impl Gamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
            return Err(SmcError::InvalidParameter(format!(
                "gamma distribution requires shape > 0 and scale > 0 (shape = {shape}, scale = {scale})"
            )));
        }
        Ok(Gamma { shape, scale })
    }

    pub fn sample(&self, stream: &mut Stream) -> f64 {
        if self.shape < 1.0 {
            let g = marsaglia_tsang(self.shape + 1.0, stream);
            let u = 1.0 - stream.uniform01();
            return g * u.powf(1.0 / self.shape) * self.scale;
        }
        marsaglia_tsang(self.shape, stream) * self.scale
    }
}

fn marsaglia_tsang(shape: f64, stream: &mut Stream) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = stream.std_normal();
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = 1.0 - stream.uniform01();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}
