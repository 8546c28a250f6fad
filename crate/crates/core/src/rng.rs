//! Seeded, stream-split random numbers.
//!
//! Every consumer derives its generator from a 64-bit seed plus a [`Stream`]
//! tag, so grid parameters, process noise and measurement noise never share a
//! sequence and can be regenerated independently.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Parameters,
    ProcessNoise,
    MeasurementNoise,
    /// Independent Monte Carlo trial `k`.
    Trial(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Parameters => 1,
            Stream::ProcessNoise => 2,
            Stream::MeasurementNoise => 3,
            Stream::Trial(k) => 1 << 32 | k,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitRng {
    inner: ChaCha12Rng,
    spare: Option<f64>,
}

impl SplitRng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream.id());
        Self { inner, spare: None }
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let bits = self.inner.next_u64() >> 11;
            if bits != 0 {
                return bits as f64 * (1.0 / (1u64 << 53) as f64);
            }
        }
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let r = (-2.0 * self.uniform().ln()).sqrt();
        let theta = std::f64::consts::TAU * self.uniform();
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
