//! Seeded random streams and per-qubit Pauli noise.

use crate::error::{Error, Result};
use crate::lattice::{CodeLayout, ErrorVector};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const INDEX_SALT: u64 = 0x6a09_e667_f3bc_c909;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A SplitMix64 stream.
///
/// `next_u64` adds the golden gamma `0x9e3779b97f4a7c15` to the state and
/// returns `mix64(state)`. Uniform reals take the top 53 bits:
/// `(x >> 11) * 2^-53`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Deterministic child stream for `(seed, index)`:
    /// `state = mix64(seed ^ mix64(index ^ 0x6a09e667f3bcc909))`.
    pub fn derive(seed: u64, index: u64) -> Self {
        Self {
            state: mix64(seed ^ mix64(index ^ INDEX_SALT)),
        }
    }

    /// Child stream keyed by the next draw of this stream and `index`.
    pub fn fork(&mut self, index: u64) -> Self {
        let seed = self.next_u64();
        Self::derive(seed, index)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Same as [`RngStream::derive`].
pub fn derive_stream(seed: u64, index: u64) -> RngStream {
    RngStream::derive(seed, index)
}

impl rand::RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (RngStream::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        RngStream::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = RngStream::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Single-qubit Pauli error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Z,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Depolarizing,
    Biased { eta: f64 },
}

/// Independent per-qubit Pauli channel with total error probability `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    p: f64,
}

impl NoiseModel {
    pub fn depolarizing(p: f64) -> Result<Self> {
        Self::check_p(p)?;
        Ok(Self {
            kind: NoiseKind::Depolarizing,
            p,
        })
    }

    pub fn biased(p: f64, eta: f64) -> Result<Self> {
        Self::check_p(p)?;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be > 0, got {eta}")));
        }
        Ok(Self {
            kind: NoiseKind::Biased { eta },
            p,
        })
    }

    fn check_p(p: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("p must lie in [0, 1], got {p}")));
        }
        Ok(())
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Bias parameter; depolarizing noise is the `eta = 1` case.
    pub fn eta(&self) -> f64 {
        match self.kind {
            NoiseKind::Depolarizing => 1.0,
            NoiseKind::Biased { eta } => eta,
        }
    }

    /// Same family at a different error probability.
    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::check_p(p)?;
        Ok(Self { kind: self.kind, p })
    }

    /// Probabilities in draw order `[I, X, Z, Y]`.
    pub fn category_probs(&self) -> [f64; 4] {
        let eta = self.eta();
        let flip = self.p / (eta + 2.0);
        let both = eta * self.p / (eta + 2.0);
        [1.0 - self.p, flip, flip, both]
    }

    /// Draws one Pauli from a single uniform variate against cumulative thresholds.
    pub fn sample_pauli(&self, rng: &mut RngStream) -> Pauli {
        let [pi, px, pz, _] = self.category_probs();
        let u = rng.uniform();
        if u < pi {
            Pauli::I
        } else if u < pi + px {
            Pauli::X
        } else if u < pi + px + pz {
            Pauli::Z
        } else {
            Pauli::Y
        }
    }

    /// Samples an error on every qubit of the layout.
    pub fn sample_error(&self, layout: &CodeLayout, rng: &mut RngStream) -> ErrorVector {
        let mut bits = vec![0u8; layout.error_len()];
        self.fill_error(layout.num_qubits(), rng, &mut bits);
        ErrorVector::from_bits(bits).expect("sampled bits are binary")
    }

    pub(crate) fn fill_error(&self, n: usize, rng: &mut RngStream, bits: &mut [u8]) {
        for q in 0..n {
            let (x, z) = match self.sample_pauli(rng) {
                Pauli::I => (0, 0),
                Pauli::X => (1, 0),
                Pauli::Z => (0, 1),
                Pauli::Y => (1, 1),
            };
            bits[q] = x;
            bits[n + q] = z;
        }
    }
}
