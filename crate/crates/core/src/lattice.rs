//! Toric-code combinatorics on an `L x L` torus.
//!
//! Qubits live on edges. With `i, j` in `[0, L)`:
//!
//! * horizontal edge `h(i, j) = i*L + j` joins vertices `(i, j)` and `(i, j+1)`
//! * vertical edge `v(i, j) = L^2 + i*L + j` joins vertices `(i, j)` and `(i+1, j)`
//!
//! An error vector has `4L^2` entries: the bit-flip (X) component of every qubit
//! followed by the phase-flip (Z) component. A syndrome has `2L^2` entries: the
//! vertex (X-type) stabilizers, which detect phase flips, followed by the
//! plaquette (Z-type) stabilizers, which detect bit flips. A syndrome bit of 1
//! means the stabilizer was triggered.

use crate::error::{check_len, Error, Result};

/// Incidence structure of the toric code at distance `L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeLayout {
    l: usize,
    x_stab_qubits: Vec<[usize; 4]>,
    z_stab_qubits: Vec<[usize; 4]>,
    logical_supports: LogicalSupports,
}

/// Qubit supports of the four logical loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalSupports {
    /// `{h(0, j)}`: Z-type loop, checked against the bit-flip block.
    pub z1: Vec<usize>,
    /// `{v(i, 0)}`: Z-type loop, checked against the bit-flip block.
    pub z2: Vec<usize>,
    /// `{v(0, j)}`: X-type loop, checked against the phase-flip block.
    pub x1: Vec<usize>,
    /// `{h(i, 0)}`: X-type loop, checked against the phase-flip block.
    pub x2: Vec<usize>,
}

impl CodeLayout {
    pub fn new(l: usize) -> Result<Self> {
        if l < 2 {
            return Err(Error::InvalidParameter(format!(
                "code distance must be >= 2, got {l}"
            )));
        }
        let h = |i: usize, j: usize| (i % l) * l + (j % l);
        let v = |i: usize, j: usize| l * l + (i % l) * l + (j % l);
        let mut x_stab_qubits = Vec::with_capacity(l * l);
        let mut z_stab_qubits = Vec::with_capacity(l * l);
        for i in 0..l {
            for j in 0..l {
                x_stab_qubits.push([h(i, j), h(i, j + l - 1), v(i, j), v(i + l - 1, j)]);
                z_stab_qubits.push([h(i, j), h(i + 1, j), v(i, j), v(i, j + 1)]);
            }
        }
        let logical_supports = LogicalSupports {
            z1: (0..l).map(|j| h(0, j)).collect(),
            z2: (0..l).map(|i| v(i, 0)).collect(),
            x1: (0..l).map(|j| v(0, j)).collect(),
            x2: (0..l).map(|i| h(i, 0)).collect(),
        };
        Ok(Self {
            l,
            x_stab_qubits,
            z_stab_qubits,
            logical_supports,
        })
    }

    /// Code distance.
    pub fn distance(&self) -> usize {
        self.l
    }

    pub fn num_qubits(&self) -> usize {
        2 * self.l * self.l
    }

    /// Length of an [`ErrorVector`], `4L^2`.
    pub fn error_len(&self) -> usize {
        4 * self.l * self.l
    }

    /// Length of a [`Syndrome`], `2L^2`.
    pub fn syndrome_len(&self) -> usize {
        2 * self.l * self.l
    }

    /// Qubits touched by each vertex stabilizer (indices into the phase-flip block).
    pub fn x_stab_qubits(&self) -> &[[usize; 4]] {
        &self.x_stab_qubits
    }

    /// Qubits touched by each plaquette stabilizer (indices into the bit-flip block).
    pub fn z_stab_qubits(&self) -> &[[usize; 4]] {
        &self.z_stab_qubits
    }

    pub fn logical_supports(&self) -> &LogicalSupports {
        &self.logical_supports
    }

    /// For every syndrome position, the four error-vector positions it sums over.
    pub fn syndrome_support(&self) -> Vec<[usize; 4]> {
        let n = self.num_qubits();
        self.x_stab_qubits
            .iter()
            .map(|q| q.map(|k| n + k))
            .chain(self.z_stab_qubits.iter().copied())
            .collect()
    }

    /// Error patterns of every stabilizer generator: bit flips on the support of
    /// each vertex stabilizer, then phase flips on the support of each plaquette.
    pub fn generator_patterns(&self) -> Vec<ErrorVector> {
        let n = self.num_qubits();
        let mut out = Vec::with_capacity(2 * self.l * self.l);
        for q in &self.x_stab_qubits {
            let mut bits = vec![0u8; 2 * n];
            for &k in q {
                bits[k] = 1;
            }
            out.push(ErrorVector(bits));
        }
        for q in &self.z_stab_qubits {
            let mut bits = vec![0u8; 2 * n];
            for &k in q {
                bits[n + k] = 1;
            }
            out.push(ErrorVector(bits));
        }
        out
    }

    /// Checks the structural invariants of the layout.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_qubits();
        for (name, stabs) in [("X", &self.x_stab_qubits), ("Z", &self.z_stab_qubits)] {
            let mut count = vec![0usize; n];
            for q in stabs.iter() {
                for a in 0..4 {
                    if q[a] >= n || q[a + 1..].contains(&q[a]) {
                        return Err(Error::InvalidParameter(format!(
                            "{name} stabilizer support {q:?} is not 4 distinct qubits"
                        )));
                    }
                    count[q[a]] += 1;
                }
            }
            if let Some(k) = count.iter().position(|&c| c != 2) {
                return Err(Error::InvalidParameter(format!(
                    "qubit {k} is in {} {name} stabilizers",
                    count[k]
                )));
            }
        }
        // Z-type loops must commute with vertex stabilizers, X-type loops with plaquettes.
        let ls = &self.logical_supports;
        for (support, stabs) in [
            (&ls.z1, &self.x_stab_qubits),
            (&ls.z2, &self.x_stab_qubits),
            (&ls.x1, &self.z_stab_qubits),
            (&ls.x2, &self.z_stab_qubits),
        ] {
            for q in stabs.iter() {
                let overlap = q.iter().filter(|k| support.contains(k)).count();
                if overlap % 2 != 0 {
                    return Err(Error::InvalidParameter(format!(
                        "logical support {support:?} anticommutes with stabilizer {q:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Binary syndrome measurement: each bit is the parity of its four error components.
    pub fn measure_syndrome(&self, e: &ErrorVector) -> Result<Syndrome> {
        check_len("error vector", e.len(), self.error_len())?;
        Ok(Syndrome(self.parities(e.bits())))
    }

    pub(crate) fn parities(&self, e: &[u8]) -> Vec<u8> {
        let n = self.num_qubits();
        let phase = &e[n..];
        let bit = &e[..n];
        self.x_stab_qubits
            .iter()
            .map(|q| q.iter().fold(0u8, |acc, &k| acc ^ phase[k]))
            .chain(
                self.z_stab_qubits
                    .iter()
                    .map(|q| q.iter().fold(0u8, |acc, &k| acc ^ bit[k])),
            )
            .collect()
    }

    /// Decides whether a residual error leaves the code state intact.
    pub fn classify_residual(&self, r: &ErrorVector) -> Result<Outcome> {
        check_len("residual", r.len(), self.error_len())?;
        Ok(self.classify_bits(r.bits()))
    }

    pub(crate) fn classify_bits(&self, r: &[u8]) -> Outcome {
        if self.parities(r).iter().any(|&b| b != 0) {
            return Outcome::SyndromeLeft;
        }
        let n = self.num_qubits();
        let parity = |block: &[u8], support: &[usize]| {
            support.iter().fold(0u8, |acc, &k| acc ^ block[k])
        };
        let ls = &self.logical_supports;
        let (bit, phase) = r.split_at(n);
        let odd = parity(bit, &ls.z1) | parity(bit, &ls.z2) | parity(phase, &ls.x1) | parity(phase, &ls.x2);
        if odd != 0 {
            Outcome::LogicalError
        } else {
            Outcome::Success
        }
    }
}

/// Result of applying a correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Success,
    SyndromeLeft,
    LogicalError,
}

impl Outcome {
    pub fn is_failure(self) -> bool {
        self != Outcome::Success
    }
}

macro_rules! binary_vector {
    ($name:ident, $what:literal) => {
        #[derive(Debug, Clone, PartialEq, Eq, Hash)]
        pub struct $name(Vec<u8>);

        impl $name {
            pub fn zeros(len: usize) -> Self {
                Self(vec![0; len])
            }

            /// Wraps raw bits, rejecting anything other than 0 or 1.
            pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
                if let Some(b) = bits.iter().find(|&&b| b > 1) {
                    return Err(Error::InvalidParameter(format!(
                        concat!($what, " entry {} is not binary"),
                        b
                    )));
                }
                Ok(Self(bits))
            }

            pub fn bits(&self) -> &[u8] {
                &self.0
            }

            pub fn into_bits(self) -> Vec<u8> {
                self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn is_zero(&self) -> bool {
                self.0.iter().all(|&b| b == 0)
            }

            pub fn weight(&self) -> usize {
                self.0.iter().filter(|&&b| b != 0).count()
            }

            pub fn to_f64(&self) -> Vec<f64> {
                self.0.iter().map(|&b| f64::from(b)).collect()
            }
        }
    };
}

binary_vector!(ErrorVector, "error vector");
binary_vector!(Syndrome, "syndrome");

impl ErrorVector {
    /// Elementwise XOR.
    pub fn xor(&self, other: &ErrorVector) -> Result<ErrorVector> {
        residual(self, other)
    }
}

/// Residual error after applying the correction `e_hat` to the error `e`.
pub fn residual(e: &ErrorVector, e_hat: &ErrorVector) -> Result<ErrorVector> {
    check_len("correction", e_hat.len(), e.len())?;
    Ok(ErrorVector(
        e.0.iter().zip(&e_hat.0).map(|(a, b)| a ^ b).collect(),
    ))
}
