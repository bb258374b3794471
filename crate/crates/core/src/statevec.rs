//! Pure-state register simulation.
//!
//! Basis index bit convention: qubit 0 is the most significant bit of the
//! amplitude index, so on 10 qubits `|i⟩` stores pixel `i` and qubit 0
//! distinguishes the first half of the image from the second.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// A 2×2 complex matrix, row-major.
pub type Mat2 = [[C64; 2]; 2];

/// Single- and two-qubit gates. Angles are radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateOp {
    /// `RZ(c)·RY(b)·RZ(a)` on one qubit.
    Rot { qubit: usize, a: f64, b: f64, c: f64 },
    Ry { qubit: usize, theta: f64 },
    Rz { qubit: usize, theta: f64 },
    Cz { control: usize, target: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    n_qubits: usize,
    amplitudes: Vec<C64>,
}

pub const NORM_TOLERANCE: f64 = 1e-10;

impl PureState {
    /// `|0…0⟩` on `n_qubits`.
    pub fn zero(n_qubits: usize) -> Self {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut amplitudes = vec![C64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[index] = C64::new(1.0, 0.0);
        PureState {
            n_qubits,
            amplitudes,
        }
    }

    /// Wraps raw amplitudes; the length must be a power of two and the
    /// vector must already be normalized.
    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self> {
        let len = amplitudes.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::ShapeMismatch(format!(
                "{len} amplitudes is not a power of two"
            )));
        }
        let state = PureState {
            n_qubits: len.trailing_zeros() as usize,
            amplitudes,
        };
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "state is not normalized (|ψ|² = {norm})"
            )));
        }
        Ok(state)
    }

    /// Amplitude encoding: `values` fill basis states `|0⟩, |1⟩, …`, the tail
    /// up to `2^n` is zero-padded and the vector is scaled to unit norm.
    pub fn amplitude_encode(values: &[f64], n_qubits: usize) -> Result<Self> {
        let dim = 1usize << n_qubits;
        if values.len() > dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not fit in {n_qubits} qubits",
                values.len()
            )));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        let mut amplitudes = vec![C64::new(0.0, 0.0); dim];
        for (a, &v) in amplitudes.iter_mut().zip(values) {
            a.re = v / norm;
        }
        Ok(PureState {
            n_qubits,
            amplitudes,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &PureState) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub(crate) fn mask(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.n_qubits {
            return Err(Error::QubitOutOfRange {
                qubit,
                n_qubits: self.n_qubits,
            });
        }
        Ok(())
    }

    pub fn apply(&mut self, gate: &GateOp) -> Result<()> {
        match *gate {
            GateOp::Rot { qubit, a, b, c } => self.apply_rot(qubit, a, b, c),
            GateOp::Ry { qubit, theta } => {
                self.check_qubit(qubit)?;
                self.apply_matrix(qubit, &ry_matrix(theta));
                Ok(())
            }
            GateOp::Rz { qubit, theta } => {
                self.check_qubit(qubit)?;
                self.apply_rz_unchecked(qubit, theta);
                Ok(())
            }
            GateOp::Cz { control, target } => self.apply_cz(control, target),
        }
    }

    /// Applies `RZ(c)·RY(b)·RZ(a)` to `qubit`.
    pub fn apply_rot(&mut self, qubit: usize, a: f64, b: f64, c: f64) -> Result<()> {
        self.check_qubit(qubit)?;
        self.apply_matrix(qubit, &rot_matrix(a, b, c));
        Ok(())
    }

    /// Negates every amplitude whose index has both qubits set.
    pub fn apply_cz(&mut self, q1: usize, q2: usize) -> Result<()> {
        self.check_qubit(q1)?;
        self.check_qubit(q2)?;
        if q1 == q2 {
            return Err(Error::SameQubit(q1));
        }
        let both = self.mask(q1) | self.mask(q2);
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            if i & both == both {
                *a = -*a;
            }
        }
        Ok(())
    }

    /// Applies an arbitrary 2×2 matrix to `qubit`. No range check.
    pub(crate) fn apply_matrix(&mut self, qubit: usize, m: &Mat2) {
        let stride = self.mask(qubit);
        let amps = &mut self.amplitudes;
        for base in (0..amps.len()).step_by(2 * stride) {
            for i in base..base + stride {
                let (a0, a1) = (amps[i], amps[i + stride]);
                amps[i] = m[0][0] * a0 + m[0][1] * a1;
                amps[i + stride] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    pub(crate) fn apply_rz_unchecked(&mut self, qubit: usize, theta: f64) {
        let mask = self.mask(qubit);
        let (lo, hi) = rz_phases(theta);
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            *a *= if i & mask == 0 { lo } else { hi };
        }
    }

    /// `⟨Z_qubit⟩ = Σ_{bit=0}|ψ_i|² − Σ_{bit=1}|ψ_i|²`.
    pub fn expect_z(&self, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        let mask = self.mask(qubit);
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let p = a.norm_sqr();
                if i & mask == 0 {
                    p
                } else {
                    -p
                }
            })
            .sum())
    }

    /// `⟨Z_q⟩` for every qubit in one pass.
    pub fn expect_z_all(&self) -> Vec<f64> {
        let n = self.n_qubits;
        let mut out = vec![0.0; n];
        for (i, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            for (q, e) in out.iter_mut().enumerate() {
                if i & (1 << (n - 1 - q)) == 0 {
                    *e += p;
                } else {
                    *e -= p;
                }
            }
        }
        out
    }
}

/// `(e^{-iθ/2}, e^{iθ/2})`, the diagonal of `RZ(θ)`.
fn rz_phases(theta: f64) -> (C64, C64) {
    let (s, c) = (theta / 2.0).sin_cos();
    (C64::new(c, -s), C64::new(c, s))
}

pub fn ry_matrix(theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [C64::new(c, 0.0), C64::new(-s, 0.0)],
        [C64::new(s, 0.0), C64::new(c, 0.0)],
    ]
}

pub fn rz_matrix(theta: f64) -> Mat2 {
    let (lo, hi) = rz_phases(theta);
    let z = C64::new(0.0, 0.0);
    [[lo, z], [z, hi]]
}

pub fn matmul2(x: &Mat2, y: &Mat2) -> Mat2 {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = x[r][0] * y[0][c] + x[r][1] * y[1][c];
        }
    }
    out
}

/// `RZ(c)·RY(b)·RZ(a)`.
pub fn rot_matrix(a: f64, b: f64, c: f64) -> Mat2 {
    matmul2(&rz_matrix(c), &matmul2(&ry_matrix(b), &rz_matrix(a)))
}
