//! Differentiating circuit outputs.
//!
//! [`backward_adjoint`] is the fast path: one reverse sweep that un-computes
//! the state gate by gate and returns every parameter gradient plus the
//! gradient with respect to the (real) input amplitudes.
//! [`parameter_shift_grad`] evaluates the two-point shift rule
//! `½·(L(θ+π/2) − L(θ−π/2))` and serves as the slow, independent check.
//!
//! Both work with a *loss adjoint* `g_q = ∂L/∂⟨Z_q⟩`, which keeps this module
//! agnostic of the loss function: the sweep differentiates the linear
//! functional `Σ_q g_q ⟨Z_q⟩`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevec::{ry_matrix, GateOp, PureState, C64};

/// How each qubit is rotated inside a layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationKind {
    /// `RZ·RY·RZ`, three angles.
    #[default]
    Euler,
    /// `RY` only, one angle.
    Ry,
}

impl RotationKind {
    pub fn angles_per_qubit(self) -> usize {
        match self {
            RotationKind::Euler => 3,
            RotationKind::Ry => 1,
        }
    }
}

/// CZ placement after each rotation layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Entangler {
    /// Pairs `(q, q+1 mod n)`.
    #[default]
    Ring,
    /// Pairs `(q, q+1)` without closing the loop.
    Chain,
}

impl Entangler {
    pub fn pairs(self, n_qubits: usize) -> Vec<(usize, usize)> {
        let mut pairs: Vec<_> = (0..n_qubits.saturating_sub(1)).map(|q| (q, q + 1)).collect();
        // On two qubits the closing pair would repeat (0, 1) and cancel it.
        if self == Entangler::Ring && n_qubits > 2 {
            pairs.push((n_qubits - 1, 0));
        }
        pairs
    }
}

/// One tape entry. Parameterized entries carry flat indices into the
/// parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapeOp {
    /// `RZ(p[2])·RY(p[1])·RZ(p[0])`.
    Rot { qubit: usize, params: [usize; 3] },
    Ry { qubit: usize, param: usize },
    Rz { qubit: usize, param: usize },
    Cz { control: usize, target: usize },
}

/// Where a flat parameter lives in the layered layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamSlot {
    pub layer: usize,
    pub qubit: usize,
    pub angle: usize,
}

/// An ordered gate list with symbolic parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitTape {
    n_qubits: usize,
    ops: Vec<TapeOp>,
    slots: Vec<ParamSlot>,
}

impl CircuitTape {
    /// `n_layers` repetitions of (rotate every qubit, then entangle).
    /// Parameters are laid out `[layer][qubit][angle]`.
    pub fn layered(
        n_qubits: usize,
        n_layers: usize,
        rotation: RotationKind,
        entangler: Entangler,
    ) -> Self {
        let per = rotation.angles_per_qubit();
        let mut ops = Vec::new();
        let mut slots = Vec::new();
        for layer in 0..n_layers {
            for qubit in 0..n_qubits {
                let base = slots.len();
                for angle in 0..per {
                    slots.push(ParamSlot { layer, qubit, angle });
                }
                ops.push(match rotation {
                    RotationKind::Euler => TapeOp::Rot {
                        qubit,
                        params: [base, base + 1, base + 2],
                    },
                    RotationKind::Ry => TapeOp::Ry { qubit, param: base },
                });
            }
            for (control, target) in entangler.pairs(n_qubits) {
                ops.push(TapeOp::Cz { control, target });
            }
        }
        CircuitTape {
            n_qubits,
            ops,
            slots,
        }
    }

    /// Builds a tape from explicit ops. Every parameter index in
    /// `0..n_params` must be used exactly once.
    pub fn from_ops(n_qubits: usize, ops: Vec<TapeOp>) -> Result<Self> {
        let mut seen: Vec<Option<ParamSlot>> = Vec::new();
        for (pos, op) in ops.iter().enumerate() {
            let (qubits, params): (Vec<usize>, Vec<usize>) = match *op {
                TapeOp::Rot { qubit, params } => (vec![qubit], params.to_vec()),
                TapeOp::Ry { qubit, param } | TapeOp::Rz { qubit, param } => {
                    (vec![qubit], vec![param])
                }
                TapeOp::Cz { control, target } => {
                    if control == target {
                        return Err(Error::SameQubit(control));
                    }
                    (vec![control, target], vec![])
                }
            };
            for q in qubits {
                if q >= n_qubits {
                    return Err(Error::QubitOutOfRange { qubit: q, n_qubits });
                }
            }
            for (angle, p) in params.into_iter().enumerate() {
                if seen.len() <= p {
                    seen.resize(p + 1, None);
                }
                if seen[p].is_some() {
                    return Err(Error::InvalidConfig(format!("parameter {p} used twice")));
                }
                let qubit = match *op {
                    TapeOp::Rot { qubit, .. } | TapeOp::Ry { qubit, .. } | TapeOp::Rz { qubit, .. } => qubit,
                    TapeOp::Cz { .. } => unreachable!(),
                };
                seen[p] = Some(ParamSlot { layer: pos, qubit, angle });
            }
        }
        let slots = seen
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::InvalidConfig(format!("parameter {i} unused"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(CircuitTape {
            n_qubits,
            ops,
            slots,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.slots.len()
    }

    pub fn ops(&self) -> &[TapeOp] {
        &self.ops
    }

    pub fn slot(&self, index: usize) -> Option<ParamSlot> {
        self.slots.get(index).copied()
    }

    /// Concrete gate for each tape entry under `params`.
    pub fn gate(&self, op: &TapeOp, params: &[f64]) -> GateOp {
        match *op {
            TapeOp::Rot { qubit, params: [a, b, c] } => GateOp::Rot {
                qubit,
                a: params[a],
                b: params[b],
                c: params[c],
            },
            TapeOp::Ry { qubit, param } => GateOp::Ry { qubit, theta: params[param] },
            TapeOp::Rz { qubit, param } => GateOp::Rz { qubit, theta: params[param] },
            TapeOp::Cz { control, target } => GateOp::Cz { control, target },
        }
    }

    fn check_inputs(&self, params: &[f64], state: &PureState) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "tape has {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        if state.n_qubits() != self.n_qubits {
            return Err(Error::ShapeMismatch(format!(
                "tape acts on {} qubits, state has {}",
                self.n_qubits,
                state.n_qubits()
            )));
        }
        Ok(())
    }

    /// Runs the circuit on `state` in place.
    pub fn run(&self, params: &[f64], state: &mut PureState) -> Result<()> {
        self.check_inputs(params, state)?;
        for op in &self.ops {
            state.apply(&self.gate(op, params))?;
        }
        Ok(())
    }
}

/// Everything [`backward_adjoint`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<'a> {
    tape: &'a CircuitTape,
    params: &'a [f64],
    final_state: PureState,
}

impl ForwardCache<'_> {
    pub fn final_state(&self) -> &PureState {
        &self.final_state
    }
}

/// Parameter gradients and the gradient w.r.t. the real parts of the input
/// amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub d_params: Vec<f64>,
    pub d_input: Vec<f64>,
}

/// Runs the tape and returns `⟨Z_q⟩` for every qubit.
pub fn forward<'a>(
    tape: &'a CircuitTape,
    params: &'a [f64],
    state_in: &PureState,
) -> Result<(Vec<f64>, ForwardCache<'a>)> {
    let mut state = state_in.clone();
    tape.run(params, &mut state)?;
    let expectations = state.expect_z_all();
    Ok((
        expectations,
        ForwardCache {
            tape,
            params,
            final_state: state,
        },
    ))
}

/// Reverse sweep for the functional `Σ_q d_expectations[q]·⟨Z_q⟩`.
///
/// Walking the tape backwards, `ψ` is un-computed and the adjoint state
/// `λ = U_{k+1}†…U_K† H ψ_K` (with `H = Σ g_q Z_q`) is propagated alongside.
/// A gate `exp(−iθG/2)` contributes `∂L/∂θ = Im⟨λ|G|ψ_k⟩`; at the input,
/// `∂L/∂Re(ψ_0) = 2·Re(λ_0)`.
pub fn backward_adjoint(cache: &ForwardCache<'_>, d_expectations: &[f64]) -> Result<GradientBundle> {
    let tape = cache.tape;
    let n = tape.n_qubits();
    if d_expectations.len() != n {
        return Err(Error::CacheMismatch(format!(
            "{} loss adjoints for a {n}-qubit forward pass",
            d_expectations.len()
        )));
    }
    let params = cache.params;
    let mut psi = cache.final_state.clone();
    let mut lambda = psi.clone();
    for (i, a) in lambda.amplitudes_mut().iter_mut().enumerate() {
        let h: f64 = d_expectations
            .iter()
            .enumerate()
            .map(|(q, g)| if i & (1 << (n - 1 - q)) == 0 { *g } else { -*g })
            .sum();
        *a *= h;
    }

    let mut d_params = vec![0.0; tape.n_params()];
    for op in tape.ops().iter().rev() {
        match *op {
            TapeOp::Cz { control, target } => {
                psi.apply_cz(control, target)?;
                lambda.apply_cz(control, target)?;
            }
            TapeOp::Ry { qubit, param } => {
                d_params[param] += im_y(&lambda, &psi, qubit);
                unapply_ry(&mut psi, &mut lambda, qubit, params[param]);
            }
            TapeOp::Rz { qubit, param } => {
                d_params[param] += im_z(&lambda, &psi, qubit);
                unapply_rz(&mut psi, &mut lambda, qubit, params[param]);
            }
            TapeOp::Rot { qubit, params: [a, b, c] } => {
                d_params[c] += im_z(&lambda, &psi, qubit);
                unapply_rz(&mut psi, &mut lambda, qubit, params[c]);
                d_params[b] += im_y(&lambda, &psi, qubit);
                unapply_ry(&mut psi, &mut lambda, qubit, params[b]);
                d_params[a] += im_z(&lambda, &psi, qubit);
                unapply_rz(&mut psi, &mut lambda, qubit, params[a]);
            }
        }
    }
    let d_input = lambda.amplitudes().iter().map(|l| 2.0 * l.re).collect();
    Ok(GradientBundle { d_params, d_input })
}

fn unapply_ry(psi: &mut PureState, lambda: &mut PureState, qubit: usize, theta: f64) {
    let m = ry_matrix(-theta);
    psi.apply_matrix(qubit, &m);
    lambda.apply_matrix(qubit, &m);
}

fn unapply_rz(psi: &mut PureState, lambda: &mut PureState, qubit: usize, theta: f64) {
    psi.apply_rz_unchecked(qubit, -theta);
    lambda.apply_rz_unchecked(qubit, -theta);
}

/// `Im⟨λ|Z_q|ψ⟩`.
fn im_z(lambda: &PureState, psi: &PureState, qubit: usize) -> f64 {
    let mask = psi.mask(qubit);
    lambda
        .amplitudes()
        .iter()
        .zip(psi.amplitudes())
        .enumerate()
        .map(|(i, (l, p))| {
            let v = (l.conj() * p).im;
            if i & mask == 0 {
                v
            } else {
                -v
            }
        })
        .sum()
}

/// `Im⟨λ|Y_q|ψ⟩`, with `Y|0⟩ = i|1⟩`, `Y|1⟩ = −i|0⟩`.
fn im_y(lambda: &PureState, psi: &PureState, qubit: usize) -> f64 {
    let stride = psi.mask(qubit);
    let (l, p) = (lambda.amplitudes(), psi.amplitudes());
    let minus_i = C64::new(0.0, -1.0);
    let mut acc = C64::new(0.0, 0.0);
    for base in (0..p.len()).step_by(2 * stride) {
        for i in base..base + stride {
            let j = i + stride;
            acc += l[i].conj() * (minus_i * p[j]) - l[j].conj() * (minus_i * p[i]);
        }
    }
    acc.im
}

/// `Σ_q g_q⟨Z_q⟩` after running the tape.
fn linear_objective(
    tape: &CircuitTape,
    params: &[f64],
    state_in: &PureState,
    d_expectations: &[f64],
) -> Result<f64> {
    let mut state = state_in.clone();
    tape.run(params, &mut state)?;
    Ok(state
        .expect_z_all()
        .iter()
        .zip(d_expectations)
        .map(|(e, g)| e * g)
        .sum())
}

/// Two-term shift rule for parameter `index` of `Σ_q g_q⟨Z_q⟩`.
pub fn parameter_shift_grad(
    tape: &CircuitTape,
    params: &[f64],
    state_in: &PureState,
    d_expectations: &[f64],
    index: usize,
) -> Result<f64> {
    if index >= tape.n_params() {
        return Err(Error::IndexOutOfRange {
            index,
            count: tape.n_params(),
        });
    }
    if d_expectations.len() != tape.n_qubits() {
        return Err(Error::ShapeMismatch(format!(
            "{} loss adjoints for {} qubits",
            d_expectations.len(),
            tape.n_qubits()
        )));
    }
    let mut shifted = params.to_vec();
    shifted[index] = params[index] + FRAC_PI_2;
    let plus = linear_objective(tape, &shifted, state_in, d_expectations)?;
    shifted[index] = params[index] - FRAC_PI_2;
    let minus = linear_objective(tape, &shifted, state_in, d_expectations)?;
    Ok(0.5 * (plus - minus))
}

/// Shift-rule gradient for every parameter.
pub fn parameter_shift_all(
    tape: &CircuitTape,
    params: &[f64],
    state_in: &PureState,
    d_expectations: &[f64],
) -> Result<Vec<f64>> {
    (0..tape.n_params())
        .map(|i| parameter_shift_grad(tape, params, state_in, d_expectations, i))
        .collect()
}

/// Chains an amplitude gradient through `ψ = v/‖v‖` back to the raw
/// pixels `v`: `∇_v L = (I − ψψᵀ)·∇_ψ L / ‖v‖`, restricted to the live
/// (non-padding) coordinates.
pub fn pixel_gradient(d_input_amplitudes: &[f64], pixels: &[f64]) -> Result<Vec<f64>> {
    if d_input_amplitudes.len() < pixels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} amplitude gradients for {} pixels",
            d_input_amplitudes.len(),
            pixels.len()
        )));
    }
    let norm = pixels.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let radial: f64 = pixels
        .iter()
        .zip(d_input_amplitudes)
        .map(|(v, g)| v / norm * g)
        .sum();
    Ok(pixels
        .iter()
        .zip(d_input_amplitudes)
        .map(|(v, g)| (g - v / norm * radial) / norm)
        .collect())
}
