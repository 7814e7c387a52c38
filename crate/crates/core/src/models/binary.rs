use std::sync::OnceLock;

use super::circuit::{Axis, Circuit};
use super::{ModelError, ParamSet};
use crate::encoding::{amplitude_state, Defense, EncodingError, SteeredPlane};
use crate::grad::{cross_entropy, Trainable};
use crate::qstate::{CMatrix, GateOp, PureState, State, C64};

const READOUT: usize = 7;

fn conv_block(c: &mut Circuit, a: usize, b: usize) {
    c.rot(Axis::Y, a);
    c.rot(Axis::Y, b);
    c.fixed(GateOp::cnot(a, b));
    c.rot(Axis::Y, b);
}

fn pool_block(c: &mut Circuit, control: usize, target: usize) {
    c.rot(Axis::Y, control);
    c.fixed(GateOp::cnot(control, target));
    c.rot(Axis::Y, target);
    c.fixed(GateOp::cnot(control, target));
    c.rot(Axis::Y, target);
}

/// Three conv/pool stages over qubits `0..8 → {1,3,5,7} → {3,7}`, ending on
/// qubit 7. Conv blocks: 8 + 4 + 4; pool blocks: 4 + 2 + 2; three angles
/// each, 72 in all.
pub fn qcnn_circuit() -> Circuit {
    let mut c = Circuit::new(8);
    for q in 0..8 {
        conv_block(&mut c, q, (q + 1) % 8);
    }
    for q in [0, 2, 4, 6] {
        pool_block(&mut c, q, q + 1);
    }
    let active = [1, 3, 5, 7];
    for i in 0..4 {
        conv_block(&mut c, active[i], active[(i + 1) % 4]);
    }
    pool_block(&mut c, 1, 3);
    pool_block(&mut c, 5, 7);
    for (a, b) in [(3, 7), (7, 3), (3, 7), (7, 3)] {
        conv_block(&mut c, a, b);
    }
    pool_block(&mut c, 3, 7);
    pool_block(&mut c, 3, 7);
    c
}

/// Strongly entangling layers: `R_z R_y R_z` on every qubit, then CNOTs
/// from `i` to `i + r (mod 8)` with range `r = l mod 7 + 1`. Parameter
/// `l·24 + i·3 + k` is the `k`-th rotation on qubit `i` in layer `l`.
pub fn vqc_circuit(layers: usize) -> Circuit {
    let n = 8;
    let mut c = Circuit::new(n);
    for l in 0..layers {
        for q in 0..n {
            c.rot(Axis::Z, q);
            c.rot(Axis::Y, q);
            c.rot(Axis::Z, q);
        }
        let r = l % (n - 1) + 1;
        for q in 0..n {
            c.fixed(GateOp::cnot(q, (q + r) % n));
        }
    }
    c
}

pub(super) struct Binary {
    circuit: Circuit,
    theta: Vec<f64>,
    observable: OnceLock<CMatrix>,
    quadratic: OnceLock<Vec<f64>>,
}

/// `Σ_i conj(a_i) z_i b_i` for `Z` on the readout qubit.
fn z_form(a: &[C64], b: &[C64]) -> C64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| {
            let v = x.conj() * y;
            if i >> READOUT & 1 == 0 {
                v
            } else {
                -v
            }
        })
        .sum()
}

impl Binary {
    pub(super) fn new(params: &ParamSet) -> Self {
        Self {
            circuit: params.spec.circuit(),
            theta: params.circuit().to_vec(),
            observable: OnceLock::new(),
            quadratic: OnceLock::new(),
        }
    }

    fn observable(&self) -> &CMatrix {
        self.observable
            .get_or_init(|| self.circuit.heisenberg_z(&self.theta, READOUT))
    }

    /// `Re(U†Z U)`, row-major; real amplitude vectors only see this part.
    fn quadratic(&self) -> &[f64] {
        self.quadratic
            .get_or_init(|| self.observable().as_slice().iter().map(|z| z.re).collect())
    }

    fn z_pure(&self, psi: &PureState) -> f64 {
        self.circuit
            .apply_pure(psi, &self.theta)
            .expectation_z(READOUT)
            .expect("readout qubit exists")
    }

    pub(super) fn z_state(&self, state: &State) -> Result<f64, ModelError> {
        if state.n_qubits() != self.circuit.n_qubits() {
            return Err(ModelError::StateSize {
                expected: self.circuit.n_qubits(),
                got: state.n_qubits(),
            });
        }
        Ok(match state {
            State::Pure(psi) => self.z_pure(psi),
            State::Mixed(rho) => rho.expectation(self.observable()),
        })
    }

    /// `Tr(ρ O)` for a steered state, from two circuit runs.
    fn z_plane(&self, plane: &SteeredPlane) -> f64 {
        let (p, q, r) = plane.weights();
        let ut = self.circuit.apply_pure(plane.target(), &self.theta);
        let ta = ut.amplitudes();
        let mut z = p * z_form(ta, ta).re;
        if let Some(e) = plane.source() {
            let ue = self
                .circuit
                .apply_pure(&PureState::from_amps_unchecked(8, e.to_vec()), &self.theta);
            let ea = ue.amplitudes();
            z += r * z_form(ea, ea).re + 2.0 * (q * z_form(ea, ta)).re;
        }
        z
    }

    pub(super) fn z_image(&self, x: &[f64], defense: &Defense) -> Result<f64, ModelError> {
        let target = amplitude_state(x)?;
        Ok(match defense {
            Defense::None => self.z_pure(&target),
            Defense::MultiQubitSteer(p) => self.z_plane(&SteeredPlane::from_zero(&target, *p)?),
            Defense::SingleQubitSteer(_) => {
                return Err(EncodingError::SingleQubitNeedsAngle.into());
            }
        })
    }

    /// Undefended readout; an all-zero input reads as 0.
    pub(super) fn z_unchecked(&self, x: &[f64]) -> f64 {
        amplitude_state(x).map_or(0.0, |psi| self.z_pure(&psi))
    }

    /// The same central differences as the reference, evaluated through
    /// the quadratic form `z(x) = xᵀAx / xᵀx`.
    pub(super) fn fd_input_grad(&self, x: &[f64], label: usize, h: f64) -> Vec<f64> {
        let a = self.quadratic();
        let d = x.len();
        let ax: Vec<f64> = (0..d)
            .map(|i| a[i * d..(i + 1) * d].iter().zip(x).map(|(u, v)| u * v).sum())
            .collect();
        let xax: f64 = x.iter().zip(&ax).map(|(u, v)| u * v).sum();
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let loss_at = |i: usize, s: f64| {
            let den = xx + 2.0 * s * x[i] + s * s;
            let z = if den > 0.0 {
                (xax + 2.0 * s * ax[i] + s * s * a[i * d + i]) / den
            } else {
                0.0
            };
            cross_entropy(&[-z, z], label)
        };
        (0..d)
            .map(|i| (loss_at(i, h) - loss_at(i, -h)) / (2.0 * h))
            .collect()
    }

    pub(super) fn param_grad(&self, x: &[f64], label: usize) -> Result<Vec<f64>, ModelError> {
        let psi = amplitude_state(x)?;
        Ok(BinaryTrainer::new(self.circuit.clone()).loss_grad(&self.theta, &psi, label).1)
    }
}

/// Training view of a binary model: inputs are encoded pure states.
pub struct BinaryTrainer {
    circuit: Circuit,
}

impl BinaryTrainer {
    pub fn new(circuit: Circuit) -> Self {
        Self { circuit }
    }
}

/// `∂L/∂z` for logits `(−z, z)` under softmax cross-entropy.
fn dloss_dz(z: f64, label: usize) -> f64 {
    let p1 = 1.0 / (1.0 + (-2.0 * z).exp());
    2.0 * (p1 - if label == 1 { 1.0 } else { 0.0 })
}

impl Trainable for BinaryTrainer {
    type Input = PureState;

    fn n_params(&self) -> usize {
        self.circuit.n_params()
    }

    fn logits(&self, theta: &[f64], x: &PureState) -> Vec<f64> {
        let z = self
            .circuit
            .apply_pure(x, theta)
            .expectation_z(READOUT)
            .expect("readout qubit exists");
        vec![-z, z]
    }

    fn loss_grad(&self, theta: &[f64], x: &PureState, label: usize) -> (f64, Vec<f64>) {
        let (z, grads) = self.circuit.shift_gradients(x, theta, &[READOUT]);
        let z = z[0];
        let g = dloss_dz(z, label);
        let grad = grads.into_iter().next().expect("one readout").iter().map(|d| g * d).collect();
        (cross_entropy(&[-z, z], label), grad)
    }
}
