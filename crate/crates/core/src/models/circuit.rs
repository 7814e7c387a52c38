use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::qstate::{conjugate_in_place, CMatrix, GateOp, MixedState, PureState, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Fixed(GateOp),
    /// `R_axis(θ[param])` on `qubit`.
    Rot { axis: Axis, qubit: usize, param: usize },
}

/// A gate list whose rotation angles are read from a parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    n_params: usize,
    ops: Vec<Op>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            n_params: 0,
            ops: Vec::new(),
        }
    }

    pub fn fixed(&mut self, gate: GateOp) -> &mut Self {
        self.ops.push(Op::Fixed(gate));
        self
    }

    /// Appends a rotation bound to the next unused parameter index.
    pub fn rot(&mut self, axis: Axis, qubit: usize) -> usize {
        let param = self.n_params;
        self.n_params += 1;
        self.ops.push(Op::Rot { axis, qubit, param });
        param
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    fn rotation(axis: Axis, qubit: usize, angle: f64) -> GateOp {
        match axis {
            Axis::X => GateOp::rx(qubit, angle),
            Axis::Y => GateOp::ry(qubit, angle),
            Axis::Z => GateOp::rz(qubit, angle),
        }
    }

    fn gate(&self, op: &Op, theta: &[f64]) -> GateOp {
        match op {
            Op::Fixed(g) => g.clone(),
            &Op::Rot { axis, qubit, param } => Self::rotation(axis, qubit, theta[param]),
        }
    }

    fn run_from(&self, psi: &mut PureState, theta: &[f64], start: usize) {
        for op in &self.ops[start..] {
            psi.apply_gate_mut(&self.gate(op, theta))
                .expect("circuit qubits match the state");
        }
    }

    /// `U(θ)|ψ⟩`.
    pub fn apply_pure(&self, psi: &PureState, theta: &[f64]) -> PureState {
        assert_eq!(psi.n_qubits(), self.n_qubits, "state size");
        let mut out = psi.clone();
        self.run_from(&mut out, theta, 0);
        out
    }

    /// `U(θ) ρ U(θ)†`, gate by gate.
    pub fn apply_mixed(&self, rho: &MixedState, theta: &[f64]) -> MixedState {
        assert_eq!(rho.n_qubits(), self.n_qubits, "state size");
        let mut out = rho.clone();
        for op in &self.ops {
            out.apply_gate_mut(&self.gate(op, theta))
                .expect("circuit qubits match the state");
        }
        out
    }

    /// The dense unitary, for testing.
    pub fn unitary(&self, theta: &[f64]) -> CMatrix {
        let dim = 1usize << self.n_qubits;
        let mut u = CMatrix::identity(dim);
        for op in &self.ops {
            self.gate(op, theta).apply_lanes(u.as_mut_slice(), dim);
        }
        u
    }

    /// Heisenberg-picture observable `U(θ)† Z_q U(θ)`.
    pub fn heisenberg_z(&self, theta: &[f64], qubit: usize) -> CMatrix {
        let dim = 1usize << self.n_qubits;
        let mut obs = CMatrix::from_fn(dim, dim, |r, c| {
            if r != c {
                C64::new(0.0, 0.0)
            } else if r >> qubit & 1 == 0 {
                C64::new(1.0, 0.0)
            } else {
                C64::new(-1.0, 0.0)
            }
        });
        for op in self.ops.iter().rev() {
            conjugate_in_place(&mut obs, &self.gate(op, theta).adjoint());
        }
        obs
    }

    /// `⟨Z_q⟩` after the circuit for each `q` in `qubits`, together with
    /// their derivatives in every parameter by the ±π/2 shift rule.
    /// `grads[k][j] = ∂⟨Z_{qubits[k]}⟩/∂θ_j`. Every parameter must drive
    /// exactly one rotation.
    pub fn shift_gradients(
        &self,
        psi: &PureState,
        theta: &[f64],
        qubits: &[usize],
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let measure = |s: &PureState| -> Vec<f64> {
            qubits
                .iter()
                .map(|&q| s.expectation_z(q).expect("readout qubit in range"))
                .collect()
        };
        let mut grads = vec![vec![0.0; self.n_params]; qubits.len()];
        let mut state = psi.clone();
        for (k, op) in self.ops.iter().enumerate() {
            if let &Op::Rot { axis, qubit, param } = op {
                let mut shifted: [Vec<f64>; 2] = Default::default();
                for (slot, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let mut s = state.clone();
                    s.apply_gate_mut(&Self::rotation(axis, qubit, theta[param] + sign * FRAC_PI_2))
                        .expect("circuit qubits match the state");
                    self.run_from(&mut s, theta, k + 1);
                    shifted[slot] = measure(&s);
                }
                for (g, (plus, minus)) in grads.iter_mut().zip(shifted[0].iter().zip(&shifted[1])) {
                    g[param] = 0.5 * (plus - minus);
                }
            }
            state
                .apply_gate_mut(&self.gate(op, theta))
                .expect("circuit qubits match the state");
        }
        (measure(&state), grads)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::qstate::random_pure;

    fn sample_circuit() -> Circuit {
        let mut c = Circuit::new(3);
        for q in 0..3 {
            c.rot(Axis::Y, q);
            c.rot(Axis::Z, q);
        }
        c.fixed(GateOp::cnot(0, 1)).fixed(GateOp::cnot(1, 2));
        c.rot(Axis::X, 2);
        c
    }

    #[test]
    fn shift_rule_matches_finite_differences() {
        let c = sample_circuit();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let psi = random_pure(3, &mut rng);
        let theta: Vec<f64> = (0..c.n_params()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (z, grads) = c.shift_gradients(&psi, &theta, &[0, 2]);
        for (k, &q) in [0usize, 2].iter().enumerate() {
            assert!((z[k] - c.apply_pure(&psi, &theta).expectation_z(q).unwrap()).abs() < 1e-14);
            for j in 0..c.n_params() {
                let h = 1e-5;
                let mut tp = theta.clone();
                tp[j] += h;
                let mut tm = theta.clone();
                tm[j] -= h;
                let fd = (c.apply_pure(&psi, &tp).expectation_z(q).unwrap()
                    - c.apply_pure(&psi, &tm).expectation_z(q).unwrap())
                    / (2.0 * h);
                assert!((fd - grads[k][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn heisenberg_observable_matches_state_evolution() {
        let c = sample_circuit();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let theta: Vec<f64> = (0..c.n_params()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let obs = c.heisenberg_z(&theta, 1);
        let u = c.unitary(&theta);
        assert!(u.unitarity_error() < 1e-12);
        for _ in 0..10 {
            let psi = random_pure(3, &mut rng);
            let direct = c.apply_pure(&psi, &theta).expectation_z(1).unwrap();
            assert!((psi.expectation(&obs) - direct).abs() < 1e-12);
            let rho = psi.to_density();
            let mixed = c.apply_mixed(&rho, &theta).expectation_z(1).unwrap();
            assert!((mixed - direct).abs() < 1e-12);
        }
    }
}
