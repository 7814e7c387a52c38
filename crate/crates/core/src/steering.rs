//! Measurement-induced passive steering.
//!
//! Each round couples the system to a fresh ancilla in `|0⟩` through
//! `U = exp(-iJH)` with `H = σ⁺_A ⊗ L + σ⁻_A ⊗ L†` and `L = |τ⟩⟨e|`, then
//! discards the ancilla. `|τ⟩` is the target and `|e⟩` is the normalized part
//! of the initial state orthogonal to it. Tracing out the ancilla leaves the
//! two-operator channel
//!
//! ```text
//! K₀ = I - (1 - cos J) |e⟩⟨e|        K₁ = -i sin J |τ⟩⟨e|
//! ```
//!
//! which moves a fraction `sin²J` of the remaining `|e⟩` population onto the
//! target each round, so after `N` rounds `F = 1 - (1 - F₀) cos^{2N} J`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qstate::{
    expm_hermitian, inner, CMatrix, MixedState, PureState, StateError, C64, ONE, ZERO,
};

/// Initial states closer than this (in `1 - F₀`) to the target get the
/// identity channel.
pub const DEGENERATE_FIDELITY_GAP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteeringError {
    #[error("steering strength J = {0} outside (0, π/2]")]
    BadStrength(f64),
    #[error("steering needs at least one round")]
    NoRounds,
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteeringMode {
    SingleQubit,
    MultiQubit,
}

/// Strength, round count and mode for one steering target.
#[derive(Clone, Debug, PartialEq)]
pub struct SteeringPlan {
    strength: f64,
    rounds: usize,
    mode: SteeringMode,
    target: PureState,
}

impl SteeringPlan {
    pub fn new(
        strength: f64,
        rounds: usize,
        mode: SteeringMode,
        target: PureState,
    ) -> Result<Self, SteeringError> {
        check_strength(strength)?;
        if rounds == 0 {
            return Err(SteeringError::NoRounds);
        }
        Ok(Self {
            strength,
            rounds,
            mode,
            target,
        })
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn mode(&self) -> SteeringMode {
        self.mode
    }

    pub fn target(&self) -> &PureState {
        &self.target
    }
}

fn check_strength(j: f64) -> Result<(), SteeringError> {
    if j.is_finite() && j > 0.0 && j <= FRAC_PI_2 {
        Ok(())
    } else {
        Err(SteeringError::BadStrength(j))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Form {
    Identity,
    TwoPlane {
        target: Vec<C64>,
        source: Vec<C64>,
        strength: f64,
    },
}

/// One steering round as a reduced map `ρ ↦ Σ K ρ K†`.
#[derive(Clone, Debug, PartialEq)]
pub struct SteeringChannel {
    n_qubits: usize,
    form: Form,
}

impl SteeringChannel {
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn is_identity(&self) -> bool {
        self.form == Form::Identity
    }

    /// `|e⟩`, when the channel is not the identity.
    pub fn source(&self) -> Option<&[C64]> {
        match &self.form {
            Form::Identity => None,
            Form::TwoPlane { source, .. } => Some(source),
        }
    }

    /// Explicit Kraus matrices: `[I]` or `[K₀, K₁]`.
    pub fn kraus_ops(&self) -> Vec<CMatrix> {
        let dim = 1usize << self.n_qubits;
        match &self.form {
            Form::Identity => vec![CMatrix::identity(dim)],
            Form::TwoPlane {
                target,
                source,
                strength,
            } => {
                let ee = CMatrix::outer(source, source);
                let k0 = CMatrix::identity(dim).sub(&ee.scale(C64::new(1.0 - strength.cos(), 0.0)));
                let k1 = CMatrix::outer(target, source).scale(C64::new(0.0, -strength.sin()));
                vec![k0, k1]
            }
        }
    }

    /// max |Σ K†K - I| entrywise.
    pub fn completeness_error(&self) -> f64 {
        let dim = 1usize << self.n_qubits;
        let mut sum = CMatrix::zeros(dim, dim);
        for k in self.kraus_ops() {
            sum = sum.add(&k.adjoint().matmul(&k));
        }
        sum.max_abs_diff(&CMatrix::identity(dim))
    }

    /// One round, using the rank-one structure of the Kraus pair (O(d²)).
    pub fn apply(&self, rho: &MixedState) -> Result<MixedState, SteeringError> {
        if rho.n_qubits() != self.n_qubits {
            return Err(StateError::QubitMismatch(rho.n_qubits(), self.n_qubits).into());
        }
        let Form::TwoPlane {
            target,
            source,
            strength,
        } = &self.form
        else {
            return Ok(rho.clone());
        };
        let c = 1.0 - strength.cos();
        let s2 = strength.sin().powi(2);
        let m = rho.matrix();
        let dim = m.rows();
        // v = ρ|e⟩, p = ⟨e|ρ|e⟩
        let v = m.mat_vec(source);
        let p = inner(source, &v).re;
        // K₀ρK₀† = ρ - c|e⟩⟨v| - c|v⟩⟨e| + c²p|e⟩⟨e|;  K₁ρK₁† = sin²J p |τ⟩⟨τ|
        let mut out = m.clone();
        let data = out.as_mut_slice();
        for r in 0..dim {
            let (er, vr, tr) = (source[r], v[r], target[r]);
            let row = &mut data[r * dim..(r + 1) * dim];
            for (col, x) in row.iter_mut().enumerate() {
                let (ec, vc, tc) = (source[col].conj(), v[col].conj(), target[col].conj());
                *x += -c * (er * vc + vr * ec) + c * c * p * er * ec + s2 * p * tr * tc;
            }
        }
        Ok(MixedState::from_matrix_unchecked(self.n_qubits, out)?)
    }

    /// One round as the explicit Kraus sum (O(d³)); reference path.
    pub fn apply_kraus(&self, rho: &MixedState) -> Result<MixedState, SteeringError> {
        if rho.n_qubits() != self.n_qubits {
            return Err(StateError::QubitMismatch(rho.n_qubits(), self.n_qubits).into());
        }
        let dim = rho.dim();
        let mut out = CMatrix::zeros(dim, dim);
        for k in self.kraus_ops() {
            out = out.add(&k.matmul(rho.matrix()).matmul(&k.adjoint()));
        }
        Ok(MixedState::from_matrix_unchecked(self.n_qubits, out)?)
    }

    /// Applies `rounds` rounds and returns every intermediate state,
    /// starting with `rho` itself.
    pub fn trajectory(
        &self,
        rho: &MixedState,
        rounds: usize,
    ) -> Result<Vec<MixedState>, SteeringError> {
        let mut states = Vec::with_capacity(rounds + 1);
        states.push(rho.clone());
        for _ in 0..rounds {
            let next = self.apply(states.last().expect("nonempty"))?;
            states.push(next);
        }
        Ok(states)
    }
}

fn source_direction(initial: &PureState, target: &PureState) -> Option<Vec<C64>> {
    let overlap = inner(target.amplitudes(), initial.amplitudes());
    if 1.0 - overlap.norm_sqr() <= DEGENERATE_FIDELITY_GAP {
        return None;
    }
    let mut e: Vec<C64> = initial
        .amplitudes()
        .iter()
        .zip(target.amplitudes())
        .map(|(psi, tau)| psi - overlap * tau)
        .collect();
    let norm = e.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    e.iter_mut().for_each(|z| *z /= norm);
    Some(e)
}

fn check_sizes(plan: &SteeringPlan, initial: &PureState) -> Result<(), SteeringError> {
    if plan.target.n_qubits() != initial.n_qubits() {
        return Err(StateError::QubitMismatch(plan.target.n_qubits(), initial.n_qubits()).into());
    }
    Ok(())
}

/// The one-round channel steering `initial` toward the plan's target.
pub fn build_channel(
    plan: &SteeringPlan,
    initial: &PureState,
) -> Result<SteeringChannel, SteeringError> {
    check_sizes(plan, initial)?;
    check_strength(plan.strength)?;
    let form = match source_direction(initial, &plan.target) {
        None => Form::Identity,
        Some(source) => Form::TwoPlane {
            target: plan.target.amplitudes().to_vec(),
            source,
            strength: plan.strength,
        },
    };
    Ok(SteeringChannel {
        n_qubits: initial.n_qubits(),
        form,
    })
}

/// `N` rounds of the reduced channel applied to `|initial⟩⟨initial|`.
pub fn steer(plan: &SteeringPlan, initial: &PureState) -> Result<MixedState, SteeringError> {
    let channel = build_channel(plan, initial)?;
    let mut rho = initial.to_density();
    for _ in 0..plan.rounds {
        rho = channel.apply(&rho)?;
    }
    Ok(rho)
}

/// The dilation Hamiltonian `σ⁺_A ⊗ L + σ⁻_A ⊗ L†` on ancilla ⊗ system,
/// with the ancilla as the most significant qubit. `None` when the initial
/// state already matches the target.
pub fn steering_hamiltonian(
    target: &PureState,
    initial: &PureState,
) -> Result<Option<CMatrix>, SteeringError> {
    if target.n_qubits() != initial.n_qubits() {
        return Err(StateError::QubitMismatch(target.n_qubits(), initial.n_qubits()).into());
    }
    let Some(source) = source_direction(initial, target) else {
        return Ok(None);
    };
    let jump = CMatrix::outer(target.amplitudes(), &source);
    // σ⁺ = |1⟩⟨0| raises the ancilla
    let raise = CMatrix::from_row_major(2, 2, vec![ZERO, ZERO, ONE, ZERO]);
    let h = raise.kron(&jump).add(&raise.adjoint().kron(&jump.adjoint()));
    Ok(Some(h))
}

/// `U = exp(-iJH)` over ancilla ⊗ system, by dense eigendecomposition.
pub fn steering_unitary(plan: &SteeringPlan, initial: &PureState) -> Result<CMatrix, SteeringError> {
    check_sizes(plan, initial)?;
    let dim = 2usize << initial.n_qubits();
    Ok(match steering_hamiltonian(&plan.target, initial)? {
        Some(h) => expm_hermitian(&h, plan.strength),
        None => CMatrix::identity(dim),
    })
}

/// `U` written out on its active plane `span{|0⟩|e⟩, |1⟩|τ⟩}`, where `H`
/// acts as σₓ; identity elsewhere.
pub fn steering_unitary_two_plane(
    plan: &SteeringPlan,
    initial: &PureState,
) -> Result<CMatrix, SteeringError> {
    check_sizes(plan, initial)?;
    let d = initial.dim();
    let Some(source) = source_direction(initial, &plan.target) else {
        return Ok(CMatrix::identity(2 * d));
    };
    let mut a = vec![ZERO; 2 * d];
    a[..d].copy_from_slice(&source);
    let mut b = vec![ZERO; 2 * d];
    b[d..].copy_from_slice(plan.target.amplitudes());
    let (s, c) = plan.strength.sin_cos();
    let plane = CMatrix::outer(&a, &a).add(&CMatrix::outer(&b, &b));
    let mut u = CMatrix::identity(2 * d).sub(&plane.scale(C64::new(1.0 - c, 0.0)));
    let flip = CMatrix::outer(&a, &b).add(&CMatrix::outer(&b, &a));
    u.add_assign_scaled(&flip, C64::new(0.0, -s));
    Ok(u)
}

/// `N` rounds through the explicit ancilla: `|0⟩⟨0| ⊗ ρ`, apply `U`, trace
/// the ancilla out, repeat.
pub fn steer_dilated(plan: &SteeringPlan, initial: &PureState) -> Result<MixedState, SteeringError> {
    Ok(steer_dilated_trajectory(plan, initial)?
        .pop()
        .expect("trajectory is nonempty"))
}

/// Like [`steer_dilated`] but returns the system state after every round
/// (index 0 is the initial state).
pub fn steer_dilated_trajectory(
    plan: &SteeringPlan,
    initial: &PureState,
) -> Result<Vec<MixedState>, SteeringError> {
    let u = steering_unitary(plan, initial)?;
    let n = initial.n_qubits();
    let ancilla = PureState::zero(1).to_density();
    let system_qubits: Vec<usize> = (0..n).collect();
    let mut states = vec![initial.to_density()];
    for _ in 0..plan.rounds {
        let joint = ancilla.tensor(states.last().expect("nonempty"));
        let evolved = joint.apply_unitary(&u)?;
        states.push(evolved.partial_trace(&system_qubits)?);
    }
    Ok(states)
}

/// Target fidelity after `rounds` rounds from initial fidelity `f0`.
pub fn fidelity_oracle(f0: f64, strength: f64, rounds: u32) -> f64 {
    let shrink = strength.cos().powi(2).powi(rounds as i32);
    1.0 - (1.0 - f0) * shrink
}

/// Smallest round count whose oracle fidelity reaches `threshold`.
pub fn rounds_to_reach(f0: f64, strength: f64, threshold: f64, max_rounds: u32) -> Option<u32> {
    (0..=max_rounds).find(|&n| fidelity_oracle(f0, strength, n) >= threshold)
}
