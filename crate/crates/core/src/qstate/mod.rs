//! Dense pure and mixed states over a handful of qubits.
//!
//! Bit ordering: qubit `k` is bit `k` of the computational-basis index, so
//! qubit 0 is the least significant. [`PureState::tensor`] and
//! [`MixedState::tensor`] place the left operand on the high-order qubits,
//! which is where an ancilla ends up in `ρ_A ⊗ ρ_S`.

mod gate;
mod matrix;

use rand_distr::StandardNormal;
use thiserror::Error;

pub use gate::GateOp;
pub use matrix::{expm_hermitian, CMatrix, C64};

pub(crate) use gate::conjugate_in_place;
pub(crate) use matrix::{inner, norm_sqr, ONE, ZERO};

/// Tolerance for validating norms, traces, Hermiticity and unitarity.
pub const VALIDATION_TOL: f64 = 1e-10;
/// Tolerance used when two computation routes must agree.
pub const EQUIV_TOL: f64 = 1e-12;
/// Most negative eigenvalue still accepted as positive semidefinite.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("qubit {qubit} out of range for a {n_qubits}-qubit state")]
    QubitOutOfRange { qubit: usize, n_qubits: usize },
    #[error("gates act on 1 or 2 qubits, got {0}")]
    BadArity(usize),
    #[error("{arity}-qubit gate needs a square matrix of side {}, got {rows}x{cols}", 1usize << arity)]
    GateSize { arity: usize, rows: usize, cols: usize },
    #[error("gate targets qubit {0} twice")]
    DuplicateTarget(usize),
    #[error("matrix is not unitary (max |UU†-I| = {0:e})")]
    NotUnitary(f64),
    #[error("expected {expected} amplitudes, got {got}")]
    AmplitudeCount { expected: usize, got: usize },
    #[error("state norm deviates from 1 by {0:e}")]
    NotNormalized(f64),
    #[error("density matrix must be {expected}x{expected}, got {rows}x{cols}")]
    DensityShape { expected: usize, rows: usize, cols: usize },
    #[error("density matrix not Hermitian (max |ρ-ρ†| = {0:e})")]
    NotHermitian(f64),
    #[error("density matrix trace is {0}, expected 1")]
    BadTrace(f64),
    #[error("density matrix has negative eigenvalue {0:e}")]
    NotPositive(f64),
    #[error("qubit counts differ: {0} vs {1}")]
    QubitMismatch(usize, usize),
    #[error("partial trace needs a nonempty set of kept qubits")]
    EmptyKeep,
    #[error("states need at least one qubit")]
    NoQubits,
}

/// Normalized state vector over `n_qubits` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl PureState {
    pub fn new(n_qubits: usize, amps: Vec<C64>) -> Result<Self, StateError> {
        if n_qubits == 0 {
            return Err(StateError::NoQubits);
        }
        let expected = 1usize << n_qubits;
        if amps.len() != expected {
            return Err(StateError::AmplitudeCount {
                expected,
                got: amps.len(),
            });
        }
        let dev = (norm_sqr(&amps) - 1.0).abs();
        if dev > VALIDATION_TOL {
            return Err(StateError::NotNormalized(dev));
        }
        Ok(Self { n_qubits, amps })
    }

    pub(crate) fn from_amps_unchecked(n_qubits: usize, amps: Vec<C64>) -> Self {
        debug_assert_eq!(amps.len(), 1 << n_qubits);
        Self { n_qubits, amps }
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[index] = ONE;
        Self { n_qubits, amps }
    }

    pub fn zero(n_qubits: usize) -> Self {
        Self::basis(n_qubits, 0)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn apply_gate(&self, gate: &GateOp) -> Result<Self, StateError> {
        let mut out = self.clone();
        out.apply_gate_mut(gate)?;
        Ok(out)
    }

    pub fn apply_gate_mut(&mut self, gate: &GateOp) -> Result<(), StateError> {
        gate.check_targets(self.n_qubits)?;
        gate.apply_lanes(&mut self.amps, 1);
        Ok(())
    }

    /// `self ⊗ other`; `self` takes the high-order qubits.
    pub fn tensor(&self, other: &PureState) -> PureState {
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            amps.extend(other.amps.iter().map(|b| a * b));
        }
        PureState {
            n_qubits: self.n_qubits + other.n_qubits,
            amps,
        }
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &PureState) -> Result<C64, StateError> {
        self.same_size(other.n_qubits)?;
        Ok(inner(&self.amps, &other.amps))
    }

    /// `|⟨target|self⟩|²`
    pub fn fidelity_to_pure(&self, target: &PureState) -> Result<f64, StateError> {
        Ok(target.inner(self)?.norm_sqr().clamp(0.0, 1.0))
    }

    /// `⟨Z_q⟩`
    pub fn expectation_z(&self, qubit: usize) -> Result<f64, StateError> {
        if qubit >= self.n_qubits {
            return Err(StateError::QubitOutOfRange {
                qubit,
                n_qubits: self.n_qubits,
            });
        }
        let bit = 1usize << qubit;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .map(|(i, a)| if i & bit == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum())
    }

    /// `⟨ψ|O|ψ⟩` (real part) for a Hermitian observable.
    pub fn expectation(&self, observable: &CMatrix) -> f64 {
        inner(&self.amps, &observable.mat_vec(&self.amps)).re
    }

    pub fn to_density(&self) -> MixedState {
        MixedState {
            n_qubits: self.n_qubits,
            rho: CMatrix::outer(&self.amps, &self.amps),
        }
    }

    fn same_size(&self, other: usize) -> Result<(), StateError> {
        if self.n_qubits != other {
            return Err(StateError::QubitMismatch(self.n_qubits, other));
        }
        Ok(())
    }
}

/// Density matrix over `n_qubits` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedState {
    n_qubits: usize,
    rho: CMatrix,
}

impl MixedState {
    /// Validated constructor: Hermitian, unit trace, positive semidefinite.
    pub fn new(n_qubits: usize, rho: CMatrix) -> Result<Self, StateError> {
        let state = Self::from_matrix_unchecked(n_qubits, rho)?;
        state.validate()?;
        Ok(state)
    }

    /// Shape-checked only; for internal paths whose construction preserves
    /// the density-matrix invariants.
    pub(crate) fn from_matrix_unchecked(n_qubits: usize, rho: CMatrix) -> Result<Self, StateError> {
        if n_qubits == 0 {
            return Err(StateError::NoQubits);
        }
        let expected = 1usize << n_qubits;
        if rho.rows() != expected || rho.cols() != expected {
            return Err(StateError::DensityShape {
                expected,
                rows: rho.rows(),
                cols: rho.cols(),
            });
        }
        Ok(Self { n_qubits, rho })
    }

    pub fn maximally_mixed(n_qubits: usize) -> Self {
        let dim = 1usize << n_qubits;
        Self {
            n_qubits,
            rho: CMatrix::identity(dim).scale(C64::new(1.0 / dim as f64, 0.0)),
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.rho.rows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn into_matrix(self) -> CMatrix {
        self.rho
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.rho
            .hermitian_eigen()
            .0
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks Hermiticity, unit trace and positivity at the crate tolerances.
    pub fn validate(&self) -> Result<(), StateError> {
        let herm = self.rho.hermiticity_error();
        if herm > VALIDATION_TOL {
            return Err(StateError::NotHermitian(herm));
        }
        let tr = self.rho.trace();
        if (tr.re - 1.0).abs() > VALIDATION_TOL || tr.im.abs() > VALIDATION_TOL {
            return Err(StateError::BadTrace(tr.re));
        }
        let min = self.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(StateError::NotPositive(min));
        }
        Ok(())
    }

    pub fn apply_gate(&self, gate: &GateOp) -> Result<Self, StateError> {
        let mut out = self.clone();
        out.apply_gate_mut(gate)?;
        Ok(out)
    }

    pub fn apply_gate_mut(&mut self, gate: &GateOp) -> Result<(), StateError> {
        gate.check_targets(self.n_qubits)?;
        conjugate_in_place(&mut self.rho, gate);
        Ok(())
    }

    /// `ρ ← U ρ U†` for a full-register unitary.
    pub fn apply_unitary(&self, u: &CMatrix) -> Result<Self, StateError> {
        if u.rows() != self.dim() || u.cols() != self.dim() {
            return Err(StateError::DensityShape {
                expected: self.dim(),
                rows: u.rows(),
                cols: u.cols(),
            });
        }
        Ok(Self {
            n_qubits: self.n_qubits,
            rho: u.matmul(&self.rho).matmul(&u.adjoint()),
        })
    }

    /// `self ⊗ other`; `self` takes the high-order qubits.
    pub fn tensor(&self, other: &MixedState) -> MixedState {
        MixedState {
            n_qubits: self.n_qubits + other.n_qubits,
            rho: self.rho.kron(&other.rho),
        }
    }

    /// Reduced state on `keep`. Kept qubits are renumbered in ascending
    /// order, so the lowest kept qubit becomes qubit 0.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<MixedState, StateError> {
        if keep.is_empty() {
            return Err(StateError::EmptyKeep);
        }
        let mut kept: Vec<usize> = keep.to_vec();
        kept.sort_unstable();
        kept.dedup();
        if let Some(&q) = kept.iter().find(|&&q| q >= self.n_qubits) {
            return Err(StateError::QubitOutOfRange {
                qubit: q,
                n_qubits: self.n_qubits,
            });
        }
        let traced: Vec<usize> = (0..self.n_qubits).filter(|q| !kept.contains(q)).collect();
        let spread = |local: usize, qubits: &[usize]| -> usize {
            qubits
                .iter()
                .enumerate()
                .filter(|(bit, _)| local >> bit & 1 == 1)
                .map(|(_, &q)| 1usize << q)
                .sum()
        };
        let kd = 1usize << kept.len();
        let td = 1usize << traced.len();
        let kept_idx: Vec<usize> = (0..kd).map(|a| spread(a, &kept)).collect();
        let traced_idx: Vec<usize> = (0..td).map(|t| spread(t, &traced)).collect();
        let mut out = CMatrix::zeros(kd, kd);
        for (a, &ia) in kept_idx.iter().enumerate() {
            for (b, &ib) in kept_idx.iter().enumerate() {
                out[(a, b)] = traced_idx.iter().map(|&t| self.rho[(ia | t, ib | t)]).sum();
            }
        }
        Ok(MixedState {
            n_qubits: kept.len(),
            rho: out,
        })
    }

    /// `⟨τ|ρ|τ⟩`
    pub fn fidelity_to_pure(&self, target: &PureState) -> Result<f64, StateError> {
        if self.n_qubits != target.n_qubits() {
            return Err(StateError::QubitMismatch(self.n_qubits, target.n_qubits()));
        }
        Ok(target.expectation(&self.rho).clamp(0.0, 1.0))
    }

    /// `Tr(ρ Z_q)`
    pub fn expectation_z(&self, qubit: usize) -> Result<f64, StateError> {
        if qubit >= self.n_qubits {
            return Err(StateError::QubitOutOfRange {
                qubit,
                n_qubits: self.n_qubits,
            });
        }
        let bit = 1usize << qubit;
        Ok((0..self.dim())
            .map(|i| {
                let p = self.rho[(i, i)].re;
                if i & bit == 0 {
                    p
                } else {
                    -p
                }
            })
            .sum())
    }

    /// `Tr(ρ O)` (real part) for a Hermitian observable.
    pub fn expectation(&self, observable: &CMatrix) -> f64 {
        self.rho.trace_product(observable).re
    }

    /// Computational-basis probabilities (the diagonal of ρ).
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.rho[(i, i)].re).collect()
    }
}

/// Either representation; what an encoder hands to a model.
#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Pure(PureState),
    Mixed(MixedState),
}

impl State {
    pub fn n_qubits(&self) -> usize {
        match self {
            State::Pure(s) => s.n_qubits(),
            State::Mixed(s) => s.n_qubits(),
        }
    }

    pub fn apply_gate(&self, gate: &GateOp) -> Result<Self, StateError> {
        Ok(match self {
            State::Pure(s) => State::Pure(s.apply_gate(gate)?),
            State::Mixed(s) => State::Mixed(s.apply_gate(gate)?),
        })
    }

    pub fn apply_gate_mut(&mut self, gate: &GateOp) -> Result<(), StateError> {
        match self {
            State::Pure(s) => s.apply_gate_mut(gate),
            State::Mixed(s) => s.apply_gate_mut(gate),
        }
    }

    pub fn tensor(&self, other: &State) -> State {
        match (self, other) {
            (State::Pure(a), State::Pure(b)) => State::Pure(a.tensor(b)),
            _ => State::Mixed(self.to_density().tensor(&other.to_density())),
        }
    }

    pub fn fidelity_to_pure(&self, target: &PureState) -> Result<f64, StateError> {
        match self {
            State::Pure(s) => s.fidelity_to_pure(target),
            State::Mixed(s) => s.fidelity_to_pure(target),
        }
    }

    pub fn expectation_z(&self, qubit: usize) -> Result<f64, StateError> {
        match self {
            State::Pure(s) => s.expectation_z(qubit),
            State::Mixed(s) => s.expectation_z(qubit),
        }
    }

    pub fn expectation(&self, observable: &CMatrix) -> f64 {
        match self {
            State::Pure(s) => s.expectation(observable),
            State::Mixed(s) => s.expectation(observable),
        }
    }

    pub fn to_density(&self) -> MixedState {
        match self {
            State::Pure(s) => s.to_density(),
            State::Mixed(s) => s.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), StateError> {
        match self {
            State::Pure(s) => PureState::new(s.n_qubits(), s.amplitudes().to_vec()).map(|_| ()),
            State::Mixed(s) => s.validate(),
        }
    }
}

impl From<PureState> for State {
    fn from(s: PureState) -> Self {
        State::Pure(s)
    }
}

impl From<MixedState> for State {
    fn from(s: MixedState) -> Self {
        State::Mixed(s)
    }
}

/// Random state from a normalized complex Gaussian vector (Haar distributed).
pub fn random_pure<R: rand::Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> PureState {
    let mut amps: Vec<C64> = (0..1usize << n_qubits)
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = norm_sqr(&amps).sqrt();
    amps.iter_mut().for_each(|a| *a /= norm);
    PureState::from_amps_unchecked(n_qubits, amps)
}
