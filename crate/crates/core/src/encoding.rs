//! Angle and amplitude encoders, with optional steered replacements.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qstate::{norm_sqr, CMatrix, MixedState, PureState, State, StateError, C64};
use crate::steering::{
    steer, SteeringError, SteeringMode, SteeringPlan, DEGENERATE_FIDELITY_GAP,
};

/// Angles may exceed `[0, π]` by this much before an input is rejected.
const ANGLE_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("expected {expected} features, got {got}")]
    Length { expected: usize, got: usize },
    #[error("feature {index} = {value} is not a valid angle in [0, π]")]
    AngleRange { index: usize, value: f64 },
    #[error("feature {index} is not finite")]
    NonFinite { index: usize },
    #[error("amplitude encoding of an all-zero vector")]
    ZeroVector,
    #[error("{0} features is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("single-qubit steering needs an angle encoder")]
    SingleQubitNeedsAngle,
    #[error(transparent)]
    Steering(#[from] SteeringError),
    #[error(transparent)]
    State(#[from] StateError),
}

/// How raw feature values relate to rotation angles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScale {
    /// Pixel intensities in `[0, 1]`; angle = π·value.
    Pixels,
    /// Already angles in `[0, π]`.
    Angles,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    scale: FeatureScale,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, scale: FeatureScale) -> Result<Self, EncodingError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EncodingError::NonFinite { index });
        }
        Ok(Self { values, scale })
    }

    pub fn pixels(values: &[f64]) -> Result<Self, EncodingError> {
        Self::new(values.to_vec(), FeatureScale::Pixels)
    }

    pub fn angles(values: &[f64]) -> Result<Self, EncodingError> {
        Self::new(values.to_vec(), FeatureScale::Angles)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&self) -> FeatureScale {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rotation angles, validated to lie in `[0, π]`.
    pub fn to_angles(&self) -> Result<Vec<f64>, EncodingError> {
        let factor = match self.scale {
            FeatureScale::Pixels => PI,
            FeatureScale::Angles => 1.0,
        };
        self.values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                let a = v * factor;
                if (-ANGLE_SLACK..=PI + ANGLE_SLACK).contains(&a) {
                    Ok(a.clamp(0.0, PI))
                } else {
                    Err(EncodingError::AngleRange { index, value: a })
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    Angle,
    Amplitude,
}

/// Steering strength `J` (radians) and round count `N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteerParams {
    pub strength: f64,
    pub rounds: usize,
}

impl SteerParams {
    pub fn new(strength: f64, rounds: usize) -> Self {
        Self { strength, rounds }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defense {
    None,
    SingleQubitSteer(SteerParams),
    MultiQubitSteer(SteerParams),
}

impl Defense {
    pub fn params(&self) -> Option<SteerParams> {
        match *self {
            Defense::None => None,
            Defense::SingleQubitSteer(p) | Defense::MultiQubitSteer(p) => Some(p),
        }
    }

    pub fn mode(&self) -> Option<SteeringMode> {
        match self {
            Defense::None => None,
            Defense::SingleQubitSteer(_) => Some(SteeringMode::SingleQubit),
            Defense::MultiQubitSteer(_) => Some(SteeringMode::MultiQubit),
        }
    }

    /// Same mode with different `(J, N)`; `None` stays `None`.
    pub fn with_params(&self, p: SteerParams) -> Defense {
        match self {
            Defense::None => Defense::None,
            Defense::SingleQubitSteer(_) => Defense::SingleQubitSteer(p),
            Defense::MultiQubitSteer(_) => Defense::MultiQubitSteer(p),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncodingKind,
    pub defense: Defense,
}

impl EncoderSpec {
    pub fn new(kind: EncodingKind, defense: Defense) -> Result<Self, EncodingError> {
        let spec = Self { kind, defense };
        spec.validate()?;
        Ok(spec)
    }

    pub fn angle() -> Self {
        Self {
            kind: EncodingKind::Angle,
            defense: Defense::None,
        }
    }

    pub fn amplitude() -> Self {
        Self {
            kind: EncodingKind::Amplitude,
            defense: Defense::None,
        }
    }

    /// Same encoding with the defense removed.
    pub fn undefended(&self) -> Self {
        Self {
            kind: self.kind,
            defense: Defense::None,
        }
    }

    pub fn with_defense(&self, defense: Defense) -> Result<Self, EncodingError> {
        Self::new(self.kind, defense)
    }

    pub fn validate(&self) -> Result<(), EncodingError> {
        if matches!(self.defense, Defense::SingleQubitSteer(_)) && self.kind != EncodingKind::Angle {
            return Err(EncodingError::SingleQubitNeedsAngle);
        }
        if let Some(p) = self.defense.params() {
            // reuse the plan's validation of J and N
            SteeringPlan::new(p.strength, p.rounds, SteeringMode::MultiQubit, PureState::zero(1))?;
        }
        Ok(())
    }
}

fn ry_column(angle: f64) -> [C64; 2] {
    let (s, c) = (angle / 2.0).sin_cos();
    [C64::new(c, 0.0), C64::new(s, 0.0)]
}

/// `⊗ R_y(x_i)|0⟩`, feature `i` on qubit `i`.
pub fn angle_encode(x: &FeatureVector, n_qubits: usize) -> Result<PureState, EncodingError> {
    if x.len() != n_qubits {
        return Err(EncodingError::Length {
            expected: n_qubits,
            got: x.len(),
        });
    }
    Ok(angle_state(&x.to_angles()?))
}

/// Product state for already-checked angles; smooth in the angles, so it
/// also serves finite differences that step just outside `[0, π]`.
pub(crate) fn angle_state(angles: &[f64]) -> PureState {
    let n = angles.len();
    let cols: Vec<[C64; 2]> = angles.iter().map(|&a| ry_column(a)).collect();
    let amps = (0..1usize << n)
        .map(|idx| {
            cols.iter()
                .enumerate()
                .fold(C64::new(1.0, 0.0), |acc, (q, col)| acc * col[idx >> q & 1])
        })
        .collect();
    PureState::from_amps_unchecked(n, amps)
}

/// `Σ x̃_i |i⟩` with `x̃ = x / ‖x‖₂`.
pub fn amplitude_encode(x: &FeatureVector, n_qubits: usize) -> Result<PureState, EncodingError> {
    let len = x.len();
    if !len.is_power_of_two() {
        return Err(EncodingError::NotPowerOfTwo(len));
    }
    if len != 1usize << n_qubits {
        return Err(EncodingError::Length {
            expected: 1 << n_qubits,
            got: len,
        });
    }
    amplitude_state(x.values())
}

pub(crate) fn amplitude_state(values: &[f64]) -> Result<PureState, EncodingError> {
    let amps: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
    let norm = norm_sqr(&amps).sqrt();
    if norm == 0.0 {
        return Err(EncodingError::ZeroVector);
    }
    let n = values.len().trailing_zeros() as usize;
    Ok(PureState::from_amps_unchecked(
        n,
        amps.into_iter().map(|a| a / norm).collect(),
    ))
}

/// Steers `|0…0⟩` toward `target` for the given `(J, N)`.
pub fn steer_from_zero(
    target: &PureState,
    params: SteerParams,
    mode: SteeringMode,
) -> Result<MixedState, EncodingError> {
    let plan = SteeringPlan::new(params.strength, params.rounds, mode, target.clone())?;
    Ok(steer(&plan, &PureState::zero(target.n_qubits()))?)
}

/// Single-qubit steered state for one angle, as a 2×2 density matrix.
pub(crate) fn steered_qubit(angle: f64, params: SteerParams) -> Result<MixedState, EncodingError> {
    steer_from_zero(&angle_state(&[angle]), params, SteeringMode::SingleQubit)
}

/// The state left by `N` rounds of steering from a pure initial state:
/// `p|τ⟩⟨τ| + q|τ⟩⟨e| + q̄|e⟩⟨τ| + r|e⟩⟨e|`, where `e` is the normalized
/// part of the initial state orthogonal to `τ`. The channel never leaves
/// this plane, so `(p, q, r)` has a closed form in `J` and `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct SteeredPlane {
    target: PureState,
    source: Option<Vec<C64>>,
    p: f64,
    q: C64,
    r: f64,
}

impl SteeredPlane {
    pub fn new(
        target: &PureState,
        initial: &PureState,
        params: SteerParams,
    ) -> Result<Self, EncodingError> {
        SteeringPlan::new(params.strength, params.rounds, SteeringMode::MultiQubit, target.clone())?;
        if target.n_qubits() != initial.n_qubits() {
            return Err(StateError::QubitMismatch(target.n_qubits(), initial.n_qubits()).into());
        }
        let a = target.inner(initial)?;
        if 1.0 - a.norm_sqr() <= DEGENERATE_FIDELITY_GAP {
            return Ok(Self {
                target: initial.clone(),
                source: None,
                p: 1.0,
                q: C64::new(0.0, 0.0),
                r: 0.0,
            });
        }
        let mut e: Vec<C64> = initial
            .amplitudes()
            .iter()
            .zip(target.amplitudes())
            .map(|(psi, tau)| psi - a * tau)
            .collect();
        let b = norm_sqr(&e).sqrt();
        e.iter_mut().for_each(|z| *z /= b);
        let c = params.strength.cos();
        let r = b * b * c.powi(2 * params.rounds as i32);
        Ok(Self {
            target: target.clone(),
            source: Some(e),
            p: 1.0 - r,
            q: a * b * c.powi(params.rounds as i32),
            r,
        })
    }

    /// Steering from `|0…0⟩`, as the steered encoders do.
    pub fn from_zero(target: &PureState, params: SteerParams) -> Result<Self, EncodingError> {
        Self::new(target, &PureState::zero(target.n_qubits()), params)
    }

    pub fn target(&self) -> &PureState {
        &self.target
    }

    /// `e`, or `None` when the initial state already matched the target.
    pub fn source(&self) -> Option<&[C64]> {
        self.source.as_deref()
    }

    /// `(p, q, r)`.
    pub fn weights(&self) -> (f64, C64, f64) {
        (self.p, self.q, self.r)
    }

    /// Fidelity to the target, `⟨τ|ρ|τ⟩ = p`.
    pub fn fidelity(&self) -> f64 {
        self.p
    }

    pub fn to_density(&self) -> MixedState {
        let tau = self.target.amplitudes();
        let mut rho = CMatrix::outer(tau, tau).scale(C64::new(self.p, 0.0));
        if let Some(e) = &self.source {
            rho.add_assign_scaled(&CMatrix::outer(e, e), C64::new(self.r, 0.0));
            rho.add_assign_scaled(&CMatrix::outer(tau, e), self.q);
            rho.add_assign_scaled(&CMatrix::outer(e, tau), self.q.conj());
        }
        MixedState::from_matrix_unchecked(self.target.n_qubits(), rho)
            .expect("plane vectors match the target dimension")
    }
}

/// Runs the encoder. Undefended encoders return the pure target;
/// steered encoders return the intermediate mixed state.
pub fn encode(x: &FeatureVector, spec: &EncoderSpec) -> Result<State, EncodingError> {
    spec.validate()?;
    let n_qubits = match spec.kind {
        EncodingKind::Angle => x.len(),
        EncodingKind::Amplitude => {
            if !x.len().is_power_of_two() {
                return Err(EncodingError::NotPowerOfTwo(x.len()));
            }
            x.len().trailing_zeros() as usize
        }
    };
    let target = match spec.kind {
        EncodingKind::Angle => angle_encode(x, n_qubits)?,
        EncodingKind::Amplitude => amplitude_encode(x, n_qubits)?,
    };
    match spec.defense {
        Defense::None => Ok(State::Pure(target)),
        Defense::MultiQubitSteer(p) => {
            Ok(State::Mixed(steer_from_zero(&target, p, SteeringMode::MultiQubit)?))
        }
        Defense::SingleQubitSteer(p) => {
            let angles = x.to_angles()?;
            let mut factors = angles
                .iter()
                .rev()
                .map(|&a| steered_qubit(a, p))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter();
            // highest qubit first; feature i lands on qubit i
            let first = factors.next().expect("angle encoders have at least one feature");
            Ok(State::Mixed(factors.fold(first, |acc, f| acc.tensor(&f))))
        }
    }
}

/// Computational-basis intensities of an encoded state, rescaled so the
/// brightest entry is 1. For an amplitude encoder this is the "partially
/// steered image".
pub fn steered_image(state: &State) -> Vec<f64> {
    let diag = match state {
        State::Pure(s) => s.amplitudes().iter().map(|a| a.norm_sqr()).collect(),
        State::Mixed(s) => s.diagonal(),
    };
    let max = diag.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0; diag.len()];
    }
    diag.iter().map(|p| (p / max).clamp(0.0, 1.0)).collect()
}
