//! The three classifiers: a quanvolution front end with a dense head, an
//! 8-qubit QCNN and an 8-qubit VQC.
//!
//! Binary models read `z = ⟨Z_7⟩` and emit logits `(−z, +z)`.

mod binary;
mod circuit;
mod qnn;

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use binary::{qcnn_circuit, vqc_circuit, BinaryTrainer};
pub use circuit::{Axis, Circuit, Op};
pub use qnn::{qnn_kernel_circuit, QnnHeadTrainer, PATCH_GRID, QNN_FEATURES};

use crate::encoding::{Defense, EncoderSpec, EncodingError, EncodingKind};
use crate::grad::cross_entropy;
use crate::qstate::{PureState, State};
use crate::rng::substream;

pub const PARAMSET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected {expected} inputs, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("pixel {index} = {value} outside [0, 1]")]
    PixelRange { index: usize, value: f64 },
    #[error("expected a {expected}-qubit state, got {got}")]
    StateSize { expected: usize, got: usize },
    #[error("expected {expected} parameters, got {got}")]
    ParamLength { expected: usize, got: usize },
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("parameter set is for {found:?}, expected {expected:?}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Qnn,
    Qcnn,
    Vqc,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Qnn => "qnn",
            ModelKind::Qcnn => "qcnn",
            ModelKind::Vqc => "vqc",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Circuit width: the 4-qubit kernel for qnn, 8 otherwise.
    pub n_qubits: usize,
    /// Kernel layers (qnn), conv/pool stages (qcnn) or entangling layers (vqc).
    pub layers: usize,
    pub head_hidden: Option<usize>,
    pub classes: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub fn qnn(seed: u64) -> Self {
        Self {
            kind: ModelKind::Qnn,
            n_qubits: 4,
            layers: 2,
            head_hidden: Some(64),
            classes: 10,
            seed,
        }
    }

    pub fn qcnn(seed: u64) -> Self {
        Self {
            kind: ModelKind::Qcnn,
            n_qubits: 8,
            layers: 3,
            head_hidden: None,
            classes: 2,
            seed,
        }
    }

    pub fn vqc(seed: u64) -> Self {
        Self {
            kind: ModelKind::Vqc,
            n_qubits: 8,
            layers: 3,
            head_hidden: None,
            classes: 2,
            seed,
        }
    }

    pub fn of_kind(kind: ModelKind, seed: u64) -> Self {
        match kind {
            ModelKind::Qnn => Self::qnn(seed),
            ModelKind::Qcnn => Self::qcnn(seed),
            ModelKind::Vqc => Self::vqc(seed),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Spec(format!("{}: {m}", self.kind)));
        match self.kind {
            ModelKind::Qnn => {
                if self.n_qubits != 4 {
                    return bad("the quanvolution kernel acts on 4 qubits");
                }
                if self.head_hidden.is_none_or(|h| h == 0) || self.classes < 2 || self.layers == 0 {
                    return bad("needs a hidden width, at least 2 classes and 1 layer");
                }
            }
            ModelKind::Qcnn | ModelKind::Vqc => {
                if self.n_qubits != 8 || self.classes != 2 {
                    return bad("binary models use 8 qubits and 2 classes");
                }
                if self.head_hidden.is_some() {
                    return bad("binary models have no classical head");
                }
                if self.kind == ModelKind::Qcnn && self.layers != 3 {
                    return bad("the QCNN has exactly 3 conv/pool stages");
                }
                if self.layers == 0 {
                    return bad("needs at least one layer");
                }
            }
        }
        Ok(())
    }

    /// Side length of the square input image.
    pub fn input_side(&self) -> usize {
        match self.kind {
            ModelKind::Qnn => 28,
            ModelKind::Qcnn | ModelKind::Vqc => 16,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_side() * self.input_side()
    }

    pub fn encoding(&self) -> EncodingKind {
        match self.kind {
            ModelKind::Qnn => EncodingKind::Angle,
            ModelKind::Qcnn | ModelKind::Vqc => EncodingKind::Amplitude,
        }
    }

    pub fn encoder(&self, defense: Defense) -> Result<EncoderSpec, EncodingError> {
        EncoderSpec::new(self.encoding(), defense)
    }

    pub fn circuit(&self) -> Circuit {
        match self.kind {
            ModelKind::Qnn => qnn_kernel_circuit(self.layers),
            ModelKind::Qcnn => qcnn_circuit(),
            ModelKind::Vqc => vqc_circuit(self.layers),
        }
    }

    pub fn circuit_params(&self) -> usize {
        self.circuit().n_params()
    }

    pub fn head_params(&self) -> usize {
        match self.head_hidden {
            Some(h) => QNN_FEATURES * h + h + h * self.classes + self.classes,
            None => 0,
        }
    }

    pub fn n_params(&self) -> usize {
        self.circuit_params() + self.head_params()
    }
}

/// Circuit and head slices of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub circuit: Range<usize>,
    pub head: Range<usize>,
}

/// Trained (or initial) parameters with the spec they belong to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub version: u32,
    pub model: ModelKind,
    pub spec: ModelSpec,
    pub seed: u64,
    pub partition: Partition,
    pub theta: Vec<f64>,
}

impl ParamSet {
    pub fn new(spec: ModelSpec, theta: Vec<f64>) -> Result<Self, ModelError> {
        spec.validate()?;
        let c = spec.circuit_params();
        let set = Self {
            version: PARAMSET_VERSION,
            model: spec.kind,
            spec,
            seed: spec.seed,
            partition: Partition {
                circuit: 0..c,
                head: c..c + spec.head_params(),
            },
            theta,
        };
        set.validate()?;
        Ok(set)
    }

    /// Seeded initialization: circuit angles uniform in `[0, 2π)`, head
    /// weights Glorot-uniform, head biases zero.
    pub fn init(spec: ModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut theta = Vec::with_capacity(spec.n_params());
        let mut rng = substream(spec.seed, "init");
        let tau = std::f64::consts::TAU;
        theta.extend((0..spec.circuit_params()).map(|_| rng.random_range(0.0..tau)));
        if let Some(h) = spec.head_hidden {
            for (fan_in, fan_out) in [(QNN_FEATURES, h), (h, spec.classes)] {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                theta.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
                theta.extend(std::iter::repeat_n(0.0, fan_out));
            }
        }
        Self::new(spec, theta)
    }

    pub fn zeros(spec: ModelSpec) -> Result<Self, ModelError> {
        Self::new(spec, vec![0.0; spec.n_params()])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.spec.validate()?;
        if self.model != self.spec.kind {
            return Err(ModelError::WrongKind {
                expected: self.spec.kind,
                found: self.model,
            });
        }
        let expected = self.spec.n_params();
        if self.theta.len() != expected || self.partition.head.end != expected {
            return Err(ModelError::ParamLength {
                expected,
                got: self.theta.len(),
            });
        }
        if let Some(i) = self.theta.iter().position(|t| !t.is_finite()) {
            return Err(ModelError::Spec(format!("parameter {i} is not finite")));
        }
        Ok(())
    }

    pub fn circuit(&self) -> &[f64] {
        &self.theta[self.partition.circuit.clone()]
    }

    pub fn head(&self) -> &[f64] {
        &self.theta[self.partition.head.clone()]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter sets serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let set: Self = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    /// Writes the JSON form, creating parent directories as needed.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        Ok(fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("parameter sets serialize");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Per-class scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn binary(z: f64) -> Self {
        Logits(vec![-z, z])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest score; ties go to the lower class.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.0.iter().enumerate() {
            if *v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// A differentiable image classifier as seen by the attacks.
pub trait Classifier: Sync {
    fn input_len(&self) -> usize;

    fn n_classes(&self) -> usize;

    /// Undefended logits without range checks. Smooth in `x`, so finite
    /// differences may step slightly outside `[0, 1]`.
    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64>;

    /// Central-difference input gradient of the loss with step `h`.
    /// Implementations may override this with a faster evaluation of the
    /// same differences.
    fn fd_input_grad(&self, x: &[f64], label: usize, h: f64) -> Vec<f64> {
        reference_input_grad(self, x, label, h)
    }
}

/// Central differences with one full forward per perturbation.
pub fn reference_input_grad<C: Classifier + ?Sized>(
    model: &C,
    x: &[f64],
    label: usize,
    h: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = cross_entropy(&model.logits_unchecked(&probe), label);
            probe[i] = x[i] - h;
            let minus = cross_entropy(&model.logits_unchecked(&probe), label);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub(crate) fn check_pixels(x: &[f64], expected: usize) -> Result<(), ModelError> {
    if x.len() != expected {
        return Err(ModelError::InputLength {
            expected,
            got: x.len(),
        });
    }
    if let Some(index) = x.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(ModelError::PixelRange {
            index,
            value: x[index],
        });
    }
    Ok(())
}

enum Compiled {
    Qnn(qnn::Qnn),
    Binary(binary::Binary),
}

/// A parameter set compiled for fast inference and input gradients.
pub struct Model {
    params: ParamSet,
    compiled: Compiled,
}

impl Model {
    pub fn new(params: ParamSet) -> Result<Self, ModelError> {
        params.validate()?;
        let compiled = match params.spec.kind {
            ModelKind::Qnn => Compiled::Qnn(qnn::Qnn::new(&params)),
            ModelKind::Qcnn | ModelKind::Vqc => Compiled::Binary(binary::Binary::new(&params)),
        };
        Ok(Self { params, compiled })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.params.spec
    }

    /// Logits for an image in `[0, 1]`, encoded with `defense`.
    pub fn logits(&self, x: &[f64], defense: &Defense) -> Result<Logits, ModelError> {
        check_pixels(x, self.spec().input_len())?;
        self.spec().encoder(*defense)?;
        Ok(match &self.compiled {
            Compiled::Qnn(m) => m.logits(x, defense)?,
            Compiled::Binary(m) => Logits::binary(m.z_image(x, defense)?),
        })
    }

    pub fn predict(&self, x: &[f64], defense: &Defense) -> Result<usize, ModelError> {
        Ok(self.logits(x, defense)?.argmax())
    }

    /// Predictions for a batch, evaluated in parallel, in input order.
    pub fn predict_batch(
        &self,
        images: &[Vec<f64>],
        defense: &Defense,
    ) -> Result<Vec<usize>, ModelError> {
        use rayon::prelude::*;
        images.par_iter().map(|x| self.predict(x, defense)).collect()
    }

    /// Logits for an already encoded 8-qubit state (binary models only).
    pub fn forward_state(&self, state: &State) -> Result<Logits, ModelError> {
        match &self.compiled {
            Compiled::Binary(m) => Ok(Logits::binary(m.z_state(state)?)),
            Compiled::Qnn(_) => Err(ModelError::Spec(
                "qnn consumes images, not a single encoded state".into(),
            )),
        }
    }

    /// The 4×14×14 quanvolution feature maps (qnn only).
    pub fn quanv(&self, image: &[f64], defense: &Defense) -> Result<Vec<f64>, ModelError> {
        check_pixels(image, 28 * 28)?;
        match &self.compiled {
            Compiled::Qnn(m) => m.quanv(image, defense),
            Compiled::Binary(_) => Err(ModelError::Spec("only qnn has feature maps".into())),
        }
    }

    /// Batch-averaged loss gradient in every parameter: circuit angles by
    /// the parameter-shift rule, head weights by backpropagation.
    pub fn param_grad(&self, batch: &[(Vec<f64>, usize)]) -> Result<Vec<f64>, ModelError> {
        use rayon::prelude::*;
        for (x, label) in batch {
            check_pixels(x, self.spec().input_len())?;
            if *label >= self.spec().classes {
                return Err(ModelError::Spec(format!("label {label} out of range")));
            }
        }
        let per_sample: Vec<Vec<f64>> = batch
            .par_iter()
            .map(|(x, label)| match &self.compiled {
                Compiled::Qnn(m) => m.full_grad(x, *label),
                Compiled::Binary(m) => m.param_grad(x, *label),
            })
            .collect::<Result<_, _>>()?;
        Ok(average(&per_sample, self.params.theta.len()))
    }

    /// Loss at an arbitrary parameter vector for this model's spec.
    pub fn loss_at(spec: ModelSpec, theta: &[f64], x: &[f64], label: usize) -> Result<f64, ModelError> {
        let model = Model::new(ParamSet::new(spec, theta.to_vec())?)?;
        Ok(cross_entropy(model.logits(x, &Defense::None)?.values(), label))
    }
}

pub(crate) fn average(rows: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = rows.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

impl Classifier for Model {
    fn input_len(&self) -> usize {
        self.spec().input_len()
    }

    fn n_classes(&self) -> usize {
        self.spec().classes
    }

    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match &self.compiled {
            Compiled::Qnn(m) => m.logits_unchecked(x),
            Compiled::Binary(m) => Logits::binary(m.z_unchecked(x)).0,
        }
    }

    fn fd_input_grad(&self, x: &[f64], label: usize, h: f64) -> Vec<f64> {
        match &self.compiled {
            Compiled::Qnn(m) => m.fd_input_grad(x, label, h),
            Compiled::Binary(m) => m.fd_input_grad(x, label, h),
        }
    }
}

fn expect_kind(params: &ParamSet, kinds: &[ModelKind]) -> Result<(), ModelError> {
    params.validate()?;
    if kinds.contains(&params.spec.kind) {
        Ok(())
    } else {
        Err(ModelError::WrongKind {
            expected: kinds[0],
            found: params.spec.kind,
        })
    }
}

fn binary_forward(state: &State, params: &ParamSet) -> Result<Logits, ModelError> {
    let spec = &params.spec;
    if state.n_qubits() != spec.n_qubits {
        return Err(ModelError::StateSize {
            expected: spec.n_qubits,
            got: state.n_qubits(),
        });
    }
    let circuit = spec.circuit();
    let readout = spec.n_qubits - 1;
    let z = match state {
        State::Pure(psi) => circuit.apply_pure(psi, params.circuit()).expectation_z(readout),
        State::Mixed(rho) => circuit.apply_mixed(rho, params.circuit()).expectation_z(readout),
    }
    .expect("readout qubit exists");
    Ok(Logits::binary(z))
}

/// QCNN logits for an encoded state, simulated gate by gate.
pub fn qcnn_forward(state: &State, params: &ParamSet) -> Result<Logits, ModelError> {
    expect_kind(params, &[ModelKind::Qcnn])?;
    binary_forward(state, params)
}

/// VQC logits for an encoded state, simulated gate by gate.
pub fn vqc_forward(state: &State, params: &ParamSet) -> Result<Logits, ModelError> {
    expect_kind(params, &[ModelKind::Vqc])?;
    binary_forward(state, params)
}

/// Quanvolution feature maps `[channel][row][col]` computed through the
/// generic encoder: every patch is encoded with `encoder`, run through the
/// kernel and read out as four `⟨Z⟩` values.
pub fn quanv_forward(
    image: &[f64],
    params: &ParamSet,
    encoder: &EncoderSpec,
) -> Result<Vec<f64>, ModelError> {
    expect_kind(params, &[ModelKind::Qnn])?;
    check_pixels(image, 28 * 28)?;
    if encoder.kind != EncodingKind::Angle {
        return Err(ModelError::Spec("the quanvolution kernel uses angle encoding".into()));
    }
    let kernel = params.spec.circuit();
    let mut maps = vec![0.0; QNN_FEATURES];
    for pr in 0..PATCH_GRID {
        for pc in 0..PATCH_GRID {
            let patch = crate::encoding::FeatureVector::pixels(&qnn::patch_pixels(image, pr, pc))?;
            let state = crate::encoding::encode(&patch, encoder)?;
            for q in 0..4 {
                let z = match &state {
                    State::Pure(psi) => kernel.apply_pure(psi, params.circuit()).expectation_z(q),
                    State::Mixed(rho) => kernel.apply_mixed(rho, params.circuit()).expectation_z(q),
                }
                .expect("kernel qubit exists");
                maps[qnn::feature_index(q, pr, pc)] = z;
            }
        }
    }
    Ok(maps)
}

/// Dense head `784 → hidden (tanh) → classes` on quanvolution maps.
pub fn qnn_head_forward(maps: &[f64], params: &ParamSet) -> Result<Logits, ModelError> {
    expect_kind(params, &[ModelKind::Qnn])?;
    if maps.len() != QNN_FEATURES {
        return Err(ModelError::InputLength {
            expected: QNN_FEATURES,
            got: maps.len(),
        });
    }
    let head = qnn::Head::from_params(params);
    Ok(Logits(head.forward(maps).1))
}

/// Amplitude-encodes an image for the binary models (undefended).
pub fn amplitude_input(x: &[f64]) -> Result<PureState, ModelError> {
    check_pixels(x, x.len())?;
    Ok(crate::encoding::amplitude_state(x)?)
}

#[cfg(test)]
mod tests;
