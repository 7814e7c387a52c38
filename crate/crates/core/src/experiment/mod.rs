//! Experiment runner: training, (J, N) sweeps, attack/defense evaluation,
//! result records and plot data.

pub mod cli;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attacks::{attack_set, AttackError, AttackKind, AttackSpec, PGD_ALPHA, PGD_STEPS};
use crate::data::{self, DataError, Dataset, ImageSet, Split};
use crate::encoding::{Defense, SteerParams};
use crate::grad::{self, EpochStats, GradError, LabeledSet, TrainConfig};
use crate::models::{
    amplitude_input, BinaryTrainer, Model, ModelError, ModelKind, ModelSpec, ParamSet, QnnHeadTrainer,
};
use crate::qstate::PureState;
use crate::steering::{steer, SteeringMode, SteeringPlan};

pub const RECORD_SCHEMA_VERSION: u32 = 1;
pub const PLOT_SCHEMA_VERSION: u32 = 1;

pub const SWEEP_HEADER: [&str; 8] = [
    "schema_version",
    "model",
    "dataset",
    "mode",
    "J",
    "N",
    "accuracy",
    "admissible",
];
pub const CURVE_HEADER: [&str; 5] = ["schema_version", "attack", "epsilon", "defended", "accuracy"];
pub const FIDELITY_HEADER: [&str; 5] = ["schema_version", "J", "N", "F0", "fidelity"];

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ExpError {
    /// Process exit status: 2 config, 3 data or I/O, 4 numerical.
    pub fn exit_code(&self) -> u8 {
        match self {
            ExpError::Config(_) => 2,
            ExpError::Data(_) | ExpError::Io { .. } => 3,
            ExpError::Numerical(_) => 4,
        }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExpError + '_ {
        move |source| ExpError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<DataError> for ExpError {
    fn from(e: DataError) -> Self {
        ExpError::Data(e.to_string())
    }
}

impl From<ModelError> for ExpError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) => ExpError::Data(e.to_string()),
            _ => ExpError::Config(e.to_string()),
        }
    }
}

impl From<GradError> for ExpError {
    fn from(e: GradError) -> Self {
        match e {
            GradError::Diverged { .. } => ExpError::Numerical(e.to_string()),
            GradError::Model(m) => m.into(),
            GradError::Io(_) => ExpError::Data(e.to_string()),
            _ => ExpError::Config(e.to_string()),
        }
    }
}

impl From<AttackError> for ExpError {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::Model(m) => m.into(),
            AttackError::EmptyDataset => ExpError::Data(e.to_string()),
            AttackError::Spec(_) => ExpError::Config(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for ExpError {
    fn from(e: serde_json::Error) -> Self {
        ExpError::Config(e.to_string())
    }
}

impl From<csv::Error> for ExpError {
    fn from(e: csv::Error) -> Self {
        ExpError::Data(e.to_string())
    }
}

/// The J and N values a sweep visits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringGrid {
    pub strengths: Vec<f64>,
    pub rounds: Vec<usize>,
}

impl SteeringGrid {
    /// J ∈ {π/16, π/10, π/4, π/2}, N ∈ 1..=40.
    pub fn standard() -> Self {
        use std::f64::consts::PI;
        Self {
            strengths: vec![PI / 16.0, PI / 10.0, PI / 4.0, PI / 2.0],
            rounds: (1..=40).collect(),
        }
    }

    pub fn single(strength: f64, rounds: Vec<usize>) -> Self {
        Self {
            strengths: vec![strength],
            rounds,
        }
    }
}

/// How the defended (J, N) is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairChoice {
    /// Smallest admissible N at the first grid strength that has one.
    Sweep,
    /// The shipped reference pair for this model, mode and dataset.
    Preset,
    Fixed { strength: f64, rounds: usize },
}

/// One attack family evaluated over several budgets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackGrid {
    pub kind: AttackKind,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_alpha() -> f64 {
    PGD_ALPHA
}

fn default_steps() -> usize {
    PGD_STEPS
}

impl AttackGrid {
    pub fn specs(&self) -> Vec<AttackSpec> {
        self.epsilons
            .iter()
            .map(|&eps| match self.kind {
                AttackKind::Fgsm => AttackSpec::fgsm(eps),
                AttackKind::Pgd => AttackSpec::pgd_with(eps, self.alpha, self.steps),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub dataset: Dataset,
    /// The two source classes of a binary task, mapped to labels 0 and 1.
    pub classes: [u8; 2],
    pub steering: SteeringMode,
    pub pair: PairChoice,
    pub grid: SteeringGrid,
    /// Largest admissible clean-accuracy drop, as a fraction.
    pub budget: f64,
    pub sweep_size: usize,
    pub attacks: Vec<AttackGrid>,
    /// Initial fidelity for `fidelity-curve`.
    pub fidelity_f0: f64,
    pub train: TrainConfig,
    /// Root seed for model init, subsampling and batch order.
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    /// Pretrained parameters; when absent, commands that need a model train one.
    pub params: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Vqc,
            dataset: Dataset::Mnist,
            classes: [0, 1],
            steering: SteeringMode::MultiQubit,
            pair: PairChoice::Sweep,
            grid: SteeringGrid::standard(),
            budget: 0.10,
            sweep_size: 100,
            attacks: vec![AttackGrid {
                kind: AttackKind::Pgd,
                epsilons: vec![0.1],
                alpha: PGD_ALPHA,
                steps: PGD_STEPS,
            }],
            fidelity_f0: DEFAULT_F0,
            train: TrainConfig::default(),
            seed: 0,
            data_dir: None,
            params: None,
            out: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExpError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExpError> {
        let text = fs::read_to_string(path).map_err(|e| ExpError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec::of_kind(self.model, self.seed)
    }

    pub fn is_binary(&self) -> bool {
        self.model != ModelKind::Qnn
    }

    /// The `TrainConfig` actually used: batch order follows the root seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn validate(&self) -> Result<(), ExpError> {
        let bad = |m: String| Err(ExpError::Config(m));
        self.train_config().validate()?;
        if self.is_binary() && self.classes[0] == self.classes[1] {
            return bad(format!("classes must differ, got {:?}", self.classes));
        }
        if self.is_binary() && self.steering == SteeringMode::SingleQubit {
            return bad(format!("{} uses amplitude encoding, which needs multi-qubit steering", self.model));
        }
        if self.grid.strengths.is_empty() || self.grid.rounds.is_empty() {
            return bad("steering grid must be nonempty".into());
        }
        if let Some(j) = self.grid.strengths.iter().find(|j| !(**j > 0.0 && **j <= std::f64::consts::FRAC_PI_2)) {
            return bad(format!("steering strength {j} outside (0, π/2]"));
        }
        if self.grid.rounds.contains(&0) {
            return bad("steering rounds must be at least 1".into());
        }
        if let PairChoice::Fixed { strength, rounds } = self.pair {
            if !(strength > 0.0 && strength <= std::f64::consts::FRAC_PI_2) || rounds == 0 {
                return bad(format!("fixed pair ({strength}, {rounds}) is not a valid steering setting"));
            }
        }
        if self.pair == PairChoice::Preset && preset_pair(self.model, self.steering, self.dataset).is_none() {
            return bad(format!("no preset pair for {} with {:?}", self.model, self.steering));
        }
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return bad(format!("budget {} outside (0, 1]", self.budget));
        }
        if !(0.0..=1.0).contains(&self.fidelity_f0) {
            return bad(format!("fidelity_f0 {} outside [0, 1]", self.fidelity_f0));
        }
        if self.sweep_size == 0 {
            return bad("sweep_size must be at least 1".into());
        }
        for a in &self.attacks {
            if a.epsilons.is_empty() {
                return bad(format!("{} attack has no epsilons", a.kind));
            }
            for s in a.specs() {
                s.validate()?;
            }
        }
        if let Some(p) = &self.params {
            if !p.is_file() {
                return bad(format!("params file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn data_root(&self) -> PathBuf {
        resolve_data_root(self.data_dir.as_deref())
    }
}

/// Explicit directory, else `$QSTEER_DATA_DIR`, else the bundled subsets.
pub fn resolve_data_root(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None if std::env::var_os(data::DATA_DIR_ENV).is_some() => data::data_dir(),
        None => data::bundled_data_dir(),
    }
}

/// Reference (J, N) selections for each model, steering mode and dataset.
pub fn preset_pair(kind: ModelKind, mode: SteeringMode, dataset: Dataset) -> Option<SteerParams> {
    use std::f64::consts::PI;
    let col = match dataset {
        Dataset::Mnist => 0,
        Dataset::FashionMnist => 1,
        Dataset::Kmnist => 2,
    };
    let (strength, rounds) = match (kind, mode) {
        (ModelKind::Qnn, SteeringMode::SingleQubit) => (PI / 16.0, [27, 20, 24]),
        (ModelKind::Qnn, SteeringMode::MultiQubit) => (PI / 16.0, [40, 25, 35]),
        (ModelKind::Qcnn, SteeringMode::MultiQubit) => (PI / 10.0, [10, 12, 23]),
        (ModelKind::Vqc, SteeringMode::MultiQubit) => (PI / 10.0, [20, 18, 15]),
        _ => return None,
    };
    Some(SteerParams::new(strength, rounds[col]))
}

pub fn defense_for(mode: SteeringMode, p: SteerParams) -> Defense {
    match mode {
        SteeringMode::SingleQubit => Defense::SingleQubitSteer(p),
        SteeringMode::MultiQubit => Defense::MultiQubitSteer(p),
    }
}

/// Model-ready train and test subsets: images at the model's input
/// resolution, labels as class indices.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: ImageSet,
    pub test: ImageSet,
}

impl Prepared {
    pub fn train_labels(&self) -> Vec<usize> {
        labels_of(&self.train)
    }

    pub fn test_labels(&self) -> Vec<usize> {
        labels_of(&self.test)
    }
}

pub fn labels_of(set: &ImageSet) -> Vec<usize> {
    set.labels().iter().map(|&l| usize::from(l)).collect()
}

/// Loads both splits, filters binary tasks, draws the stratified subsets
/// and downscales for the 8-qubit models.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared, ExpError> {
    let root = cfg.data_root();
    let tcfg = cfg.train_config();
    let mut splits = Vec::with_capacity(2);
    for (split, n) in [(Split::Train, tcfg.train_size), (Split::Test, tcfg.test_size)] {
        let mut set = data::load_split(&root, cfg.dataset, split)?;
        if cfg.is_binary() {
            set = data::filter_binary(&set, cfg.classes[0], cfg.classes[1])?;
        }
        set = data::subsample(&set, n, cfg.seed)?;
        if cfg.is_binary() {
            set = set.downscaled_16()?;
        }
        splits.push(set);
    }
    let test = splits.pop().expect("two splits");
    let train = splits.pop().expect("two splits");
    Ok(Prepared { train, test })
}

/// Trains from the seeded initialization. Binary models train every circuit
/// angle on amplitude-encoded inputs; qnn trains its head on features from
/// the frozen kernel.
pub fn train_model(
    spec: ModelSpec,
    train: &ImageSet,
    test: &ImageSet,
    cfg: &TrainConfig,
) -> Result<(ParamSet, Vec<EpochStats>), ExpError> {
    let init = ParamSet::init(spec)?;
    let (train_y, test_y) = (labels_of(train), labels_of(test));
    let outcome = match spec.kind {
        ModelKind::Qcnn | ModelKind::Vqc => {
            let encode = |set: &ImageSet| -> Result<Vec<PureState>, ModelError> {
                set.images().iter().map(|x| amplitude_input(x)).collect()
            };
            let (xs, ts) = (encode(train)?, encode(test)?);
            let trainer = BinaryTrainer::new(spec.circuit());
            grad::train(
                &trainer,
                init.theta.clone(),
                &LabeledSet::new(&xs, &train_y),
                &LabeledSet::new(&ts, &test_y),
                cfg,
            )?
        }
        ModelKind::Qnn => {
            let model = Model::new(init.clone())?;
            let features = |set: &ImageSet| -> Result<Vec<Vec<f64>>, ModelError> {
                set.images().par_iter().map(|x| model.quanv(x, &Defense::None)).collect()
            };
            let (xs, ts) = (features(train)?, features(test)?);
            let trainer = QnnHeadTrainer::new(&init);
            grad::train(
                &trainer,
                init.theta.clone(),
                &LabeledSet::new(&xs, &train_y),
                &LabeledSet::new(&ts, &test_y),
                cfg,
            )?
        }
    };
    Ok((ParamSet::new(spec, outcome.theta)?, outcome.curve))
}

fn count_correct(preds: &[usize], labels: &[usize]) -> usize {
    preds.iter().zip(labels).filter(|(p, y)| p == y).count()
}

fn fraction(correct: usize, n: usize) -> f64 {
    correct as f64 / n.max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    #[serde(rename = "J")]
    pub strength: f64,
    #[serde(rename = "N")]
    pub rounds: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub admissible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub mode: SteeringMode,
    pub size: usize,
    pub budget: f64,
    pub baseline: f64,
    /// Row-major over (J, N) in grid order.
    pub cells: Vec<SweepCell>,
    /// Smallest admissible N for every J that has one.
    pub selected: Vec<SweepCell>,
}

impl SweepTable {
    pub fn admissible_rounds(&self, strength: f64) -> Vec<usize> {
        self.cells
            .iter()
            .filter(|c| c.strength == strength && c.admissible)
            .map(|c| c.rounds)
            .collect()
    }

    pub fn cell(&self, strength: f64, rounds: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.strength == strength && c.rounds == rounds)
    }
}

/// Whether going from `base` to `correct` right answers out of `n` drops
/// accuracy by strictly less than `budget`.
pub fn admissible(base: usize, correct: usize, n: usize, budget: f64) -> bool {
    let drop = base.saturating_sub(correct);
    (drop as f64) < budget * n as f64 - 1e-9
}

/// Defended clean accuracy over a (J, N) grid. A pair is admissible when
/// its drop from the undefended accuracy is strictly below `budget`.
pub fn sweep_jn(
    model: &Model,
    images: &[Vec<f64>],
    labels: &[usize],
    grid: &SteeringGrid,
    budget: f64,
    mode: SteeringMode,
) -> Result<SweepTable, ExpError> {
    if images.is_empty() {
        return Err(ExpError::Data("sweep needs at least one image".into()));
    }
    let n = labels.len();
    let base_correct = count_correct(&model.predict_batch(images, &Defense::None)?, labels);
    let pairs: Vec<(f64, usize)> = grid
        .strengths
        .iter()
        .flat_map(|&j| grid.rounds.iter().map(move |&r| (j, r)))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(strength, rounds)| {
            let defense = defense_for(mode, SteerParams::new(strength, rounds));
            let preds: Vec<usize> = images
                .iter()
                .map(|x| model.predict(x, &defense))
                .collect::<Result<_, _>>()?;
            let correct = count_correct(&preds, labels);
            Ok(SweepCell {
                strength,
                rounds,
                correct,
                accuracy: fraction(correct, n),
                admissible: admissible(base_correct, correct, n, budget),
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let selected = grid
        .strengths
        .iter()
        .filter_map(|&j| {
            cells
                .iter()
                .filter(|c| c.strength == j && c.admissible)
                .min_by_key(|c| c.rounds)
                .cloned()
        })
        .collect::<Vec<_>>();
    if selected.is_empty() {
        log::warn!("no (J, N) pair keeps the clean drop below {budget}");
    }
    Ok(SweepTable {
        mode,
        size: n,
        budget,
        baseline: fraction(base_correct, n),
        cells,
        selected,
    })
}

/// Adversarial copies of a test subset, crafted on the undefended model.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialSet {
    pub meta: AdversarialMeta,
    pub images: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialMeta {
    pub attack: AttackSpec,
    pub model_hash: String,
    pub seed: u64,
    /// `[samples, pixels]`.
    pub shape: [usize; 2],
    pub dtype: String,
}

impl AdversarialSet {
    pub fn generate(
        model: &Model,
        images: &[Vec<f64>],
        labels: &[usize],
        spec: &AttackSpec,
        seed: u64,
    ) -> Result<Self, ExpError> {
        let adv = attack_set(model, images, labels, spec)?;
        Ok(Self {
            meta: AdversarialMeta {
                attack: *spec,
                model_hash: model.params().hash(),
                seed,
                shape: [adv.len(), model.spec().input_len()],
                dtype: "f64-le".into(),
            },
            images: adv,
        })
    }

    /// `<stem> <sha256 of the tensor bytes>`.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in self.images.iter().flatten() {
            h.update(v.to_le_bytes());
        }
        format!("{} {}", Self::stem(&self.meta.attack), hex::encode(h.finalize()))
    }

    /// File stem such as `pgd-eps0.1`.
    pub fn stem(spec: &AttackSpec) -> String {
        format!("{}-eps{}", spec.kind, spec.epsilon)
    }

    /// Writes `<dir>/<stem>.bin` (row-major little-endian f64) and `<stem>.json`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, ExpError> {
        fs::create_dir_all(dir).map_err(ExpError::io(dir))?;
        let stem = Self::stem(&self.meta.attack);
        let bin = dir.join(format!("{stem}.bin"));
        let mut bytes = Vec::with_capacity(self.meta.shape[0] * self.meta.shape[1] * 8);
        for v in self.images.iter().flatten() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&bin, bytes).map_err(ExpError::io(&bin))?;
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&self.meta).expect("metadata serializes");
        fs::write(&json, text).map_err(ExpError::io(&json))?;
        Ok(bin)
    }

    pub fn load(dir: &Path, spec: &AttackSpec) -> Result<Self, ExpError> {
        let stem = Self::stem(spec);
        let json = dir.join(format!("{stem}.json"));
        let bin = dir.join(format!("{stem}.bin"));
        if !json.is_file() || !bin.is_file() {
            return Err(ExpError::Data(format!("missing adversarial set {stem} in {}", dir.display())));
        }
        let meta: AdversarialMeta = serde_json::from_str(&fs::read_to_string(&json).map_err(ExpError::io(&json))?)
            .map_err(|e| ExpError::Data(format!("{}: {e}", json.display())))?;
        let bytes = fs::read(&bin).map_err(ExpError::io(&bin))?;
        let [n, d] = meta.shape;
        if bytes.len() != n * d * 8 {
            return Err(ExpError::Data(format!(
                "{}: expected {} bytes for shape {:?}, found {}",
                bin.display(),
                n * d * 8,
                meta.shape,
                bytes.len()
            )));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let images = if d == 0 { vec![Vec::new(); n] } else { flat.chunks(d).map(<[f64]>::to_vec).collect() };
        Ok(Self { meta, images })
    }
}

/// Per-sample predicted classes behind every accuracy in a record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub labels: Vec<usize>,
    pub clean_undefended: Vec<usize>,
    pub clean_defended: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialResult {
    pub attack: AttackSpec,
    pub undefended: f64,
    pub defended: f64,
    /// Defended minus undefended adversarial accuracy, in percentage points.
    pub gain: f64,
    pub predictions_undefended: Vec<usize>,
    pub predictions_defended: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPair {
    pub undefended: f64,
    pub defended: f64,
}

/// Clean and adversarial accuracy with and without the defense.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseReport {
    pub defense: Defense,
    pub test_size: usize,
    pub clean: AccuracyPair,
    /// Defended minus undefended clean accuracy, in percentage points.
    pub clean_delta: f64,
    pub adversarial: Vec<AdversarialResult>,
    pub predictions: Predictions,
}

fn points(defended: f64, undefended: f64) -> f64 {
    100.0 * (defended - undefended)
}

/// Scores precomputed adversarial sets with and without `defense`.
pub fn evaluate_defense(
    model: &Model,
    images: &[Vec<f64>],
    labels: &[usize],
    defense: Defense,
    adversarial: &[AdversarialSet],
) -> Result<DefenseReport, ExpError> {
    if images.is_empty() {
        return Err(ExpError::Data("evaluation needs at least one image".into()));
    }
    let n = labels.len();
    let clean_undefended = model.predict_batch(images, &Defense::None)?;
    let clean_defended = model.predict_batch(images, &defense)?;
    let clean = AccuracyPair {
        undefended: fraction(count_correct(&clean_undefended, labels), n),
        defended: fraction(count_correct(&clean_defended, labels), n),
    };
    let adversarial = adversarial
        .iter()
        .map(|set| {
            if set.images.len() != n {
                return Err(ExpError::Data(format!(
                    "adversarial set {} has {} samples, test subset has {n}",
                    AdversarialSet::stem(&set.meta.attack),
                    set.images.len()
                )));
            }
            let pu = model.predict_batch(&set.images, &Defense::None)?;
            let pd = model.predict_batch(&set.images, &defense)?;
            let (undefended, defended) = (fraction(count_correct(&pu, labels), n), fraction(count_correct(&pd, labels), n));
            Ok(AdversarialResult {
                attack: set.meta.attack,
                undefended,
                defended,
                gain: points(defended, undefended),
                predictions_undefended: pu,
                predictions_defended: pd,
            })
        })
        .collect::<Result<Vec<_>, ExpError>>()?;
    Ok(DefenseReport {
        defense,
        test_size: n,
        clean,
        clean_delta: points(clean.defended, clean.undefended),
        adversarial,
        predictions: Predictions {
            labels: labels.to_vec(),
            clean_undefended,
            clean_defended,
        },
    })
}

impl DefenseReport {
    /// Recomputes every accuracy and delta from the stored predictions.
    pub fn recomputed(&self) -> DefenseReport {
        let y = &self.predictions.labels;
        let n = y.len();
        let acc = |p: &[usize]| fraction(count_correct(p, y), n);
        let clean = AccuracyPair {
            undefended: acc(&self.predictions.clean_undefended),
            defended: acc(&self.predictions.clean_defended),
        };
        let adversarial = self
            .adversarial
            .iter()
            .map(|a| {
                let (u, d) = (acc(&a.predictions_undefended), acc(&a.predictions_defended));
                AdversarialResult {
                    undefended: u,
                    defended: d,
                    gain: points(d, u),
                    ..a.clone()
                }
            })
            .collect();
        DefenseReport {
            clean,
            clean_delta: points(clean.defended, clean.undefended),
            adversarial,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Train,
    Sweep,
    Attack,
    Evaluate,
    FidelityCurve,
    FetchData,
}

/// Everything one command run produced, plus the config that reproduces it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub command: Command,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub params_hash: Option<String>,
    pub data_checksums: Vec<String>,
    pub training: Option<Vec<EpochStats>>,
    pub sweep: Option<SweepTable>,
    pub selected: Option<SteerParams>,
    pub report: Option<DefenseReport>,
    pub adversarial_sets: Vec<String>,
    pub fidelity: Option<Vec<FidelityRow>>,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn new(command: Command, config: &ExperimentConfig) -> Self {
        Self {
            schema_version: RECORD_SCHEMA_VERSION,
            command,
            config_hash: config.hash(),
            config: config.clone(),
            params_hash: None,
            data_checksums: Vec::new(),
            training: None,
            sweep: None,
            selected: None,
            report: None,
            adversarial_sets: Vec::new(),
            fidelity: None,
            wall_time_s: 0.0,
        }
    }

    /// Equality ignoring wall time.
    pub fn same_result(&self, other: &RunRecord) -> bool {
        RunRecord {
            wall_time_s: 0.0,
            ..self.clone()
        } == RunRecord {
            wall_time_s: 0.0,
            ..other.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ExpError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ExpError> {
        write_text(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, ExpError> {
        Self::from_json(&fs::read_to_string(path).map_err(ExpError::io(path))?)
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), ExpError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(ExpError::io(dir))?;
    }
    fs::write(path, text).map_err(ExpError::io(path))
}

/// A trained model and the data it was trained and tested on.
pub struct Session {
    pub cfg: ExperimentConfig,
    pub data: Prepared,
    pub model: Model,
    pub training: Option<Vec<EpochStats>>,
}

impl Session {
    /// Loads the data, then loads `cfg.params` or trains from scratch.
    pub fn open(cfg: &ExperimentConfig) -> Result<Self, ExpError> {
        cfg.validate()?;
        let data = prepare_data(cfg)?;
        let (params, training) = match &cfg.params {
            Some(path) => {
                let p = ParamSet::load(path)?;
                if p.spec.kind != cfg.model {
                    return Err(ExpError::Config(format!(
                        "{} holds {} parameters, config asks for {}",
                        path.display(),
                        p.spec.kind,
                        cfg.model
                    )));
                }
                (p, None)
            }
            None => {
                let (p, curve) = train_model(cfg.spec(), &data.train, &data.test, &cfg.train_config())?;
                (p, Some(curve))
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            model: Model::new(params)?,
            data,
            training,
        })
    }

    fn record(&self, command: Command) -> RunRecord {
        let mut rec = RunRecord::new(command, &self.cfg);
        rec.params_hash = Some(self.model.params().hash());
        rec.data_checksums = vec![self.data.train.checksum(), self.data.test.checksum()];
        rec.training = self.training.clone();
        rec
    }

    /// The first `sweep_size` test samples.
    pub fn sweep_subset(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        let sub = self.data.test.head(self.cfg.sweep_size);
        (sub.images().to_vec(), labels_of(&sub))
    }

    pub fn sweep(&self) -> Result<SweepTable, ExpError> {
        let (x, y) = self.sweep_subset();
        sweep_jn(&self.model, &x, &y, &self.cfg.grid, self.cfg.budget, self.cfg.steering)
    }

    /// The defended pair from the configured choice, with the sweep table
    /// when one was run.
    pub fn choose_pair(&self) -> Result<(SteerParams, Option<SweepTable>), ExpError> {
        match self.cfg.pair {
            PairChoice::Fixed { strength, rounds } => Ok((SteerParams::new(strength, rounds), None)),
            PairChoice::Preset => preset_pair(self.cfg.model, self.cfg.steering, self.cfg.dataset)
                .map(|p| (p, None))
                .ok_or_else(|| ExpError::Config("no preset pair for this model and mode".into())),
            PairChoice::Sweep => {
                let table = self.sweep()?;
                let first = table.selected.first().ok_or_else(|| {
                    ExpError::Numerical("sweep found no (J, N) pair within the clean-accuracy budget".into())
                })?;
                Ok((SteerParams::new(first.strength, first.rounds), Some(table)))
            }
        }
    }

    pub fn attack_specs(&self) -> Vec<AttackSpec> {
        self.cfg.attacks.iter().flat_map(AttackGrid::specs).collect()
    }

    pub fn adversarial_sets(&self) -> Result<Vec<AdversarialSet>, ExpError> {
        let labels = self.data.test_labels();
        self.attack_specs()
            .iter()
            .map(|spec| AdversarialSet::generate(&self.model, self.data.test.images(), &labels, spec, self.cfg.seed))
            .collect()
    }

    pub fn evaluate(&self, adversarial: &[AdversarialSet]) -> Result<RunRecord, ExpError> {
        let (pair, sweep) = self.choose_pair()?;
        let defense = defense_for(self.cfg.steering, pair);
        let report = evaluate_defense(
            &self.model,
            self.data.test.images(),
            &self.data.test_labels(),
            defense,
            adversarial,
        )?;
        let mut rec = self.record(Command::Evaluate);
        rec.sweep = sweep;
        rec.selected = Some(pair);
        rec.report = Some(report);
        rec.adversarial_sets = adversarial.iter().map(AdversarialSet::fingerprint).collect();
        Ok(rec)
    }

    pub fn train_record(&self) -> RunRecord {
        self.record(Command::Train)
    }

    pub fn attack_record(&self, sets: &[AdversarialSet]) -> RunRecord {
        let mut rec = self.record(Command::Attack);
        rec.training = None;
        rec.adversarial_sets = sets.iter().map(AdversarialSet::fingerprint).collect();
        rec
    }

    pub fn sweep_record(&self) -> Result<RunRecord, ExpError> {
        let table = self.sweep()?;
        let mut rec = self.record(Command::Sweep);
        rec.selected = table.selected.first().map(|c| SteerParams::new(c.strength, c.rounds));
        rec.sweep = Some(table);
        Ok(rec)
    }
}

/// Trains (or loads), attacks and evaluates in one go; the record's
/// config snapshot reproduces it. Training curves are kept only when the
/// model was trained here.
pub fn run_evaluation(cfg: &ExperimentConfig) -> Result<RunRecord, ExpError> {
    let start = Instant::now();
    let session = Session::open(cfg)?;
    let sets = session.adversarial_sets()?;
    let mut rec = session.evaluate(&sets)?;
    rec.wall_time_s = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Reruns the command a record came from using its config snapshot.
pub fn replay(record: &RunRecord) -> Result<RunRecord, ExpError> {
    let start = Instant::now();
    let cfg = &record.config;
    let mut rec = match record.command {
        Command::Evaluate => {
            let session = Session::open(cfg)?;
            let mut r = session.evaluate(&session.adversarial_sets()?)?;
            if record.training.is_none() {
                r.training = None;
            }
            r
        }
        Command::Attack => {
            let session = Session::open(cfg)?;
            session.attack_record(&session.adversarial_sets()?)
        }
        Command::Train => Session::open(cfg)?.train_record(),
        Command::Sweep => Session::open(cfg)?.sweep_record()?,
        Command::FidelityCurve => {
            let mut r = RunRecord::new(Command::FidelityCurve, cfg);
            r.fidelity = Some(fidelity_curve(&cfg.grid, cfg.fidelity_f0)?);
            r
        }
        Command::FetchData => return Err(ExpError::Config("fetch-data runs are not replayable".into())),
    };
    rec.wall_time_s = start.elapsed().as_secs_f64();
    Ok(rec)
}

pub const DEFAULT_F0: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    #[serde(rename = "J")]
    pub strength: f64,
    #[serde(rename = "N")]
    pub rounds: usize,
    #[serde(rename = "F0")]
    pub f0: f64,
    pub fidelity: f64,
}

/// Simulated fidelity to the target after each N in the grid, for a
/// single qubit starting at overlap `f0` with its target.
pub fn fidelity_curve(grid: &SteeringGrid, f0: f64) -> Result<Vec<FidelityRow>, ExpError> {
    if !(0.0..=1.0).contains(&f0) {
        return Err(ExpError::Config(format!("initial fidelity {f0} outside [0, 1]")));
    }
    let theta = f0.sqrt().acos();
    let target = PureState::new(
        1,
        vec![crate::qstate::C64::new(theta.cos(), 0.0), crate::qstate::C64::new(theta.sin(), 0.0)],
    )
    .map_err(|e| ExpError::Numerical(e.to_string()))?;
    let initial = PureState::zero(1);
    let mut rows = Vec::new();
    for &j in &grid.strengths {
        for &n in &grid.rounds {
            let plan = SteeringPlan::new(j, n, SteeringMode::MultiQubit, target.clone())
                .map_err(|e| ExpError::Config(e.to_string()))?;
            let rho = steer(&plan, &initial).map_err(|e| ExpError::Numerical(e.to_string()))?;
            let fidelity = rho
                .fidelity_to_pure(&target)
                .map_err(|e| ExpError::Numerical(e.to_string()))?;
            rows.push(FidelityRow {
                strength: j,
                rounds: n,
                f0,
                fidelity,
            });
        }
    }
    Ok(rows)
}

fn csv_writer<W: Write>(out: W, header: &[&str]) -> Result<csv::Writer<W>, ExpError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

pub fn write_sweep_csv<W: Write>(table: &SweepTable, model: ModelKind, dataset: Dataset, out: W) -> Result<(), ExpError> {
    let mut w = csv_writer(out, &SWEEP_HEADER)?;
    let mode = match table.mode {
        SteeringMode::SingleQubit => "single",
        SteeringMode::MultiQubit => "multi",
    };
    for c in &table.cells {
        w.serialize((
            PLOT_SCHEMA_VERSION,
            model.to_string(),
            dataset.to_string(),
            mode,
            c.strength,
            c.rounds,
            c.accuracy,
            c.admissible,
        ))?;
    }
    w.flush().map_err(|e| ExpError::Data(e.to_string()))
}

/// Clean rows carry attack `none` and ε = 0.
pub fn write_attack_curve_csv<W: Write>(report: &DefenseReport, out: W) -> Result<(), ExpError> {
    let mut w = csv_writer(out, &CURVE_HEADER)?;
    for (defended, acc) in [(false, report.clean.undefended), (true, report.clean.defended)] {
        w.serialize((PLOT_SCHEMA_VERSION, "none", 0.0, defended, acc))?;
    }
    for a in &report.adversarial {
        for (defended, acc) in [(false, a.undefended), (true, a.defended)] {
            w.serialize((PLOT_SCHEMA_VERSION, a.attack.kind.to_string(), a.attack.epsilon, defended, acc))?;
        }
    }
    w.flush().map_err(|e| ExpError::Data(e.to_string()))
}

pub fn write_fidelity_csv<W: Write>(rows: &[FidelityRow], out: W) -> Result<(), ExpError> {
    let mut w = csv_writer(out, &FIDELITY_HEADER)?;
    for r in rows {
        w.serialize((PLOT_SCHEMA_VERSION, r.strength, r.rounds, r.f0, r.fidelity))?;
    }
    w.flush().map_err(|e| ExpError::Data(e.to_string()))
}

fn create(path: &Path) -> Result<fs::File, ExpError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(ExpError::io(dir))?;
    }
    fs::File::create(path).map_err(ExpError::io(path))
}

/// Writes `sweep.csv`, `curve.csv` and `fidelity.csv` into `dir` for
/// whichever families the records contain. Returns the paths written.
pub fn emit_plotdata(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>, ExpError> {
    if records.is_empty() {
        return Err(ExpError::Config("no records to emit".into()));
    }
    let mut written = Vec::new();
    for rec in records {
        let cfg = &rec.config;
        if let Some(table) = &rec.sweep {
            let path = dir.join("sweep.csv");
            write_sweep_csv(table, cfg.model, cfg.dataset, create(&path)?)?;
            written.push(path);
        }
        if let Some(report) = &rec.report {
            let path = dir.join("curve.csv");
            write_attack_curve_csv(report, create(&path)?)?;
            written.push(path);
        }
        if let Some(rows) = &rec.fidelity {
            let path = dir.join("fidelity.csv");
            write_fidelity_csv(rows, create(&path)?)?;
            written.push(path);
        }
        if let Some(curve) = &rec.training {
            let path = dir.join("train_curve.csv");
            grad::save_curve_csv(curve, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
