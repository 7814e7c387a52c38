//! Command-line entry points.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use flate2::read::GzDecoder;

use super::*;

#[derive(Debug, Parser)]
#[command(name = "qsteer", version, about = "Passive-steering encodings as an adversarial defense")]
pub struct Cli {
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sample-parallel work.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train the configured model and write params.json.
    Train,
    /// Clean accuracy over the (J, N) grid on the sweep subset.
    Sweep,
    /// Craft adversarial sets on the undefended model.
    Attack,
    /// Score saved adversarial sets with and without the defense.
    Evaluate {
        /// Directory of adversarial sets; defaults to `<out>/adv`.
        #[arg(long)]
        adv_dir: Option<PathBuf>,
    },
    /// Steered fidelity for every (J, N) in the grid.
    FidelityCurve {
        /// Initial fidelity to the target, overriding the config.
        #[arg(long)]
        f0: Option<f64>,
    },
    /// Download (or copy) and verify the four IDX files of a dataset.
    FetchData {
        /// mnist, fashion-mnist or kmnist.
        #[arg(long, value_parser = parse_dataset)]
        dataset: Dataset,
        /// Base URL or local directory; defaults to the dataset's usual mirror.
        #[arg(long)]
        from: Option<String>,
        /// Destination root; defaults to the configured data directory.
        #[arg(long)]
        dest: Option<PathBuf>,
    },
}

fn parse_dataset(s: &str) -> Result<Dataset, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown dataset {s:?}; expected mnist, fashion-mnist or kmnist"))
}

pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    ExitCode::from(exit_status(args))
}

/// Parses arguments, runs the command and returns the exit status:
/// 0 ok, 2 config or usage error, 3 data error, 4 numerical failure.
pub fn exit_status<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// The effective config: file (or defaults) with flag overrides applied.
pub fn effective_config(cli: &Cli) -> Result<ExperimentConfig, ExpError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Points `cfg.params` at `<out>/params.json` when it exists and nothing
/// else was given.
fn with_trained_params(mut cfg: ExperimentConfig) -> ExperimentConfig {
    let saved = cfg.out.join("params.json");
    if cfg.params.is_none() && saved.is_file() {
        cfg.params = Some(saved);
    }
    cfg
}

/// Runs one command and returns the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, ExpError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ExpError::Config("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("--threads ignored: {e}");
        }
    }
    let start = Instant::now();
    let cfg = effective_config(cli)?;
    let out = cfg.out.clone();
    let mut written = Vec::new();
    let mut rec = match &cli.command {
        Cmd::Train => {
            let cfg = ExperimentConfig { params: None, ..cfg };
            let session = Session::open(&cfg)?;
            let params = out.join("params.json");
            session.model.params().save(&params)?;
            written.push(params);
            session.train_record()
        }
        Cmd::Sweep => {
            let session = Session::open(&with_trained_params(cfg))?;
            session.sweep_record()?
        }
        Cmd::Attack => {
            let session = Session::open(&with_trained_params(cfg))?;
            let sets = session.adversarial_sets()?;
            let dir = out.join("adv");
            for set in &sets {
                written.push(set.save(&dir)?);
            }
            session.attack_record(&sets)
        }
        Cmd::Evaluate { adv_dir } => {
            let session = Session::open(&with_trained_params(cfg))?;
            let dir = adv_dir.clone().unwrap_or_else(|| out.join("adv"));
            let sets = session
                .attack_specs()
                .iter()
                .map(|spec| AdversarialSet::load(&dir, spec))
                .collect::<Result<Vec<_>, _>>()?;
            let expected = session.model.params().hash();
            if let Some(stale) = sets.iter().find(|s| s.meta.model_hash != expected) {
                return Err(ExpError::Data(format!(
                    "adversarial set {} was crafted on a different model",
                    AdversarialSet::stem(&stale.meta.attack)
                )));
            }
            let mut rec = session.evaluate(&sets)?;
            rec.training = None;
            rec
        }
        Cmd::FidelityCurve { f0 } => {
            let cfg = ExperimentConfig {
                fidelity_f0: f0.unwrap_or(cfg.fidelity_f0),
                ..cfg
            };
            cfg.validate()?;
            let mut rec = RunRecord::new(Command::FidelityCurve, &cfg);
            rec.fidelity = Some(fidelity_curve(&cfg.grid, cfg.fidelity_f0)?);
            rec
        }
        Cmd::FetchData { dataset, from, dest } => {
            let dest = dest.clone().unwrap_or_else(|| cfg.data_root());
            written.extend(fetch_dataset(*dataset, from.as_deref(), &dest)?);
            RunRecord::new(Command::FetchData, &cfg)
        }
    };
    rec.wall_time_s = start.elapsed().as_secs_f64();
    written.extend(emit_plotdata(std::slice::from_ref(&rec), &out)?);
    let stem = serde_json::to_value(rec.command)?.as_str().unwrap_or("run").to_string();
    let config_path = out.join("config.json");
    write_text(&config_path, &rec.config.to_json())?;
    let record_path = out.join(format!("{stem}.record.json"));
    rec.save(&record_path)?;
    written.push(config_path);
    written.push(record_path);
    Ok(written)
}

/// Uncompressed sizes of the published IDX files, shared by all three datasets.
pub const IDX_FILES: [(&str, usize); 4] = [
    ("train-images-idx3-ubyte", 47_040_016),
    ("train-labels-idx1-ubyte", 60_008),
    ("t10k-images-idx3-ubyte", 7_840_016),
    ("t10k-labels-idx1-ubyte", 10_008),
];

pub fn default_mirror(dataset: Dataset) -> &'static str {
    match dataset {
        Dataset::Mnist => "https://ossci-datasets.s3.amazonaws.com/mnist/",
        Dataset::FashionMnist => "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
        Dataset::Kmnist => "http://codh.rois.ac.jp/kmnist/dataset/kmnist/",
    }
}

fn fetch_bytes(source: &str, name: &str) -> Result<Vec<u8>, ExpError> {
    if source.starts_with("http://") || source.starts_with("https://") {
        let url = format!("{}/{name}.gz", source.trim_end_matches('/'));
        log::info!("fetching {url}");
        let mut resp = ureq::get(&url)
            .call()
            .map_err(|e| ExpError::Data(format!("{url}: {e}")))?;
        resp.body_mut()
            .with_config()
            .limit(128 << 20)
            .read_to_vec()
            .map_err(|e| ExpError::Data(format!("{url}: {e}")))
    } else {
        let path = data::find_file(Path::new(source), name)?;
        fs::read(&path).map_err(ExpError::io(&path))
    }
}

fn uncompressed_len(bytes: &[u8]) -> Result<usize, ExpError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut n = 0;
        let mut buf = [0u8; 1 << 16];
        let mut dec = GzDecoder::new(bytes);
        loop {
            match dec.read(&mut buf) {
                Ok(0) => return Ok(n),
                Ok(k) => n += k,
                Err(e) => return Err(ExpError::Data(format!("corrupt gzip stream: {e}"))),
            }
        }
    } else {
        Ok(bytes.len())
    }
}

/// Fetches the four IDX files into `<dest>/<dataset>/`, checking each
/// against its published uncompressed size before writing it.
pub fn fetch_dataset(dataset: Dataset, from: Option<&str>, dest: &Path) -> Result<Vec<PathBuf>, ExpError> {
    let source = from.unwrap_or(default_mirror(dataset));
    let dir = dest.join(dataset.dir_name());
    fs::create_dir_all(&dir).map_err(ExpError::io(&dir))?;
    let mut written = Vec::new();
    for (name, size) in IDX_FILES {
        let bytes = fetch_bytes(source, name)?;
        let got = uncompressed_len(&bytes)?;
        if got != size {
            return Err(ExpError::Data(format!("{name}: {got} bytes, expected {size}")));
        }
        let ext = if bytes.starts_with(&[0x1f, 0x8b]) { ".gz" } else { "" };
        let path = dir.join(format!("{name}{ext}"));
        fs::write(&path, &bytes).map_err(ExpError::io(&path))?;
        written.push(path);
    }
    Ok(written)
}
