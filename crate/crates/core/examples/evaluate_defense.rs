//! Runs the full train, attack and evaluate pipeline for a JSON config (or
//! the quanvolutional MNIST default) and prints the defense report.
//!
//! Usage: `cargo run --release --example evaluate_defense -- [config.json]`

use qsteer::experiment::{run_evaluation, ExperimentConfig, PairChoice};
use qsteer::models::ModelKind;
use qsteer::steering::SteeringMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig {
            model: ModelKind::Qnn,
            steering: SteeringMode::SingleQubit,
            pair: PairChoice::Preset,
            ..ExperimentConfig::default()
        },
    };
    let rec = run_evaluation(&cfg)?;
    let report = rec.report.as_ref().expect("evaluate records carry a report");
    if let Some(p) = rec.selected {
        println!("defense J = {:.4}, N = {}", p.strength, p.rounds);
    }
    println!(
        "clean        {:.3} -> {:.3}  ({:+.1} points)",
        report.clean.undefended, report.clean.defended, report.clean_delta
    );
    for r in &report.adversarial {
        println!(
            "{:?} eps {:.2}  {:.3} -> {:.3}  ({:+.1} points)",
            r.attack.kind, r.attack.epsilon, r.undefended, r.defended, r.gain
        );
    }
    println!("{:.1} s", rec.wall_time_s);
    Ok(())
}
