//! Sweeps single-qubit steering strength and rounds for the quanvolutional
//! classifier and marks the pairs within the 10% clean-accuracy budget.
//!
//! Usage: `cargo run --release --example sweep_qnn -- [mnist|fashion-mnist]`

use std::f64::consts::PI;

use qsteer::data::Dataset;
use qsteer::experiment::{ExperimentConfig, Session, SteeringGrid};
use qsteer::models::ModelKind;
use qsteer::steering::SteeringMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = match std::env::args().nth(1).as_deref() {
        Some("fashion-mnist") => Dataset::FashionMnist,
        _ => Dataset::Mnist,
    };
    let cfg = ExperimentConfig {
        model: ModelKind::Qnn,
        dataset,
        steering: SteeringMode::SingleQubit,
        grid: SteeringGrid {
            strengths: vec![PI / 16.0, PI / 10.0],
            rounds: (5..=40).step_by(5).collect(),
        },
        ..ExperimentConfig::default()
    };
    let table = Session::open(&cfg)?.sweep()?;
    println!("baseline {:.3} on {} images, budget {:.0}%", table.baseline, table.size, 100.0 * table.budget);
    for c in &table.cells {
        let mark = if c.admissible { "ok" } else { "" };
        println!("J = {:.4}  N = {:2}  acc {:.3}  {mark}", c.strength, c.rounds, c.accuracy);
    }
    for s in &table.selected {
        println!("selected: J = {:.4}, N = {}", s.strength, s.rounds);
    }
    Ok(())
}
