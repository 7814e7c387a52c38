//! Trains the quanvolutional classifier on MNIST, then traces FGSM and PGD
//! accuracy over ε with and without single-qubit steering at (π/16, 27).
//!
//! Usage: `cargo run --release --example attack_curve`

use std::f64::consts::PI;

use qsteer::attacks::{attack_curve, AttackSpec};
use qsteer::encoding::{Defense, SteerParams};
use qsteer::experiment::{ExperimentConfig, Session};
use qsteer::models::ModelKind;
use qsteer::steering::SteeringMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig {
        model: ModelKind::Qnn,
        steering: SteeringMode::SingleQubit,
        ..ExperimentConfig::default()
    };
    let session = Session::open(&cfg)?;
    let (x, y) = session.sweep_subset();
    let defense = Defense::SingleQubitSteer(SteerParams::new(PI / 16.0, 27));
    let epsilons = [0.0, 0.02, 0.05, 0.1, 0.2];
    for base in [AttackSpec::fgsm(0.0), AttackSpec::pgd(0.0)] {
        println!("{:?} on {} test images", base.kind, x.len());
        println!("  eps   undefended  defended");
        for p in attack_curve(&session.model, &x, &y, &base, &epsilons, &defense)? {
            println!("  {:.2}  {:.3}       {:.3}", p.epsilon, p.undefended, p.defended);
        }
    }
    Ok(())
}
