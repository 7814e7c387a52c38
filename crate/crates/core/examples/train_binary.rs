//! Trains a binary classifier on a {0, 1} subset and prints the learning curve.
//!
//! Usage: `cargo run --release --example train_binary -- [vqc|qcnn] [epochs] [lr]`

use qsteer::experiment::{prepare_data, train_model, ExperimentConfig};
use qsteer::models::ModelKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ExperimentConfig::default();
    cfg.model = match args.first().map(String::as_str) {
        Some("qcnn") => ModelKind::Qcnn,
        _ => ModelKind::Vqc,
    };
    if let Some(e) = args.get(1) {
        cfg.train.epochs = e.parse()?;
    }
    if let Some(lr) = args.get(2) {
        cfg.train.lr = lr.parse()?;
    }
    let data = prepare_data(&cfg)?;
    let start = std::time::Instant::now();
    let (_, curve) = train_model(cfg.spec(), &data.train, &data.test, &cfg.train_config())?;
    for s in &curve {
        println!("epoch {:2}  loss {:.4}  train {:.3}  test {:.3}", s.epoch, s.loss, s.train_acc, s.test_acc);
    }
    println!("{} trained in {:.1} s", cfg.model, start.elapsed().as_secs_f64());
    Ok(())
}
