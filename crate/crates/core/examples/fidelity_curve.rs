//! Writes the steered fidelity for the standard (J, N) grid to a CSV and
//! prints the rounds each strength needs to reach 0.99.
//!
//! Usage: `cargo run --release --example fidelity_curve -- [out.csv] [f0]`

use std::fs::File;

use qsteer::experiment::{fidelity_curve, write_fidelity_csv, SteeringGrid, DEFAULT_F0};
use qsteer::steering::rounds_to_reach;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "fidelity.csv".into());
    let f0: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(DEFAULT_F0);
    let grid = SteeringGrid::standard();
    let rows = fidelity_curve(&grid, f0)?;
    write_fidelity_csv(&rows, File::create(&out)?)?;
    println!("{} rows written to {out}", rows.len());
    for &j in &grid.strengths {
        let n = rounds_to_reach(f0, j, 0.99, 10_000).map_or("never".to_string(), |n| n.to_string());
        println!("J = {j:.4}: F >= 0.99 after {n} rounds");
    }
    Ok(())
}
