//! Amplitude-encodes a 16×16 test digit and prints the partially steered
//! image after a few round counts, next to its fidelity to the target. The
//! residual weight on |0…0⟩ is reported separately and left out of the
//! rendering.
//!
//! Usage: `cargo run --release --example encode_image -- [index]`

use qsteer::data::{self, Dataset, Split};
use qsteer::experiment::resolve_data_root;
use qsteer::encoding::{encode, steered_image, Defense, EncoderSpec, FeatureVector, SteerParams};

const SHADES: &[u8] = b" .:-=+*#%@";

fn render(pixels: &[f64], side: usize) {
    for row in pixels.chunks(side) {
        let line: String = row
            .iter()
            .map(|&v| SHADES[((v * (SHADES.len() - 1) as f64).round() as usize).min(SHADES.len() - 1)] as char)
            .flat_map(|c| [c, c])
            .collect();
        println!("  {line}");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let index: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let test = data::load_split(&resolve_data_root(None), Dataset::Mnist, Split::Test)?;
    let digit = test.select(&[index]).downscaled_16()?;
    let x = FeatureVector::pixels(digit.image(0))?;
    println!("test image {index}, label {}", digit.labels()[0]);

    let spec = EncoderSpec::amplitude();
    let target = match encode(&x, &spec)? {
        qsteer::qstate::State::Pure(s) => s,
        qsteer::qstate::State::Mixed(_) => unreachable!("undefended encoders are pure"),
    };
    let strength = std::f64::consts::PI / 10.0;
    for rounds in [1, 4, 10, 30] {
        let steered = spec.with_defense(Defense::MultiQubitSteer(SteerParams::new(strength, rounds)))?;
        let state = encode(&x, &steered)?;
        println!("\nJ = π/10, N = {rounds}, fidelity {:.4}", state.fidelity_to_pure(&target)?);
        let mut image = steered_image(&state);
        let rest = image[1..].iter().copied().fold(0.0, f64::max);
        println!("corner |0…0⟩ holds {:.3} of the intensity", state.to_density().diagonal()[0]);
        image[0] = 0.0;
        image.iter_mut().for_each(|v| *v = (*v / rest).min(1.0));
        render(&image, 16);
    }
    Ok(())
}
