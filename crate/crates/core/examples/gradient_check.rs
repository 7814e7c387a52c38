//! Checks parameter-shift gradients of a freshly initialized classifier
//! against central differences, and the fast input gradient against the
//! one-forward-per-pixel reference.
//!
//! Usage: `cargo run --release --example gradient_check -- [vqc|qcnn|qnn]`

use qsteer::grad::{input_grad, param_grad, relative_error, INPUT_FD_STEP};
use qsteer::models::{reference_input_grad, Model, ModelKind, ModelSpec, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kind = match std::env::args().nth(1).as_deref() {
        Some("qcnn") => ModelKind::Qcnn,
        Some("qnn") => ModelKind::Qnn,
        _ => ModelKind::Vqc,
    };
    let spec = ModelSpec::of_kind(kind, 3);
    let params = ParamSet::init(spec)?;
    let model = Model::new(params.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..spec.input_len()).map(|_| rng.random::<f64>()).collect();
    let label = 1;

    let analytic = param_grad(&model, &[(x.clone(), label)])?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in (0..analytic.len()).step_by((analytic.len() / 12).max(1)) {
        let mut theta = params.theta.clone();
        theta[i] += h;
        let plus = Model::loss_at(spec, &theta, &x, label)?;
        theta[i] -= 2.0 * h;
        let minus = Model::loss_at(spec, &theta, &x, label)?;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric, 1e-3);
        worst = worst.max(err);
        println!("theta[{i:3}]  analytic {:+.6e}  numeric {:+.6e}  rel err {err:.1e}", analytic[i], numeric);
    }
    println!("{kind}: worst parameter relative error {worst:.1e}");

    let fast = input_grad(&model, &x, label);
    let reference = reference_input_grad(&model, &x, label, INPUT_FD_STEP);
    let input_worst = fast
        .iter()
        .zip(&reference)
        .map(|(a, b)| relative_error(*a, *b, 1e-3))
        .fold(0.0, f64::max);
    println!("{kind}: worst input-gradient relative error {input_worst:.1e} over {} pixels", fast.len());
    Ok(())
}
