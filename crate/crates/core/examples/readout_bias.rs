//! Shows how multi-qubit steering from |0…0⟩ acts on an amplitude-encoded
//! binary classifier: the steered readout is close to `p·z(x) + r·z(|0…0⟩)`,
//! so the defense mostly adds a constant offset set by `z(|0…0⟩)`.
//!
//! Usage: `cargo run --release --example readout_bias -- [vqc|qcnn]`

use std::f64::consts::PI;

use qsteer::attacks::{attack_set, AttackSpec};
use qsteer::encoding::{Defense, SteerParams, SteeredPlane};
use qsteer::experiment::{ExperimentConfig, Session};
use qsteer::models::{amplitude_input, ModelKind};
use qsteer::qstate::{PureState, State};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig {
        model: match std::env::args().nth(1).as_deref() {
            Some("qcnn") => ModelKind::Qcnn,
            _ => ModelKind::Vqc,
        },
        ..ExperimentConfig::default()
    };
    let session = Session::open(&cfg)?;
    let model = &session.model;
    let z0 = model.forward_state(&State::Pure(PureState::zero(8)))?.values()[1];
    println!("z(|0…0⟩) = {z0:+.4}");

    let x = &session.data.test.images()[..100];
    let y = &session.data.test_labels()[..100];
    let adv = attack_set(model, x, y, &AttackSpec::pgd(0.1))?;
    let z = |im: &[f64], d: &Defense| model.logits(im, d).map(|l| l.values()[1]);
    println!(" N    p       r     clean  defended  pgd   defended  max |z_def - (p z + r z0)|");
    for n in [1, 2, 4, 10, 20, 40] {
        let params = SteerParams::new(PI / 10.0, n);
        let d = Defense::MultiQubitSteer(params);
        let mut hits = [0usize; 4];
        let mut dev = 0.0f64;
        let (mut p_avg, mut r_avg) = (0.0, 0.0);
        for i in 0..x.len() {
            let plane = SteeredPlane::from_zero(&amplitude_input(&x[i])?, params)?;
            let (p, _, r) = plane.weights();
            p_avg += p / x.len() as f64;
            r_avg += r / x.len() as f64;
            let (zc, zd) = (z(&x[i], &Defense::None)?, z(&x[i], &d)?);
            dev = dev.max((zd - (p * zc + r * z0)).abs());
            let right = |v: f64| ((v > 0.0) as usize == y[i]) as usize;
            hits[0] += right(zc);
            hits[1] += right(zd);
            hits[2] += right(z(&adv[i], &Defense::None)?);
            hits[3] += right(z(&adv[i], &d)?);
        }
        println!(
            "{n:2}  {p_avg:.3}  {r_avg:.3}   {:3}     {:3}     {:3}    {:3}      {dev:.1e}",
            hits[0], hits[1], hits[2], hits[3]
        );
    }
    Ok(())
}
