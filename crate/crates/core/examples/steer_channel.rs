//! Steers |000⟩ toward a random three-qubit target and compares the reduced
//! channel, its Kraus form and the ancilla dilation round by round.

use num_complex::Complex64;
use qsteer::qstate::PureState;
use qsteer::steering::{build_channel, fidelity_oracle, steer_dilated_trajectory, SteeringMode, SteeringPlan};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let amps: Vec<Complex64> = (0..8)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
        .collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let target = PureState::new(3, amps.into_iter().map(|a| a / norm).collect())?;
    let initial = PureState::zero(3);

    let strength = std::f64::consts::PI / 10.0;
    let rounds = 12;
    let plan = SteeringPlan::new(strength, rounds, SteeringMode::MultiQubit, target.clone())?;
    let channel = build_channel(&plan, &initial)?;
    println!("Kraus completeness error {:.2e}", channel.completeness_error());

    let f0 = initial.fidelity_to_pure(&target)?;
    let reduced = channel.trajectory(&initial.to_density(), rounds)?;
    let dilated = steer_dilated_trajectory(&plan, &initial)?;
    let mut kraus = initial.to_density();
    println!(" N  fidelity  closed form  |reduced - dilated|  |reduced - kraus|");
    for (n, (r, d)) in reduced.iter().zip(&dilated).enumerate() {
        if n > 0 {
            kraus = channel.apply_kraus(&kraus)?;
        }
        println!(
            "{n:2}  {:.6}  {:.6}     {:.1e}              {:.1e}",
            r.fidelity_to_pure(&target)?,
            fidelity_oracle(f0, strength, n as u32),
            r.matrix().max_abs_diff(d.matrix()),
            r.matrix().max_abs_diff(kraus.matrix()),
        );
    }
    Ok(())
}
