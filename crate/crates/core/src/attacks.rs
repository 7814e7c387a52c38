//! White-box FGSM and PGD on the undefended model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::Defense;
use crate::grad::input_grad;
use crate::models::{Classifier, Model, ModelError};

pub const PGD_ALPHA: f64 = 0.02;
pub const PGD_STEPS: usize = 20;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack: {0}")]
    Spec(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// L∞ budget on the pixel scale.
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
}

impl AttackSpec {
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            epsilon,
            alpha: epsilon,
            steps: 1,
        }
    }

    pub fn pgd(epsilon: f64) -> Self {
        Self::pgd_with(epsilon, PGD_ALPHA, PGD_STEPS)
    }

    pub fn pgd_with(epsilon: f64, alpha: f64, steps: usize) -> Self {
        Self {
            kind: AttackKind::Pgd,
            epsilon,
            alpha,
            steps,
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        match self.kind {
            AttackKind::Fgsm => Self::fgsm(epsilon),
            AttackKind::Pgd => Self::pgd_with(epsilon, self.alpha, self.steps),
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(AttackError::Spec(format!("epsilon {} must be finite and ≥ 0", self.epsilon)));
        }
        if self.kind == AttackKind::Pgd {
            if !(self.alpha > 0.0 && self.alpha.is_finite()) {
                return Err(AttackError::Spec(format!("alpha {} must be positive", self.alpha)));
            }
            if self.steps == 0 {
                return Err(AttackError::Spec("pgd needs at least one step".into()));
            }
        }
        Ok(())
    }
}

/// `sign` with `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamps `z` into the L∞ ball of radius `eps` around `x`. Bounds are
/// pulled in by an ulp where rounding would otherwise put them outside,
/// so `|out_i − x_i| ≤ eps` holds in floating point.
pub fn project_linf(z: &[f64], x: &[f64], eps: f64) -> Vec<f64> {
    z.iter()
        .zip(x)
        .map(|(&zi, &xi)| {
            let mut hi = xi + eps;
            while hi - xi > eps {
                hi = hi.next_down();
            }
            let mut lo = xi - eps;
            while xi - lo > eps {
                lo = lo.next_up();
            }
            zi.clamp(lo, hi)
        })
        .collect()
}

pub fn clip_unit(z: &mut [f64]) {
    for v in z {
        *v = v.clamp(0.0, 1.0);
    }
}

/// `‖a − b‖∞`.
pub fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

fn signed_step<C: Classifier + ?Sized>(model: &C, x: &[f64], label: usize, step: f64) -> Vec<f64> {
    let g = input_grad(model, x, label);
    x.iter().zip(&g).map(|(v, gi)| v + step * sign(*gi)).collect()
}

/// `clip_[0,1](Π_ε(x + ε·sign(∇ₓL)))`.
pub fn fgsm<C: Classifier + ?Sized>(model: &C, image: &[f64], label: usize, eps: f64) -> Vec<f64> {
    let mut out = project_linf(&signed_step(model, image, label, eps), image, eps);
    clip_unit(&mut out);
    out
}

/// Iterated signed steps from the clean image; after each step, project
/// onto the ε-ball around `image` and clip to `[0, 1]`.
pub fn pgd<C: Classifier + ?Sized>(model: &C, image: &[f64], label: usize, spec: &AttackSpec) -> Vec<f64> {
    let mut x = image.to_vec();
    for _ in 0..spec.steps {
        x = project_linf(&signed_step(model, &x, label, spec.alpha), image, spec.epsilon);
        clip_unit(&mut x);
    }
    x
}

pub fn attack<C: Classifier + ?Sized>(
    model: &C,
    image: &[f64],
    label: usize,
    spec: &AttackSpec,
) -> Result<Vec<f64>, AttackError> {
    spec.validate()?;
    Ok(match spec.kind {
        AttackKind::Fgsm => fgsm(model, image, label, spec.epsilon),
        AttackKind::Pgd => pgd(model, image, label, spec),
    })
}

/// Adversarial copies of a whole set, computed in parallel.
pub fn attack_set<C: Classifier + ?Sized>(
    model: &C,
    images: &[Vec<f64>],
    labels: &[usize],
    spec: &AttackSpec,
) -> Result<Vec<Vec<f64>>, AttackError> {
    spec.validate()?;
    images
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, &y)| attack(model, x, y, spec))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub undefended: f64,
    pub defended: f64,
}

pub fn accuracy(model: &Model, images: &[Vec<f64>], labels: &[usize], defense: &Defense) -> Result<f64, ModelError> {
    let preds = model.predict_batch(images, defense)?;
    Ok(preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len().max(1) as f64)
}

/// For each ε: one adversarial set from the undefended model, scored with
/// and without `defense`.
pub fn attack_curve(
    model: &Model,
    images: &[Vec<f64>],
    labels: &[usize],
    base: &AttackSpec,
    epsilons: &[f64],
    defense: &Defense,
) -> Result<Vec<CurvePoint>, AttackError> {
    if images.is_empty() {
        return Err(AttackError::EmptyDataset);
    }
    epsilons
        .iter()
        .map(|&eps| {
            let adv = attack_set(model, images, labels, &base.with_epsilon(eps))?;
            Ok(CurvePoint {
                epsilon: eps,
                undefended: accuracy(model, &adv, labels, &Defense::None)?,
                defended: accuracy(model, &adv, labels, defense)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// One angle-encoded qubit per pixel: `z_i = cos(π x_i)`, logits
    /// `(0, Σ w_i z_i)`, so `∂L/∂x_i` has the sign of `(p − y)·w_i·(−sin π x_i)`.
    struct CosToy {
        w: Vec<f64>,
    }

    impl Classifier for CosToy {
        fn input_len(&self) -> usize {
            self.w.len()
        }
        fn n_classes(&self) -> usize {
            2
        }
        fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
            vec![0.0, self.w.iter().zip(x).map(|(w, v)| w * (PI * v).cos()).sum()]
        }
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(2.0), 1.0);
        assert_eq!(sign(-1e-300), -1.0);
    }

    #[test]
    fn projection_is_idempotent_and_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        for _ in 0..2000 {
            let x: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
            let z: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..2.0)).collect();
            let eps = rng.random_range(0.0..0.4);
            let p = project_linf(&z, &x, eps);
            assert_eq!(project_linf(&p, &x, eps), p);
            assert!(linf_distance(&p, &x) <= eps);
        }
    }

    #[test]
    fn fgsm_matches_hand_computed_signs() {
        let toy = CosToy {
            w: vec![1.0, -2.0, 0.5, 0.0],
        };
        let x = [0.25, 0.25, 0.75, 0.5];
        // label 1, p < 1: ∂L/∂x_i ∝ w_i sin(π x_i)
        let adv = fgsm(&toy, &x, 1, 0.1);
        let expect = [0.35, 0.15, 0.85, 0.5];
        for (a, e) in adv.iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_budget_is_identity() {
        let toy = CosToy { w: vec![0.7, -0.3, 1.1] };
        let x = [0.1, 0.9, 0.4];
        assert_eq!(fgsm(&toy, &x, 0, 0.0), x);
        assert_eq!(pgd(&toy, &x, 0, &AttackSpec::pgd(0.0)), x);
    }

    #[test]
    fn single_step_pgd_is_fgsm() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let toy = CosToy {
            w: (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        for _ in 0..50 {
            let x: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
            let eps = rng.random_range(0.0..0.3);
            let y = rng.random_range(0..2);
            assert_eq!(pgd(&toy, &x, y, &AttackSpec::pgd_with(eps, eps, 1)), fgsm(&toy, &x, y, eps));
        }
    }

    #[test]
    fn pgd_respects_budget_and_pixel_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let toy = CosToy {
            w: (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        for _ in 0..30 {
            let x: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
            let spec = AttackSpec::pgd(rng.random_range(0.0..0.3));
            let adv = pgd(&toy, &x, 1, &spec);
            assert!(linf_distance(&adv, &x) <= spec.epsilon);
            assert!(adv.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn spec_validation() {
        assert!(AttackSpec::fgsm(-0.1).validate().is_err());
        assert!(AttackSpec::pgd_with(0.1, 0.0, 5).validate().is_err());
        assert!(AttackSpec::pgd_with(0.1, 0.02, 0).validate().is_err());
        assert_eq!(AttackSpec::pgd(0.1).alpha, 0.02);
        assert_eq!(AttackSpec::pgd(0.1).steps, 20);
    }
}
