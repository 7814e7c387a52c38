use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoding::{encode, FeatureVector, SteerParams};
use crate::grad::relative_error;
use crate::qstate::{random_pure, C64};

fn random_image(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| if rng.random::<f64>() < 0.4 { 0.0 } else { rng.random::<f64>() })
        .collect()
}

fn binary_models(seed: u64) -> Vec<Model> {
    [ModelSpec::qcnn(seed), ModelSpec::vqc(seed)]
        .into_iter()
        .map(|s| Model::new(ParamSet::init(s).unwrap()).unwrap())
        .collect()
}

#[test]
fn parameter_counts() {
    assert_eq!(ModelSpec::qcnn(0).circuit_params(), 72);
    assert_eq!(ModelSpec::vqc(0).circuit_params(), 72);
    assert_eq!(ModelSpec::qnn(0).circuit_params(), 16);
    assert_eq!(ModelSpec::qnn(0).head_params(), 784 * 64 + 64 + 64 * 10 + 10);
    let conv: usize = qcnn_circuit()
        .ops()
        .iter()
        .filter(|op| matches!(op, Op::Fixed(_)))
        .count();
    // one CNOT per conv block and two per pool block
    assert_eq!(conv, 16 + 2 * 8);
}

#[test]
fn spec_validation() {
    let mut s = ModelSpec::vqc(0);
    s.n_qubits = 6;
    assert!(matches!(s.validate(), Err(ModelError::Spec(_))));
    let mut s = ModelSpec::qcnn(0);
    s.layers = 2;
    assert!(s.validate().is_err());
    assert!(ParamSet::new(ModelSpec::vqc(0), vec![0.0; 71]).is_err());
}

#[test]
fn paramset_json_round_trips_exactly() {
    for spec in [ModelSpec::qnn(5), ModelSpec::qcnn(5), ModelSpec::vqc(5)] {
        let p = ParamSet::init(spec).unwrap();
        let back = ParamSet::from_json(&p.to_json()).unwrap();
        assert_eq!(p, back);
        assert_eq!(p.hash(), back.hash());
        assert_eq!(p.partition.circuit.len(), spec.circuit_params());
    }
    let mut v: serde_json::Value = serde_json::from_str(&ParamSet::init(ModelSpec::vqc(1)).unwrap().to_json()).unwrap();
    v["theta"].as_array_mut().unwrap().pop();
    assert!(ParamSet::from_json(&v.to_string()).is_err());
}

#[test]
fn init_is_seeded() {
    let a = ParamSet::init(ModelSpec::vqc(3)).unwrap();
    assert_eq!(a, ParamSet::init(ModelSpec::vqc(3)).unwrap());
    assert_ne!(a.theta, ParamSet::init(ModelSpec::vqc(4)).unwrap().theta);
}

#[test]
fn zero_parameter_binary_models_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let psi = State::Pure(random_pure(8, &mut rng));
    let q = ParamSet::zeros(ModelSpec::qcnn(0)).unwrap();
    let a = qcnn_forward(&psi, &q).unwrap();
    assert_eq!(a, qcnn_forward(&psi, &q).unwrap());
    assert_eq!(a.values()[0] + a.values()[1], 0.0);
    let v = ParamSet::zeros(ModelSpec::vqc(0)).unwrap();
    let b = vqc_forward(&psi, &v).unwrap();
    assert_eq!(b, vqc_forward(&psi, &v).unwrap());
    assert!(b.values()[1].abs() <= 1.0);
    // with zero angles the VQC is a permutation of basis states, so
    // |0…0⟩ stays a basis state and reads ±1
    let zero = State::Pure(PureState::zero(8));
    assert!((vqc_forward(&zero, &v).unwrap().values()[1].abs() - 1.0).abs() < 1e-12);
}

#[test]
fn forward_rejects_bad_inputs() {
    let q = ParamSet::zeros(ModelSpec::qcnn(0)).unwrap();
    assert!(matches!(
        qcnn_forward(&State::Pure(PureState::zero(7)), &q),
        Err(ModelError::StateSize { expected: 8, got: 7 })
    ));
    assert!(matches!(
        vqc_forward(&State::Pure(PureState::zero(8)), &q),
        Err(ModelError::WrongKind { .. })
    ));
    let m = Model::new(q).unwrap();
    assert!(matches!(m.logits(&[0.5; 255], &Defense::None), Err(ModelError::InputLength { .. })));
    let mut x = vec![0.5; 256];
    x[3] = 1.5;
    assert!(matches!(m.logits(&x, &Defense::None), Err(ModelError::PixelRange { index: 3, .. })));
    assert!(matches!(m.logits(&[0.0; 256], &Defense::None), Err(ModelError::Encoding(_))));
    let single = Defense::SingleQubitSteer(SteerParams::new(0.3, 2));
    assert!(m.logits(&[0.5; 256], &single).is_err());
}

#[test]
fn mixed_path_matches_pure_path_on_rank_one_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    for model in binary_models(7) {
        for _ in 0..5 {
            let psi = random_pure(8, &mut rng);
            let pure = State::Pure(psi.clone());
            let mixed = State::Mixed(psi.to_density());
            let a = model.forward_state(&pure).unwrap().values()[1];
            let b = model.forward_state(&mixed).unwrap().values()[1];
            assert!((a - b).abs() < 1e-10);
            let free = match model.spec().kind {
                ModelKind::Qcnn => qcnn_forward(&mixed, model.params()).unwrap(),
                _ => vqc_forward(&mixed, model.params()).unwrap(),
            };
            assert!((free.values()[1] - a).abs() < 1e-10);
        }
    }
}

#[test]
fn binary_outputs_ignore_global_phase() {
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    for model in binary_models(8) {
        let psi = random_pure(8, &mut rng);
        let phase = C64::from_polar(1.0, 1.234);
        let rotated = PureState::new(8, psi.amplitudes().iter().map(|a| a * phase).collect()).unwrap();
        let a = model.forward_state(&State::Pure(psi)).unwrap().values()[1];
        let b = model.forward_state(&State::Pure(rotated)).unwrap().values()[1];
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn steered_binary_inference_matches_density_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    for model in binary_models(9) {
        for rounds in [1, 5, 20] {
            let x = random_image(&mut rng, 256);
            let d = Defense::MultiQubitSteer(SteerParams::new(PI / 10.0, rounds));
            let fast = model.logits(&x, &d).unwrap();
            let enc = model.spec().encoder(d).unwrap();
            let state = encode(&FeatureVector::pixels(&x).unwrap(), &enc).unwrap();
            assert!(matches!(state, State::Mixed(_)));
            let free = match model.spec().kind {
                ModelKind::Qcnn => qcnn_forward(&state, model.params()).unwrap(),
                _ => vqc_forward(&state, model.params()).unwrap(),
            };
            assert!((fast.values()[1] - free.values()[1]).abs() < 1e-10);
        }
    }
}

fn qnn() -> Model {
    Model::new(ParamSet::init(ModelSpec::qnn(11)).unwrap()).unwrap()
}

#[test]
fn quanv_of_blank_image_is_constant_per_channel() {
    let m = qnn();
    let maps = m.quanv(&[0.0; 784], &Defense::None).unwrap();
    for ch in maps.chunks(196) {
        assert!(ch.iter().all(|v| *v == ch[0]));
    }
}

#[test]
fn quanv_values_are_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(65);
    let m = qnn();
    let x = random_image(&mut rng, 784);
    for d in [
        Defense::None,
        Defense::SingleQubitSteer(SteerParams::new(PI / 16.0, 10)),
        Defense::MultiQubitSteer(SteerParams::new(PI / 16.0, 10)),
    ] {
        assert!(m.quanv(&x, &d).unwrap().iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }
}

#[test]
fn full_strength_single_qubit_steer_reproduces_undefended_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let m = qnn();
    let x = random_image(&mut rng, 784);
    let plain = m.quanv(&x, &Defense::None).unwrap();
    let steered = m
        .quanv(&x, &Defense::SingleQubitSteer(SteerParams::new(FRAC_PI_2, 1)))
        .unwrap();
    for (a, b) in plain.iter().zip(&steered) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn fast_quanv_matches_generic_encoder_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let m = qnn();
    let x = random_image(&mut rng, 784);
    for d in [
        Defense::None,
        Defense::SingleQubitSteer(SteerParams::new(PI / 16.0, 27)),
        Defense::MultiQubitSteer(SteerParams::new(PI / 16.0, 40)),
    ] {
        let fast = m.quanv(&x, &d).unwrap();
        let generic = quanv_forward(&x, m.params(), &m.spec().encoder(d).unwrap()).unwrap();
        let err = fast.iter().zip(&generic).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{d:?}: {err}");
    }
}

#[test]
fn qnn_head_zero_weights_give_zero_logits() {
    let p = ParamSet::zeros(ModelSpec::qnn(0)).unwrap();
    let logits = qnn_head_forward(&[0.3; 784], &p).unwrap();
    assert_eq!(logits.values(), &[0.0; 10]);
    assert!(qnn_head_forward(&[0.3; 100], &p).is_err());
}

#[test]
fn qnn_head_is_linear_in_final_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(68);
    let base = ParamSet::init(ModelSpec::qnn(1)).unwrap();
    let maps: Vec<f64> = (0..784).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w2 = base.partition.head.start + 784 * 64 + 64;
    let with = |scale: f64, shift: &[f64]| {
        let mut p = base.clone();
        for (k, i) in (w2..p.theta.len()).enumerate() {
            p.theta[i] = scale * base.theta[i] + shift[k];
        }
        qnn_head_forward(&maps, &p).unwrap().0
    };
    let n = 64 * 10 + 10;
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = with(1.0, &vec![0.0; n]);
    let b = with(0.0, &d);
    let ab = with(1.0, &d);
    for i in 0..10 {
        assert!((a[i] + b[i] - ab[i]).abs() < 1e-12);
    }
}

#[test]
fn fast_input_gradients_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(69);
    for model in binary_models(12).into_iter().chain([qnn()]) {
        let x = random_image(&mut rng, model.spec().input_len());
        let label = rng.random_range(0..model.spec().classes);
        let fast = model.fd_input_grad(&x, label, 1e-3);
        let slow = reference_input_grad(&model, &x, label, 1e-3);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn parameter_shift_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for model in binary_models(13) {
        let x = random_image(&mut rng, 256);
        let label = rng.random_range(0..2);
        let g = model.param_grad(&[(x.clone(), label)]).unwrap();
        for j in [0, 17, 40, 71] {
            let h = 1e-4;
            let mut tp = model.params().theta.clone();
            tp[j] += h;
            let mut tm = model.params().theta.clone();
            tm[j] -= h;
            let spec = *model.spec();
            let fd = (Model::loss_at(spec, &tp, &x, label).unwrap()
                - Model::loss_at(spec, &tm, &x, label).unwrap())
                / (2.0 * h);
            assert!(relative_error(g[j], fd, 1e-3) < 1e-4, "{j}: {} vs {fd}", g[j]);
        }
    }
}

#[test]
fn qnn_gradient_covers_kernel_and_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let m = qnn();
    let x = random_image(&mut rng, 784);
    let g = m.param_grad(&[(x.clone(), 4)]).unwrap();
    let spec = *m.spec();
    for j in [0, 9, 15, 16, 16 + 784 * 3 + 200, 16 + 784 * 64 + 5, spec.n_params() - 1] {
        let h = 1e-4;
        let mut tp = m.params().theta.clone();
        tp[j] += h;
        let mut tm = m.params().theta.clone();
        tm[j] -= h;
        let fd = (Model::loss_at(spec, &tp, &x, 4).unwrap() - Model::loss_at(spec, &tm, &x, 4).unwrap())
            / (2.0 * h);
        assert!(relative_error(g[j], fd, 1e-3) < 1e-4, "{j}: {} vs {fd}", g[j]);
    }
}
