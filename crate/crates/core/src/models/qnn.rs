use std::f64::consts::PI;

use super::circuit::{Axis, Circuit};
use super::{Logits, ModelError, ParamSet};
use crate::encoding::{angle_state, Defense, SteeredPlane};
use crate::grad::{cross_entropy, softmax, Trainable};
use crate::qstate::{CMatrix, GateOp, PureState, C64};

/// Patches per side of a 28×28 image.
pub const PATCH_GRID: usize = 14;
/// Four channels of 14×14.
pub const QNN_FEATURES: usize = 4 * PATCH_GRID * PATCH_GRID;

/// The quanvolution kernel: per layer, `R_y` then `R_z` on each of the 4
/// qubits followed by a CNOT ring.
pub fn qnn_kernel_circuit(layers: usize) -> Circuit {
    let mut c = Circuit::new(4);
    for _ in 0..layers {
        for q in 0..4 {
            c.rot(Axis::Y, q);
            c.rot(Axis::Z, q);
        }
        for q in 0..4 {
            c.fixed(GateOp::cnot(q, (q + 1) % 4));
        }
    }
    c
}

/// Pixels `(r,c), (r,c+1), (r+1,c), (r+1,c+1)` of patch `(pr, pc)`, which
/// drive qubits 0 to 3.
pub(super) fn patch_pixels(image: &[f64], pr: usize, pc: usize) -> [f64; 4] {
    let (r, c) = (2 * pr, 2 * pc);
    [
        image[r * 28 + c],
        image[r * 28 + c + 1],
        image[(r + 1) * 28 + c],
        image[(r + 1) * 28 + c + 1],
    ]
}

/// Position of channel `q` at patch `(pr, pc)` in the flat feature vector.
pub(super) fn feature_index(q: usize, pr: usize, pc: usize) -> usize {
    (q * PATCH_GRID + pr) * PATCH_GRID + pc
}

pub(super) struct Head {
    hidden: usize,
    classes: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Head {
    pub(super) fn from_slice(theta: &[f64], hidden: usize, classes: usize) -> Self {
        let (w1, rest) = theta.split_at(hidden * QNN_FEATURES);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(hidden * classes);
        Self {
            hidden,
            classes,
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: b2.to_vec(),
        }
    }

    pub(super) fn from_params(params: &ParamSet) -> Self {
        let hidden = params.spec.head_hidden.expect("qnn has a head");
        Self::from_slice(params.head(), hidden, params.spec.classes)
    }

    fn pre_activation(&self, f: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * QNN_FEATURES..(j + 1) * QNN_FEATURES];
                self.b1[j] + row.iter().zip(f).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    fn output(&self, a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h: Vec<f64> = a.iter().map(|v| v.tanh()).collect();
        let out = (0..self.classes)
            .map(|c| {
                let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
                self.b2[c] + row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        (h, out)
    }

    /// Hidden activations and logits.
    pub(super) fn forward(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.output(&self.pre_activation(f))
    }

    /// Head gradient (same layout as the head parameters) and `∂L/∂f`.
    fn backward(&self, f: &[f64], h: &[f64], logits: &[f64], label: usize) -> (Vec<f64>, Vec<f64>) {
        let mut d_out = softmax(logits);
        d_out[label] -= 1.0;
        let mut grad = vec![0.0; self.w1.len() + self.hidden + self.w2.len() + self.classes];
        let (g_w1, rest) = grad.split_at_mut(self.w1.len());
        let (g_b1, rest) = rest.split_at_mut(self.hidden);
        let (g_w2, g_b2) = rest.split_at_mut(self.w2.len());
        let mut d_a = vec![0.0; self.hidden];
        for c in 0..self.classes {
            g_b2[c] = d_out[c];
            for j in 0..self.hidden {
                g_w2[c * self.hidden + j] = d_out[c] * h[j];
                d_a[j] += self.w2[c * self.hidden + j] * d_out[c];
            }
        }
        let mut d_f = vec![0.0; QNN_FEATURES];
        for j in 0..self.hidden {
            d_a[j] *= 1.0 - h[j] * h[j];
            g_b1[j] = d_a[j];
            let row = &self.w1[j * QNN_FEATURES..(j + 1) * QNN_FEATURES];
            let g_row = &mut g_w1[j * QNN_FEATURES..(j + 1) * QNN_FEATURES];
            for i in 0..QNN_FEATURES {
                g_row[i] = d_a[j] * f[i];
                d_f[i] += row[i] * d_a[j];
            }
        }
        (grad, d_f)
    }
}

pub(super) struct Qnn {
    kernel: Circuit,
    theta: Vec<f64>,
    observables: Vec<CMatrix>,
    head: Head,
}

fn z_diag(q: usize, a: &[C64], b: &[C64]) -> C64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| if i >> q & 1 == 0 { x.conj() * y } else { -(x.conj() * y) })
        .sum()
}

impl Qnn {
    pub(super) fn new(params: &ParamSet) -> Self {
        let kernel = params.spec.circuit();
        let theta = params.circuit().to_vec();
        let observables = (0..4).map(|q| kernel.heisenberg_z(&theta, q)).collect();
        Self {
            kernel,
            theta,
            observables,
            head: Head::from_params(params),
        }
    }

    fn patch_pure(&self, pixels: [f64; 4]) -> [f64; 4] {
        let psi = angle_state(&pixels.map(|p| p * PI));
        let out = self.kernel.apply_pure(&psi, &self.theta);
        [0, 1, 2, 3].map(|q| out.expectation_z(q).expect("kernel qubit"))
    }

    fn patch_plane(&self, plane: &SteeredPlane) -> [f64; 4] {
        let (p, q, r) = plane.weights();
        let ut = self.kernel.apply_pure(plane.target(), &self.theta);
        let ue = plane.source().map(|e| {
            self.kernel
                .apply_pure(&PureState::from_amps_unchecked(4, e.to_vec()), &self.theta)
        });
        [0, 1, 2, 3].map(|k| {
            let ta = ut.amplitudes();
            let mut z = p * z_diag(k, ta, ta).re;
            if let Some(ue) = &ue {
                let ea = ue.amplitudes();
                z += r * z_diag(k, ea, ea).re + 2.0 * (q * z_diag(k, ea, ta)).re;
            }
            z
        })
    }

    fn patch_product(&self, factors: &[CMatrix; 4]) -> [f64; 4] {
        let rho = factors[3]
            .kron(&factors[2])
            .kron(&factors[1])
            .kron(&factors[0]);
        [0, 1, 2, 3].map(|k| rho.trace_product(&self.observables[k]).re)
    }

    fn patch_features(&self, pixels: [f64; 4], defense: &Defense) -> Result<[f64; 4], ModelError> {
        Ok(match defense {
            Defense::None => self.patch_pure(pixels),
            Defense::MultiQubitSteer(p) => {
                let target = angle_state(&pixels.map(|v| v * PI));
                self.patch_plane(&SteeredPlane::from_zero(&target, *p)?)
            }
            Defense::SingleQubitSteer(p) => {
                let mut factors = Vec::with_capacity(4);
                for v in pixels {
                    let plane = SteeredPlane::from_zero(&angle_state(&[v * PI]), *p)?;
                    factors.push(plane.to_density().into_matrix());
                }
                let factors: [CMatrix; 4] = factors.try_into().expect("four qubits");
                self.patch_product(&factors)
            }
        })
    }

    pub(super) fn quanv(&self, image: &[f64], defense: &Defense) -> Result<Vec<f64>, ModelError> {
        let mut maps = vec![0.0; QNN_FEATURES];
        for pr in 0..PATCH_GRID {
            for pc in 0..PATCH_GRID {
                let z = self.patch_features(patch_pixels(image, pr, pc), defense)?;
                for (q, v) in z.into_iter().enumerate() {
                    maps[feature_index(q, pr, pc)] = v;
                }
            }
        }
        Ok(maps)
    }

    pub(super) fn logits(&self, x: &[f64], defense: &Defense) -> Result<Logits, ModelError> {
        Ok(Logits(self.head.forward(&self.quanv(x, defense)?).1))
    }

    fn quanv_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut maps = vec![0.0; QNN_FEATURES];
        for pr in 0..PATCH_GRID {
            for pc in 0..PATCH_GRID {
                for (q, v) in self.patch_pure(patch_pixels(x, pr, pc)).into_iter().enumerate() {
                    maps[feature_index(q, pr, pc)] = v;
                }
            }
        }
        maps
    }

    pub(super) fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.head.forward(&self.quanv_unchecked(x)).1
    }

    /// Central differences where a pixel step only recomputes its patch and
    /// updates the hidden pre-activations through the four touched columns.
    pub(super) fn fd_input_grad(&self, x: &[f64], label: usize, h: f64) -> Vec<f64> {
        let f = self.quanv_unchecked(x);
        let a = self.head.pre_activation(&f);
        let mut shifted = a.clone();
        (0..x.len())
            .map(|i| {
                let (r, c) = (i / 28, i % 28);
                let (pr, pc) = (r / 2, c / 2);
                let slot = (r % 2) * 2 + c % 2;
                let mut loss = [0.0; 2];
                for (k, s) in [h, -h].into_iter().enumerate() {
                    let mut px = patch_pixels(x, pr, pc);
                    px[slot] += s;
                    let z = self.patch_pure(px);
                    shifted.copy_from_slice(&a);
                    for (q, zq) in z.iter().enumerate() {
                        let idx = feature_index(q, pr, pc);
                        let delta = zq - f[idx];
                        for (j, v) in shifted.iter_mut().enumerate() {
                            *v += self.head.w1[j * QNN_FEATURES + idx] * delta;
                        }
                    }
                    loss[k] = cross_entropy(&self.head.output(&shifted).1, label);
                }
                (loss[0] - loss[1]) / (2.0 * h)
            })
            .collect()
    }

    /// Loss gradient in every parameter: kernel angles by the shift rule
    /// summed over patches, head weights by backpropagation.
    pub(super) fn full_grad(&self, x: &[f64], label: usize) -> Result<Vec<f64>, ModelError> {
        let mut f = vec![0.0; QNN_FEATURES];
        let mut patch_grads = Vec::with_capacity(PATCH_GRID * PATCH_GRID);
        for pr in 0..PATCH_GRID {
            for pc in 0..PATCH_GRID {
                let psi = angle_state(&patch_pixels(x, pr, pc).map(|p| p * PI));
                let (z, g) = self.kernel.shift_gradients(&psi, &self.theta, &[0, 1, 2, 3]);
                for q in 0..4 {
                    f[feature_index(q, pr, pc)] = z[q];
                }
                patch_grads.push((pr, pc, g));
            }
        }
        let (h, logits) = self.head.forward(&f);
        let (head_grad, d_f) = self.head.backward(&f, &h, &logits, label);
        let mut grad = vec![0.0; self.theta.len()];
        for (pr, pc, g) in &patch_grads {
            for (q, gq) in g.iter().enumerate() {
                let w = d_f[feature_index(q, *pr, *pc)];
                for (acc, d) in grad.iter_mut().zip(gq) {
                    *acc += w * d;
                }
            }
        }
        grad.extend(head_grad);
        Ok(grad)
    }
}

/// Training view of the QNN with a frozen kernel: inputs are precomputed
/// feature maps and only the head moves.
pub struct QnnHeadTrainer {
    n_kernel: usize,
    hidden: usize,
    classes: usize,
}

impl QnnHeadTrainer {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            n_kernel: params.partition.circuit.len(),
            hidden: params.spec.head_hidden.expect("qnn has a head"),
            classes: params.spec.classes,
        }
    }

    fn head(&self, theta: &[f64]) -> Head {
        Head::from_slice(&theta[self.n_kernel..], self.hidden, self.classes)
    }
}

impl Trainable for QnnHeadTrainer {
    type Input = Vec<f64>;

    fn n_params(&self) -> usize {
        self.n_kernel + QNN_FEATURES * self.hidden + self.hidden + self.hidden * self.classes + self.classes
    }

    fn is_trainable(&self, index: usize) -> bool {
        index >= self.n_kernel
    }

    fn logits(&self, theta: &[f64], x: &Vec<f64>) -> Vec<f64> {
        self.head(theta).forward(x).1
    }

    fn loss_grad(&self, theta: &[f64], x: &Vec<f64>, label: usize) -> (f64, Vec<f64>) {
        let head = self.head(theta);
        let (h, logits) = head.forward(x);
        let (head_grad, _) = head.backward(x, &h, &logits, label);
        let mut grad = vec![0.0; self.n_kernel];
        grad.extend(head_grad);
        (cross_entropy(&logits, label), grad)
    }
}
