use std::f64::consts::FRAC_1_SQRT_2;

use super::matrix::{CMatrix, C64, ONE, ZERO};
use super::{StateError, VALIDATION_TOL};

/// A one- or two-qubit unitary bound to target qubits.
///
/// For two-qubit gates `targets[0]` is the high-order bit of the 4×4 matrix
/// index, so `cnot(c, t)` has the textbook matrix with the control first.
#[derive(Clone, Debug, PartialEq)]
pub struct GateOp {
    targets: Vec<usize>,
    matrix: CMatrix,
}

impl GateOp {
    pub fn new(matrix: CMatrix, targets: Vec<usize>) -> Result<Self, StateError> {
        let arity = targets.len();
        if !(1..=2).contains(&arity) {
            return Err(StateError::BadArity(arity));
        }
        let dim = 1 << arity;
        if matrix.rows() != dim || matrix.cols() != dim {
            return Err(StateError::GateSize {
                arity,
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        if arity == 2 && targets[0] == targets[1] {
            return Err(StateError::DuplicateTarget(targets[0]));
        }
        let err = matrix.unitarity_error();
        if err > VALIDATION_TOL {
            return Err(StateError::NotUnitary(err));
        }
        Ok(Self { targets, matrix })
    }

    fn fixed1(q: usize, m: [C64; 4]) -> Self {
        Self {
            targets: vec![q],
            matrix: CMatrix::from_row_major(2, 2, m.to_vec()),
        }
    }

    fn fixed2(a: usize, b: usize, m: Vec<C64>) -> Self {
        assert_ne!(a, b, "two-qubit gate needs distinct targets");
        Self {
            targets: vec![a, b],
            matrix: CMatrix::from_row_major(4, 4, m),
        }
    }

    pub fn x(q: usize) -> Self {
        Self::fixed1(q, [ZERO, ONE, ONE, ZERO])
    }

    pub fn y(q: usize) -> Self {
        Self::fixed1(q, [ZERO, C64::new(0.0, -1.0), C64::new(0.0, 1.0), ZERO])
    }

    pub fn z(q: usize) -> Self {
        Self::fixed1(q, [ONE, ZERO, ZERO, -ONE])
    }

    pub fn h(q: usize) -> Self {
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        Self::fixed1(q, [s, s, s, -s])
    }

    pub fn rx(q: usize, theta: f64) -> Self {
        let (s, c) = (theta / 2.0).sin_cos();
        let ms = C64::new(0.0, -s);
        Self::fixed1(q, [C64::new(c, 0.0), ms, ms, C64::new(c, 0.0)])
    }

    pub fn ry(q: usize, theta: f64) -> Self {
        let (s, c) = (theta / 2.0).sin_cos();
        Self::fixed1(
            q,
            [C64::new(c, 0.0), C64::new(-s, 0.0), C64::new(s, 0.0), C64::new(c, 0.0)],
        )
    }

    pub fn rz(q: usize, theta: f64) -> Self {
        Self::fixed1(
            q,
            [
                C64::from_polar(1.0, -theta / 2.0),
                ZERO,
                ZERO,
                C64::from_polar(1.0, theta / 2.0),
            ],
        )
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        let mut m = vec![ZERO; 16];
        m[0] = ONE;
        m[5] = ONE;
        m[11] = ONE;
        m[14] = ONE;
        Self::fixed2(control, target, m)
    }

    pub fn cz(a: usize, b: usize) -> Self {
        let mut m = vec![ZERO; 16];
        m[0] = ONE;
        m[5] = ONE;
        m[10] = ONE;
        m[15] = -ONE;
        Self::fixed2(a, b, m)
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn arity(&self) -> usize {
        self.targets.len()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self {
            targets: self.targets.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    pub(crate) fn conj(&self) -> Self {
        Self {
            targets: self.targets.clone(),
            matrix: self.matrix.conj(),
        }
    }

    pub(crate) fn check_targets(&self, n_qubits: usize) -> Result<(), StateError> {
        for &t in &self.targets {
            if t >= n_qubits {
                return Err(StateError::QubitOutOfRange { qubit: t, n_qubits });
            }
        }
        Ok(())
    }

    /// Applies the gate in place to `data` viewed as `2^n` lanes of `width`
    /// contiguous entries each; the gate mixes lanes, not entries in a lane.
    /// `width = 1` is a statevector; `width = dim` left-multiplies a
    /// row-major matrix.
    pub(crate) fn apply_lanes(&self, data: &mut [C64], width: usize) {
        let m = self.matrix.as_slice();
        match self.targets.as_slice() {
            &[q] => apply_1q(data, width, q, [m[0], m[1], m[2], m[3]]),
            &[a, b] => apply_2q(data, width, a, b, m),
            _ => unreachable!("arity checked at construction"),
        }
    }
}

fn apply_1q(data: &mut [C64], width: usize, q: usize, m: [C64; 4]) {
    let lanes = data.len() / width;
    let stride = 1usize << q;
    let mut base = 0;
    while base < lanes {
        for lane in base..base + stride {
            let (lo, hi) = (lane * width, (lane + stride) * width);
            for k in 0..width {
                let a = data[lo + k];
                let b = data[hi + k];
                data[lo + k] = m[0] * a + m[1] * b;
                data[hi + k] = m[2] * a + m[3] * b;
            }
        }
        base += 2 * stride;
    }
}

fn apply_2q(data: &mut [C64], width: usize, hi_q: usize, lo_q: usize, m: &[C64]) {
    let lanes = data.len() / width;
    let bh = 1usize << hi_q;
    let bl = 1usize << lo_q;
    for lane in 0..lanes {
        if lane & (bh | bl) != 0 {
            continue;
        }
        let idx = [lane, lane | bl, lane | bh, lane | bh | bl];
        for k in 0..width {
            let v = [
                data[idx[0] * width + k],
                data[idx[1] * width + k],
                data[idx[2] * width + k],
                data[idx[3] * width + k],
            ];
            for (r, &dst) in idx.iter().enumerate() {
                let row = &m[r * 4..r * 4 + 4];
                data[dst * width + k] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
            }
        }
    }
}

/// `ρ ← G ρ G†` in place on a row-major square matrix.
pub(crate) fn conjugate_in_place(rho: &mut CMatrix, gate: &GateOp) {
    let dim = rho.rows();
    gate.apply_lanes(rho.as_mut_slice(), dim);
    // right-multiplying by G† applies conj(G) along each row
    let gc = gate.conj();
    for r in 0..dim {
        gc.apply_lanes(&mut rho.as_mut_slice()[r * dim..(r + 1) * dim], 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_gates_are_unitary() {
        for g in [
            GateOp::x(0),
            GateOp::y(0),
            GateOp::z(0),
            GateOp::h(0),
            GateOp::rx(0, 0.3),
            GateOp::ry(0, -1.1),
            GateOp::rz(0, 2.5),
            GateOp::cnot(0, 1),
            GateOp::cz(1, 0),
        ] {
            assert!(g.matrix().unitarity_error() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_gates() {
        let m = CMatrix::from_real(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(GateOp::new(m, vec![0]), Err(StateError::NotUnitary(_))));
        assert!(matches!(
            GateOp::new(CMatrix::identity(2), vec![0, 1]),
            Err(StateError::GateSize { .. })
        ));
        assert!(matches!(
            GateOp::new(CMatrix::identity(4), vec![1, 1]),
            Err(StateError::DuplicateTarget(1))
        ));
        assert!(matches!(
            GateOp::new(CMatrix::identity(8), vec![0, 1, 2]),
            Err(StateError::BadArity(3))
        ));
    }
}
