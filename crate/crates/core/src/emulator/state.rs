//! Dense state vector and gate matrices.
//!
//! Qubit `q` is bit `q` of the basis-state index (little-endian).
//! Rz(θ) = diag(e^{-iθ/2}, e^{iθ/2}), Ry(θ) = exp(-iθY/2), Rx(θ) = exp(-iθX/2).

use num_complex::Complex64;

use crate::ir::GateKind;

pub type Mat2 = [[Complex64; 2]; 2];

const fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

const ZERO: Complex64 = c(0.0, 0.0);
const ONE: Complex64 = c(1.0, 0.0);

/// 2x2 unitary for a single-qubit gate. Panics on `cx` or unknown gates.
pub fn matrix(kind: &GateKind, angle: Option<f64>) -> Mat2 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let th = angle.unwrap_or(0.0);
    let (cs, sn) = ((th / 2.0).cos(), (th / 2.0).sin());
    let t = Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
    match kind {
        GateKind::X => [[ZERO, ONE], [ONE, ZERO]],
        GateKind::Y => [[ZERO, c(0.0, -1.0)], [c(0.0, 1.0), ZERO]],
        GateKind::Z => [[ONE, ZERO], [ZERO, c(-1.0, 0.0)]],
        GateKind::H => [[c(h, 0.0), c(h, 0.0)], [c(h, 0.0), c(-h, 0.0)]],
        GateKind::S => [[ONE, ZERO], [ZERO, c(0.0, 1.0)]],
        GateKind::Sdg => [[ONE, ZERO], [ZERO, c(0.0, -1.0)]],
        GateKind::T => [[ONE, ZERO], [ZERO, t]],
        GateKind::Tdg => [[ONE, ZERO], [ZERO, t.conj()]],
        GateKind::Rx => [[c(cs, 0.0), c(0.0, -sn)], [c(0.0, -sn), c(cs, 0.0)]],
        GateKind::Ry => [[c(cs, 0.0), c(-sn, 0.0)], [c(sn, 0.0), c(cs, 0.0)]],
        GateKind::Rz => [
            [Complex64::from_polar(1.0, -th / 2.0), ZERO],
            [ZERO, Complex64::from_polar(1.0, th / 2.0)],
        ],
        GateKind::Cx | GateKind::Other(_) => panic!("no 2x2 matrix for {}", kind.name()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub n: usize,
    pub amps: Vec<Complex64>,
}

impl StateVector {
    /// |0...0> on `n` qubits.
    pub fn new(n: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n];
        amps[0] = ONE;
        StateVector { n, amps }
    }

    pub fn basis(n: usize, index: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n];
        amps[index] = ONE;
        StateVector { n, amps }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn apply_1q(&mut self, m: &Mat2, q: usize) {
        let bit = 1usize << q;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let (a0, a1) = (self.amps[i], self.amps[i | bit]);
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[i | bit] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }

    pub fn apply_cx(&mut self, control: usize, target: usize) {
        let (cb, tb) = (1usize << control, 1usize << target);
        for i in 0..self.amps.len() {
            if i & cb != 0 && i & tb == 0 {
                self.amps.swap(i, i | tb);
            }
        }
    }

    pub fn apply_gate(&mut self, kind: &GateKind, qubits: &[usize], angle: Option<f64>) {
        match kind {
            GateKind::Cx => self.apply_cx(qubits[0], qubits[1]),
            k => self.apply_1q(&matrix(k, angle), qubits[0]),
        }
    }

    pub fn apply_pauli(&mut self, p: u8, q: usize) {
        match p {
            1 => self.apply_1q(&matrix(&GateKind::X, None), q),
            2 => self.apply_1q(&matrix(&GateKind::Y, None), q),
            3 => self.apply_1q(&matrix(&GateKind::Z, None), q),
            _ => {}
        }
    }

    /// Probability that qubit `q` reads 1.
    pub fn prob_one(&self, q: usize) -> f64 {
        let bit = 1usize << q;
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & bit != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Projects qubit `q` onto `outcome` and renormalizes. Returns the branch probability.
    pub fn collapse(&mut self, q: usize, outcome: bool) -> f64 {
        let bit = 1usize << q;
        let mut p = 0.0;
        for (i, a) in self.amps.iter_mut().enumerate() {
            if ((i & bit) != 0) != outcome {
                *a = ZERO;
            } else {
                p += a.norm_sqr();
            }
        }
        if p > 0.0 {
            let s = 1.0 / p.sqrt();
            for a in &mut self.amps {
                *a *= s;
            }
        }
        p
    }

    /// Moves qubit `q` to |0> after it has been projected onto `outcome`.
    pub fn flip_to_zero(&mut self, q: usize, outcome: bool) {
        if outcome {
            self.apply_pauli(1, q);
        }
    }

    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Reduced Bloch vector of qubit `q`.
    pub fn bloch(&self, q: usize) -> [f64; 3] {
        let bit = 1usize << q;
        let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let (a0, a1) = (self.amps[i], self.amps[i | bit]);
                let r = a0.conj() * a1;
                x += 2.0 * r.re;
                y += 2.0 * r.im;
                z += a0.norm_sqr() - a1.norm_sqr();
            }
        }
        [x, y, z]
    }
}

/// Unitary of a short circuit on `n` qubits as columns (column j = U|j>).
pub fn circuit_unitary(n: usize, gates: &[(GateKind, Vec<usize>, Option<f64>)]) -> Vec<StateVector> {
    (0..1usize << n)
        .map(|j| {
            let mut s = StateVector::basis(n, j);
            for (k, q, a) in gates {
                s.apply_gate(k, q, *a);
            }
            s
        })
        .collect()
}

/// True if `a` and `b` agree up to a global phase within `tol`.
pub fn equal_up_to_phase(a: &[StateVector], b: &[StateVector], tol: f64) -> bool {
    let mut phase: Option<Complex64> = None;
    for (ca, cb) in a.iter().zip(b) {
        for (x, y) in ca.amps.iter().zip(&cb.amps) {
            if phase.is_none() && x.norm() > 1e-6 {
                if y.norm() < 1e-9 {
                    return false;
                }
                phase = Some(y / x);
            }
            let p = phase.unwrap_or(ONE);
            if (x * p - y).norm() > tol {
                return false;
            }
        }
    }
    true
}
