//! Statevector simulation of parameterized circuits and the hardware-efficient
//! ansatz.
//!
//! Qubit 0 is the most significant bit of the basis index, so `Z ⊗ I` acts on
//! qubit 0 and `|10⟩` has qubit 0 set.
//!
//! Gradients use the parameter-shift rule. Every loss in this crate is a
//! function of overlap probabilities `p = |⟨t|V(θ)|x⟩|²`, each of which is an
//! expectation value of the projector `|t⟩⟨t|`; for a gate `exp(-iθP/2)` the
//! exact derivative is `(p(θ + π/2) - p(θ - π/2)) / 2`. The shifted circuits
//! are evaluated with cached prefix states and suffix bras, so one gradient
//! costs one forward and one backward sweep per (input, bra) pair.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::Rng;

use crate::error::{domain, shape, Error, Result};
use crate::linalg::{inner, ComplexMatrix, PureState, C64, I, ONE, ZERO};
use crate::observables::Observable;

/// Largest register for which dense unitaries are materialized.
pub const MAX_MATRIX_QUBITS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// A gate with its parameter slots; slots index into `ParamCircuit::theta`.
///
/// `Rot { slots: [a, b, c] }` is `RZ(θ_c)·RY(θ_b)·RZ(θ_a)`: the first slot acts first.
#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    Rotation { axis: Axis, target: usize, slot: usize },
    Rot { target: usize, slots: [usize; 3] },
    Cnot { control: usize, target: usize },
    Pauli { axis: Axis, target: usize },
}

impl Gate {
    pub fn rx(target: usize, slot: usize) -> Self {
        Self::Rotation { axis: Axis::X, target, slot }
    }

    pub fn ry(target: usize, slot: usize) -> Self {
        Self::Rotation { axis: Axis::Y, target, slot }
    }

    pub fn rz(target: usize, slot: usize) -> Self {
        Self::Rotation { axis: Axis::Z, target, slot }
    }

    pub fn slots(&self) -> &[usize] {
        match self {
            Self::Rotation { slot, .. } => std::slice::from_ref(slot),
            Self::Rot { slots, .. } => slots,
            Self::Cnot { .. } | Self::Pauli { .. } => &[],
        }
    }

    fn qubits(&self) -> Vec<usize> {
        match *self {
            Self::Rotation { target, .. } | Self::Rot { target, .. } | Self::Pauli { target, .. } => {
                vec![target]
            }
            Self::Cnot { control, target } => vec![control, target],
        }
    }
}

/// Primitive operation: either a single-axis rotation bound to a slot, or a
/// fixed gate.
#[derive(Clone, Copy, Debug)]
enum Prim {
    Rot { axis: Axis, target: usize, slot: usize },
    Cnot { control: usize, target: usize },
    Pauli { axis: Axis, target: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCircuit {
    n: usize,
    layers: usize,
    gates: Vec<Gate>,
    theta: Vec<f64>,
}

impl ParamCircuit {
    pub fn new(n: usize, gates: Vec<Gate>, theta: Vec<f64>) -> Result<Self> {
        Self::with_layers(n, 0, gates, theta)
    }

    fn with_layers(n: usize, layers: usize, gates: Vec<Gate>, theta: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(domain("circuit needs at least one qubit"));
        }
        for g in &gates {
            if let Some(&s) = g.slots().iter().find(|&&s| s >= theta.len()) {
                return Err(domain(format!("{g:?}: slot {s} out of range ({})", theta.len())));
            }
            let qs = g.qubits();
            if qs.iter().any(|&q| q >= n) {
                return Err(domain(format!("{g:?}: qubit out of range for n = {n}")));
            }
            if let Gate::Cnot { control, target } = g {
                if control == target {
                    return Err(domain("CNOT control equals target"));
                }
            }
        }
        Ok(Self { n, layers, gates, theta })
    }

    pub fn qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(shape(format!(
                "{} parameters for a circuit with {}",
                theta.len(),
                self.theta.len()
            )));
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let mut c = self.clone();
        c.set_theta(theta)?;
        Ok(c)
    }

    /// Circuit for `V(θ)†`: gates reversed, angles negated.
    pub fn inverse(&self) -> Self {
        let gates = self
            .gates
            .iter()
            .rev()
            .map(|g| match *g {
                Gate::Rot { target, slots: [a, b, c] } => Gate::Rot { target, slots: [c, b, a] },
                ref other => other.clone(),
            })
            .collect();
        Self {
            n: self.n,
            layers: self.layers,
            gates,
            theta: self.theta.iter().map(|t| -t).collect(),
        }
    }

    fn primitives(&self) -> Vec<Prim> {
        let mut out = Vec::with_capacity(self.gates.len() * 3);
        for g in &self.gates {
            match *g {
                Gate::Rotation { axis, target, slot } => out.push(Prim::Rot { axis, target, slot }),
                Gate::Rot { target, slots: [a, b, c] } => {
                    out.push(Prim::Rot { axis: Axis::Z, target, slot: a });
                    out.push(Prim::Rot { axis: Axis::Y, target, slot: b });
                    out.push(Prim::Rot { axis: Axis::Z, target, slot: c });
                }
                Gate::Cnot { control, target } => out.push(Prim::Cnot { control, target }),
                Gate::Pauli { axis, target } => out.push(Prim::Pauli { axis, target }),
            }
        }
        out
    }

    /// `V(θ)|input⟩`.
    pub fn apply(&self, input: &PureState) -> Result<PureState> {
        self.check_dim(input.dim())?;
        Ok(PureState::from_unitary_image(self.apply_raw(input.amplitudes())))
    }

    fn apply_raw(&self, input: &[C64]) -> Vec<C64> {
        let mut psi = input.to_vec();
        for p in self.primitives() {
            self.apply_prim(&p, &mut psi, false);
        }
        psi
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim() {
            return Err(shape(format!(
                "state of dimension {dim} for a {}-qubit circuit",
                self.n
            )));
        }
        Ok(())
    }

    fn apply_prim(&self, p: &Prim, psi: &mut [C64], adjoint: bool) {
        match *p {
            Prim::Rot { axis, target, slot } => {
                let t = if adjoint { -self.theta[slot] } else { self.theta[slot] };
                apply_1q(psi, self.n, target, &rotation(axis, t));
            }
            Prim::Pauli { axis, target } => apply_1q(psi, self.n, target, &pauli(axis)),
            Prim::Cnot { control, target } => apply_cnot(psi, self.n, control, target),
        }
    }

    /// Dense unitary of the circuit, built column by column.
    pub fn as_matrix(&self) -> Result<ComplexMatrix> {
        if self.n > MAX_MATRIX_QUBITS {
            return Err(Error::Capacity { qubits: self.n, limit: MAX_MATRIX_QUBITS });
        }
        let d = self.dim();
        let mut m = ComplexMatrix::zeros(d, d);
        let mut e = vec![ZERO; d];
        for j in 0..d {
            e.iter_mut().for_each(|x| *x = ZERO);
            e[j] = ONE;
            m.set_column(j, &self.apply_raw(&e));
        }
        Ok(m)
    }

    /// `Tr(O V|ψ⟩⟨ψ|V†)`.
    pub fn expectation(&self, input: &PureState, observable: &Observable) -> Result<f64> {
        let out = self.apply(input)?;
        let e = out.expectation(observable.matrix())?;
        debug_assert!(e.im.abs() < 1e-10);
        Ok(e.re)
    }

    /// Overlap probabilities `|⟨bra_k|V|input⟩|²` for every probe.
    pub fn overlap_probabilities(&self, probes: &[Probe]) -> Result<Vec<Vec<f64>>> {
        probes
            .iter()
            .map(|probe| {
                self.check_probe(probe)?;
                let out = self.apply_raw(&probe.input);
                Ok(probe.bras.iter().map(|b| inner(b, &out).norm_sqr()).collect())
            })
            .collect()
    }

    /// `Σ_{probe,k} weights[probe][k] · ∂p_{probe,k}/∂θ` by parameter shift.
    pub fn overlap_gradient(&self, probes: &[Probe], weights: &[Vec<f64>]) -> Result<Vec<f64>> {
        if weights.len() != probes.len() {
            return Err(shape("one weight row per probe required"));
        }
        let prims = self.primitives();
        let mut grad = vec![0.0; self.theta.len()];
        for (probe, w) in probes.iter().zip(weights) {
            self.check_probe(probe)?;
            if w.len() != probe.bras.len() {
                return Err(shape("one weight per bra required"));
            }
            let mut forward = Vec::with_capacity(prims.len() + 1);
            forward.push(probe.input.clone());
            for p in &prims {
                let mut next = forward.last().expect("nonempty").clone();
                self.apply_prim(p, &mut next, false);
                forward.push(next);
            }
            for (bra, &wk) in probe.bras.iter().zip(w) {
                if wk == 0.0 {
                    continue;
                }
                let mut back = bra.clone();
                for (i, p) in prims.iter().enumerate().rev() {
                    if let Prim::Rot { axis, target, slot } = *p {
                        let t = self.theta[slot];
                        let plus = bra_gate_ket(&back, &rotation(axis, t + FRAC_PI_2), &forward[i], self.n, target);
                        let minus = bra_gate_ket(&back, &rotation(axis, t - FRAC_PI_2), &forward[i], self.n, target);
                        grad[slot] += wk * 0.5 * (plus.norm_sqr() - minus.norm_sqr());
                    }
                    if i > 0 {
                        self.apply_prim(p, &mut back, true);
                    }
                }
            }
        }
        Ok(grad)
    }

    fn check_probe(&self, probe: &Probe) -> Result<()> {
        self.check_dim(probe.input.len())?;
        if probe.bras.iter().any(|b| b.len() != self.dim()) {
            return Err(shape("probe bra dimension mismatch"));
        }
        Ok(())
    }
}

/// Hardware-efficient ansatz: each layer applies a ROT on every qubit, then a
/// linear CNOT chain `q -> q+1`. Angles are drawn uniformly from `[0, 2π)`.
pub fn build_hea<R: Rng + ?Sized>(n: usize, layers: usize, rng: &mut R) -> Result<ParamCircuit> {
    if n == 0 || layers == 0 {
        return Err(domain("HEA needs n >= 1 and L >= 1"));
    }
    let mut gates = Vec::with_capacity(layers * (2 * n - 1));
    for layer in 0..layers {
        for q in 0..n {
            let base = 3 * (layer * n + q);
            gates.push(Gate::Rot { target: q, slots: [base, base + 1, base + 2] });
        }
        for q in 0..n.saturating_sub(1) {
            gates.push(Gate::Cnot { control: q, target: q + 1 });
        }
    }
    let theta = (0..3 * n * layers).map(|_| rng.random::<f64>() * TAU).collect();
    ParamCircuit::with_layers(n, layers, gates, theta)
}

/// One input state together with the bras it is scored against.
#[derive(Clone, Debug)]
pub struct Probe {
    pub input: Vec<C64>,
    pub bras: Vec<Vec<C64>>,
}

/// A loss expressed through overlap probabilities of [`Probe`]s.
pub trait OverlapLoss {
    fn probes(&self) -> &[Probe];

    /// Loss value from `p[probe][bra]`.
    fn value(&self, p: &[Vec<f64>]) -> f64;

    /// `∂L/∂p[probe][bra]`.
    fn weights(&self, p: &[Vec<f64>]) -> Vec<Vec<f64>>;

    fn evaluate(&self, circuit: &ParamCircuit) -> Result<f64> {
        Ok(self.value(&circuit.overlap_probabilities(self.probes())?))
    }
}

/// Parameter-shift gradient of `loss` at the circuit's current angles.
pub fn gradient(loss: &dyn OverlapLoss, circuit: &ParamCircuit) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(loss, circuit)?.1)
}

pub fn loss_and_gradient(loss: &dyn OverlapLoss, circuit: &ParamCircuit) -> Result<(f64, Vec<f64>)> {
    let p = circuit.overlap_probabilities(loss.probes())?;
    let w = loss.weights(&p);
    Ok((loss.value(&p), circuit.overlap_gradient(loss.probes(), &w)?))
}

/// Central finite-difference gradient; kept as an independent check.
pub fn finite_difference_gradient(
    loss: &dyn OverlapLoss,
    circuit: &ParamCircuit,
    h: f64,
) -> Result<Vec<f64>> {
    let mut theta = circuit.theta().to_vec();
    let mut work = circuit.clone();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let t0 = theta[i];
        theta[i] = t0 + h;
        work.set_theta(&theta)?;
        let up = loss.evaluate(&work)?;
        theta[i] = t0 - h;
        work.set_theta(&theta)?;
        let down = loss.evaluate(&work)?;
        theta[i] = t0;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

type Mat2 = [[C64; 2]; 2];

fn rotation(axis: Axis, theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    let (c, s) = (C64::new(c, 0.0), C64::new(s, 0.0));
    match axis {
        Axis::X => [[c, -I * s], [-I * s, c]],
        Axis::Y => [[c, -s], [s, c]],
        Axis::Z => [
            [C64::from_polar(1.0, -theta / 2.0), ZERO],
            [ZERO, C64::from_polar(1.0, theta / 2.0)],
        ],
    }
}

fn pauli(axis: Axis) -> Mat2 {
    match axis {
        Axis::X => [[ZERO, ONE], [ONE, ZERO]],
        Axis::Y => [[ZERO, -I], [I, ZERO]],
        Axis::Z => [[ONE, ZERO], [ZERO, -ONE]],
    }
}

/// 2x2 rotation matrix, exposed for tests and dense constructions.
pub fn rotation_matrix(axis: Axis, theta: f64) -> ComplexMatrix {
    let m = rotation(axis, theta);
    ComplexMatrix::from_rows(&[m[0].to_vec(), m[1].to_vec()])
}

#[inline]
fn mask(n: usize, q: usize) -> usize {
    1 << (n - 1 - q)
}

fn apply_1q(psi: &mut [C64], n: usize, q: usize, m: &Mat2) {
    let bit = mask(n, q);
    for i in 0..psi.len() {
        if i & bit == 0 {
            let j = i | bit;
            let (a, b) = (psi[i], psi[j]);
            psi[i] = m[0][0] * a + m[0][1] * b;
            psi[j] = m[1][0] * a + m[1][1] * b;
        }
    }
}

fn apply_cnot(psi: &mut [C64], n: usize, control: usize, target: usize) {
    let (cb, tb) = (mask(n, control), mask(n, target));
    for i in 0..psi.len() {
        if i & cb != 0 && i & tb == 0 {
            psi.swap(i, i | tb);
        }
    }
}

/// `⟨bra| (m on qubit q) |ket⟩` without materializing `m|ket⟩`.
fn bra_gate_ket(bra: &[C64], m: &Mat2, ket: &[C64], n: usize, q: usize) -> C64 {
    let bit = mask(n, q);
    let mut acc = ZERO;
    for i in 0..ket.len() {
        if i & bit == 0 {
            let j = i | bit;
            let (a, b) = (ket[i], ket[j]);
            acc += bra[i].conj() * (m[0][0] * a + m[0][1] * b);
            acc += bra[j].conj() * (m[1][0] * a + m[1][1] * b);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::{haar_state, SeededRng};
    use std::f64::consts::PI;

    fn single(gate: Gate, theta: Vec<f64>) -> ParamCircuit {
        ParamCircuit::new(1, vec![gate], theta).unwrap()
    }

    #[test]
    fn rx_pi_flips_with_phase() {
        let c = single(Gate::rx(0, 0), vec![PI]);
        let out = c.apply(&PureState::basis(2, 0).unwrap()).unwrap();
        assert!(out.amplitudes()[0].norm() < 1e-15);
        assert!((out.amplitudes()[1] - (-I)).norm() < 1e-15);
    }

    #[test]
    fn cnot_on_10() {
        let c = ParamCircuit::new(2, vec![Gate::Cnot { control: 0, target: 1 }], vec![]).unwrap();
        let out = c.apply(&PureState::basis(4, 0b10).unwrap()).unwrap();
        assert_eq!(out, PureState::basis(4, 0b11).unwrap());
    }

    #[test]
    fn empty_circuit_is_identity() {
        let mut rng = SeededRng::new(1, 0);
        let psi = haar_state(8, &mut rng).unwrap();
        let c = ParamCircuit::new(3, vec![], vec![]).unwrap();
        assert_eq!(c.apply(&psi).unwrap(), psi);
    }

    #[test]
    fn dimension_mismatch() {
        let c = single(Gate::rx(0, 0), vec![0.3]);
        assert!(matches!(c.apply(&PureState::basis(4, 0).unwrap()), Err(Error::Shape(_))));
    }

    #[test]
    fn invalid_circuits_rejected() {
        assert!(ParamCircuit::new(1, vec![Gate::rx(0, 1)], vec![0.0]).is_err());
        assert!(ParamCircuit::new(1, vec![Gate::rx(1, 0)], vec![0.0]).is_err());
        assert!(ParamCircuit::new(2, vec![Gate::Cnot { control: 1, target: 1 }], vec![]).is_err());
    }

    #[test]
    fn hea_layouts() {
        let mut rng = SeededRng::new(2, 0);
        let c = build_hea(1, 2, &mut rng).unwrap();
        assert_eq!(c.gates().len(), 2);
        assert_eq!(c.num_params(), 6);
        assert!(c.gates().iter().all(|g| matches!(g, Gate::Rot { .. })));

        assert_eq!(build_hea(4, 30, &mut rng).unwrap().num_params(), 360);

        let c = build_hea(2, 1, &mut rng).unwrap();
        assert_eq!(
            c.gates(),
            &[
                Gate::Rot { target: 0, slots: [0, 1, 2] },
                Gate::Rot { target: 1, slots: [3, 4, 5] },
                Gate::Cnot { control: 0, target: 1 },
            ]
        );
        assert!(c.theta().iter().all(|&t| (0.0..TAU).contains(&t)));
        assert!(build_hea(0, 1, &mut rng).is_err());
    }

    #[test]
    fn rz_zero_is_identity() {
        let c = single(Gate::rz(0, 0), vec![0.0]);
        assert!(c.as_matrix().unwrap().max_abs_diff(&ComplexMatrix::identity(2)) < 1e-15);
    }

    #[test]
    fn rot_convention() {
        let (a, b, cc) = (0.3, -1.1, 2.4);
        let c = single(Gate::Rot { target: 0, slots: [0, 1, 2] }, vec![a, b, cc]);
        let expected = &(&rotation_matrix(Axis::Z, cc) * &rotation_matrix(Axis::Y, b))
            * &rotation_matrix(Axis::Z, a);
        assert!(c.as_matrix().unwrap().max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn matrix_agrees_with_apply_and_is_unitary() {
        let mut rng = SeededRng::new(3, 0);
        let c = build_hea(3, 4, &mut rng).unwrap();
        let m = c.as_matrix().unwrap();
        assert!(m.is_unitary(1e-10).unwrap());
        for j in 0..8 {
            let e = PureState::basis(8, j).unwrap();
            let out = c.apply(&e).unwrap();
            for (i, a) in out.amplitudes().iter().enumerate() {
                assert!((m[(i, j)] - a).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn capacity_limit() {
        let c = ParamCircuit::new(7, vec![], vec![]).unwrap();
        assert!(matches!(c.as_matrix(), Err(Error::Capacity { .. })));
    }

    #[test]
    fn inverse_undoes_circuit() {
        let mut rng = SeededRng::new(4, 0);
        let mut c = build_hea(3, 3, &mut rng).unwrap();
        let mut gates = c.gates().to_vec();
        gates.push(Gate::Pauli { axis: Axis::Y, target: 2 });
        gates.push(Gate::ry(1, 0));
        c = ParamCircuit::new(3, gates, c.theta().to_vec()).unwrap();
        let psi = haar_state(8, &mut rng).unwrap();
        let back = c.inverse().apply(&c.apply(&psi).unwrap()).unwrap();
        for (x, y) in back.amplitudes().iter().zip(psi.amplitudes()) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn expectation_examples() {
        let z = Observable::from_matrix(ComplexMatrix::pauli_z()).unwrap();
        let zero = PureState::basis(2, 0).unwrap();
        let id = ParamCircuit::new(1, vec![], vec![]).unwrap();
        assert!((id.expectation(&zero, &z).unwrap() - 1.0).abs() < 1e-12);
        let flip = single(Gate::rx(0, 0), vec![PI]);
        assert!((flip.expectation(&zero, &z).unwrap() + 1.0).abs() < 1e-12);
        let half = single(Gate::rx(0, 0), vec![PI / 2.0]);
        assert!(half.expectation(&zero, &z).unwrap().abs() < 1e-12);
    }

    struct Fidelity {
        probes: Vec<Probe>,
    }

    impl OverlapLoss for Fidelity {
        fn probes(&self) -> &[Probe] {
            &self.probes
        }
        fn value(&self, p: &[Vec<f64>]) -> f64 {
            1.0 - p.iter().map(|r| r[0]).sum::<f64>() / p.len() as f64
        }
        fn weights(&self, p: &[Vec<f64>]) -> Vec<Vec<f64>> {
            vec![vec![-1.0 / p.len() as f64]; p.len()]
        }
    }

    #[test]
    fn shift_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(5, 0);
        let c = build_hea(2, 2, &mut rng).unwrap();
        let probes = (0..3)
            .map(|_| Probe {
                input: haar_state(4, &mut rng).unwrap().into_amplitudes(),
                bras: vec![haar_state(4, &mut rng).unwrap().into_amplitudes()],
            })
            .collect();
        let loss = Fidelity { probes };
        let g = gradient(&loss, &c).unwrap();
        let fd = finite_difference_gradient(&loss, &c, 1e-5).unwrap();
        let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * scale.max(1.0), "{a} vs {b}");
        }
    }
}
