//! Training data, losses, perfect-training predicates and oracle hypotheses for
//! the three learning protocols.
//!
//! * classical (`clc`): responses are outcome probabilities of measuring
//!   `U|ψ_j⟩` in the observable's eigenbasis;
//! * restricted quantum (`requ`): responses are the states `U|ψ_j⟩`;
//! * quantum with inverse access (`qu`): responses are the states `U†|ψ_j⟩`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{OverlapLoss, ParamCircuit, Probe};
use crate::error::{domain, shape, Error, Result};
use crate::haar::{haar_state, haar_unitary};
use crate::linalg::{householder_qr, inner, qr_unitary_extend, ComplexMatrix, PureState, C64};
use crate::observables::{parse_complex, Observable};

/// Spread tolerance for hypotheses built analytically.
pub const ORACLE_ALIGNMENT_TOL: f64 = 1e-9;

/// Spread tolerance for trained circuits.
pub const TRAINED_ALIGNMENT_TOL: f64 = 1e-3;

/// Default per-state infidelity accepted as perfect training.
pub const PERFECT_RESIDUAL_TOL: f64 = 1e-6;

/// Overlaps at or below this modulus count as orthogonal.
pub const ORTHOGONALITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Clc,
    Requ,
    Qu,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] = [Self::Clc, Self::Requ, Self::Qu];

    pub fn name(self) -> &'static str {
        match self {
            Self::Clc => "clc",
            Self::Requ => "requ",
            Self::Qu => "qu",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clc" => Ok(Self::Clc),
            "requ" => Ok(Self::Requ),
            "qu" => Ok(Self::Qu),
            _ => Err(Error::Unknown { kind: "protocol", name: s.to_string() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyKind {
    Haar,
    OrthogonalHaar,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Haar => "haar",
            Self::OrthogonalHaar => "orthogonal",
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "haar" => Ok(Self::Haar),
            "orthogonal" | "orthogonal-haar" | "orth" => Ok(Self::OrthogonalHaar),
            _ => Err(Error::Unknown { kind: "state family", name: s.to_string() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateFamily {
    pub kind: FamilyKind,
    pub n: usize,
    pub size: usize,
}

impl StateFamily {
    pub fn new(kind: FamilyKind, n: usize, size: usize) -> Result<Self> {
        if n == 0 {
            return Err(domain("state family needs n >= 1"));
        }
        if kind == FamilyKind::OrthogonalHaar && size > 1 << n {
            return Err(domain(format!(
                "{size} orthogonal states do not fit in dimension {}",
                1 << n
            )));
        }
        Ok(Self { kind, n, size })
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }
}

/// Training inputs: i.i.d. Haar states, or `size` distinct columns of one Haar
/// unitary chosen uniformly at random.
pub fn gen_states<R: Rng + ?Sized>(family: &StateFamily, rng: &mut R) -> Result<Vec<PureState>> {
    let family = StateFamily::new(family.kind, family.n, family.size)?;
    let d = family.dim();
    match family.kind {
        FamilyKind::Haar => (0..family.size).map(|_| haar_state(d, rng)).collect(),
        FamilyKind::OrthogonalHaar => {
            let u = haar_unitary(d, rng)?;
            let cols = rand::seq::index::sample(rng, d, family.size);
            cols.iter()
                .map(|j| PureState::new(u.column(j)))
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Responses {
    /// `a_jq = |⟨o_q|U|ψ_j⟩|²` over the observable's measurement basis.
    Probabilities(Vec<Vec<f64>>),
    /// `U|ψ_j⟩` or `U†|ψ_j⟩`.
    States(Vec<PureState>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    protocol: ProtocolKind,
    states: Vec<PureState>,
    responses: Responses,
}

impl Dataset {
    pub fn new(protocol: ProtocolKind, states: Vec<PureState>, responses: Responses) -> Result<Self> {
        let n = states.len();
        let d = states.first().map_or(0, PureState::dim);
        if states.iter().any(|s| s.dim() != d) {
            return Err(shape("training states of differing dimension"));
        }
        match (&responses, protocol) {
            (Responses::Probabilities(a), ProtocolKind::Clc) => {
                if a.len() != n {
                    return Err(shape("one response row per state required"));
                }
                for row in a {
                    if row.iter().any(|&p| !(-1e-12..=1.0 + 1e-12).contains(&p))
                        || row.iter().sum::<f64>() > 1.0 + 1e-9
                    {
                        return Err(domain("classical responses must be sub-normalized probabilities"));
                    }
                }
            }
            (Responses::States(r), ProtocolKind::Requ | ProtocolKind::Qu) => {
                if r.len() != n || r.iter().any(|s| s.dim() != d) {
                    return Err(shape("one response state of matching dimension per input"));
                }
            }
            _ => return Err(domain(format!("response kind does not match protocol {protocol}"))),
        }
        Ok(Self { protocol, states, responses })
    }

    pub fn protocol(&self) -> ProtocolKind {
        self.protocol
    }

    pub fn states(&self) -> &[PureState] {
        &self.states
    }

    pub fn responses(&self) -> &Responses {
        &self.responses
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, PureState::dim)
    }

    /// Line-oriented text dump; see [`Dataset::from_text`].
    pub fn to_text(&self) -> String {
        let amps = |s: &PureState| {
            s.amplitudes()
                .iter()
                .map(|a| format!("{:?},{:?}", a.re, a.im))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::from("# nfl-dataset v1\n");
        out.push_str(&format!("protocol {}\ndim {}\nsize {}\n", self.protocol, self.dim(), self.len()));
        for (j, s) in self.states.iter().enumerate() {
            out.push_str(&format!("state {}\n", amps(s)));
            match &self.responses {
                Responses::Probabilities(a) => {
                    let row: Vec<String> = a[j].iter().map(|p| format!("{p:?}")).collect();
                    out.push_str(&format!("response {}\n", row.join(" ")));
                }
                Responses::States(r) => out.push_str(&format!("response {}\n", amps(&r[j]))),
            }
        }
        out
    }

    /// Parses the format written by [`Dataset::to_text`]:
    ///
    /// ```text
    /// # nfl-dataset v1
    /// protocol requ
    /// dim 2
    /// size 1
    /// state 1.0,0.0 0.0,0.0
    /// response 0.0,0.0 1.0,0.0
    /// ```
    ///
    /// Classical responses are whitespace-separated probabilities.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{key}` line")))?;
            line.strip_prefix(key)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| Error::Parse(format!("expected `{key}`, got `{line}`")))
        };
        let protocol: ProtocolKind = field("protocol")?.parse()?;
        let dim: usize = field("dim")?.parse().map_err(|_| Error::Parse("bad dim".into()))?;
        let size: usize = field("size")?.parse().map_err(|_| Error::Parse("bad size".into()))?;
        let parse_state = |s: &str| -> Result<PureState> {
            let amps = s.split_whitespace().map(parse_complex).collect::<Result<Vec<_>>>()?;
            if amps.len() != dim {
                return Err(Error::Parse(format!("state has {} amplitudes, expected {dim}", amps.len())));
            }
            PureState::new(amps)
        };
        let mut states = Vec::with_capacity(size);
        let mut probs = Vec::new();
        let mut resp_states = Vec::new();
        for _ in 0..size {
            states.push(parse_state(&field("state")?)?);
            let r = field("response")?;
            if protocol == ProtocolKind::Clc {
                probs.push(
                    r.split_whitespace()
                        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad probability `{t}`"))))
                        .collect::<Result<Vec<_>>>()?,
                );
            } else {
                resp_states.push(parse_state(&r)?);
            }
        }
        if lines.next().is_some() {
            return Err(Error::Parse("trailing content after dataset".into()));
        }
        let responses = if protocol == ProtocolKind::Clc {
            Responses::Probabilities(probs)
        } else {
            Responses::States(resp_states)
        };
        Self::new(protocol, states, responses)
    }
}

/// Exact training responses of `U` on `states`.
pub fn gen_dataset(
    protocol: ProtocolKind,
    u: &ComplexMatrix,
    states: &[PureState],
    observable: Option<&Observable>,
) -> Result<Dataset> {
    if !u.is_square() || states.iter().any(|s| s.dim() != u.rows()) {
        return Err(shape("target unitary and states disagree in dimension"));
    }
    if !u.is_unitary(1e-9)? {
        return Err(domain("target is not unitary"));
    }
    let responses = match protocol {
        ProtocolKind::Clc => {
            let o = observable.ok_or_else(|| domain("classical protocol needs an observable"))?;
            if o.dim() != u.rows() {
                return Err(shape("observable dimension mismatch"));
            }
            let basis = o.measurement_basis();
            let rows = states
                .iter()
                .map(|s| {
                    let out = u.matvec(s.amplitudes())?;
                    Ok(basis.iter().map(|b| inner(b, &out).norm_sqr()).collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            Responses::Probabilities(rows)
        }
        ProtocolKind::Requ => Responses::States(states.iter().map(|s| s.evolve(u)).collect::<Result<_>>()?),
        ProtocolKind::Qu => {
            let ud = u.adjoint();
            Responses::States(states.iter().map(|s| s.evolve(&ud)).collect::<Result<_>>()?)
        }
    };
    Dataset::new(protocol, states.to_vec(), responses)
}

/// A protocol loss bound to a dataset, usable by the gradient engine.
#[derive(Clone, Debug)]
pub struct ProtocolLoss {
    protocol: ProtocolKind,
    probes: Vec<Probe>,
    targets: Vec<Vec<f64>>,
}

impl ProtocolLoss {
    pub fn new(dataset: &Dataset, observable: Option<&Observable>) -> Result<Self> {
        let protocol = dataset.protocol();
        let (probes, targets) = match dataset.responses() {
            Responses::Probabilities(a) => {
                let o = observable.ok_or_else(|| domain("classical loss needs the observable"))?;
                if o.dim() != dataset.dim() {
                    return Err(shape("observable dimension mismatch"));
                }
                let basis = o.measurement_basis();
                if a.iter().any(|row| row.len() != basis.len()) {
                    return Err(shape("responses do not match the observable's measurement basis"));
                }
                let probes = dataset
                    .states()
                    .iter()
                    .map(|s| Probe { input: s.amplitudes().to_vec(), bras: basis.clone() })
                    .collect();
                (probes, a.clone())
            }
            Responses::States(r) => {
                let probes = dataset
                    .states()
                    .iter()
                    .zip(r)
                    .map(|(psi, resp)| match protocol {
                        // |⟨Uψ|Vψ⟩|²
                        ProtocolKind::Requ => Probe {
                            input: psi.amplitudes().to_vec(),
                            bras: vec![resp.amplitudes().to_vec()],
                        },
                        // |⟨U†ψ|V†ψ⟩|² = |⟨ψ|V U†ψ⟩|²
                        _ => Probe {
                            input: resp.amplitudes().to_vec(),
                            bras: vec![psi.amplitudes().to_vec()],
                        },
                    })
                    .collect();
                (probes, Vec::new())
            }
        };
        Ok(Self { protocol, probes, targets })
    }

    pub fn protocol(&self) -> ProtocolKind {
        self.protocol
    }
}

impl OverlapLoss for ProtocolLoss {
    fn probes(&self) -> &[Probe] {
        &self.probes
    }

    fn value(&self, p: &[Vec<f64>]) -> f64 {
        let n = p.len().max(1) as f64;
        match self.protocol {
            ProtocolKind::Clc => {
                p.iter()
                    .zip(&self.targets)
                    .flat_map(|(pr, ar)| pr.iter().zip(ar).map(|(x, a)| (x - a).powi(2)))
                    .sum::<f64>()
                    / n
            }
            _ => (1.0 - p.iter().map(|r| r[0]).sum::<f64>() / n).max(0.0),
        }
    }

    fn weights(&self, p: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = p.len().max(1) as f64;
        match self.protocol {
            ProtocolKind::Clc => p
                .iter()
                .zip(&self.targets)
                .map(|(pr, ar)| pr.iter().zip(ar).map(|(x, a)| 2.0 * (x - a) / n).collect())
                .collect(),
            _ => vec![vec![-1.0 / n]; p.len()],
        }
    }
}

fn protocol_loss_value(
    expected: ProtocolKind,
    circuit: &ParamCircuit,
    dataset: &Dataset,
    observable: Option<&Observable>,
) -> Result<f64> {
    if dataset.protocol() != expected {
        return Err(domain(format!(
            "{expected} loss applied to a {} dataset",
            dataset.protocol()
        )));
    }
    if dataset.dim() != circuit.dim() {
        return Err(shape("circuit and dataset dimensions differ"));
    }
    ProtocolLoss::new(dataset, observable)?.evaluate(circuit)
}

/// `(1/N) Σ_j Σ_q (|⟨o_q|V ψ_j⟩|² − a_jq)²`.
pub fn loss_clc(circuit: &ParamCircuit, dataset: &Dataset, observable: &Observable) -> Result<f64> {
    protocol_loss_value(ProtocolKind::Clc, circuit, dataset, Some(observable))
}

/// `1 − (1/N) Σ_j |⟨Uψ_j|V ψ_j⟩|²`.
pub fn loss_requ(circuit: &ParamCircuit, dataset: &Dataset) -> Result<f64> {
    protocol_loss_value(ProtocolKind::Requ, circuit, dataset, None)
}

/// `1 − (1/N) Σ_j |⟨ψ_j|V U† ψ_j⟩|²`.
pub fn loss_qu(circuit: &ParamCircuit, dataset: &Dataset) -> Result<f64> {
    protocol_loss_value(ProtocolKind::Qu, circuit, dataset, None)
}

/// Inter-state relative phases together with their alignment verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseVector {
    pub values: Vec<f64>,
    pub aligned: bool,
    pub spread: f64,
}

impl PhaseVector {
    pub fn from_values(values: Vec<f64>, tol: f64) -> Self {
        let values: Vec<f64> = values.into_iter().map(|v| v.rem_euclid(TAU)).collect();
        let spread = circular_spread(&values);
        Self { aligned: spread <= tol, spread, values }
    }
}

/// Distance between two angles on the circle, in `[0, π]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Largest pairwise circular distance.
pub fn circular_spread(values: &[f64]) -> f64 {
    let mut s: f64 = 0.0;
    for (i, &a) in values.iter().enumerate() {
        for &b in &values[i + 1..] {
            s = s.max(circular_distance(a, b));
        }
    }
    s.min(PI)
}

/// Relative phases of a hypothesis `V` against target `U`.
///
/// `requ`: `α_j = arg⟨ψ_j|V†U|ψ_j⟩`; `qu`: `β_j = arg⟨ψ_j|V U†|ψ_j⟩`. Each state
/// must be reproduced up to phase: the infidelity `1 − |overlap|²` may not exceed
/// `residual_tol`.
pub fn extract_phases(
    protocol: ProtocolKind,
    u: &ComplexMatrix,
    v: &ComplexMatrix,
    states: &[PureState],
    residual_tol: f64,
    alignment_tol: f64,
) -> Result<PhaseVector> {
    if u.rows() != v.rows() || !u.is_square() || !v.is_square() {
        return Err(shape("target and hypothesis differ in shape"));
    }
    let (a, b) = match protocol {
        ProtocolKind::Requ => (v.clone(), u.clone()),
        ProtocolKind::Qu => (v.adjoint(), u.adjoint()),
        ProtocolKind::Clc => {
            return Err(domain("relative phases are defined only for quantum responses"))
        }
    };
    let mut max_residual: f64 = 0.0;
    let mut phases = Vec::with_capacity(states.len());
    for s in states {
        let x = a.matvec(s.amplitudes())?;
        let y = b.matvec(s.amplitudes())?;
        let overlap = inner(&x, &y);
        max_residual = max_residual.max(1.0 - overlap.norm_sqr());
        phases.push(overlap.arg());
    }
    if max_residual > residual_tol {
        return Err(Error::NotPerfectlyTrained { max_residual });
    }
    Ok(PhaseVector::from_values(phases, alignment_tol))
}

/// Groups states into classes connected by non-vanishing overlaps. States in
/// different classes are mutually orthogonal.
pub fn overlap_components(states: &[PureState]) -> Vec<Vec<usize>> {
    let n = states.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut i = i;
        while p[i] != r {
            let next = p[i];
            p[i] = r;
            i = next;
        }
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if states[i].inner(&states[j]).norm() > ORTHOGONALITY_TOL {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_index = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_index[r] == usize::MAX {
            root_index[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_index[r]].push(i);
    }
    groups
}

/// Unitary `W` with `W|ψ_j⟩ = e^{−iφ_j}|ψ_j⟩` on the training span and a Haar
/// unitary on its orthogonal complement.
///
/// States joined by a non-vanishing overlap must share a phase: a unitary's
/// eigenvectors for distinct eigenvalues are orthogonal.
pub fn phase_unitary<R: Rng + ?Sized>(
    states: &[PureState],
    phases: &[f64],
    rng: &mut R,
) -> Result<ComplexMatrix> {
    if phases.len() != states.len() {
        return Err(shape(format!("{} phases for {} states", phases.len(), states.len())));
    }
    let basis = qr_unitary_extend(states, rng)?;
    let d = basis.rows();
    let n = states.len();
    let mut w = ComplexMatrix::zeros(d, d);
    for group in overlap_components(states) {
        let group_phases: Vec<f64> = group.iter().map(|&j| phases[j]).collect();
        let spread = circular_spread(&group_phases);
        if spread > ORACLE_ALIGNMENT_TOL {
            return Err(Error::InfeasiblePhase { spread });
        }
        let cols: Vec<&[C64]> = group.iter().map(|&j| states[j].amplitudes()).collect();
        let (q, _) = householder_qr(&ComplexMatrix::from_columns(&cols)?);
        let factor = C64::from_polar(1.0, -group_phases[0]);
        for i in 0..d {
            for k in 0..d {
                let p: C64 = (0..group.len()).map(|c| q[(i, c)] * q[(k, c)].conj()).sum();
                w[(i, k)] += factor * p;
            }
        }
    }
    if n < d {
        let y = haar_unitary(d - n, rng)?;
        let c = ComplexMatrix::from_fn(d, d - n, |i, j| basis[(i, n + j)]);
        w = w.add(&(&(&c * &y) * &c.adjoint()))?;
    }
    Ok(w)
}

/// Perfectly trained `requ` hypothesis `V = U·W`, so that
/// `U|ψ_j⟩ = e^{iα_j} V|ψ_j⟩`.
pub fn oracle_requ<R: Rng + ?Sized>(
    u: &ComplexMatrix,
    states: &[PureState],
    alpha: &[f64],
    rng: &mut R,
) -> Result<ComplexMatrix> {
    let w = phase_unitary(states, alpha, rng)?;
    u.matmul(&w)
}

/// Perfectly trained `qu` hypothesis `V = W†·U`, so that
/// `U†|ψ_j⟩ = e^{iβ_j} V†|ψ_j⟩`.
pub fn oracle_qu<R: Rng + ?Sized>(
    u: &ComplexMatrix,
    states: &[PureState],
    beta: &[f64],
    rng: &mut R,
) -> Result<ComplexMatrix> {
    let w = phase_unitary(states, beta, rng)?;
    w.adjoint().matmul(u)
}

/// `V = D(γ)·U` with `D = Σ_q e^{iγ_q}|o_q⟩⟨o_q|` over the full eigenbasis.
pub fn oracle_clc_with_phases(u: &ComplexMatrix, observable: &Observable, gamma: &[f64]) -> Result<ComplexMatrix> {
    let d = observable.dim();
    if gamma.len() != d || u.rows() != d {
        return Err(shape("one phase per eigenvector and matching dimensions required"));
    }
    let v = observable.eigenvectors();
    let phases: Vec<C64> = gamma.iter().map(|&g| C64::from_polar(1.0, g)).collect();
    let dmat = &(v * &ComplexMatrix::diag(&phases)) * &v.adjoint();
    dmat.matmul(u)
}

/// [`oracle_clc_with_phases`] with i.i.d. uniform phases.
pub fn oracle_clc<R: Rng + ?Sized>(u: &ComplexMatrix, observable: &Observable, rng: &mut R) -> Result<ComplexMatrix> {
    let gamma: Vec<f64> = (0..observable.dim()).map(|_| rng.random::<f64>() * TAU).collect();
    oracle_clc_with_phases(u, observable, &gamma)
}

/// Classical perfect-training predicate: `|⟨o_q|V ψ_j⟩|² = a_jq` for all `j, q`.
pub fn clc_residual(v: &ComplexMatrix, dataset: &Dataset, observable: &Observable) -> Result<f64> {
    let Responses::Probabilities(a) = dataset.responses() else {
        return Err(domain("classical residual needs a classical dataset"));
    };
    let basis = observable.measurement_basis();
    let mut worst: f64 = 0.0;
    for (s, row) in dataset.states().iter().zip(a) {
        let out = v.matvec(s.amplitudes())?;
        for (b, &target) in basis.iter().zip(row) {
            worst = worst.max((inner(b, &out).norm_sqr() - target).abs());
        }
    }
    Ok(worst)
}
