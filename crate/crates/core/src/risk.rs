//! Exact and Monte Carlo risk, the protocol lower bounds, and the averaged-risk
//! estimator over Haar targets and random training sets.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::build_hea;
use crate::error::{domain, shape, Error, Result};
use crate::haar::{derive_trial_rng, haar_state, haar_unitary, SeededRng};
use crate::linalg::ComplexMatrix;
use crate::observables::Observable;
use crate::optimizer::{train, AdamConfig};
use crate::protocols::{FamilyKind, ProtocolKind, StateFamily, ORACLE_ALIGNMENT_TOL, TRAINED_ALIGNMENT_TOL};
use crate::registry::LearningProtocol;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub risk: f64,
    /// `Tr(U†OU V†OV)`.
    pub trace_term: f64,
    pub d: usize,
    /// `risk · d²`.
    pub normalized_risk: f64,
}

/// Haar-input average of `(⟨ψ|U†OU|ψ⟩ − ⟨ψ|V†OV|ψ⟩)²` in closed form:
/// `2/(d(d+1)) · (Tr O² − Tr(U†OU V†OV))`.
pub fn analytical_risk(u: &ComplexMatrix, v: &ComplexMatrix, observable: &Observable) -> Result<RiskReport> {
    let d = observable.dim();
    for (name, m) in [("U", u), ("V", v)] {
        if m.rows() != d || m.cols() != d {
            return Err(shape(format!("{name} is {}x{}, observable is {d}x{d}", m.rows(), m.cols())));
        }
    }
    let o = observable.matrix();
    let a = &(&u.adjoint() * o) * u;
    let b = &(&v.adjoint() * o) * v;
    let trace_term = (&a * &b).trace()?.re;
    let df = d as f64;
    let risk = 2.0 / (df * (df + 1.0)) * (observable.trace_sq() - trace_term);
    Ok(RiskReport { risk, trace_term, d, normalized_risk: risk * df * df })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McValue {
    pub mean: f64,
    pub standard_error: f64,
    pub samples: usize,
}

/// Brute-force Haar-input average of the squared expectation gap.
pub fn mc_risk_oracle<R: Rng + ?Sized>(
    u: &ComplexMatrix,
    v: &ComplexMatrix,
    observable: &Observable,
    samples: usize,
    rng: &mut R,
) -> Result<McValue> {
    if samples == 0 {
        return Err(domain("risk oracle needs at least one sample"));
    }
    let d = observable.dim();
    if u.rows() != d || v.rows() != d || !u.is_square() || !v.is_square() {
        return Err(shape("risk oracle dimension mismatch"));
    }
    let o = observable.matrix();
    let ou = &(&u.adjoint() * o) * u;
    let ov = &(&v.adjoint() * o) * v;
    let mut stats = Welford::default();
    for _ in 0..samples {
        let psi = haar_state(d, rng)?;
        let gap = psi.expectation(&ou)?.re - psi.expectation(&ov)?.re;
        stats.push(gap * gap);
    }
    Ok(McValue { mean: stats.mean, standard_error: stats.standard_error(), samples })
}

#[derive(Clone, Copy, Debug, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn standard_error(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

/// Whether the bound treats the training states as linearly independent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Independence {
    Independent,
    Dependent,
}

impl Independence {
    pub fn name(self) -> &'static str {
        match self {
            Self::Independent => "independent",
            Self::Dependent => "dependent",
        }
    }
}

impl fmt::Display for Independence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Independence {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "independent" | "indep" => Ok(Self::Independent),
            "dependent" | "dep" => Ok(Self::Dependent),
            _ => Err(Error::Unknown { kind: "independence mode", name: s.to_string() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub protocol: ProtocolKind,
    pub d: usize,
    pub n: usize,
    pub aligned: bool,
    pub independence: Independence,
    pub value: f64,
}

fn clamp0(x: f64) -> f64 {
    x.max(0.0)
}

/// Classical-data bound. The independent form carries `d² − N − 1`, the
/// dependent form `d² − N`.
pub fn nfl_bound_clc(d: usize, n: usize, observable: &Observable, mode: Independence) -> BoundValue {
    let df = d as f64;
    let k = observable.spread_factor();
    let d2 = df * df;
    let denom = d2 * (df + 1.0) * (d2 - 1.0);
    let value = match mode {
        Independence::Independent => 2.0 * clamp0(d2 - n as f64 - 1.0) * k / denom,
        Independence::Dependent => 2.0 * (d2 - (n.min(d * d)) as f64) * k / denom,
    };
    BoundValue { protocol: ProtocolKind::Clc, d, n, aligned: false, independence: mode, value }
}

/// Restricted-quantum bound; `aligned` selects the `d² − N² − 1` variant.
pub fn nfl_bound_requ(
    d: usize,
    n: usize,
    observable: &Observable,
    aligned: bool,
    mode: Independence,
) -> BoundValue {
    let df = d as f64;
    let nf = n as f64;
    let k = observable.spread_factor();
    let d2 = df * df;
    let value = match mode {
        Independence::Independent => {
            let count = if aligned { d2 - nf * nf - 1.0 } else { d2 - nf - 1.0 };
            2.0 * clamp0(count) * k / (d2 * d2 * (df + 1.0))
        }
        Independence::Dependent => {
            (d2 - (n.min(d * d)) as f64) * k / (d2 * (df + 1.0) * (d2 - 1.0))
        }
    };
    BoundValue { protocol: ProtocolKind::Requ, d, n, aligned, independence: mode, value }
}

/// Inverse-access bound; the off-diagonal penalty applies only without phase
/// alignment. `N > d` is evaluated at `N = d`.
pub fn nfl_bound_qu(d: usize, n: usize, observable: &Observable, aligned: bool) -> BoundValue {
    let df = d as f64;
    let ne = n.min(d) as f64;
    let k = observable.spread_factor();
    let penalty = if aligned { 0.0 } else { (ne * ne - ne) * observable.offdiag_square_sum() };
    let value = clamp0(((df - ne) * k + penalty) / (df * df * df * (df + 1.0)));
    BoundValue { protocol: ProtocolKind::Qu, d, n, aligned, independence: Independence::Independent, value }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HypothesisSource {
    Trained,
    Oracle,
}

impl HypothesisSource {
    pub fn name(self) -> &'static str {
        match self {
            Self::Trained => "trained",
            Self::Oracle => "oracle",
        }
    }
}

impl fmt::Display for HypothesisSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HypothesisSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "trained" => Ok(Self::Trained),
            "oracle" => Ok(Self::Oracle),
            _ => Err(Error::Unknown { kind: "hypothesis source", name: s.to_string() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingSetup {
    pub layers: usize,
    pub adam: AdamConfig,
    /// Extra random initializations after a failed descent.
    pub restarts: usize,
    pub alignment_tol: f64,
}

impl Default for TrainingSetup {
    fn default() -> Self {
        Self { layers: 20, adam: AdamConfig::default(), restarts: 5, alignment_tol: TRAINED_ALIGNMENT_TOL }
    }
}

/// One point of the averaged-risk experiment.
#[derive(Clone)]
pub struct RiskExperiment {
    pub protocol: Arc<dyn LearningProtocol>,
    pub family: StateFamily,
    pub observable: Observable,
    pub source: HypothesisSource,
    pub training: TrainingSetup,
    /// Trials sharing one target unitary; `None` draws a fresh unitary per trial.
    pub datasets_per_unitary: Option<usize>,
}

impl fmt::Debug for RiskExperiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RiskExperiment")
            .field("protocol", &self.protocol.name())
            .field("family", &self.family)
            .field("source", &self.source)
            .field("training", &self.training)
            .field("datasets_per_unitary", &self.datasets_per_unitary)
            .finish_non_exhaustive()
    }
}

impl RiskExperiment {
    pub fn new(
        protocol: Arc<dyn LearningProtocol>,
        family: StateFamily,
        observable: Observable,
        source: HypothesisSource,
    ) -> Result<Self> {
        if observable.dim() != family.dim() {
            return Err(shape("observable and state family dimensions differ"));
        }
        Ok(Self {
            protocol,
            family,
            observable,
            source,
            training: TrainingSetup::default(),
            datasets_per_unitary: None,
        })
    }

    pub fn with_training(mut self, training: TrainingSetup) -> Self {
        self.training = training;
        self
    }

    pub fn with_datasets_per_unitary(mut self, k: Option<usize>) -> Self {
        self.datasets_per_unitary = k.filter(|&k| k > 0);
        self
    }

    /// Whether perfectly trained hypotheses are phase-aligned by construction.
    pub fn expects_alignment(&self) -> bool {
        self.family.kind == FamilyKind::Haar || self.family.size <= 1
    }

    /// The bound this experiment's mean is compared to.
    pub fn bound(&self, mode: Independence) -> BoundValue {
        self.protocol
            .bound(self.family.dim(), self.family.size, &self.observable, self.expects_alignment(), mode)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: u64,
    pub risk: RiskReport,
    /// Final training loss, or the oracle's perfect-training residual.
    pub final_loss: f64,
    pub converged: bool,
    pub phase_spread: Option<f64>,
    pub aligned: Option<bool>,
    pub attempts: usize,
    pub wall_time_ms: f64,
}

fn unitary_master(master: &SeededRng) -> SeededRng {
    derive_trial_rng(master, u64::MAX)
}

/// Runs trial `index`; all randomness comes from streams derived from `master`.
pub fn run_trial(exp: &RiskExperiment, master: &SeededRng, index: u64) -> Result<TrialOutcome> {
    let start = Instant::now();
    let d = exp.family.dim();
    let mut rng = derive_trial_rng(master, index);
    let u = match exp.datasets_per_unitary {
        None => haar_unitary(d, &mut rng)?,
        Some(k) => haar_unitary(d, &mut derive_trial_rng(&unitary_master(master), index / k as u64))?,
    };
    let states = crate::protocols::gen_states(&exp.family, &mut rng)?;
    let protocol = exp.protocol.as_ref();
    let dataset = protocol.dataset(&u, &states, &exp.observable)?;

    let (v, final_loss, converged, attempts, residual_tol, alignment_tol) = match exp.source {
        HypothesisSource::Oracle => {
            let v = protocol.oracle(&u, &states, &exp.observable, &mut rng)?;
            let residual = protocol.residual(&v, &dataset, &exp.observable)?;
            (v, residual, residual <= 1e-9, 1, 1e-9, ORACLE_ALIGNMENT_TOL)
        }
        HypothesisSource::Trained => {
            let setup = &exp.training;
            let loss = protocol.loss(&dataset, &exp.observable)?;
            let mut best = None;
            let mut attempts = 0;
            for _ in 0..=setup.restarts {
                attempts += 1;
                let init = build_hea(exp.family.n, setup.layers, &mut rng)?;
                let (circuit, trace) = train(&loss, init, &setup.adam, setup.adam.max_iterations)?;
                let better = best.as_ref().is_none_or(|(_, l): &(_, f64)| trace.final_loss < *l);
                if better {
                    best = Some((circuit, trace.final_loss));
                }
                if trace.converged {
                    break;
                }
            }
            let (circuit, l) = best.expect("at least one attempt");
            let residual_tol = (exp.family.size.max(1) as f64 * setup.adam.target_loss).max(1e-12);
            (circuit.as_matrix()?, l, l <= setup.adam.target_loss, attempts, residual_tol, setup.alignment_tol)
        }
    };

    let (phase_spread, aligned) = if converged {
        match protocol.phases(&u, &v, &states, residual_tol, alignment_tol)? {
            Some(p) => (Some(p.spread), Some(p.aligned)),
            None => (None, None),
        }
    } else {
        (None, None)
    };
    let risk = analytical_risk(&u, &v, &exp.observable)?;
    Ok(TrialOutcome {
        index,
        risk,
        final_loss,
        converged,
        phase_spread,
        aligned,
        attempts,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs `indices` on a pool of `threads` workers (0 = all cores); output is in
/// index order whatever the scheduling.
pub fn run_trials(
    exp: &RiskExperiment,
    master: &SeededRng,
    indices: std::ops::Range<u64>,
    threads: usize,
) -> Result<Vec<TrialOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Estimation(format!("worker pool: {e}")))?;
    pool.install(|| {
        indices
            .into_par_iter()
            .map(|i| run_trial(exp, master, i))
            .collect::<Result<Vec<_>>>()
    })
}

/// Compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedRiskEstimate {
    pub mean: f64,
    pub standard_error: f64,
    /// Trials entering the mean.
    pub trials: usize,
    pub attempted: usize,
    pub perfect_training_rate: f64,
}

/// Mean and standard error over perfectly trained trials; others are counted
/// and excluded.
pub fn summarize(outcomes: &[TrialOutcome]) -> Result<AveragedRiskEstimate> {
    let mut sorted: Vec<&TrialOutcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.index);
    let kept: Vec<f64> = sorted.iter().filter(|o| o.converged).map(|o| o.risk.risk).collect();
    let attempted = outcomes.len();
    if kept.is_empty() {
        let best = outcomes.iter().map(|o| o.final_loss).fold(f64::INFINITY, f64::min);
        return Err(Error::Estimation(format!(
            "none of {attempted} trials reached perfect training (best final loss {best:.3e})"
        )));
    }
    let n = kept.len() as f64;
    let mut sum = KahanSum::default();
    kept.iter().for_each(|&r| sum.add(r));
    let mean = sum.value() / n;
    let standard_error = if kept.len() < 2 {
        f64::NAN
    } else {
        let mut ss = KahanSum::default();
        kept.iter().for_each(|&r| ss.add((r - mean) * (r - mean)));
        (ss.value() / (n - 1.0) / n).sqrt()
    };
    Ok(AveragedRiskEstimate {
        mean,
        standard_error,
        trials: kept.len(),
        attempted,
        perfect_training_rate: n / attempted as f64,
    })
}

/// `E_U E_D R_U(V_D)` estimated over `trials` independent trials.
pub fn mc_average_risk(
    exp: &RiskExperiment,
    trials: usize,
    master: &SeededRng,
    threads: usize,
) -> Result<(AveragedRiskEstimate, Vec<TrialOutcome>)> {
    if trials < 2 {
        return Err(domain("averaged risk needs at least two trials"));
    }
    let outcomes = run_trials(exp, master, 0..trials as u64, threads)?;
    Ok((summarize(&outcomes)?, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::{pauli_string, projector_zero};

    fn obs(m: ComplexMatrix) -> Observable {
        Observable::from_matrix(m).unwrap()
    }

    #[test]
    fn risk_examples() {
        let z = obs(ComplexMatrix::pauli_z());
        let id = ComplexMatrix::identity(2);
        let r = analytical_risk(&id, &ComplexMatrix::pauli_x(), &z).unwrap();
        assert!((r.risk - 4.0 / 3.0).abs() < 1e-12);
        assert!((r.trace_term + 2.0).abs() < 1e-12);
        assert!((r.normalized_risk - 16.0 / 3.0).abs() < 1e-12);

        let mut rng = SeededRng::new(31, 0);
        let u = haar_unitary(4, &mut rng).unwrap();
        let v = haar_unitary(4, &mut rng).unwrap();
        let o = pauli_string("XY").unwrap();
        assert!(analytical_risk(&u, &u, &o).unwrap().risk.abs() < 1e-12);
        let c = obs(ComplexMatrix::identity(4).scale(crate::linalg::C64::new(2.5, 0.0)));
        assert!(analytical_risk(&u, &v, &c).unwrap().risk.abs() < 1e-12);
        assert!(matches!(analytical_risk(&id, &u, &o), Err(Error::Shape(_))));
    }

    #[test]
    fn mc_oracle_identity_is_exact() {
        let mut rng = SeededRng::new(32, 0);
        let u = haar_unitary(4, &mut rng).unwrap();
        let o = projector_zero(2).unwrap();
        let m = mc_risk_oracle(&u, &u, &o, 100, &mut rng).unwrap();
        assert!(m.mean.abs() < 1e-24);
        assert!(mc_risk_oracle(&u, &u, &o, 0, &mut rng).is_err());
    }

    #[test]
    fn clc_bound_examples() {
        let z = obs(ComplexMatrix::pauli_z());
        assert!((nfl_bound_clc(2, 1, &z, Independence::Dependent).value - 2.0 / 3.0).abs() < 1e-12);
        assert!((nfl_bound_clc(2, 1, &z, Independence::Independent).value - 4.0 / 9.0).abs() < 1e-12);
        assert_eq!(nfl_bound_clc(2, 4, &z, Independence::Dependent).value, 0.0);
        assert_eq!(nfl_bound_clc(2, 9, &z, Independence::Independent).value, 0.0);
    }

    #[test]
    fn requ_bound_examples() {
        let zi = pauli_string("ZI").unwrap();
        let b = |n, a| nfl_bound_requ(4, n, &zi, a, Independence::Independent).value;
        assert!((b(2, true) - 0.275).abs() < 1e-12);
        assert!((b(2, false) - 0.325).abs() < 1e-12);
        assert_eq!(b(4, true), 0.0);
        assert_eq!(nfl_bound_requ(4, 16, &zi, true, Independence::Dependent).value, 0.0);
    }

    #[test]
    fn qu_bound_examples() {
        let zi = pauli_string("ZI").unwrap();
        let xi = pauli_string("XI").unwrap();
        assert!((nfl_bound_qu(4, 2, &zi, true).value - 0.1).abs() < 1e-12);
        assert!((nfl_bound_qu(4, 2, &zi, false).value - 0.1).abs() < 1e-12);
        assert!((nfl_bound_qu(4, 2, &xi, false).value - 0.125).abs() < 1e-12);
        assert_eq!(nfl_bound_qu(4, 4, &zi, false).value, 0.0);
        assert_eq!(nfl_bound_qu(4, 9, &zi, true).value, 0.0);
        let p = projector_zero(2).unwrap();
        assert!((nfl_bound_qu(4, 2, &p, true).value - 0.01875).abs() < 1e-12);
    }

    #[test]
    fn kahan_beats_naive() {
        let mut k = KahanSum::default();
        k.add(1.0);
        for _ in 0..1000 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1e-13)).abs() < 1e-16);
    }

    #[test]
    fn oracle_estimator_runs_and_excludes_nothing() {
        let registry = crate::registry::ProtocolRegistry::default();
        let exp = RiskExperiment::new(
            registry.get("requ").unwrap(),
            StateFamily::new(FamilyKind::OrthogonalHaar, 1, 2).unwrap(),
            projector_zero(1).unwrap(),
            HypothesisSource::Oracle,
        )
        .unwrap();
        let (est, rows) = mc_average_risk(&exp, 8, &SeededRng::new(33, 0), 2).unwrap();
        assert_eq!(est.trials, 8);
        assert_eq!(est.perfect_training_rate, 1.0);
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.risk.risk >= -1e-10));
        assert!(mc_average_risk(&exp, 1, &SeededRng::new(33, 0), 1).is_err());
    }

    #[test]
    fn estimator_is_thread_count_invariant() {
        let registry = crate::registry::ProtocolRegistry::default();
        let exp = RiskExperiment::new(
            registry.get("qu").unwrap(),
            StateFamily::new(FamilyKind::Haar, 2, 2).unwrap(),
            projector_zero(2).unwrap(),
            HypothesisSource::Oracle,
        )
        .unwrap()
        .with_datasets_per_unitary(Some(3));
        let master = SeededRng::new(34, 7);
        let a = mc_average_risk(&exp, 12, &master, 1).unwrap().0;
        let b = mc_average_risk(&exp, 12, &master, 4).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn summary_errors_without_successes() {
        let r = RiskReport { risk: 0.1, trace_term: 0.0, d: 2, normalized_risk: 0.4 };
        let row = TrialOutcome {
            index: 0,
            risk: r,
            final_loss: 0.3,
            converged: false,
            phase_spread: None,
            aligned: None,
            attempts: 6,
            wall_time_ms: 0.0,
        };
        assert!(matches!(summarize(&[row]), Err(Error::Estimation(_))));
    }
}
