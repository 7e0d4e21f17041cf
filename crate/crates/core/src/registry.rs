//! Learning protocols as interchangeable strategies, selected by name.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::error::{domain, Error, Result};
use crate::linalg::{ComplexMatrix, PureState};
use crate::observables::Observable;
use crate::protocols::{
    clc_residual, extract_phases, gen_dataset, oracle_clc, oracle_qu, oracle_requ, overlap_components,
    Dataset, PhaseVector, ProtocolKind, ProtocolLoss, Responses,
};
use crate::risk::{nfl_bound_clc, nfl_bound_qu, nfl_bound_requ, BoundValue, Independence};

/// Data access model, loss, perfect-training check, oracle and bound of one
/// learning protocol.
pub trait LearningProtocol: Send + Sync {
    fn kind(&self) -> ProtocolKind;

    fn name(&self) -> &'static str {
        self.kind().name()
    }

    fn dataset(&self, u: &ComplexMatrix, states: &[PureState], observable: &Observable) -> Result<Dataset> {
        gen_dataset(self.kind(), u, states, Some(observable))
    }

    fn loss(&self, dataset: &Dataset, observable: &Observable) -> Result<ProtocolLoss> {
        ProtocolLoss::new(dataset, Some(observable))
    }

    /// Largest per-sample violation of the perfect-training condition by `v`.
    fn residual(&self, v: &ComplexMatrix, dataset: &Dataset, observable: &Observable) -> Result<f64>;

    /// A hypothesis that trains perfectly on `states`, drawn from the protocol's
    /// oracle family.
    fn oracle(
        &self,
        u: &ComplexMatrix,
        states: &[PureState],
        observable: &Observable,
        rng: &mut dyn RngCore,
    ) -> Result<ComplexMatrix>;

    /// Whether the oracle family is the ensemble the bound is stated for.
    fn exact_oracle(&self) -> bool;

    /// Relative phases, or `None` when the protocol has no phase notion.
    fn phases(
        &self,
        u: &ComplexMatrix,
        v: &ComplexMatrix,
        states: &[PureState],
        residual_tol: f64,
        alignment_tol: f64,
    ) -> Result<Option<PhaseVector>>;

    fn bound(&self, d: usize, n: usize, observable: &Observable, aligned: bool, mode: Independence) -> BoundValue;
}

/// One uniform phase per class of mutually non-orthogonal states, so the
/// draw is i.i.d. for orthonormal inputs and common for generic ones.
pub fn draw_phases(states: &[PureState], rng: &mut dyn RngCore) -> Vec<f64> {
    let mut phases = vec![0.0; states.len()];
    for group in overlap_components(states) {
        let a = rng.random::<f64>() * TAU;
        for j in group {
            phases[j] = a;
        }
    }
    phases
}

/// The first `d` states suffice once they span the space.
fn spanning_prefix(states: &[PureState]) -> &[PureState] {
    let d = states.first().map_or(0, PureState::dim);
    &states[..states.len().min(d)]
}

fn state_residual(dataset: &Dataset, v: &ComplexMatrix) -> Result<f64> {
    let Responses::States(r) = dataset.responses() else {
        return Err(domain("quantum residual needs a quantum dataset"));
    };
    let mut worst: f64 = 0.0;
    for (psi, resp) in dataset.states().iter().zip(r) {
        let (x, y) = match dataset.protocol() {
            ProtocolKind::Qu => (v.adjoint().matvec(psi.amplitudes())?, resp.amplitudes().to_vec()),
            _ => (v.matvec(psi.amplitudes())?, resp.amplitudes().to_vec()),
        };
        worst = worst.max(1.0 - crate::linalg::inner(&y, &x).norm_sqr());
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Classical;

impl LearningProtocol for Classical {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Clc
    }

    fn residual(&self, v: &ComplexMatrix, dataset: &Dataset, observable: &Observable) -> Result<f64> {
        clc_residual(v, dataset, observable)
    }

    fn oracle(
        &self,
        u: &ComplexMatrix,
        _states: &[PureState],
        observable: &Observable,
        rng: &mut dyn RngCore,
    ) -> Result<ComplexMatrix> {
        oracle_clc(u, observable, rng)
    }

    fn exact_oracle(&self) -> bool {
        false
    }

    fn phases(&self, _: &ComplexMatrix, _: &ComplexMatrix, _: &[PureState], _: f64, _: f64) -> Result<Option<PhaseVector>> {
        Ok(None)
    }

    fn bound(&self, d: usize, n: usize, observable: &Observable, _aligned: bool, mode: Independence) -> BoundValue {
        nfl_bound_clc(d, n, observable, mode)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RestrictedQuantum;

impl LearningProtocol for RestrictedQuantum {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Requ
    }

    fn residual(&self, v: &ComplexMatrix, dataset: &Dataset, _observable: &Observable) -> Result<f64> {
        state_residual(dataset, v)
    }

    fn oracle(
        &self,
        u: &ComplexMatrix,
        states: &[PureState],
        _observable: &Observable,
        rng: &mut dyn RngCore,
    ) -> Result<ComplexMatrix> {
        let states = spanning_prefix(states);
        let alpha = draw_phases(states, rng);
        oracle_requ(u, states, &alpha, rng)
    }

    fn exact_oracle(&self) -> bool {
        true
    }

    fn phases(
        &self,
        u: &ComplexMatrix,
        v: &ComplexMatrix,
        states: &[PureState],
        residual_tol: f64,
        alignment_tol: f64,
    ) -> Result<Option<PhaseVector>> {
        extract_phases(ProtocolKind::Requ, u, v, states, residual_tol, alignment_tol).map(Some)
    }

    fn bound(&self, d: usize, n: usize, observable: &Observable, aligned: bool, mode: Independence) -> BoundValue {
        nfl_bound_requ(d, n, observable, aligned, mode)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct InverseQuantum;

impl LearningProtocol for InverseQuantum {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Qu
    }

    fn residual(&self, v: &ComplexMatrix, dataset: &Dataset, _observable: &Observable) -> Result<f64> {
        state_residual(dataset, v)
    }

    fn oracle(
        &self,
        u: &ComplexMatrix,
        states: &[PureState],
        _observable: &Observable,
        rng: &mut dyn RngCore,
    ) -> Result<ComplexMatrix> {
        let states = spanning_prefix(states);
        let beta = draw_phases(states, rng);
        oracle_qu(u, states, &beta, rng)
    }

    fn exact_oracle(&self) -> bool {
        true
    }

    fn phases(
        &self,
        u: &ComplexMatrix,
        v: &ComplexMatrix,
        states: &[PureState],
        residual_tol: f64,
        alignment_tol: f64,
    ) -> Result<Option<PhaseVector>> {
        extract_phases(ProtocolKind::Qu, u, v, states, residual_tol, alignment_tol).map(Some)
    }

    fn bound(&self, d: usize, n: usize, observable: &Observable, aligned: bool, _mode: Independence) -> BoundValue {
        nfl_bound_qu(d, n, observable, aligned)
    }
}

/// Name-keyed table of protocol strategies.
#[derive(Clone)]
pub struct ProtocolRegistry {
    entries: BTreeMap<String, Arc<dyn LearningProtocol>>,
}

impl Default for ProtocolRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register(Arc::new(Classical));
        r.register(Arc::new(RestrictedQuantum));
        r.register(Arc::new(InverseQuantum));
        r
    }
}

impl ProtocolRegistry {
    /// Adds or replaces the entry under the protocol's name.
    pub fn register(&mut self, protocol: Arc<dyn LearningProtocol>) {
        self.entries.insert(protocol.name().to_string(), protocol);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn LearningProtocol>> {
        self.entries
            .get(&name.trim().to_ascii_lowercase())
            .cloned()
            .ok_or_else(|| Error::Unknown { kind: "protocol", name: name.to_string() })
    }

    pub fn by_kind(&self, kind: ProtocolKind) -> Result<Arc<dyn LearningProtocol>> {
        self.get(kind.name())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}
