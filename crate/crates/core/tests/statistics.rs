//! Monte Carlo cross-checks of the closed forms against brute-force sampling.

use nfl_core::haar::{haar_unitary, SeededRng};
use nfl_core::linalg::ComplexMatrix;
use nfl_core::observables::{projector_zero, Observable};
use nfl_core::protocols::{oracle_clc_with_phases, FamilyKind, StateFamily};
use nfl_core::registry::ProtocolRegistry;
use nfl_core::risk::{analytical_risk, mc_average_risk, mc_risk_oracle, HypothesisSource, RiskExperiment};

#[test]
fn single_qubit_flip_risk() {
    let z = Observable::from_matrix(ComplexMatrix::pauli_z()).unwrap();
    let m = mc_risk_oracle(
        &ComplexMatrix::identity(2),
        &ComplexMatrix::pauli_x(),
        &z,
        1_000_000,
        &mut SeededRng::new(5, 0),
    )
    .unwrap();
    assert!((m.mean - 4.0 / 3.0).abs() <= 3.0 * m.standard_error, "{m:?}");
}

#[test]
fn random_triples_at_four_dimensions() {
    let mut rng = SeededRng::new(6, 0);
    for _ in 0..3 {
        let u = haar_unitary(4, &mut rng).unwrap();
        let v = haar_unitary(4, &mut rng).unwrap();
        let g = nfl_core::haar::ginibre(4, &mut rng);
        let o = Observable::from_matrix(g.add(&g.adjoint()).unwrap()).unwrap();
        let exact = analytical_risk(&u, &v, &o).unwrap().risk;
        let m = mc_risk_oracle(&u, &v, &o, 200_000, &mut rng).unwrap();
        assert!((m.mean - exact).abs() <= 3.0 * m.standard_error, "{exact} vs {m:?}");
    }
}

#[test]
fn clc_oracle_risk_depends_on_phase_differences_only() {
    let mut rng = SeededRng::new(7, 0);
    let u = haar_unitary(4, &mut rng).unwrap();
    let o = Observable::from_matrix(ComplexMatrix::diag(&[
        1.0.into(),
        0.5.into(),
        (-0.3).into(),
        0.0.into(),
    ]))
    .unwrap();
    let gamma = [0.3, 1.1, -2.0, 0.7];
    let shifted: Vec<f64> = gamma.iter().map(|g| g + 0.9).collect();
    let a = analytical_risk(&u, &oracle_clc_with_phases(&u, &o, &gamma).unwrap(), &o).unwrap();
    let b = analytical_risk(&u, &oracle_clc_with_phases(&u, &o, &shifted).unwrap(), &o).unwrap();
    assert!((a.risk - b.risk).abs() < 1e-12);
    assert!(a.risk.abs() < 1e-12);
}

#[test]
fn misaligned_phases_cost_the_qu_oracle() {
    let registry = ProtocolRegistry::default();
    let o = projector_zero(2).unwrap();
    let estimate = |family| {
        let exp = RiskExperiment::new(
            registry.get("qu").unwrap(),
            StateFamily::new(family, 2, 2).unwrap(),
            o.clone(),
            HypothesisSource::Oracle,
        )
        .unwrap();
        mc_average_risk(&exp, 2000, &SeededRng::new(8, family as u64), 0).unwrap().0
    };
    let a = estimate(FamilyKind::Haar);
    let b = estimate(FamilyKind::OrthogonalHaar);
    let se = (a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
    assert!(b.mean - a.mean > 3.0 * se, "{a:?} vs {b:?}");
}
