use nfl_core::circuit::build_hea;
use nfl_core::haar::{haar_state, haar_unitary, SeededRng};
use nfl_core::observables::projector_zero;
use nfl_core::optimizer::{train, train_with, AdamConfig, GradientDescent};
use nfl_core::protocols::{gen_dataset, ProtocolKind, ProtocolLoss};

#[test]
fn requ_single_qubit_converges() {
    let mut rng = SeededRng::new(2024, 0);
    let u = haar_unitary(2, &mut rng).unwrap();
    let s = vec![haar_state(2, &mut rng).unwrap()];
    let ds = gen_dataset(ProtocolKind::Requ, &u, &s, None).unwrap();
    let loss = ProtocolLoss::new(&ds, None).unwrap();
    let cfg = AdamConfig { max_iterations: 2000, ..AdamConfig::default() };
    let (_, trace) = train(&loss, build_hea(1, 3, &mut rng).unwrap(), &cfg, 50).unwrap();
    assert!(trace.converged, "final loss {}", trace.final_loss);
    assert!(trace.final_loss <= 1e-6);
}

#[test]
fn exact_initialization_converges_immediately() {
    let mut rng = SeededRng::new(7, 0);
    let c = build_hea(2, 2, &mut rng).unwrap();
    let u = c.as_matrix().unwrap();
    let s: Vec<_> = (0..3).map(|_| haar_state(4, &mut rng).unwrap()).collect();
    let o = projector_zero(2).unwrap();
    for kind in ProtocolKind::ALL {
        let ds = gen_dataset(kind, &u, &s, Some(&o)).unwrap();
        let loss = ProtocolLoss::new(&ds, Some(&o)).unwrap();
        let (trained, trace) = train(&loss, c.clone(), &AdamConfig::default(), 1).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.iterations_used, 0, "{kind}");
        assert_eq!(trained.theta(), c.theta());
    }
}

/// Convergence rate of classical-data training at n = 2, N = 2, L = 20 over
/// 20 seeds. Measured rate on this implementation: 20/20.
#[test]
fn clc_two_qubit_convergence_rate() {
    let o = projector_zero(2).unwrap();
    let mut converged = 0;
    for seed in 0..20 {
        let mut rng = SeededRng::new(seed, 0);
        let u = haar_unitary(4, &mut rng).unwrap();
        let s: Vec<_> = (0..2).map(|_| haar_state(4, &mut rng).unwrap()).collect();
        let ds = gen_dataset(ProtocolKind::Clc, &u, &s, Some(&o)).unwrap();
        let loss = ProtocolLoss::new(&ds, Some(&o)).unwrap();
        let (_, trace) = train(&loss, build_hea(2, 20, &mut rng).unwrap(), &AdamConfig::default(), 100).unwrap();
        converged += trace.converged as usize;
    }
    assert!(converged >= 16, "{converged}/20 converged");
}

#[test]
fn trace_history_and_csv() {
    let mut rng = SeededRng::new(8, 0);
    let u = haar_unitary(2, &mut rng).unwrap();
    let s = vec![haar_state(2, &mut rng).unwrap()];
    let ds = gen_dataset(ProtocolKind::Qu, &u, &s, None).unwrap();
    let loss = ProtocolLoss::new(&ds, None).unwrap();
    let cfg = AdamConfig { max_iterations: 25, target_loss: 0.0, ..AdamConfig::default() };
    let (_, trace) = train(&loss, build_hea(1, 2, &mut rng).unwrap(), &cfg, 10).unwrap();
    let its: Vec<usize> = trace.history.iter().map(|h| h.0).collect();
    assert_eq!(its, [0, 10, 20, 25]);
    assert!(!trace.converged);
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iteration,loss\n0,"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn gradient_descent_strategy_also_descends() {
    let mut rng = SeededRng::new(9, 0);
    let u = haar_unitary(2, &mut rng).unwrap();
    let s = vec![haar_state(2, &mut rng).unwrap()];
    let ds = gen_dataset(ProtocolKind::Requ, &u, &s, None).unwrap();
    let loss = ProtocolLoss::new(&ds, None).unwrap();
    let cfg = AdamConfig { max_iterations: 400, learning_rate: 0.5, ..AdamConfig::default() };
    let init = build_hea(1, 2, &mut rng).unwrap();
    let start = nfl_core::circuit::OverlapLoss::evaluate(&loss, &init).unwrap();
    let (_, trace) = train_with(&loss, init, &mut GradientDescent::new(0.5), &cfg, 100).unwrap();
    assert!(trace.final_loss < start);
}
