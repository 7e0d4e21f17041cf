//! ADAM and the single-descent training loop.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::circuit::{loss_and_gradient, OverlapLoss, ParamCircuit};
use crate::error::{domain, shape, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub target_loss: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iterations: 1000,
            target_loss: 1e-6,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(domain("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(domain("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(domain("epsilon must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(domain("max_iterations must be at least 1"));
        }
        if !(self.target_loss >= 0.0) {
            return Err(domain("target loss must be nonnegative"));
        }
        Ok(())
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected ADAM update at step `t` (1-based).
pub fn adam_step(
    theta: &[f64],
    grad: &[f64],
    moments: &AdamMoments,
    config: &AdamConfig,
    t: usize,
) -> Result<(Vec<f64>, AdamMoments)> {
    if grad.len() != theta.len() || moments.m.len() != theta.len() || moments.v.len() != theta.len() {
        return Err(shape(format!(
            "adam_step: theta {}, grad {}, moments {}/{}",
            theta.len(),
            grad.len(),
            moments.m.len(),
            moments.v.len()
        )));
    }
    if t == 0 {
        return Err(domain("adam step counter starts at 1"));
    }
    let c1 = 1.0 - config.beta1.powi(t as i32);
    let c2 = 1.0 - config.beta2.powi(t as i32);
    let mut next = AdamMoments::zeros(theta.len());
    let mut out = theta.to_vec();
    for i in 0..theta.len() {
        let g = grad[i];
        next.m[i] = config.beta1 * moments.m[i] + (1.0 - config.beta1) * g;
        next.v[i] = config.beta2 * moments.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = next.m[i] / c1;
        let v_hat = next.v[i] / c2;
        out[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok((out, next))
}

/// A first-order update rule.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    /// Updates `theta` in place from the gradient at `theta`.
    fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()>;
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    moments: AdamMoments,
    t: usize,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, moments: AdamMoments::default(), t: 0 }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if self.t == 0 {
            self.moments = AdamMoments::zeros(theta.len());
        }
        self.t += 1;
        let (next, moments) = adam_step(theta, grad, &self.moments, &self.config, self.t)?;
        theta.copy_from_slice(&next);
        self.moments = moments;
        Ok(())
    }
}

/// Plain gradient descent with the configured learning rate.
#[derive(Clone, Debug)]
pub struct GradientDescent {
    learning_rate: f64,
}

impl GradientDescent {
    pub fn new(learning_rate: f64) -> Self {
        Self { learning_rate }
    }
}

impl Optimizer for GradientDescent {
    fn name(&self) -> &'static str {
        "gd"
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != theta.len() {
            return Err(shape("gradient length differs from parameter count"));
        }
        for (t, g) in theta.iter_mut().zip(grad) {
            *t -= self.learning_rate * g;
        }
        Ok(())
    }
}

type OptimizerFactory = fn(&AdamConfig) -> Box<dyn Optimizer>;

/// Optimizers selectable by name.
pub struct OptimizerRegistry {
    entries: BTreeMap<&'static str, OptimizerFactory>,
}

impl Default for OptimizerRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register("adam", |c| Box::new(Adam::new(*c)));
        r.register("gd", |c| Box::new(GradientDescent::new(c.learning_rate)));
        r
    }
}

impl OptimizerRegistry {
    pub fn register(&mut self, name: &'static str, factory: OptimizerFactory) {
        self.entries.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn create(&self, name: &str, config: &AdamConfig) -> Result<Box<dyn Optimizer>> {
        let factory = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Unknown { kind: "optimizer", name: name.to_string() })?;
        Ok(factory(config))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub final_loss: f64,
    pub iterations_used: usize,
    /// `(iteration, loss)` every `stride` iterations, plus the first and last.
    pub history: Vec<(usize, f64)>,
    pub converged: bool,
}

impl TrainingTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "loss"])?;
        for (i, l) in &self.history {
            w.write_record([i.to_string(), format!("{l:?}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ADAM descent from the circuit's current angles.
pub fn train(
    loss: &dyn OverlapLoss,
    circuit: ParamCircuit,
    config: &AdamConfig,
    stride: usize,
) -> Result<(ParamCircuit, TrainingTrace)> {
    config.validate()?;
    train_with(loss, circuit, &mut Adam::new(*config), config, stride)
}

/// Descent with an arbitrary update rule; `config` supplies the iteration cap and
/// target loss. Returns the best parameters seen.
pub fn train_with(
    loss: &dyn OverlapLoss,
    mut circuit: ParamCircuit,
    optimizer: &mut dyn Optimizer,
    config: &AdamConfig,
    stride: usize,
) -> Result<(ParamCircuit, TrainingTrace)> {
    let stride = stride.max(1);
    let (mut value, mut grad) = loss_and_gradient(loss, &circuit)?;

    #[cfg(debug_assertions)]
    if circuit.num_params() > 0 {
        let fd = crate::circuit::finite_difference_gradient(loss, &circuit, 1e-5)?;
        let scale = grad.iter().fold(1e-3_f64, |a, g| a.max(g.abs()));
        let err = grad.iter().zip(&fd).fold(0.0_f64, |a, (g, f)| a.max((g - f).abs()));
        debug_assert!(err <= 1e-4 * scale, "parameter-shift gradient disagrees with finite differences: {err:e}");
    }

    let mut best = value;
    let mut best_theta = circuit.theta().to_vec();
    let mut history = vec![(0, value)];
    let mut used = 0;
    let mut theta = circuit.theta().to_vec();
    while best > config.target_loss && used < config.max_iterations {
        optimizer.step(&mut theta, &grad)?;
        circuit.set_theta(&theta)?;
        used += 1;
        (value, grad) = loss_and_gradient(loss, &circuit)?;
        if value < best {
            best = value;
            best_theta.copy_from_slice(&theta);
        }
        if used % stride == 0 {
            history.push((used, value));
        }
    }
    if history.last().map(|h| h.0) != Some(used) {
        history.push((used, value));
    }
    circuit.set_theta(&best_theta)?;
    Ok((
        circuit,
        TrainingTrace { final_loss: best, iterations_used: used, history, converged: best <= config.target_loss },
    ))
}
