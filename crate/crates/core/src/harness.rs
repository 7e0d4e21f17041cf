//! Experiment configuration, sweeps with resumable CSV output, bound tables,
//! moment checks and oracle verification.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::mpsc;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::haar::{derive_trial_rng, ginibre, moment_check, MomentCheckReport, MomentProperty, SeededRng};
use crate::linalg::ComplexMatrix;
use crate::observables::{pauli_string, projector_zero, ObservableSpec};
use crate::optimizer::AdamConfig;
use crate::protocols::{FamilyKind, ProtocolKind, StateFamily};
use crate::registry::{LearningProtocol, ProtocolRegistry};
use crate::risk::{
    mc_average_risk, run_trial, AveragedRiskEstimate, HypothesisSource, Independence, KahanSum, RiskExperiment,
    TrainingSetup, TrialOutcome,
};

pub const ESTIMATE_COLUMNS: [&str; 13] = [
    "protocol", "d", "N", "family", "observable", "aligned", "mode", "bound", "mean", "stderr", "trials", "pt_rate",
    "seed",
];

pub const TRIAL_COLUMNS: [&str; 14] = [
    "protocol",
    "n",
    "N",
    "family",
    "observable",
    "trial",
    "seed",
    "risk",
    "normalized_risk",
    "final_loss",
    "converged",
    "phase_spread",
    "aligned",
    "wall_time_ms",
];

/// Sweep parameters, read from a flat `key = value` file.
///
/// | key | meaning | default |
/// |---|---|---|
/// | `protocols` | comma list of `clc`, `requ`, `qu` | all three |
/// | `n` | qubits | 2 |
/// | `sizes` (or `N`) | comma list of training-set sizes | required |
/// | `families` (or `family`) | comma list of `haar`, `orthogonal` | `haar` |
/// | `observables` (or `observable`) | `;` list of observable specs | `proj0` |
/// | `source` | `trained` or `oracle` | `trained` |
/// | `trials` | trials per point | 40 |
/// | `unitaries` | target unitaries per point; trials split evenly | 4 |
/// | `layers` | ansatz layers | 20 |
/// | `restarts` | extra initializations after a failed descent | 5 |
/// | `learning_rate`, `beta1`, `beta2`, `epsilon` | ADAM constants | 0.01, 0.9, 0.999, 1e-8 |
/// | `max_iterations`, `target_loss` | descent cap and perfect-training threshold | 1000, 1e-6 |
/// | `bound_mode` | `independent` or `dependent` for the summary bound | `dependent` |
/// | `seed` | master seed | 0 |
/// | `record_timing` | fill `wall_time_ms` | false |
/// | `output` | trial CSV path | none |
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub protocols: Vec<ProtocolKind>,
    pub n: usize,
    pub sizes: Vec<usize>,
    pub families: Vec<FamilyKind>,
    pub observables: Vec<ObservableSpec>,
    pub source: HypothesisSource,
    pub trials: usize,
    pub unitaries: usize,
    pub layers: usize,
    pub restarts: usize,
    pub adam: AdamConfig,
    pub bound_mode: Independence,
    pub seed: u64,
    pub record_timing: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            protocols: ProtocolKind::ALL.to_vec(),
            n: 2,
            sizes: Vec::new(),
            families: vec![FamilyKind::Haar],
            observables: vec![ObservableSpec::ProjectorZero],
            source: HypothesisSource::Trained,
            trials: 40,
            unitaries: 4,
            layers: 20,
            restarts: 5,
            adam: AdamConfig::default(),
            bound_mode: Independence::Dependent,
            seed: 0,
            record_timing: false,
            output: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T>(value: &str, sep: char, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value.split(sep).map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Parse(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "protocols" | "protocol" => self.protocols = parse_list(value, ',', |s| s.parse())?,
            "n" => self.n = parse_num(key, value)?,
            "sizes" | "N" => self.sizes = parse_list(value, ',', |s| parse_num(key, s))?,
            "families" | "family" => self.families = parse_list(value, ',', |s| s.parse())?,
            "observables" | "observable" => self.observables = parse_list(value, ';', |s| s.parse())?,
            "source" => self.source = value.parse()?,
            "trials" => self.trials = parse_num(key, value)?,
            "unitaries" => self.unitaries = parse_num(key, value)?,
            "layers" => self.layers = parse_num(key, value)?,
            "restarts" => self.restarts = parse_num(key, value)?,
            "learning_rate" => self.adam.learning_rate = parse_num(key, value)?,
            "beta1" => self.adam.beta1 = parse_num(key, value)?,
            "beta2" => self.adam.beta2 = parse_num(key, value)?,
            "epsilon" => self.adam.epsilon = parse_num(key, value)?,
            "max_iterations" => self.adam.max_iterations = parse_num(key, value)?,
            "target_loss" => self.adam.target_loss = parse_num(key, value)?,
            "bound_mode" => self.bound_mode = value.parse()?,
            "seed" => self.seed = parse_num(key, value)?,
            "record_timing" => self.record_timing = parse_bool(key, value)?,
            "output" => self.output = Some(PathBuf::from(value.trim())),
            _ => return Err(Error::Parse(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c = Self::parse_unvalidated(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Reads settings without the cross-field checks, for callers that apply
    /// overrides before validating.
    pub fn parse_unvalidated(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            c.set(key, value)?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::Parse("N-values (`sizes`) must be nonempty".into()));
        }
        if self.sizes.contains(&0) {
            return Err(Error::Parse("training-set sizes must be positive".into()));
        }
        for (what, empty) in [
            ("protocols", self.protocols.is_empty()),
            ("families", self.families.is_empty()),
            ("observables", self.observables.is_empty()),
        ] {
            if empty {
                return Err(Error::Parse(format!("`{what}` must be nonempty")));
            }
        }
        if self.n == 0 || self.n > crate::circuit::MAX_MATRIX_QUBITS {
            return Err(domain(format!("n must lie in 1..={}", crate::circuit::MAX_MATRIX_QUBITS)));
        }
        if self.trials < 2 {
            return Err(domain("at least two trials per point are required"));
        }
        if self.unitaries == 0 {
            return Err(domain("unitaries must be positive"));
        }
        if self.layers == 0 && self.source == HypothesisSource::Trained {
            return Err(domain("trained sweeps need at least one layer"));
        }
        self.adam.validate()?;
        for o in &self.observables {
            o.build(self.n)?;
        }
        Ok(())
    }

    pub fn training(&self) -> TrainingSetup {
        TrainingSetup { layers: self.layers, adam: self.adam, restarts: self.restarts, ..TrainingSetup::default() }
    }
}

/// One `(protocol, family, observable, N)` combination of a sweep.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub protocol: ProtocolKind,
    pub family: FamilyKind,
    pub observable: ObservableSpec,
    pub size: usize,
    /// Master stream; shared by all protocols at the same data point so they
    /// see the same targets and training states.
    pub stream: u64,
}

/// The valid cross product in canonical order, plus skipped combinations
/// (orthogonal families larger than the dimension).
pub fn sweep_points(config: &ExperimentConfig) -> (Vec<SweepPoint>, Vec<SweepPoint>) {
    let d = 1usize << config.n;
    let (mut points, mut skipped) = (Vec::new(), Vec::new());
    for &protocol in &config.protocols {
        let mut stream = 0u64;
        for &family in &config.families {
            for observable in &config.observables {
                for &size in &config.sizes {
                    let p = SweepPoint { protocol, family, observable: observable.clone(), size, stream };
                    stream += 1;
                    if family == FamilyKind::OrthogonalHaar && size > d {
                        skipped.push(p);
                    } else {
                        points.push(p);
                    }
                }
            }
        }
    }
    (points, skipped)
}

fn experiment_for(config: &ExperimentConfig, point: &SweepPoint, registry: &ProtocolRegistry) -> Result<RiskExperiment> {
    let per_unitary = config.trials.div_ceil(config.unitaries);
    Ok(RiskExperiment::new(
        registry.by_kind(point.protocol)?,
        StateFamily::new(point.family, config.n, point.size)?,
        point.observable.build(config.n)?,
        config.source,
    )?
    .with_training(config.training())
    .with_datasets_per_unitary(Some(per_unitary)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub protocol: String,
    pub n: usize,
    #[serde(rename = "N")]
    pub size: usize,
    pub family: String,
    pub observable: String,
    pub trial: u64,
    pub seed: u64,
    pub risk: f64,
    pub normalized_risk: f64,
    pub final_loss: f64,
    pub converged: bool,
    pub phase_spread: Option<f64>,
    pub aligned: Option<bool>,
    pub wall_time_ms: Option<f64>,
}

impl TrialRow {
    fn new(config: &ExperimentConfig, point: &SweepPoint, o: &TrialOutcome) -> Self {
        Self {
            protocol: point.protocol.to_string(),
            n: config.n,
            size: point.size,
            family: point.family.to_string(),
            observable: point.observable.to_string(),
            trial: o.index,
            seed: config.seed,
            risk: o.risk.risk,
            normalized_risk: o.risk.normalized_risk,
            final_loss: o.final_loss,
            converged: o.converged,
            phase_spread: o.phase_spread,
            aligned: o.aligned,
            wall_time_ms: config.record_timing.then_some(o.wall_time_ms),
        }
    }

    fn key(&self) -> (String, usize, String, String, u64) {
        (self.protocol.clone(), self.size, self.family.clone(), self.observable.clone(), self.trial)
    }
}

fn point_key(point: &SweepPoint, trial: u64) -> (String, usize, String, String, u64) {
    (point.protocol.to_string(), point.size, point.family.to_string(), point.observable.to_string(), trial)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub protocol: String,
    pub d: usize,
    #[serde(rename = "N")]
    pub size: usize,
    pub family: Option<String>,
    pub observable: String,
    pub aligned: bool,
    pub mode: String,
    pub bound: f64,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
    pub trials: Option<usize>,
    pub pt_rate: Option<f64>,
    pub seed: Option<u64>,
}

pub fn write_estimates<W: Write>(rows: &[EstimateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(ESTIMATE_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn row_bytes(row: &TrialRow) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(row)?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn header_line() -> String {
    format!("{}\n", TRIAL_COLUMNS.join(","))
}

/// Reads the completed prefix of an existing trial file. Returns the rows and
/// the byte length they occupy; a torn final line is not counted.
fn read_completed(file: &mut File) -> Result<(Vec<TrialRow>, u64)> {
    let mut bytes = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut bytes)?;
    let header = header_line();
    if bytes.is_empty() {
        return Ok((Vec::new(), 0));
    }
    if !bytes.starts_with(header.as_bytes()) {
        return Err(Error::Parse("existing output has an unexpected header".into()));
    }
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(&bytes[..complete]);
    let rows = reader.deserialize().collect::<std::result::Result<Vec<TrialRow>, _>>()?;
    Ok((rows, complete as u64))
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub output: PathBuf,
    pub summary: PathBuf,
    pub rows_written: usize,
    pub rows_resumed: usize,
    pub skipped: Vec<SweepPoint>,
    pub estimates: Vec<EstimateRow>,
}

/// Path of the per-point summary written next to the trial file.
pub fn summary_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    output.with_file_name(format!("{stem}.summary.csv"))
}

/// Executes every trial of the sweep and writes rows in canonical order.
///
/// Rows already present in `output` (from an interrupted run with the same
/// configuration) are kept and their trials skipped. `stop_after` limits how
/// many new rows are written, which simulates an interruption.
pub fn run_sweep(config: &ExperimentConfig, threads: usize, stop_after: Option<usize>) -> Result<SweepReport> {
    config.validate()?;
    let output = config
        .output
        .clone()
        .ok_or_else(|| Error::Parse("sweep needs an output path".into()))?;
    let mut file = OpenOptions::new().read(true).append(true).create(true).open(&output)?;
    let registry = ProtocolRegistry::default();
    let (points, skipped) = sweep_points(config);
    let experiments = points
        .iter()
        .map(|p| experiment_for(config, p, &registry))
        .collect::<Result<Vec<_>>>()?;

    let (existing, valid_len) = read_completed(&mut file)?;
    let trials = config.trials as u64;
    let total = points.len() * config.trials;
    if existing.len() > total {
        return Err(Error::Parse("existing output has more rows than the configuration produces".into()));
    }
    for (g, row) in existing.iter().enumerate() {
        let p = &points[g / config.trials];
        if row.key() != point_key(p, g as u64 % trials) || row.seed != config.seed || row.n != config.n {
            return Err(Error::Parse(format!(
                "existing row {} does not match this configuration; refusing to resume",
                g + 1
            )));
        }
    }
    file.set_len(valid_len)?;
    if valid_len == 0 {
        file.write_all(header_line().as_bytes())?;
    }
    file.flush()?;

    let start = existing.len();
    let end = stop_after.map_or(total, |k| (start + k).min(total));
    let masters: Vec<SeededRng> = points.iter().map(|p| SeededRng::new(config.seed, p.stream)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Estimation(format!("worker pool: {e}")))?;

    let (tx, rx) = mpsc::channel::<(usize, Result<TrialOutcome>)>();
    let mut written = 0;
    let mut failure: Option<Error> = None;
    std::thread::scope(|scope| {
        let experiments = &experiments;
        let masters = &masters;
        let pool = &pool;
        scope.spawn(move || {
            pool.install(|| {
                (start..end).into_par_iter().for_each_with(tx, |tx, g| {
                    let p = g / config.trials;
                    let outcome = run_trial(&experiments[p], &masters[p], (g % config.trials) as u64);
                    let _ = tx.send((g, outcome));
                });
            });
        });
        let mut pending: BTreeMap<usize, TrialOutcome> = BTreeMap::new();
        let mut next = start;
        for (g, outcome) in rx {
            if failure.is_some() {
                continue;
            }
            match outcome {
                Ok(o) => {
                    pending.insert(g, o);
                }
                Err(e) => {
                    failure = Some(e);
                    continue;
                }
            }
            while let Some(o) = pending.remove(&next) {
                let row = TrialRow::new(config, &points[next / config.trials], &o);
                let res = row_bytes(&row).and_then(|b| {
                    file.write_all(&b)?;
                    file.flush()?;
                    Ok(())
                });
                if let Err(e) = res {
                    failure = Some(e);
                    break;
                }
                written += 1;
                next += 1;
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let summary = summary_path(&output);
    let estimates = if end == total {
        let (rows, _) = read_completed(&mut file)?;
        let est = summarize_rows(config, &points, &experiments, &rows)?;
        let mut f = File::create(&summary)?;
        write_estimates(&est, &mut f)?;
        est
    } else {
        Vec::new()
    };
    Ok(SweepReport { output, summary, rows_written: written, rows_resumed: start, skipped, estimates })
}

/// Per-point mean and standard error recomputed from the written rows.
pub fn summarize_rows(
    config: &ExperimentConfig,
    points: &[SweepPoint],
    experiments: &[RiskExperiment],
    rows: &[TrialRow],
) -> Result<Vec<EstimateRow>> {
    let mut out = Vec::with_capacity(points.len());
    for (p, (point, exp)) in points.iter().zip(experiments).enumerate() {
        let slice = rows
            .get(p * config.trials..(p + 1) * config.trials)
            .ok_or_else(|| Error::Parse("trial file is incomplete".into()))?;
        let kept: Vec<f64> = slice.iter().filter(|r| r.converged).map(|r| r.risk).collect();
        let (mean, stderr) = mean_and_stderr(&kept);
        let bound = exp.bound(config.bound_mode);
        out.push(EstimateRow {
            protocol: point.protocol.to_string(),
            d: exp.family.dim(),
            size: point.size,
            family: Some(point.family.to_string()),
            observable: point.observable.to_string(),
            aligned: bound.aligned,
            mode: bound.independence.to_string(),
            bound: bound.value,
            mean,
            stderr,
            trials: Some(kept.len()),
            pt_rate: Some(kept.len() as f64 / slice.len() as f64),
            seed: Some(config.seed),
        });
    }
    Ok(out)
}

/// Kahan mean and `s/√n`; `None` where undefined.
pub fn mean_and_stderr(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mut s = KahanSum::default();
    values.iter().for_each(|&v| s.add(v));
    let mean = s.value() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let mut ss = KahanSum::default();
    values.iter().for_each(|&v| ss.add((v - mean) * (v - mean)));
    (Some(mean), Some((ss.value() / (n - 1.0) / n).sqrt()))
}

/// Exact bounds, one row per `(N, aligned flag)`.
pub fn run_bounds(
    protocol: &str,
    n: usize,
    sizes: &[usize],
    observable: &ObservableSpec,
    aligned_flags: &[bool],
    mode: Independence,
) -> Result<Vec<EstimateRow>> {
    let p: Arc<dyn LearningProtocol> = ProtocolRegistry::default().get(protocol)?;
    if sizes.is_empty() || aligned_flags.is_empty() {
        return Err(Error::Parse("bounds need at least one size and one alignment flag".into()));
    }
    let o = observable.build(n)?;
    let d = 1 << n;
    let mut rows = Vec::new();
    for &size in sizes {
        for &aligned in aligned_flags {
            let b = p.bound(d, size, &o, aligned, mode);
            rows.push(EstimateRow {
                protocol: p.name().to_string(),
                d,
                size,
                family: None,
                observable: observable.to_string(),
                aligned: b.aligned,
                mode: b.independence.to_string(),
                bound: b.value,
                mean: None,
                stderr: None,
                trials: None,
                pt_rate: None,
                seed: None,
            });
        }
    }
    Ok(rows)
}

/// Parses `1..4`, `1,2,4` or a mix such as `1..3,8`.
pub fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = parse_num("N", a)?;
            let b: usize = parse_num("N", b.trim_start_matches('='))?;
            if a > b {
                return Err(Error::Parse(format!("empty range `{part}`")));
            }
            out.extend(a..=b);
        } else {
            out.push(parse_num("N", part)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Parse("no sizes given".into()));
    }
    Ok(out)
}

/// Operands for each identity: a mix of Ginibre matrices and fixed structured
/// operators (`Z` on the first qubit, the `|0…0⟩` projector).
fn moment_operands(property: MomentProperty, n: usize, rng: &mut SeededRng) -> Result<(Vec<ComplexMatrix>, String)> {
    let d = 1 << n;
    let z = pauli_string(&format!("Z{}", "I".repeat(n - 1)))?.matrix().clone();
    let p0 = projector_zero(n)?.matrix().clone();
    let zname = format!("Z{}", "I".repeat(n - 1));
    let (ops, names): (Vec<ComplexMatrix>, Vec<String>) = match property {
        MomentProperty::P1 => (vec![ginibre(d, rng), z], vec!["ginibre".into(), zname]),
        MomentProperty::P2 => (
            vec![ginibre(d, rng), p0, z, ginibre(d, rng)],
            vec!["ginibre".into(), "proj0".into(), zname, "ginibre".into()],
        ),
        MomentProperty::P3 => (
            vec![z, ginibre(d, rng), p0, ginibre(d, rng)],
            vec![zname, "ginibre".into(), "proj0".into(), "ginibre".into()],
        ),
        MomentProperty::P4 => (vec![ginibre(d, rng)], vec!["ginibre".into()]),
        MomentProperty::P5 => {
            let g = ginibre(d, rng);
            let h = g.add(&g.adjoint())?.add(&z)?;
            (vec![h], vec!["hermitian+Z".into()])
        }
    };
    Ok((ops, names.join(";")))
}

/// One report per identity at `d = 2ⁿ`, each on its own stream of `seed`.
pub fn run_haar_check(n: usize, samples: usize, seed: u64) -> Result<Vec<MomentCheckReport>> {
    if samples == 0 {
        return Err(Error::Parse("samples must be positive".into()));
    }
    if n == 0 || n > crate::circuit::MAX_MATRIX_QUBITS {
        return Err(Error::Parse(format!("n must lie in 1..={}", crate::circuit::MAX_MATRIX_QUBITS)));
    }
    let master = SeededRng::new(seed, n as u64);
    MomentProperty::ALL
        .par_iter()
        .enumerate()
        .map(|(i, &prop)| {
            let mut rng = derive_trial_rng(&master, i as u64);
            let (ops, label) = moment_operands(prop, n, &mut rng)?;
            let mut r = moment_check(prop, 1 << n, &ops, samples, &mut rng)?;
            r.operands = label;
            Ok(r)
        })
        .collect()
}

pub fn write_json_lines<W: Write, T: Serialize>(items: &[T], mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleVerdict {
    pub row: EstimateRow,
    pub estimate: AveragedRiskEstimate,
    pub deviation_se: f64,
    pub pass: bool,
}

/// Oracle-ensemble mean against the matching bound; passes iff the two agree
/// within three standard errors.
#[allow(clippy::too_many_arguments)]
pub fn run_oracle_verify(
    protocol: &str,
    n: usize,
    size: usize,
    family: FamilyKind,
    observable: &ObservableSpec,
    trials: usize,
    seed: u64,
    threads: usize,
) -> Result<OracleVerdict> {
    let p = ProtocolRegistry::default().get(protocol)?;
    if !p.exact_oracle() {
        return Err(domain(format!(
            "oracle verification is unsupported for `{}`: no sampler of the bound's hypothesis ensemble exists",
            p.name()
        )));
    }
    let exp = RiskExperiment::new(
        p.clone(),
        StateFamily::new(family, n, size)?,
        observable.build(n)?,
        HypothesisSource::Oracle,
    )?;
    let (estimate, _) = mc_average_risk(&exp, trials, &SeededRng::new(seed, 0), threads)?;
    let bound = exp.bound(Independence::Independent);
    let deviation_se = (estimate.mean - bound.value).abs() / estimate.standard_error;
    let pass = (estimate.mean - bound.value).abs() <= 3.0 * estimate.standard_error;
    Ok(OracleVerdict {
        row: EstimateRow {
            protocol: p.name().to_string(),
            d: 1 << n,
            size,
            family: Some(family.to_string()),
            observable: observable.to_string(),
            aligned: bound.aligned,
            mode: bound.independence.to_string(),
            bound: bound.value,
            mean: Some(estimate.mean),
            stderr: Some(estimate.standard_error),
            trials: Some(estimate.trials),
            pt_rate: Some(estimate.perfect_training_rate),
            seed: Some(seed),
        },
        estimate,
        deviation_se,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let c = ExperimentConfig::parse(
            "# demo\nprotocols = requ, qu\nn = 2\nN = 1,2,4\nfamilies = haar,orthogonal\n\
             observables = proj0; kdiag:r=3,k=1\nsource = oracle\ntrials = 10\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(c.protocols, [ProtocolKind::Requ, ProtocolKind::Qu]);
        assert_eq!(c.sizes, [1, 2, 4]);
        assert_eq!(c.observables.len(), 2);
        assert_eq!(c.source, HypothesisSource::Oracle);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn config_errors() {
        assert!(matches!(ExperimentConfig::parse("n = 2\n"), Err(Error::Parse(_))));
        assert!(matches!(ExperimentConfig::parse("N = 1\nfoo = 3\n"), Err(Error::Parse(_))));
        assert!(matches!(ExperimentConfig::parse("N = 1\nobservable = bogus\n"), Err(Error::Parse(_))));
        assert!(ExperimentConfig::parse("N = 1\nn = 1\nobservable = pauli:ZZ\n").is_err());
    }

    #[test]
    fn orthogonal_overflow_is_skipped() {
        let mut c = ExperimentConfig::default();
        c.sizes = vec![1, 4, 8];
        c.families = vec![FamilyKind::Haar, FamilyKind::OrthogonalHaar];
        c.protocols = vec![ProtocolKind::Requ];
        let (points, skipped) = sweep_points(&c);
        assert_eq!(points.len(), 5);
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].size, 8);
    }

    #[test]
    fn streams_shared_across_protocols() {
        let mut c = ExperimentConfig::default();
        c.sizes = vec![1, 2];
        let (points, _) = sweep_points(&c);
        let of = |k: ProtocolKind| points.iter().filter(|p| p.protocol == k).map(|p| p.stream).collect::<Vec<_>>();
        assert_eq!(of(ProtocolKind::Clc), of(ProtocolKind::Qu));
    }

    #[test]
    fn size_ranges() {
        assert_eq!(parse_sizes("1..4").unwrap(), [1, 2, 3, 4]);
        assert_eq!(parse_sizes("1..2, 8").unwrap(), [1, 2, 8]);
        assert!(parse_sizes("").is_err());
        assert!(parse_sizes("x").is_err());
    }

    #[test]
    fn bounds_table_shapes() {
        let rows = run_bounds("requ", 2, &[1, 2, 3, 4], &ObservableSpec::ProjectorZero, &[true, false], Independence::Independent)
            .unwrap();
        assert_eq!(rows.len(), 8);
        let clc = run_bounds("clc", 2, &[16], &ObservableSpec::ProjectorZero, &[false], Independence::Dependent).unwrap();
        assert_eq!(clc[0].bound, 0.0);
        let kd: ObservableSpec = "kdiag:r=3,k=1".parse().unwrap();
        let qu = run_bounds("qu", 2, &[2], &kd, &[false, true], Independence::Independent).unwrap();
        assert!(qu[0].bound > qu[1].bound);
        assert!(matches!(
            run_bounds("nope", 2, &[1], &kd, &[true], Independence::Independent),
            Err(Error::Unknown { .. })
        ));
    }

    #[test]
    fn haar_check_validation_and_determinism() {
        assert!(matches!(run_haar_check(1, 0, 1), Err(Error::Parse(_))));
        let a = run_haar_check(1, 200, 5).unwrap();
        let b = run_haar_check(1, 200, 5).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
    }

    #[test]
    fn clc_oracle_verify_is_unsupported() {
        let r = run_oracle_verify("clc", 1, 1, FamilyKind::Haar, &ObservableSpec::ProjectorZero, 10, 0, 1);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn summary_path_naming() {
        assert_eq!(summary_path(Path::new("/tmp/out/fig2.csv")), PathBuf::from("/tmp/out/fig2.summary.csv"));
    }
}
