use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nfl_core::circuit::build_hea;
use nfl_core::haar::{haar_unitary, SeededRng};
use nfl_core::harness::{
    parse_sizes, run_bounds, run_haar_check, run_oracle_verify, run_sweep, write_estimates, write_json_lines,
    ExperimentConfig,
};
use nfl_core::observables::{load_matrix, ObservableSpec};
use nfl_core::optimizer::{train_with, AdamConfig, OptimizerRegistry};
use nfl_core::protocols::{gen_states, Dataset, FamilyKind, StateFamily};
use nfl_core::registry::ProtocolRegistry;
use nfl_core::risk::{analytical_risk, Independence};
use nfl_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "nfl-lab", version, about = "No-free-lunch bound laboratory for learning unitary dynamics")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Output file; stdout when omitted (required by `sweep` unless the config names one).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo check of the Haar moment identities, as JSON lines.
    HaarCheck {
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Table of exact lower bounds.
    Bounds {
        #[arg(long)]
        protocol: String,
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Sizes such as `1..4` or `1,2,8`.
        #[arg(long)]
        sizes: String,
        #[arg(long, default_value = "proj0")]
        observable: String,
        #[arg(long, value_enum, default_value_t = AlignedFlag::Both)]
        aligned: AlignedFlag,
        #[arg(long, default_value = "independent")]
        mode: String,
    },
    /// Full experiment sweep from a config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Extra `key=value` settings applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Fill the `wall_time_ms` column (output is then no longer reproducible byte for byte).
        #[arg(long)]
        record_timing: bool,
    },
    /// Oracle-ensemble mean against the matching bound.
    OracleVerify {
        #[arg(long)]
        protocol: String,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long = "size")]
        size: usize,
        #[arg(long, default_value = "haar")]
        family: String,
        #[arg(long, default_value = "proj0")]
        observable: String,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
    },
    /// Single training run; writes the loss trace as CSV.
    Train(TrainArgs),
    /// Exact risk of hypothesis V against target U.
    Risk {
        /// Target unitary in the matrix text format.
        #[arg(long)]
        u: PathBuf,
        /// Hypothesis unitary in the matrix text format.
        #[arg(long)]
        v: PathBuf,
        #[arg(long, default_value = "proj0")]
        observable: String,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    protocol: String,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long = "size", default_value_t = 1)]
    size: usize,
    #[arg(long, default_value = "haar")]
    family: String,
    #[arg(long, default_value = "proj0")]
    observable: String,
    /// Train on a dumped dataset instead of sampling one.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Also write the sampled dataset here.
    #[arg(long)]
    dump_dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value = "adam")]
    optimizer: String,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1000)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    target_loss: f64,
    /// Loss-history decimation.
    #[arg(long, default_value_t = 10)]
    stride: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlignedFlag {
    True,
    False,
    Both,
}

fn output(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::HaarCheck { n, samples } => {
            let reports = run_haar_check(n, samples, seed)?;
            write_json_lines(&reports, output(&cli.out)?)?;
            let worst = reports.iter().map(|r| r.z_score).fold(0.0, f64::max);
            if worst > 5.0 {
                eprintln!("FAIL: max z-score {worst:.2} > 5");
                return Ok(EXIT_VERIFY);
            }
        }
        Command::Bounds { protocol, n, sizes, observable, aligned, mode } => {
            let flags: &[bool] = match aligned {
                AlignedFlag::True => &[true],
                AlignedFlag::False => &[false],
                AlignedFlag::Both => &[true, false],
            };
            let spec: ObservableSpec = observable.parse()?;
            let mode: Independence = mode.parse()?;
            let rows = run_bounds(&protocol, n, &parse_sizes(&sizes)?, &spec, flags, mode)?;
            write_estimates(&rows, output(&cli.out)?)?;
        }
        Command::Sweep { config, set, record_timing } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("cannot read config {}", config.display()))?;
            let mut cfg = ExperimentConfig::parse_unvalidated(&text)?;
            for kv in &set {
                let Some((k, v)) = kv.split_once('=') else {
                    return Err(Error::Parse(format!("--set expects key=value, got `{kv}`")).into());
                };
                cfg.set(k, v)?;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(out) = cli.out {
                cfg.output = Some(out);
            }
            cfg.record_timing |= record_timing;
            let report = run_sweep(&cfg, cli.threads, None)?;
            for p in &report.skipped {
                eprintln!(
                    "skipped {} {} N={} ({}): more orthogonal states than the dimension",
                    p.protocol, p.family, p.size, p.observable
                );
            }
            eprintln!(
                "wrote {} rows ({} resumed) to {}; summary in {}",
                report.rows_written,
                report.rows_resumed,
                report.output.display(),
                report.summary.display()
            );
        }
        Command::OracleVerify { protocol, n, size, family, observable, trials } => {
            let family: FamilyKind = family.parse()?;
            let spec: ObservableSpec = observable.parse()?;
            let v = run_oracle_verify(&protocol, n, size, family, &spec, trials, seed, cli.threads)?;
            write_estimates(std::slice::from_ref(&v.row), output(&cli.out)?)?;
            let verdict = if v.pass { "PASS" } else { "FAIL" };
            eprintln!(
                "{verdict}: mean {:.6} vs bound {:.6} ({:.2} SE)",
                v.estimate.mean, v.row.bound, v.deviation_se
            );
            if !v.pass {
                return Ok(EXIT_VERIFY);
            }
        }
        Command::Train(args) => train_command(args, seed, &cli.out)?,
        Command::Risk { u, v, observable } => {
            let u = load_matrix(&u)?;
            let v = load_matrix(&v)?;
            let n = u.rows().trailing_zeros() as usize;
            if !u.rows().is_power_of_two() {
                bail!(Error::Shape(format!("dimension {} is not a power of two", u.rows())));
            }
            let o = observable.parse::<ObservableSpec>()?.build(n)?;
            let report = analytical_risk(&u, &v, &o)?;
            let mut w = output(&cli.out)?;
            serde_json::to_writer(&mut w, &report)?;
            writeln!(w)?;
        }
    }
    Ok(0)
}

fn train_command(args: TrainArgs, seed: u64, out: &Option<PathBuf>) -> anyhow::Result<()> {
    let protocol = ProtocolRegistry::default().get(&args.protocol)?;
    let observable = args.observable.parse::<ObservableSpec>()?.build(args.n)?;
    let mut rng = SeededRng::new(seed, 0);
    let dataset = match &args.dataset {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let ds = Dataset::from_text(&text)?;
            if ds.protocol() != protocol.kind() {
                bail!(Error::Domain(format!("dataset is for {}, not {}", ds.protocol(), protocol.name())));
            }
            ds
        }
        None => {
            let family = StateFamily::new(args.family.parse()?, args.n, args.size)?;
            let u = haar_unitary(family.dim(), &mut rng)?;
            let states = gen_states(&family, &mut rng)?;
            protocol.dataset(&u, &states, &observable)?
        }
    };
    if let Some(path) = &args.dump_dataset {
        std::fs::write(path, dataset.to_text()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let config = AdamConfig {
        learning_rate: args.learning_rate,
        max_iterations: args.max_iterations,
        target_loss: args.target_loss,
        ..AdamConfig::default()
    };
    config.validate()?;
    let mut optimizer = OptimizerRegistry::default().create(&args.optimizer, &config)?;
    let loss = protocol.loss(&dataset, &observable)?;
    let init = build_hea(args.n, args.layers, &mut rng)?;
    let (_, trace) = train_with(&loss, init, optimizer.as_mut(), &config, args.stride)?;
    trace.write_csv(output(out)?)?;
    eprintln!(
        "final loss {:.3e} after {} iterations ({})",
        trace.final_loss,
        trace.iterations_used,
        if trace.converged { "converged" } else { "not converged" }
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<io::Error>().is_some() {
        return EXIT_IO;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Io(_)) | Some(Error::Json(_)) => EXIT_IO,
        Some(Error::Csv(e)) if e.is_io_error() => EXIT_IO,
        Some(Error::Estimation(_)) => EXIT_VERIFY,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
