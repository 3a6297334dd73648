use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qillum_core::experiments::{run, Experiment, ExperimentConfig, Report};
use qillum_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(name = "qillum", version, about = "Quantum illumination experiments in truncated Fock space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// QFI of the optimized N-photon probe against TMSV and coherent pairs
    Fig3b(Opts),
    /// Receiver sensitivity and SNR of the N-photon and coherent probes
    Fig4(Opts),
    /// Run the named consistency checks
    Verify(Opts),
    /// Optimize N-photon coefficients across the noise grid
    OptimizeState(Opts),
    /// QFI of a single probe across the noise grid
    QfiPoint(Opts),
}

#[derive(Args)]
struct Opts {
    /// Flat key = value file; flags given on the command line take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nb_min: Option<f64>,
    #[arg(long)]
    nb_max: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    varphi: Option<f64>,
    #[arg(long)]
    energy: Option<f64>,
    #[arg(long)]
    signal_only: bool,
    #[arg(long)]
    n: Option<usize>,
    /// nphoton, tmsv or coherent-pair
    #[arg(long)]
    state: Option<String>,
    /// Comma-separated N-photon amplitudes, a_n on |N-n, n>
    #[arg(long)]
    coeffs: Option<String>,
    #[arg(long)]
    cutoff_thermal: Option<usize>,
    #[arg(long)]
    cutoff_signal: Option<usize>,
    /// first-order, finite-diff or exact
    #[arg(long)]
    derivative: Option<String>,
    /// qfi or snr
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    combiner_phase: Option<f64>,
    #[arg(long)]
    tail_tolerance: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; output does not depend on it
    #[arg(long)]
    jobs: Option<usize>,
    /// CSV destination; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a JSON mirror (next to --out, or to stdout instead of CSV)
    #[arg(long)]
    json: bool,
}

impl Opts {
    fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut push = |k: &'static str, x: Option<String>| {
            if let Some(x) = x {
                v.push((k, x));
            }
        };
        push("nb_min", self.nb_min.map(|x| x.to_string()));
        push("nb_max", self.nb_max.map(|x| x.to_string()));
        push("steps", self.steps.map(|x| x.to_string()));
        push("eta", self.eta.map(|x| x.to_string()));
        push("varphi", self.varphi.map(|x| x.to_string()));
        push("energy", self.energy.map(|x| x.to_string()));
        push("signal_only", self.signal_only.then(|| "true".into()));
        push("n", self.n.map(|x| x.to_string()));
        push("state", self.state.clone());
        push("coeffs", self.coeffs.clone());
        push("cutoff_thermal", self.cutoff_thermal.map(|x| x.to_string()));
        push("cutoff_signal", self.cutoff_signal.map(|x| x.to_string()));
        push("derivative", self.derivative.clone());
        push("objective", self.objective.clone());
        push("restarts", self.restarts.map(|x| x.to_string()));
        push("combiner_phase", self.combiner_phase.map(|x| x.to_string()));
        push("tail_tolerance", self.tail_tolerance.map(|x| x.to_string()));
        push("seed", self.seed.map(|x| x.to_string()));
        v
    }
}

struct Output {
    jobs: usize,
    out: Option<PathBuf>,
    json: bool,
}

fn resolve(experiment: Experiment, opts: &Opts) -> Result<(ExperimentConfig, Output), Error> {
    let mut config = ExperimentConfig::new(experiment);
    let mut output = Output {
        jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
        out: None,
        json: false,
    };
    if let Some(path) = &opts.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (k, v) in ExperimentConfig::parse_pairs(&text)? {
            match k.replace('-', "_").as_str() {
                "jobs" => {
                    output.jobs = v
                        .parse()
                        .map_err(|_| Error::Config(format!("cannot parse '{v}' for jobs")))?
                }
                "out" => output.out = Some(PathBuf::from(v)),
                "json" => {
                    output.json = v
                        .parse()
                        .map_err(|_| Error::Config(format!("cannot parse '{v}' for json")))?
                }
                _ => config.set(&k, &v)?,
            }
        }
    }
    for (k, v) in opts.flag_pairs() {
        config.set(k, &v)?;
    }
    if let Some(j) = opts.jobs {
        output.jobs = j;
    }
    if opts.out.is_some() {
        output.out = opts.out.clone();
    }
    output.json |= opts.json;
    config.validate()?;
    Ok((config, output))
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn emit(report: &Report, output: &Output) -> Result<(), Error> {
    let table = &report.table;
    match &output.out {
        Some(path) => {
            write(path, &table.to_csv())?;
            if output.json {
                write(&path.with_extension("json"), &table.to_json())?;
            }
        }
        None if output.json => print!("{}", table.to_json()),
        None => print!("{}", table.to_csv()),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => EXIT_CONFIG,
        Error::Truncation { .. } | Error::Dimension(_) | Error::Numerical(_) | Error::SensitivityUndefined { .. } => {
            EXIT_NUMERICAL
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, opts) = match &cli.command {
        Command::Fig3b(o) => (Experiment::Fig3b, o),
        Command::Fig4(o) => (Experiment::Fig4, o),
        Command::Verify(o) => (Experiment::Verify, o),
        Command::OptimizeState(o) => (Experiment::OptimizeState, o),
        Command::QfiPoint(o) => (Experiment::QfiPoint, o),
    };
    let result = resolve(experiment, opts).and_then(|(config, output)| {
        let report = run(&config, output.jobs)?;
        emit(&report, &output)?;
        Ok(report)
    });
    match result {
        Ok(report) => {
            for w in &report.table.warnings {
                eprintln!("warning: {w}");
            }
            if report.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("verification failed: {}", report.failures.join(", "));
                ExitCode::from(EXIT_VERIFY)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
