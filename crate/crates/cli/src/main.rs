use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use histtest::adversarial::{chi_metric, EnsembleKind, EnsembleSpec};
use histtest::discrete::{l1k_identity_test, DiscreteSampler, L1kParams, SampleBudget, DEFAULT_C};
use histtest::harness::{
    self, calibrate_with, write_calibration_csv, ExperimentConfig, ExperimentKind, ExperimentResult,
};
use histtest::histogram::{DiscreteDist, Histogram};
use histtest::identity::{HistogramSampler, IdentityTester, TestOptions};
use histtest::par::{with_threads, Execution};
use histtest::rng::{stream, SEED_ENV};
use histtest::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "histtest", version, about = "Identity testing for multidimensional histograms")]
struct Cli {
    /// Worker threads for Monte Carlo trials (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test whether samples of q come from the histogram p.
    IdentityTest(IdentityArgs),
    /// Test q = p against l1^k distance eps for discrete distributions.
    L1kTest(L1kArgs),
    /// Draw a member of a lower-bound ensemble.
    GenEnsemble(GenArgs),
    /// Exact chi-metric int p q / base.
    Chi(ChiArgs),
    /// Check the covering guarantees for a histogram.
    VerifyCovering(VerifyArgs),
    /// Rejection rates against budget.
    PowerCurve(ExperimentArgs),
    /// Minimal budget for 2/3 power as a function of k.
    Scaling(ExperimentArgs),
    /// Rejection rates under mixture noise.
    Robustness(ExperimentArgs),
    /// Smallest constant C with both error rates at most 1/3.
    Calibrate(ExperimentArgs),
}

#[derive(Args)]
struct IdentityArgs {
    #[arg(long)]
    p: PathBuf,
    /// Histogram to draw samples from.
    #[arg(long)]
    q: PathBuf,
    #[arg(long)]
    k: usize,
    /// L1 distance to detect.
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    delta: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// q is only promised to be close to a k-histogram; same algorithm.
    #[arg(long)]
    robust: bool,
    /// Calibration constant of the sample budget.
    #[arg(long, default_value_t = DEFAULT_C)]
    c: f64,
    /// Read C from a calibration artifact instead.
    #[arg(long)]
    c_file: Option<PathBuf>,
    /// Fixed expected samples per repetition, overriding C.
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Args)]
struct L1kArgs {
    #[arg(long)]
    p: PathBuf,
    /// Distribution to draw samples from.
    #[arg(long)]
    q: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_C)]
    c: f64,
    /// Calibrate C on (p, p) versus (p, q) first and write the sweep here.
    #[arg(long)]
    calibrate: Option<PathBuf>,
    /// Trials per calibration point.
    #[arg(long, default_value_t = 100)]
    trials: usize,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    kind: EnsembleKind,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long)]
    eps: f64,
    /// Number of boxes (regionQ).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ChiArgs {
    /// `u` for uniform, or a histogram file.
    #[arg(long)]
    base: String,
    #[arg(long)]
    p: PathBuf,
    #[arg(long)]
    q: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    hist: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Write the breakpoints of every level here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Comma-separated values of k.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    d: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    eps: Vec<f64>,
    #[arg(long, default_value = "checkerboard")]
    ensemble: EnsembleKind,
    #[arg(long)]
    n: Option<usize>,
    /// Per-repetition sample budgets (scaling: the starting budget).
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_C)]
    c: f64,
    /// Read C from a calibration artifact.
    #[arg(long)]
    c_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    delta: f64,
    /// Repetitions per test, overriding delta.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Noise weights (robustness).
    #[arg(long, value_delimiter = ',')]
    eta: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    budget_factor: f64,
    #[arg(long, default_value_t = 4)]
    search_steps: u32,
    /// Wall-clock limit in seconds; exceeding it yields a partial result.
    #[arg(long)]
    time_limit: Option<f64>,
    /// CSV of result rows.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Full result as JSON (for calibrate: the artifact holding C).
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

/// Exit statuses: configuration problems and runtime failures.
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn into_config(self) -> Failure {
        match self {
            Failure::Runtime(msg) => Failure::Config(msg),
            config => config,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence | Error::NotConstantOnCell => Failure::Runtime(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn read_histogram(path: &Path) -> Result<Histogram, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn read_discrete(path: &Path) -> Result<DiscreteDist, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn read_c(path: &Path) -> Result<f64, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    v.get("C").and_then(|c| c.as_f64()).ok_or_else(|| Failure::Config(format!("{}: no numeric \"C\" field", path.display())))
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

/// Returns whether the test rejected.
fn identity_test(a: &IdentityArgs) -> Result<bool, Failure> {
    let p = read_histogram(&a.p)?;
    let q = read_histogram(&a.q)?;
    let c = match &a.c_file {
        Some(path) => read_c(path)?,
        None => a.c,
    };
    let budget = a.budget.map_or(SampleBudget::Constant(c), SampleBudget::PerRepetition);
    let tester = IdentityTester::new(&p, a.k, a.eps)?;
    let opts = TestOptions { delta: a.delta, budget, repetitions: None };
    let mut rng = stream(a.seed, &[0]);
    let v = tester
        .test(HistogramSampler::new(&q, stream(a.seed, &[1])), &opts, &mut rng)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut out = serde_json::to_value(&v).expect("serializable");
    out["robust"] = json!(a.robust);
    print_json(&out);
    Ok(v.verdict.rejected())
}

fn l1k_test(a: &L1kArgs) -> Result<bool, Failure> {
    let p = read_discrete(&a.p)?;
    let q = read_discrete(&a.q)?;
    let mut c = a.c;
    if let Some(out) = &a.calibrate {
        let run = |q: &DiscreteDist, c: f64, role: u64| -> histtest::Result<(f64, f64)> {
            let params = L1kParams { budget: SampleBudget::Constant(c), repetitions: Some(1), ..L1kParams::new(a.k, a.eps, a.delta) };
            let mut rejections = 0;
            let mut samples = 0;
            for t in 0..a.trials {
                let mut rng = stream(a.seed, &[2, role, t as u64]);
                let sampler = DiscreteSampler::new(q, stream(a.seed, &[3, role, t as u64]));
                let v = l1k_identity_test(&p, sampler, &params, &mut rng)?;
                rejections += v.rejected() as usize;
                samples += v.samples_used;
            }
            Ok((rejections as f64 / a.trials as f64, samples as f64 / a.trials as f64))
        };
        let cal = calibrate_with(1.0 / 1024.0, 30, 1.0 / 3.0, |c| {
            let (null_rej, s0) = run(&p, c, 0)?;
            let (alt_rej, s1) = run(&q, c, 1)?;
            Ok((null_rej, 1.0 - alt_rej, (s0 + s1) / 2.0))
        })?;
        write_calibration_csv(&cal.points, out)?;
        if !cal.found {
            return Err(Failure::Runtime("calibration found no C with both errors at most 1/3".into()));
        }
        c = cal.c;
    }
    let params = L1kParams { budget: SampleBudget::Constant(c), ..L1kParams::new(a.k, a.eps, a.delta) };
    let mut rng = stream(a.seed, &[0]);
    let v = l1k_identity_test(&p, DiscreteSampler::new(&q, stream(a.seed, &[1])), &params, &mut rng)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    print_json(&v);
    Ok(v.rejected())
}

fn gen_ensemble(a: &GenArgs) -> Result<(), Failure> {
    let spec = EnsembleSpec::new(a.kind, a.k, a.d, a.eps, a.n)?;
    for w in spec.warnings() {
        eprintln!("warning: {w}");
    }
    let h = spec.sample(&mut stream(a.seed, &[0]))?;
    let text = serde_json::to_string_pretty(&h).expect("serializable");
    std::fs::write(&a.out, text + "\n").map_err(|e| Failure::Runtime(format!("{}: {e}", a.out.display())))?;
    Ok(())
}

fn chi(a: &ChiArgs) -> Result<(), Failure> {
    let p = read_histogram(&a.p)?;
    let q = read_histogram(&a.q)?;
    let base = if a.base == "u" { Histogram::uniform(p.dim()) } else { read_histogram(Path::new(&a.base))? };
    let v = chi_metric(&base, &p, &q)?;
    print_json(&json!({ "chi": v }));
    Ok(())
}

fn verify_covering(a: &VerifyArgs) -> Result<bool, Failure> {
    let p = read_histogram(&a.hist)?;
    let report = harness::verify_covering(&p, a.k, a.eps, a.trials, &mut stream(a.seed, &[0]))?;
    if let Some(path) = &a.dump {
        let cov = histtest::covering::Covering::build(&p, a.k, a.eps)?;
        std::fs::write(path, cov.to_json()? + "\n").map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    print_json(&report);
    Ok(report.ok)
}

fn experiment(kind: ExperimentKind, a: &ExperimentArgs, threads: Option<usize>) -> Result<ExperimentResult, Failure> {
    let c = match &a.c_file {
        Some(path) => read_c(path)?,
        None => a.c,
    };
    let cfg = ExperimentConfig {
        kind,
        ks: a.k.clone(),
        ds: a.d.clone(),
        epss: a.eps.clone(),
        ensemble: a.ensemble,
        n: a.n,
        budgets: a.budgets.clone(),
        c,
        delta: a.delta,
        repetitions: a.reps,
        trials: a.trials,
        seed: a.seed,
        etas: a.eta.clone(),
        budget_factor: a.budget_factor,
        search_steps: a.search_steps,
        time_limit_secs: a.time_limit,
        ..Default::default()
    };
    cfg.check()?;
    let result = with_threads(threads, || harness::run(&cfg, Execution::Parallel))?
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    if let Some(path) = &a.csv {
        result.write_csv(path).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    if let Some(path) = &a.json {
        result.write_json(path).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    if let Some(path) = &a.svg {
        if !harness::write_svg(&result, path) {
            eprintln!("warning: could not write plot {}", path.display());
        }
    }
    print_json(&result);
    if result.partial {
        return Err(Failure::Runtime("experiment stopped early; result is partial".into()));
    }
    Ok(result)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<ExitCode, Failure> = match &cli.command {
        // Test verdicts use 0/1 for accept/reject and 2 for every error.
        Command::IdentityTest(a) => identity_test(a).map(|r| ExitCode::from(r as u8)).map_err(Failure::into_config),
        Command::L1kTest(a) => l1k_test(a).map(|r| ExitCode::from(r as u8)).map_err(Failure::into_config),
        Command::GenEnsemble(a) => gen_ensemble(a).map(|_| ExitCode::SUCCESS),
        Command::Chi(a) => chi(a).map(|_| ExitCode::SUCCESS),
        Command::VerifyCovering(a) => {
            verify_covering(a).map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Command::PowerCurve(a) => experiment(ExperimentKind::Power, a, cli.threads).map(|_| ExitCode::SUCCESS),
        Command::Scaling(a) => experiment(ExperimentKind::Scaling, a, cli.threads).map(|_| ExitCode::SUCCESS),
        Command::Robustness(a) => experiment(ExperimentKind::Robustness, a, cli.threads).map(|_| ExitCode::SUCCESS),
        Command::Calibrate(a) => experiment(ExperimentKind::Calibrate, a, cli.threads).map(|_| ExitCode::SUCCESS),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
