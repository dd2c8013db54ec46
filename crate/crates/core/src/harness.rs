//! Monte Carlo experiments around the identity tester: power curves,
//! calibration of the sample-budget constant, sample-complexity scaling and
//! robustness to model misspecification.
//!
//! Trial `t` of grid point `g` in experiment `e` draws from the stream
//! `(seed, e, g, t, role)`, so results do not depend on thread scheduling.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adversarial::{EnsembleKind, EnsembleSpec};
use crate::discrete::SampleBudget;
use crate::error::{invalid, Result};
use crate::histogram::Histogram;
use crate::identity::{HistogramSampler, IdentityTester, TestOptions};
use crate::par::{map_indexed, Execution};
use crate::rng::stream;

/// Build identifier stamped on every result row.
pub const BUILD_ID: &str = env!("HISTTEST_BUILD_ID");

const ROLE_NULL: u64 = 0;
const ROLE_ALT: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Power,
    Scaling,
    Calibrate,
    Robustness,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Power => "power",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Calibrate => "calibrate",
            ExperimentKind::Robustness => "robustness",
        }
    }

    fn id(self) -> u64 {
        self as u64
    }
}

/// Parameters of one experiment. The known distribution is always uniform
/// on `[0,1]^d`; alternatives come from `ensemble`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub ks: Vec<usize>,
    pub ds: Vec<usize>,
    pub epss: Vec<f64>,
    pub ensemble: EnsembleKind,
    /// Boxes per regionQ member.
    pub n: Option<usize>,
    /// Per-repetition sample budgets; empty means "use `c`".
    pub budgets: Vec<f64>,
    /// Calibration constant of the `C b / eps^2` budget.
    pub c: f64,
    pub delta: f64,
    pub repetitions: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Mixture weights of the uniform noise (robustness only).
    pub etas: Vec<f64>,
    /// Budget multiplier applied in the robustness experiment.
    pub budget_factor: f64,
    /// Calibration search range, `c_min * 2^i` for `i = 0..=steps`.
    pub c_min: f64,
    pub c_steps: u32,
    /// Geometric bisection steps of the scaling search.
    pub search_steps: u32,
    /// Stop with a partial-result flag once exceeded.
    pub time_limit_secs: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Power,
            ks: vec![16],
            ds: vec![1],
            epss: vec![0.5],
            ensemble: EnsembleKind::Checkerboard,
            n: None,
            budgets: Vec::new(),
            c: crate::discrete::DEFAULT_C,
            delta: 1.0 / 3.0,
            repetitions: None,
            trials: 50,
            seed: 0,
            etas: Vec::new(),
            budget_factor: 2.0,
            c_min: 1.0 / (1u64 << 24) as f64,
            c_steps: 40,
            search_steps: 4,
            time_limit_secs: None,
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.ks.is_empty() || self.ds.is_empty() || self.epss.is_empty() {
            return Err(invalid("k, d and eps grids must be nonempty"));
        }
        if self.budgets.iter().any(|&b| !(b > 0.0)) || !(self.c > 0.0) {
            return Err(invalid("budgets and C must be positive"));
        }
        if self.kind == ExperimentKind::Scaling && self.ks.len() < 2 {
            return Err(invalid("scaling needs at least two values of k"));
        }
        Ok(())
    }

    fn options(&self, budget: SampleBudget) -> TestOptions {
        TestOptions { delta: self.delta, budget, repetitions: self.repetitions }
    }

    fn spec(&self, k: usize, d: usize, eps: f64) -> Result<EnsembleSpec> {
        EnsembleSpec::new(self.ensemble, k, d, eps, self.n)
    }
}

/// One CSV row. Column order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub k: usize,
    pub d: usize,
    pub eps: f64,
    /// Expected samples per stream per repetition.
    pub budget: f64,
    pub trials: usize,
    pub null_reject: f64,
    pub alt_reject: f64,
    /// Mean draws from the unknown distribution per test.
    pub mean_samples: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub seed: u64,
    pub build: String,
}

/// One point of a calibration sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    #[serde(rename = "C")]
    pub c: f64,
    pub null_error: f64,
    pub alt_error: f64,
    pub samples: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: String,
    pub rows: Vec<ResultRow>,
    #[serde(rename = "C")]
    pub c: f64,
    pub seed: u64,
    pub build: String,
    /// Fitted log-log slope of budget against k (scaling only).
    pub slope: Option<f64>,
    pub residuals: Vec<f64>,
    pub calibration: Vec<CalibrationPoint>,
    /// Set when the time limit cut the experiment short.
    pub partial: bool,
}

impl ExperimentResult {
    fn new(cfg: &ExperimentConfig) -> Self {
        ExperimentResult {
            experiment: cfg.kind.name().to_string(),
            rows: Vec::new(),
            c: cfg.c,
            seed: cfg.seed,
            build: BUILD_ID.to_string(),
            slope: None,
            residuals: Vec::new(),
            calibration: Vec::new(),
            partial: false,
        }
    }

    /// Writes the rows as CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for row in &self.rows {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => crate::Error::Io(io),
        other => invalid(format!("csv: {other:?}")),
    }
}

/// Writes calibration points as CSV (`C,null_error,alt_error,samples`).
pub fn write_calibration_csv(points: &[CalibrationPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for p in points {
        w.serialize(p).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome counts of a batch of trials.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrialStats {
    pub trials: usize,
    pub rejections: usize,
    pub samples: u64,
}

impl TrialStats {
    pub fn reject_rate(&self) -> f64 {
        self.rejections as f64 / self.trials as f64
    }

    pub fn mean_samples(&self) -> f64 {
        self.samples as f64 / self.trials as f64
    }

    fn merge(outcomes: &[Result<(bool, u64)>]) -> Result<Self> {
        let mut s = TrialStats::default();
        for o in outcomes {
            let (rejected, samples) = o.as_ref().map_err(|e| invalid(e.to_string()))?;
            s.trials += 1;
            s.rejections += *rejected as usize;
            s.samples += samples;
        }
        Ok(s)
    }
}

/// What the unknown distribution is in a batch of trials.
#[derive(Debug, Clone, Copy)]
pub enum Alternative<'a> {
    /// `q = (1 - eta) p + eta r` with `r` a fresh ensemble member (`eta = 0`: `q = p`).
    Null { perturbation: f64, spec: &'a EnsembleSpec },
    /// `q = (1 - eta) q~ + eta U` with `q~` a fresh ensemble member.
    Far { noise: f64, spec: &'a EnsembleSpec },
}

/// Runs `trials` independent tests; trial `t` uses the stream
/// `(seed, path..., t)`.
pub fn run_trials(
    tester: &IdentityTester,
    alt: Alternative<'_>,
    opts: &TestOptions,
    trials: usize,
    seed: u64,
    path: &[u64],
    exec: Execution,
) -> Result<TrialStats> {
    let outcomes = map_indexed(exec, trials, |t| {
        let mut full = path.to_vec();
        full.push(t as u64);
        let mut rng = stream(seed, &full);
        let q = match alt {
            Alternative::Null { perturbation, spec } if perturbation > 0.0 => {
                spec.sample(&mut rng)?.mix(tester.p(), 1.0 - perturbation)?
            }
            Alternative::Null { .. } => tester.p().clone(),
            Alternative::Far { noise, spec } => {
                let member = spec.sample(&mut rng)?;
                if noise > 0.0 {
                    member.mix(&Histogram::uniform(member.dim()), noise)?
                } else {
                    member
                }
            }
        };
        full.push(u64::MAX);
        let sampler = HistogramSampler::new(&q, stream(seed, &full));
        let v = tester.test(sampler, opts, &mut rng)?;
        Ok((v.verdict.rejected(), v.verdict.samples_used))
    });
    TrialStats::merge(&outcomes)
}

struct Clock {
    start: Instant,
    limit: Option<f64>,
}

impl Clock {
    fn new(limit: Option<f64>) -> Self {
        Clock { start: Instant::now(), limit }
    }

    fn expired(&self) -> bool {
        self.limit.is_some_and(|l| self.start.elapsed().as_secs_f64() > l)
    }
}

fn budgets_of(cfg: &ExperimentConfig) -> Vec<SampleBudget> {
    if cfg.budgets.is_empty() {
        vec![SampleBudget::Constant(cfg.c)]
    } else {
        cfg.budgets.iter().map(|&b| SampleBudget::PerRepetition(b)).collect()
    }
}

fn scaled(budget: SampleBudget, factor: f64) -> SampleBudget {
    match budget {
        SampleBudget::Constant(c) => SampleBudget::Constant(c * factor),
        SampleBudget::PerRepetition(m) => SampleBudget::PerRepetition(m * factor),
    }
}

#[allow(clippy::too_many_arguments)]
fn row(
    cfg: &ExperimentConfig,
    tester: &IdentityTester,
    k: usize,
    d: usize,
    eps: f64,
    budget: SampleBudget,
    null: &TrialStats,
    alt: &TrialStats,
) -> ResultRow {
    let per_rep = tester.per_repetition_budget(budget);
    ResultRow {
        experiment: cfg.kind.name().to_string(),
        k,
        d,
        eps,
        budget: per_rep,
        trials: cfg.trials,
        null_reject: null.reject_rate(),
        alt_reject: alt.reject_rate(),
        mean_samples: (null.samples + alt.samples) as f64 / (null.trials + alt.trials) as f64,
        c: tester.constant_for_budget(per_rep),
        seed: cfg.seed,
        build: BUILD_ID.to_string(),
    }
}

/// Rejection rates under the null and against fresh ensemble members for
/// every `(d, k, eps, budget)`.
pub fn run_power_curve(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    cfg.check()?;
    let mut out = ExperimentResult::new(cfg);
    let clock = Clock::new(cfg.time_limit_secs);
    let mut g = 0u64;
    for &d in &cfg.ds {
        for &k in &cfg.ks {
            for &eps in &cfg.epss {
                let tester = IdentityTester::new(&Histogram::uniform(d), k, eps)?;
                let spec = cfg.spec(k, d, eps)?;
                for budget in budgets_of(cfg) {
                    if clock.expired() {
                        out.partial = true;
                        return Ok(out);
                    }
                    let opts = cfg.options(budget);
                    let id = cfg.kind.id();
                    let null = Alternative::Null { perturbation: 0.0, spec: &spec };
                    let far = Alternative::Far { noise: 0.0, spec: &spec };
                    let ns = run_trials(&tester, null, &opts, cfg.trials, cfg.seed, &[id, g, ROLE_NULL], exec)?;
                    let as_ = run_trials(&tester, far, &opts, cfg.trials, cfg.seed, &[id, g, ROLE_ALT], exec)?;
                    out.rows.push(row(cfg, &tester, k, d, eps, budget, &ns, &as_));
                    g += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Mixture alternatives `(1 - eta) q~ + eta U` for each `eta`, at
/// `budget_factor` times each budget. The null side is perturbed the same
/// way towards a fresh ensemble member.
pub fn run_robustness(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    cfg.check()?;
    let etas = if cfg.etas.is_empty() { None } else { Some(cfg.etas.clone()) };
    let mut out = ExperimentResult::new(cfg);
    let clock = Clock::new(cfg.time_limit_secs);
    let mut g = 0u64;
    for &d in &cfg.ds {
        for &k in &cfg.ks {
            for &eps in &cfg.epss {
                let tester = IdentityTester::new(&Histogram::uniform(d), k, eps)?;
                let spec = cfg.spec(k, d, eps)?;
                let etas = etas.clone().unwrap_or_else(|| vec![0.0, eps / 20.0, eps / 10.0]);
                for budget in budgets_of(cfg) {
                    let budget = scaled(budget, cfg.budget_factor);
                    let opts = cfg.options(budget);
                    for &eta in &etas {
                        if clock.expired() {
                            out.partial = true;
                            return Ok(out);
                        }
                        let id = cfg.kind.id();
                        let null = Alternative::Null { perturbation: eta, spec: &spec };
                        let far = Alternative::Far { noise: eta, spec: &spec };
                        let ns = run_trials(&tester, null, &opts, cfg.trials, cfg.seed, &[id, g, ROLE_NULL], exec)?;
                        let as_ = run_trials(&tester, far, &opts, cfg.trials, cfg.seed, &[id, g, ROLE_ALT], exec)?;
                        let mut r = row(cfg, &tester, k, d, eps, budget, &ns, &as_);
                        r.experiment = format!("robustness:eta={eta}");
                        out.rows.push(r);
                        g += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Result of a calibration search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(rename = "C")]
    pub c: f64,
    /// Every evaluated point, sorted by C.
    pub points: Vec<CalibrationPoint>,
    pub found: bool,
}

/// Smallest `C = c_min 2^i`, `i <= steps`, at which `eval` reports both error
/// rates at most `target`, scanning upward so the cost stays within twice
/// that of the answer. `eval` returns `(null_error, alt_error, mean_samples)`.
pub fn calibrate_with<F>(c_min: f64, steps: u32, target: f64, mut eval: F) -> Result<Calibration>
where
    F: FnMut(f64) -> Result<(f64, f64, f64)>,
{
    let mut points = Vec::new();
    for i in 0..=steps {
        let c = c_min * 2f64.powi(i as i32);
        let (null_error, alt_error, samples) = eval(c)?;
        points.push(CalibrationPoint { c, null_error, alt_error, samples });
        if null_error <= target && alt_error <= target {
            return Ok(Calibration { c, points, found: true });
        }
    }
    Ok(Calibration { c: c_min * 2f64.powi(steps as i32), points, found: false })
}

/// Calibrates C for the identity tester on the first `(d, k, eps)` of the
/// grid: single repetitions, errors against the null and against fresh
/// ensemble members, target error 1/3.
pub fn calibrate(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    cfg.check()?;
    let (d, k, eps) = (cfg.ds[0], cfg.ks[0], cfg.epss[0]);
    let tester = IdentityTester::new(&Histogram::uniform(d), k, eps)?;
    let spec = cfg.spec(k, d, eps)?;
    let id = cfg.kind.id();
    let cal = calibrate_with(cfg.c_min, cfg.c_steps, 1.0 / 3.0, |c| {
        let opts = TestOptions { delta: cfg.delta, budget: SampleBudget::Constant(c), repetitions: Some(1) };
        let null = Alternative::Null { perturbation: 0.0, spec: &spec };
        let far = Alternative::Far { noise: 0.0, spec: &spec };
        let ns = run_trials(&tester, null, &opts, cfg.trials, cfg.seed, &[id, 0, ROLE_NULL], exec)?;
        let as_ = run_trials(&tester, far, &opts, cfg.trials, cfg.seed, &[id, 0, ROLE_ALT], exec)?;
        Ok((ns.reject_rate(), 1.0 - as_.reject_rate(), (ns.mean_samples() + as_.mean_samples()) / 2.0))
    })?;
    let mut out = ExperimentResult::new(cfg);
    out.c = cal.c;
    out.partial = !cal.found;
    for p in &cal.points {
        let budget = tester.per_repetition_budget(SampleBudget::Constant(p.c));
        out.rows.push(ResultRow {
            experiment: "calibrate".into(),
            k,
            d,
            eps,
            budget,
            trials: cfg.trials,
            null_reject: p.null_error,
            alt_reject: 1.0 - p.alt_error,
            mean_samples: p.samples,
            c: p.c,
            seed: cfg.seed,
            build: BUILD_ID.to_string(),
        });
    }
    out.calibration = cal.points;
    Ok(out)
}

/// Least-squares fit `y = slope x + intercept`; returns the residuals too.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = xs.iter().zip(ys).map(|(x, y)| y - (slope * x + intercept)).collect();
    (slope, intercept, residuals)
}

/// For each `k`, the smallest per-repetition budget at which at least 2/3 of
/// the trials reject a fresh ensemble member, then the slope of
/// `log budget` against `log k`.
///
/// The budget is doubled from `budgets[0]` (default 16) until the power
/// target is met, then narrowed by `search_steps` geometric bisections. Every
/// evaluation for a given `k` reuses the same trial streams.
pub fn run_scaling(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    cfg.check()?;
    let mut out = ExperimentResult::new(cfg);
    let clock = Clock::new(cfg.time_limit_secs);
    let (d, eps) = (cfg.ds[0], cfg.epss[0]);
    let start = cfg.budgets.first().copied().unwrap_or(16.0);
    let id = cfg.kind.id();
    let target = 2.0 / 3.0;
    for (g, &k) in cfg.ks.iter().enumerate() {
        if clock.expired() {
            out.partial = true;
            break;
        }
        let tester = IdentityTester::new(&Histogram::uniform(d), k, eps)?;
        let spec = cfg.spec(k, d, eps)?;
        let far = Alternative::Far { noise: 0.0, spec: &spec };
        let power = |s: f64| -> Result<TrialStats> {
            let opts = cfg.options(SampleBudget::PerRepetition(s));
            run_trials(&tester, far, &opts, cfg.trials, cfg.seed, &[id, g as u64, ROLE_ALT], exec)
        };
        let mut hi = start;
        let mut hi_stats = power(hi)?;
        let mut lo = None;
        while hi_stats.reject_rate() < target {
            lo = Some(hi);
            hi *= 2.0;
            if hi > 1e12 {
                return Err(invalid(format!("no budget below 1e12 reaches the power target at k = {k}")));
            }
            hi_stats = power(hi)?;
        }
        let mut lo = lo.unwrap_or(hi / 2.0);
        for _ in 0..cfg.search_steps {
            let mid = (lo * hi).sqrt();
            let s = power(mid)?;
            if s.reject_rate() >= target {
                hi = mid;
                hi_stats = s;
            } else {
                lo = mid;
            }
        }
        let opts = cfg.options(SampleBudget::PerRepetition(hi));
        let null = Alternative::Null { perturbation: 0.0, spec: &spec };
        let ns = run_trials(&tester, null, &opts, cfg.trials, cfg.seed, &[id, g as u64, ROLE_NULL], exec)?;
        out.rows.push(row(cfg, &tester, k, d, eps, SampleBudget::PerRepetition(hi), &ns, &hi_stats));
    }
    if out.rows.len() >= 2 {
        let xs: Vec<f64> = out.rows.iter().map(|r| (r.k as f64).ln()).collect();
        let ys: Vec<f64> = out.rows.iter().map(|r| r.budget.ln()).collect();
        let (slope, _, residuals) = fit_line(&xs, &ys);
        out.slope = Some(slope);
        out.residuals = residuals;
    }
    Ok(out)
}

/// Dispatches on `cfg.kind`.
pub fn run(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    match cfg.kind {
        ExperimentKind::Power => run_power_curve(cfg, exec),
        ExperimentKind::Scaling => run_scaling(cfg, exec),
        ExperimentKind::Calibrate => calibrate(cfg, exec),
        ExperimentKind::Robustness => run_robustness(cfg, exec),
    }
}

/// Standalone SVG of the rows: rejection rates against budget, or for
/// scaling, budget against k on log axes. Returns `false` on any failure;
/// plotting never fails an experiment.
pub fn write_svg(result: &ExperimentResult, path: &Path) -> bool {
    let rows = &result.rows;
    if rows.is_empty() {
        return false;
    }
    let scaling = result.slope.is_some();
    let series: Vec<(&str, Vec<(f64, f64)>)> = if scaling {
        vec![("budget", rows.iter().map(|r| ((r.k as f64).log2(), r.budget.log2())).collect())]
    } else {
        vec![
            ("null", rows.iter().map(|r| (r.budget.max(1e-300).log2(), r.null_reject)).collect()),
            ("alt", rows.iter().map(|r| (r.budget.max(1e-300).log2(), r.alt_reject)).collect()),
        ]
    };
    let pts = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !scaling {
        y0 = 0.0;
        y1 = 1.0;
    }
    if !(x0.is_finite() && y0.is_finite()) {
        return false;
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let colors = ["#1f77b4", "#d62728"];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = h - pad,
        r = w - pad
    );
    let (xl, yl) = if scaling { ("log2 k", "log2 budget") } else { ("log2 budget", "reject rate") };
    svg += &format!("<text x=\"{}\" y=\"{}\" font-size=\"12\">{xl}</text>\n", w / 2.0, h - 10.0);
    svg += &format!("<text x=\"5\" y=\"{}\" font-size=\"12\">{yl}</text>\n", pad - 10.0);
    for (i, (name, s)) in series.iter().enumerate() {
        let path_pts: Vec<String> = s.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        svg += &format!(
            "<polyline fill=\"none\" stroke=\"{}\" points=\"{}\"/>\n<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{}\">{name}</text>\n",
            colors[i % 2],
            path_pts.join(" "),
            w - pad - 40.0,
            pad + 15.0 * i as f64,
            colors[i % 2]
        );
    }
    if let Some(slope) = result.slope {
        svg += &format!("<text x=\"{}\" y=\"{}\" font-size=\"12\">slope {slope:.3}</text>\n", pad + 10.0, pad);
    }
    svg += "</svg>\n";
    std::fs::write(path, svg).is_ok()
}


/// Outcome of [`verify_covering`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    pub m: u32,
    pub ell: u64,
    pub j: u64,
    pub total_cells: u64,
    pub points_checked: usize,
    /// Every point lay in exactly `ell` cells.
    pub coverage_ok: bool,
    /// Largest `|p(cell) - prod 2^-z_j|` seen; zero only for product `p`.
    pub max_equal_mass_deviation: f64,
    pub partitions_checked: usize,
    pub max_subfamily_size: usize,
    pub size_bound: u64,
    pub min_mass_captured: f64,
    pub disjoint_ok: bool,
    pub containment_ok: bool,
    pub ok: bool,
}

/// Number of cells of the z-grid `grid` containing `x`, by scanning every
/// interval of every coordinate.
pub fn brute_force_count(cov: &crate::covering::Covering, grid: u32, x: &[f64]) -> u64 {
    let z = cov.grid_z(grid);
    let parts = cov.partitions();
    (0..cov.dim())
        .map(|j| (0..1u64 << z[j]).filter(|&i| {
            let (lo, hi) = parts.interval(j, z[j], i);
            lo <= x[j] && x[j] < hi
        }).count() as u64)
        .product()
}

/// Whether the boxes are pairwise disjoint (zero-volume overlaps allowed).
pub fn pairwise_disjoint(rects: &[crate::histogram::Rect]) -> bool {
    let mut order: Vec<usize> = (0..rects.len()).collect();
    order.sort_by(|&a, &b| rects[a].lo[0].total_cmp(&rects[b].lo[0]));
    for (pos, &a) in order.iter().enumerate() {
        for &b in &order[pos + 1..] {
            if rects[b].lo[0] >= rects[a].hi[0] {
                break;
            }
            if rects[a].overlap_volume(&rects[b]) > 1e-15 {
                return false;
            }
        }
    }
    true
}

/// Checks the covering of `p` built for `(k, eps)`: point coverage on
/// `trials` random points, and the subfamily guarantees on `trials` random
/// `k`-box partitions.
pub fn verify_covering<R: rand::Rng + ?Sized>(
    p: &Histogram,
    k: usize,
    eps: f64,
    trials: usize,
    rng: &mut R,
) -> Result<CoveringReport> {
    use crate::covering::Covering;
    let cov = Covering::build(p, k, eps)?;
    let d = p.dim();
    let mut coverage_ok = true;
    for _ in 0..trials {
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let count: u64 = (0..cov.num_grids()).map(|g| brute_force_count(&cov, g, &x)).sum();
        coverage_ok &= count == cov.ell();
    }
    let mut max_dev: f64 = 0.0;
    if cov.total_cells() <= 1 << 16 {
        for cell in cov.all_cells() {
            let z = cov.grid_z(cell.grid);
            let expect = 0.5f64.powi(z.iter().sum::<u32>() as i32);
            max_dev = max_dev.max((p.mass_on_rect(&cov.cell_rect(&cell)) - expect).abs());
        }
    }
    let size_bound = k as u64 * cov.j();
    let (mut max_size, mut min_mass, mut disjoint_ok, mut containment_ok) = (0usize, f64::INFINITY, true, true);
    for _ in 0..trials {
        let pi = crate::random::random_partition(d, k, rng);
        let family = cov.extract_subfamily(&pi)?;
        let rects: Vec<_> = family.iter().map(|c| cov.cell_rect(c)).collect();
        max_size = max_size.max(family.len());
        min_mass = min_mass.min(p.mass_on(&rects));
        disjoint_ok &= pairwise_disjoint(&rects);
        containment_ok &= rects.iter().all(|r| pi.iter().any(|b| b.contains_rect(r)));
    }
    if trials == 0 {
        min_mass = 1.0;
    }
    let ok = coverage_ok && disjoint_ok && containment_ok && max_size as u64 <= size_bound && min_mass >= 1.0 - eps - 1e-9;
    Ok(CoveringReport {
        m: cov.m(),
        ell: cov.ell(),
        j: cov.j(),
        total_cells: cov.total_cells(),
        points_checked: trials,
        coverage_ok,
        max_equal_mass_deviation: max_dev,
        partitions_checked: trials,
        max_subfamily_size: max_size,
        size_bound,
        min_mass_captured: min_mass,
        disjoint_ok,
        containment_ok,
        ok,
    })
}
