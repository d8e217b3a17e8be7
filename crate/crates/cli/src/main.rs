mod output;
mod settings;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dream_core::arm::FeatureMap;
use dream_core::env::load_dataset;
use dream_core::estimator::{
    known_policy_value, write_report_row, TargetPolicy, REPORT_CSV_HEADER,
};
use dream_core::harness::{
    monte_carlo, read_trace_csv, refit_model, run_trajectory, sensitivity_sweep, write_trace_csv,
    MonteCarloResult, METRICS_CSV_HEADER,
};
use dream_core::policy::Action;
use dream_core::DreamError;

use crate::output::{config_hash, write_atomic, Manifest};
use crate::settings::{trace_method, Settings, SEED_ENV};

const DEFAULT_COVERAGE_REPS: &str = "200";

/// Exit code 2 for usage and configuration problems, 1 for runtime failures.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<DreamError> for CliError {
    fn from(e: DreamError) -> Self {
        match e {
            DreamError::InvalidParameter { .. } | DreamError::OracleUnavailable => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "dream",
    version,
    about = "Doubly robust interval estimation for contextual bandits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one bandit trajectory and write its trace, reports and manifest.
    Simulate(RunArgs),
    /// Replicate trajectories and write coverage, bias and SE/MC-SD metrics.
    Coverage(CoverageArgs),
    /// Evaluate a fixed policy on a recorded trace.
    Evaluate(EvaluateArgs),
    /// Validate a labelled CSV dataset and summarize it.
    DatasetCheck(DatasetArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for replications.
    #[arg(long)]
    workers: Option<usize>,
    /// synthetic or dataset.
    #[arg(long)]
    env: Option<String>,
    /// CSV dataset for env=dataset.
    #[arg(long)]
    data: Option<String>,
    /// ucb, ts or eg.
    #[arg(long)]
    algo: Option<String>,
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<String>,
    /// Burn-in length.
    #[arg(long = "T0")]
    burn_in: Option<String>,
    /// alternating or uniform.
    #[arg(long)]
    burn_in_mode: Option<String>,
    /// UCB width schedule, e.g. 1 or 2*t^-0.1.
    #[arg(long)]
    ucb_c: Option<String>,
    /// Thompson sampling posterior scale.
    #[arg(long)]
    rho: Option<String>,
    /// ε-greedy schedule, e.g. 0.1*t^-0.4.
    #[arg(long)]
    eps: Option<String>,
    /// Clipping schedule, e.g. 0.01 or sqrtlog:0.5.
    #[arg(long)]
    clip: Option<String>,
    /// Ridge penalty.
    #[arg(long)]
    omega: Option<String>,
    /// Interval level is 1 − alpha.
    #[arg(long)]
    alpha: Option<String>,
    /// Base seed; overrides DREAM_SEED and the config file.
    #[arg(long)]
    seed: Option<String>,
    /// Comma-separated methods: dream, dream_mu_linear, dream_kappa_const,
    /// dream_kappa_eg, dream_kappa_context, average.
    #[arg(long)]
    methods: Option<String>,
    /// Exploration model for dream and dream_mu_linear.
    #[arg(long)]
    kappa: Option<String>,
    /// Exploration model used by the oracle-policy evaluator.
    #[arg(long)]
    known_policy_kappa: Option<String>,
    /// Bandit feature map: cosine or linear.
    #[arg(long)]
    feature_map: Option<String>,
    /// Comma-separated report times.
    #[arg(long)]
    checkpoints: Option<String>,
    /// Optimal value to measure coverage against (dataset default is 1).
    #[arg(long)]
    target: Option<String>,
    /// Include burn-in steps in the estimator sums.
    #[arg(long)]
    include_burn_in: bool,
    /// Also evaluate the true optimal policy with the known-policy estimator.
    #[arg(long)]
    oracle_policy: bool,
}

#[derive(Args)]
struct CoverageArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Replications (default 200).
    #[arg(long)]
    reps: Option<String>,
    /// Comma-separated constant clipping rates to sweep.
    #[arg(long)]
    sweep_p: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trace CSV written by `simulate`.
    #[arg(long)]
    trace: PathBuf,
    /// greedy, const:<0|1> or threshold:<w0>,<w1>,... on the trace features.
    #[arg(long, default_value = "greedy")]
    policy: String,
    /// Feature map of the trace; inferred when omitted.
    #[arg(long)]
    feature_map: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    include_burn_in: bool,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    data: PathBuf,
    /// Require at least this many rows.
    #[arg(long = "T")]
    horizon: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Coverage(a) => coverage(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::DatasetCheck(a) => dataset_check(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

/// Config file, then `DREAM_SEED`, then flags.
fn resolve(a: &RunArgs, extra: &[(&str, Option<&str>)]) -> Result<Settings, CliError> {
    let mut s = match &a.config {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    if let Ok(seed) = std::env::var(SEED_ENV) {
        s.set("seed", Some(seed.trim()));
    }
    let flags: [(&str, &Option<String>); 19] = [
        ("env", &a.env),
        ("data", &a.data),
        ("algo", &a.algo),
        ("T", &a.horizon),
        ("T0", &a.burn_in),
        ("burn-in-mode", &a.burn_in_mode),
        ("ucb-c", &a.ucb_c),
        ("rho", &a.rho),
        ("eps", &a.eps),
        ("clip", &a.clip),
        ("omega", &a.omega),
        ("alpha", &a.alpha),
        ("seed", &a.seed),
        ("methods", &a.methods),
        ("kappa", &a.kappa),
        ("known-policy-kappa", &a.known_policy_kappa),
        ("feature-map", &a.feature_map),
        ("checkpoints", &a.checkpoints),
        ("target", &a.target),
    ];
    for (k, v) in flags {
        s.set(k, v.as_deref());
    }
    if a.include_burn_in {
        s.set("include-burn-in", Some("true"));
    }
    if a.oracle_policy {
        s.set("oracle-policy", Some("true"));
    }
    for (k, v) in extra {
        s.set(k, *v);
    }
    if a.workers == Some(0) {
        return Err(CliError::Usage(
            "invalid value for `workers`: must be at least 1".into(),
        ));
    }
    Ok(s)
}

fn csv_bytes<F>(f: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn simulate(a: &RunArgs) -> Result<(), CliError> {
    let settings = resolve(a, &[])?;
    let config = settings.experiment()?;
    let hash = config_hash("simulate", &settings);
    let mut manifest = Manifest::new("simulate", &hash, config.base_seed);
    let out = run_trajectory(&config, config.base_seed)?;

    let records = &out.methods[trace_method(&config)].records;
    let trace = csv_bytes(|w| write_trace_csv(w, records))?;
    let algo = config.policy.algorithm.name();
    let reports = csv_bytes(|w| {
        use std::io::Write;
        writeln!(w, "{REPORT_CSV_HEADER}")?;
        for m in &out.methods {
            for (t, r) in &m.reports {
                write_report_row(w, &format!("{hash}-{}", m.name), algo, *t, r)?;
            }
        }
        for (t, r) in &out.oracle_policy_reports {
            write_report_row(w, &format!("{hash}-known_policy"), algo, *t, r)?;
        }
        Ok(())
    })?;

    let trace_path = a.out.join(format!("trace-{hash}.csv"));
    let report_path = a.out.join(format!("report-{hash}.csv"));
    write_atomic(&trace_path, &trace)?;
    write_atomic(&report_path, &reports)?;
    manifest.outputs.push(("trace".into(), trace_path.clone()));
    manifest
        .outputs
        .push(("report".into(), report_path.clone()));
    let manifest_path = manifest.write(&a.out, &settings)?;

    for m in &out.methods {
        if let Some((t, r)) = m.reports.last() {
            println!(
                "{:<20} t={t:<6} estimate={:.6} ci=[{:.6}, {:.6}]",
                m.name, r.v_hat, r.ci_low, r.ci_high
            );
        }
    }
    println!("trace    {}", trace_path.display());
    println!("report   {}", report_path.display());
    println!("manifest {}", manifest_path.display());
    Ok(())
}

fn print_metrics(result: &MonteCarloResult, label: &str) {
    for r in result.rows.iter().chain(&result.oracle_policy_rows) {
        println!(
            "{label}t={:<6} {:<20} coverage={:.3} bias={:+.5} se/mc={:.3}",
            r.t, r.method, r.coverage, r.mean_bias, r.se_mc_ratio
        );
    }
}

fn coverage(a: &CoverageArgs) -> Result<(), CliError> {
    let reps = a.reps.as_deref().or(Some(DEFAULT_COVERAGE_REPS));
    let mut settings = resolve(&a.run, &[("sweep-p", a.sweep_p.as_deref())])?;
    if settings.get("reps").is_none() || a.reps.is_some() {
        settings.set("reps", reps);
    }
    let mut config = settings.experiment()?;
    if config.replications < 2 {
        return Err(CliError::Usage(
            "invalid value for `reps`: coverage needs at least 2 replications".into(),
        ));
    }
    config.workers = a.run.workers;
    let hash = config_hash("coverage", &settings);
    let mut manifest = Manifest::new("coverage", &hash, config.base_seed);

    let (label, bytes) = match settings.sweep_p()? {
        Some(ps) => {
            let sweep = sensitivity_sweep(&config, &ps)?;
            let bytes = csv_bytes(|w| {
                use std::io::Write;
                writeln!(w, "p,{METRICS_CSV_HEADER}")?;
                for (p, r) in &sweep {
                    for row in r.rows.iter().chain(&r.oracle_policy_rows) {
                        write!(w, "{p},")?;
                        row.write_csv(w)?;
                    }
                }
                Ok(())
            })?;
            for (p, r) in &sweep {
                print_metrics(r, &format!("p={p:<6} "));
            }
            ("sweep", bytes)
        }
        None => {
            let r = monte_carlo(&config)?;
            print_metrics(&r, "");
            if config.env.has_oracle() {
                let regret = csv_bytes(|w| {
                    use std::io::Write;
                    writeln!(w, "t,mean_cumulative_regret")?;
                    for &t in &r.checkpoints {
                        if let Some(v) = r.mean_regret(t) {
                            writeln!(w, "{t},{}", dream_core::estimator::fmt_f64(v))?;
                        }
                    }
                    Ok(())
                })?;
                let path = a.run.out.join(format!("regret-{hash}.csv"));
                write_atomic(&path, &regret)?;
                manifest.outputs.push(("regret".into(), path));
            }
            ("metrics", csv_bytes(|w| r.write_csv(w))?)
        }
    };
    let path = a.run.out.join(format!("{label}-{hash}.csv"));
    write_atomic(&path, &bytes)?;
    manifest.outputs.push((label.into(), path.clone()));
    let manifest_path = manifest.write(&a.run.out, &settings)?;
    println!("{label:<8} {}", path.display());
    println!("manifest {}", manifest_path.display());
    Ok(())
}

fn parse_policy(spec: &str, feature_dim: usize) -> Result<TargetPolicy, CliError> {
    let bad = |why: &str| CliError::Usage(format!("invalid value for `policy`: `{spec}` ({why})"));
    if spec == "greedy" {
        return Ok(TargetPolicy::RecordedGreedy);
    }
    if let Some(a) = spec.strip_prefix("const:") {
        return match a.trim() {
            "0" => Ok(TargetPolicy::Constant(Action::Zero)),
            "1" => Ok(TargetPolicy::Constant(Action::One)),
            _ => Err(bad("constant action must be 0 or 1")),
        };
    }
    if let Some(ws) = spec.strip_prefix("threshold:") {
        let w: Vec<f64> = ws
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("weights must be numbers"))?;
        if w.len() != feature_dim {
            return Err(bad(&format!(
                "expected {feature_dim} weights, one per trace feature"
            )));
        }
        return Ok(TargetPolicy::Threshold(w));
    }
    Err(bad("expected greedy, const:<a> or threshold:<w0>,<w1>,..."))
}

fn infer_feature_map(context: &[f64], feature: &[f64]) -> Option<FeatureMap> {
    [FeatureMap::Cosine, FeatureMap::Identity]
        .into_iter()
        .find(|m| m.apply(context) == feature)
}

fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let file = File::open(&a.trace)
        .map_err(|e| CliError::Usage(format!("cannot open trace {}: {e}", a.trace.display())))?;
    let records = read_trace_csv(BufReader::new(file)).map_err(|e| match e {
        DreamError::Dataset { .. } => CliError::Usage(format!("{}: {e}", a.trace.display())),
        other => CliError::Runtime(format!("{}: {other}", a.trace.display())),
    })?;
    let first = records
        .first()
        .ok_or_else(|| CliError::Usage(format!("{}: trace has no records", a.trace.display())))?;
    let map = match &a.feature_map {
        Some(v) => FeatureMap::parse(v).ok_or_else(|| {
            CliError::Usage(format!(
                "invalid value for `feature-map`: `{v}` (cosine or linear)"
            ))
        })?,
        None => infer_feature_map(&first.context, &first.feature).ok_or_else(|| {
            CliError::Usage("cannot infer the trace feature map; pass --feature-map".into())
        })?,
    };
    let target = parse_policy(&a.policy, first.feature.len())?;
    let model = refit_model(&records, map, a.omega)?;
    let used: Vec<_> = records
        .iter()
        .filter(|r| a.include_burn_in || !r.burn_in)
        .cloned()
        .collect();
    if used.is_empty() {
        return Err(CliError::Usage("trace has no post-burn-in records".into()));
    }
    let report = known_policy_value(&used, &target, &model, a.alpha)?;
    let run_id = a
        .trace
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trace");
    let t = records.last().map_or(0, |r| r.t);
    let mut out = std::io::stdout().lock();
    use std::io::Write;
    writeln!(out, "{REPORT_CSV_HEADER}")?;
    write_report_row(&mut out, run_id, "evaluate", t, &report)?;
    Ok(())
}

fn dataset_check(a: &DatasetArgs) -> Result<(), CliError> {
    let data = load_dataset(Path::new(&a.data))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", a.data.display())))?;
    let ones = data.labels.iter().filter(|&&y| y == 1).count();
    println!("rows={}", data.len());
    println!("features={}", data.raw_dim() - 1);
    println!("label_1_fraction={:.6}", ones as f64 / data.len() as f64);
    if let Some(t) = a.horizon {
        if data.len() < t {
            return Err(CliError::Runtime(format!(
                "dataset has {} rows, fewer than T = {t}",
                data.len()
            )));
        }
    }
    println!("ok");
    Ok(())
}
