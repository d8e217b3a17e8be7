//! Trajectory runner and Monte Carlo aggregation.
//!
//! A trajectory runs one bandit and evaluates every configured method on the
//! same data stream. Methods differ only in the outcome model feature map,
//! the exploration model, and whether the doubly robust estimator or the
//! plain reward average is reported.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::arm::{FeatureMap, OutcomeModel};
use crate::env::Environment;
use crate::error::{DreamError, Result};
use crate::estimator::{
    averaged_reward, build_report, dispersion, dream_report, fmt_f64, known_policy_value,
    propensity_from_kappa, InteractionRecord, TargetPolicy, ValueReport,
};
use crate::exploration::{ExplorationModel, KappaKind};
use crate::policy::{decide, Action, ClippingGrams, PolicySpec, Schedule};

pub const DEFAULT_CHECKPOINTS: [usize; 5] = [100, 250, 500, 1000, 2000];

/// The standard report times up to the horizon, plus the horizon itself.
fn default_checkpoints(horizon: usize) -> Vec<usize> {
    let mut c: Vec<usize> = DEFAULT_CHECKPOINTS
        .iter()
        .copied()
        .filter(|&c| c < horizon)
        .collect();
    c.push(horizon);
    c
}

/// Grid size used when the optimal value is obtained by quadrature.
pub const ORACLE_GRID: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Dream,
    Average,
}

/// One estimation method evaluated along every trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub estimator: EstimatorKind,
    /// Outcome model map; `None` reuses the bandit's own model.
    pub outcome_map: Option<FeatureMap>,
    pub kappa: KappaKind,
}

impl MethodSpec {
    pub fn dream(name: &str, outcome_map: Option<FeatureMap>, kappa: KappaKind) -> Self {
        Self {
            name: name.into(),
            estimator: EstimatorKind::Dream,
            outcome_map,
            kappa,
        }
    }

    pub fn average() -> Self {
        Self {
            name: "average".into(),
            estimator: EstimatorKind::Average,
            outcome_map: None,
            kappa: KappaKind::Constant(0.5),
        }
    }

    /// Parses `dream`, `dream_mu_linear`, `dream_kappa_const`, `dream_kappa_eg`,
    /// `dream_kappa_context` or `average`. The unqualified DREAM methods model
    /// κ on the estimated gap, which tracks where UCB and TS actually explore.
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "dream" => Self::dream(name, None, KappaKind::LogisticGap),
            "dream_mu_linear" => {
                Self::dream(name, Some(FeatureMap::Identity), KappaKind::LogisticGap)
            }
            "dream_kappa_const" => Self::dream(name, None, KappaKind::Constant(0.5)),
            "dream_kappa_eg" => Self::dream(name, None, KappaKind::EgClosedForm),
            "dream_kappa_context" => Self::dream(name, None, KappaKind::Logistic),
            "average" => Self::average(),
            _ => return None,
        })
    }
}

/// Correct model, misspecified outcome model, misspecified exploration
/// model, and the averaged-reward baseline.
pub fn default_methods() -> Vec<MethodSpec> {
    ["dream", "dream_mu_linear", "dream_kappa_const", "average"]
        .iter()
        .map(|n| MethodSpec::parse(n).expect("known method"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub env: Environment,
    pub policy: PolicySpec,
    /// Feature map the bandit learns with.
    pub feature_map: FeatureMap,
    pub omega: f64,
    pub horizon: usize,
    pub replications: usize,
    pub alpha: f64,
    pub base_seed: u64,
    pub checkpoints: Vec<usize>,
    pub methods: Vec<MethodSpec>,
    /// Count burn-in steps in the doubly robust sums.
    pub include_burn_in: bool,
    /// Evaluate the oracle policy with the known-policy estimator.
    pub evaluate_oracle_policy: bool,
    /// Exploration model supplying propensities to the known-policy estimator.
    pub known_policy_kappa: KappaKind,
    /// Target for coverage and bias; the environment optimum when `None`.
    pub target_value: Option<f64>,
    /// Worker threads for replications; the global pool when `None`.
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(env: Environment, policy: PolicySpec, horizon: usize) -> Self {
        let feature_map = match env {
            Environment::Synthetic(_) => FeatureMap::Cosine,
            Environment::Dataset(_) => FeatureMap::Identity,
        };
        Self {
            env,
            policy,
            feature_map,
            omega: 1.0,
            horizon,
            replications: 1,
            alpha: 0.05,
            base_seed: 0,
            checkpoints: default_checkpoints(horizon),
            methods: default_methods(),
            include_burn_in: false,
            evaluate_oracle_policy: false,
            known_policy_kappa: KappaKind::LogisticGap,
            target_value: None,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.horizon <= self.policy.burn_in {
            return Err(DreamError::invalid(
                "T",
                format!(
                    "horizon {} must exceed burn-in {}",
                    self.horizon, self.policy.burn_in
                ),
            ));
        }
        if self.replications == 0 {
            return Err(DreamError::invalid("reps", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DreamError::invalid(
                "alpha",
                format!("must lie in (0, 1), got {}", self.alpha),
            ));
        }
        if !(self.omega > 0.0) {
            return Err(DreamError::invalid("omega", "must be positive"));
        }
        if self.methods.is_empty() {
            return Err(DreamError::invalid(
                "methods",
                "at least one method is required",
            ));
        }
        for &c in &self.checkpoints {
            if c <= self.policy.burn_in || c > self.horizon {
                return Err(DreamError::invalid(
                    "checkpoints",
                    format!(
                        "checkpoint {c} must lie in (T0, T] = ({}, {}]",
                        self.policy.burn_in, self.horizon
                    ),
                ));
            }
        }
        if self.evaluate_oracle_policy && !self.env.has_oracle() {
            return Err(DreamError::OracleUnavailable);
        }
        if let Environment::Dataset(d) = &self.env {
            if d.len() < self.horizon {
                return Err(DreamError::invalid(
                    "T",
                    format!(
                        "dataset has {} rows, fewer than T = {}",
                        d.len(),
                        self.horizon
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Sorted, deduplicated checkpoints; the horizon alone when none are set.
    pub fn effective_checkpoints(&self) -> Vec<usize> {
        let mut c = self.checkpoints.clone();
        if c.is_empty() {
            c.push(self.horizon);
        }
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn target(&self) -> Result<f64> {
        match self.target_value {
            Some(v) => Ok(v),
            None => self.env.optimal_value(ORACLE_GRID),
        }
    }

    pub fn replication_seed(&self, i: usize) -> u64 {
        self.base_seed.wrapping_add(i as u64)
    }
}

struct MethodState {
    spec: MethodSpec,
    /// Separate outcome model when the method does not reuse the bandit's.
    model: Option<OutcomeModel>,
    kappa: ExplorationModel,
    records: Vec<InteractionRecord>,
}

#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub name: String,
    pub records: Vec<InteractionRecord>,
    /// `(t, report)` at each checkpoint.
    pub reports: Vec<(usize, ValueReport)>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryOutput {
    pub methods: Vec<MethodOutput>,
    /// Cumulative regret after each step; empty without an oracle.
    pub regret_path: Vec<f64>,
    /// Known-policy reports for the oracle policy at each checkpoint.
    pub oracle_policy_reports: Vec<(usize, ValueReport)>,
    pub final_model: OutcomeModel,
}

impl TrajectoryOutput {
    pub fn method(&self, name: &str) -> Option<&MethodOutput> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Records of the first method, which carry the bandit's own trajectory.
    pub fn primary_records(&self) -> &[InteractionRecord] {
        &self.methods[0].records
    }
}

/// Runs one trajectory. The same seed always yields identical output.
pub fn run_trajectory(config: &ExperimentConfig, seed: u64) -> Result<TrajectoryOutput> {
    config.validate()?;
    let raw_dim = config.env.raw_dim();
    let spec = &config.policy;
    let checkpoints = config.effective_checkpoints();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut session = config.env.session();
    let mut bandit = OutcomeModel::new(config.feature_map, raw_dim, config.omega)?;
    let mut grams = ClippingGrams::new(raw_dim);
    let mut states: Vec<MethodState> = config
        .methods
        .iter()
        .map(|m| {
            let model = match m.outcome_map {
                Some(map) if map != config.feature_map => {
                    Some(OutcomeModel::new(map, raw_dim, config.omega)?)
                }
                _ => None,
            };
            Ok(MethodState {
                spec: m.clone(),
                model,
                kappa: ExplorationModel::from_kind(m.kappa, raw_dim, spec.eg_eps),
                records: Vec::with_capacity(config.horizon),
            })
        })
        .collect::<Result<_>>()?;
    let reported = states.len();
    let oracle_target = match (&config.env, config.evaluate_oracle_policy) {
        (Environment::Synthetic(s), true) => Some(TargetPolicy::Threshold(s.oracle_threshold())),
        _ => None,
    };
    if oracle_target.is_some() {
        // Unreported state whose records carry the known-policy propensities.
        states.push(MethodState {
            spec: MethodSpec::dream("known_policy", None, config.known_policy_kappa),
            model: None,
            kappa: ExplorationModel::from_kind(config.known_policy_kappa, raw_dim, spec.eg_eps),
            records: Vec::with_capacity(config.horizon),
        });
    }
    let mut regret_path = Vec::new();
    let mut regret = 0.0;
    let mut outputs: Vec<Vec<(usize, ValueReport)>> = vec![Vec::new(); reported];
    let mut oracle_reports = Vec::new();
    let mut next_checkpoint = 0;

    for t in 1..=config.horizon {
        let draw = session.sample_step(&mut rng)?;
        let context = &draw.context;
        let feature = config.feature_map.apply(context);
        let bandit_mu = bandit.predict_both(context)?;
        let bandit_sd = bandit.predict_sd_both(context)?;
        let frozen: Vec<([f64; 2], f64, Vec<f64>)> = states
            .iter()
            .map(|s| {
                let mu = match &s.model {
                    Some(m) => m.predict_both(context)?,
                    None => bandit_mu,
                };
                let z = s.kappa.covariates(context, bandit_mu, bandit_sd);
                let kappa = s.kappa.predict(t, &z);
                Ok((mu, kappa, z))
            })
            .collect::<Result<_>>()?;

        let decision = decide(
            bandit.arms_mut(),
            &grams,
            context,
            &feature,
            t,
            spec,
            &mut rng,
        )?;
        let reward = draw.reward(decision.action);
        let exploited = decision.exploited();

        let mut covariates = Vec::with_capacity(states.len());
        for (s, (mu, kappa, z)) in states.iter_mut().zip(frozen) {
            covariates.push(z);
            s.records.push(InteractionRecord {
                t,
                burn_in: decision.forced_by_burn_in,
                context: context.clone(),
                feature: feature.clone(),
                action: decision.action,
                reward,
                greedy_action: decision.greedy_action,
                exploited,
                kappa_hat: kappa,
                mu_hat: mu,
                propensity: propensity_from_kappa(kappa, exploited),
                forced_by_clipping: decision.forced_by_clipping,
                forced_by_burn_in: decision.forced_by_burn_in,
            });
        }

        bandit.update(context, decision.action.index(), reward)?;
        grams.record(context, decision.action)?;
        for (s, z) in states.iter_mut().zip(&covariates) {
            if let Some(m) = &mut s.model {
                m.update(context, decision.action.index(), reward)?;
            }
            if !decision.forced_by_burn_in {
                s.kappa.fit_update(t, z, exploited);
            }
        }
        if config.env.has_oracle() {
            let best = draw.means[0].max(draw.means[1]);
            regret += best - draw.means[decision.action.index()];
            regret_path.push(regret);
        }

        if next_checkpoint < checkpoints.len() && checkpoints[next_checkpoint] == t {
            next_checkpoint += 1;
            let regret_now = config.env.has_oracle().then_some(regret);
            for (s, out) in states[..reported].iter().zip(&mut outputs) {
                let report = method_report(config, s, &bandit, regret_now)?;
                out.push((t, report));
            }
            if let Some(target) = &oracle_target {
                let post: Vec<InteractionRecord> = states[reported]
                    .records
                    .iter()
                    .filter(|r| config.include_burn_in || !r.burn_in)
                    .cloned()
                    .collect();
                let mut rep = known_policy_value(&post, target, &bandit, config.alpha)?;
                rep.regret = regret_now;
                oracle_reports.push((t, rep));
            }
        }
    }

    states.truncate(reported);
    let methods = states
        .into_iter()
        .zip(outputs)
        .map(|(s, reports)| MethodOutput {
            name: s.spec.name,
            records: s.records,
            reports,
        })
        .collect();
    Ok(TrajectoryOutput {
        methods,
        regret_path,
        oracle_policy_reports: oracle_reports,
        final_model: bandit,
    })
}

fn method_report(
    config: &ExperimentConfig,
    state: &MethodState,
    bandit: &OutcomeModel,
    regret: Option<f64>,
) -> Result<ValueReport> {
    let records = &state.records;
    match state.spec.estimator {
        EstimatorKind::Average => {
            let (mean, ci) = averaged_reward(records, config.alpha)?;
            let rewards: Vec<f64> = records.iter().map(|r| r.reward).collect();
            let mut rep = build_report(
                records,
                records,
                mean,
                dispersion(&rewards),
                config.alpha,
                false,
                regret,
            )?;
            rep.ci_low = ci.0;
            rep.ci_high = ci.1;
            Ok(rep)
        }
        EstimatorKind::Dream => match &state.model {
            None => dream_report(
                records,
                bandit,
                config.include_burn_in,
                config.alpha,
                regret,
            ),
            Some(model) => {
                let dr: Vec<InteractionRecord> = records
                    .iter()
                    .filter(|r| config.include_burn_in || !r.burn_in)
                    .cloned()
                    .collect();
                let v_hat = crate::estimator::dream_value(&dr)?;
                let (residual_var, fallback) = model.residual_variances();
                // The greedy plug-in follows the bandit's final policy; its
                // value comes from this method's outcome model.
                let plugin = dr
                    .iter()
                    .map(|r| {
                        let a = bandit.greedy(&r.context)?;
                        Ok(model.predict_both(&r.context)?[a])
                    })
                    .collect::<Result<Vec<_>>>()?;
                let sigma2 =
                    crate::estimator::dream_variance_from_parts(&dr, residual_var, &plugin)?;
                build_report(&dr, records, v_hat, sigma2, config.alpha, fallback, regret)
            }
        },
    }
}

/// Per-replication results kept by the Monte Carlo driver.
#[derive(Debug, Clone)]
pub struct ReplicationSummary {
    pub seed: u64,
    /// `reports[m][c]` is method `m` at checkpoint `c`.
    pub reports: Vec<Vec<ValueReport>>,
    pub oracle_policy_reports: Vec<ValueReport>,
    pub regret_path: Vec<f64>,
    /// Exploitation indicator of each step of the bandit trajectory.
    pub exploited: Vec<bool>,
    pub burn_in: Vec<bool>,
}

impl ReplicationSummary {
    fn from_output(seed: u64, out: TrajectoryOutput) -> Self {
        let primary = out.primary_records();
        Self {
            seed,
            exploited: primary.iter().map(|r| r.exploited).collect(),
            burn_in: primary.iter().map(|r| r.burn_in).collect(),
            reports: out
                .methods
                .iter()
                .map(|m| m.reports.iter().map(|(_, r)| r.clone()).collect())
                .collect(),
            oracle_policy_reports: out
                .oracle_policy_reports
                .into_iter()
                .map(|(_, r)| r)
                .collect(),
            regret_path: out.regret_path,
        }
    }

    /// Fraction of steps `t ∈ [lo, hi]` that did not follow the greedy action.
    pub fn exploration_frequency(&self, lo: usize, hi: usize) -> f64 {
        let window = &self.exploited[lo - 1..hi];
        window.iter().filter(|&&e| !e).count() as f64 / window.len() as f64
    }
}

/// Coverage, bias and calibration of one method at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: usize,
    pub method: String,
    pub coverage: f64,
    pub mean_bias: f64,
    /// Mean estimated standard error over the Monte Carlo SD of the estimate;
    /// `+∞` when the estimates do not vary.
    pub se_mc_ratio: f64,
    pub mean_estimate: f64,
    pub mc_sd: f64,
    pub mean_se: f64,
    pub replications: usize,
}

pub const METRICS_CSV_HEADER: &str =
    "t,method,coverage,bias,se_mc_ratio,mean_estimate,mc_sd,mean_se,replications";

impl MetricsRow {
    /// Aggregates reports of one method at one checkpoint.
    pub fn from_reports(t: usize, method: &str, reports: &[&ValueReport], target: f64) -> Self {
        let n = reports.len() as f64;
        let covered = reports.iter().filter(|r| r.covers(target)).count() as f64;
        let est: Vec<f64> = reports.iter().map(|r| r.v_hat).collect();
        let mean = est.iter().sum::<f64>() / n;
        let mc_sd = if reports.len() > 1 {
            (est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mean_se = reports.iter().map(|r| r.std_error()).sum::<f64>() / n;
        let se_mc_ratio = if mc_sd > 0.0 {
            mean_se / mc_sd
        } else {
            f64::INFINITY
        };
        Self {
            t,
            method: method.into(),
            coverage: covered / n,
            mean_bias: mean - target,
            se_mc_ratio,
            mean_estimate: mean,
            mc_sd,
            mean_se,
            replications: reports.len(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            self.t,
            self.method,
            fmt_f64(self.coverage),
            fmt_f64(self.mean_bias),
            fmt_f64(self.se_mc_ratio),
            fmt_f64(self.mean_estimate),
            fmt_f64(self.mc_sd),
            fmt_f64(self.mean_se),
            self.replications
        )
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub target: f64,
    pub checkpoints: Vec<usize>,
    pub method_names: Vec<String>,
    pub replications: Vec<ReplicationSummary>,
    pub rows: Vec<MetricsRow>,
    /// Known-policy metrics for the oracle policy, when requested.
    pub oracle_policy_rows: Vec<MetricsRow>,
}

impl MonteCarloResult {
    pub fn row(&self, t: usize, method: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.t == t && r.method == method)
    }

    /// Mean cumulative regret at step `t` across replications.
    pub fn mean_regret(&self, t: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .replications
            .iter()
            .filter_map(|r| r.regret_path.get(t - 1).copied())
            .collect();
        (vals.len() == self.replications.len() && !vals.is_empty())
            .then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{METRICS_CSV_HEADER}")?;
        for row in self.rows.iter().chain(&self.oracle_policy_rows) {
            row.write_csv(w)?;
        }
        Ok(())
    }
}

/// Runs `config.replications` trajectories with seeds `base_seed + i` and
/// aggregates metrics per checkpoint and method. Results do not depend on the
/// worker count.
pub fn monte_carlo(config: &ExperimentConfig) -> Result<MonteCarloResult> {
    config.validate()?;
    let target = config.target()?;
    let run = || -> Result<Vec<ReplicationSummary>> {
        (0..config.replications)
            .into_par_iter()
            .map(|i| {
                let seed = config.replication_seed(i);
                run_trajectory(config, seed).map(|out| ReplicationSummary::from_output(seed, out))
            })
            .collect()
    };
    let replications = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| DreamError::invalid("workers", e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    Ok(aggregate(config, target, replications))
}

fn aggregate(
    config: &ExperimentConfig,
    target: f64,
    replications: Vec<ReplicationSummary>,
) -> MonteCarloResult {
    let checkpoints = config.effective_checkpoints();
    let mut rows = Vec::new();
    for (ci, &t) in checkpoints.iter().enumerate() {
        for (mi, m) in config.methods.iter().enumerate() {
            let reps: Vec<&ValueReport> = replications.iter().map(|r| &r.reports[mi][ci]).collect();
            rows.push(MetricsRow::from_reports(t, &m.name, &reps, target));
        }
    }
    let mut oracle_policy_rows = Vec::new();
    if config.evaluate_oracle_policy {
        for (ci, &t) in checkpoints.iter().enumerate() {
            let reps: Vec<&ValueReport> = replications
                .iter()
                .map(|r| &r.oracle_policy_reports[ci])
                .collect();
            oracle_policy_rows.push(MetricsRow::from_reports(
                t,
                "known_policy_oracle",
                &reps,
                target,
            ));
        }
    }
    MonteCarloResult {
        target,
        checkpoints,
        method_names: config.methods.iter().map(|m| m.name.clone()).collect(),
        replications,
        rows,
        oracle_policy_rows,
    }
}

/// Repeats [`monte_carlo`] for each constant clipping rate, with the same
/// replication seeds.
pub fn sensitivity_sweep(
    config: &ExperimentConfig,
    p_values: &[f64],
) -> Result<Vec<(f64, MonteCarloResult)>> {
    p_values
        .iter()
        .map(|&p| {
            if !(p > 0.0 && p < 1.0) {
                return Err(DreamError::invalid(
                    "clip",
                    format!("sweep value {p} must lie in (0, 1)"),
                ));
            }
            let mut c = config.clone();
            c.policy.clipping = Schedule::Constant(p);
            monte_carlo(&c).map(|r| (p, r))
        })
        .collect()
}

pub fn trace_csv_header(raw_dim: usize, feature_dim: usize) -> String {
    let mut cols: Vec<String> = [
        "t",
        "burn_in",
        "action",
        "reward",
        "greedy_action",
        "exploited",
        "kappa_hat",
        "mu_hat_0",
        "mu_hat_1",
        "propensity",
        "forced_by_clipping",
        "forced_by_burn_in",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((0..raw_dim).map(|j| format!("x{j}")));
    cols.extend((0..feature_dim).map(|j| format!("f{j}")));
    cols.join(",")
}

/// Writes a per-step trace with a header row.
pub fn write_trace_csv<W: Write>(w: &mut W, records: &[InteractionRecord]) -> std::io::Result<()> {
    let (rd, fd) = records
        .first()
        .map_or((0, 0), |r| (r.context.len(), r.feature.len()));
    writeln!(w, "{}", trace_csv_header(rd, fd))?;
    for r in records {
        let mut fields = vec![
            r.t.to_string(),
            u8::from(r.burn_in).to_string(),
            r.action.index().to_string(),
            fmt_f64(r.reward),
            r.greedy_action.index().to_string(),
            u8::from(r.exploited).to_string(),
            fmt_f64(r.kappa_hat),
            fmt_f64(r.mu_hat[0]),
            fmt_f64(r.mu_hat[1]),
            fmt_f64(r.propensity),
            u8::from(r.forced_by_clipping).to_string(),
            u8::from(r.forced_by_burn_in).to_string(),
        ];
        fields.extend(r.context.iter().map(|&v| fmt_f64(v)));
        fields.extend(r.feature.iter().map(|&v| fmt_f64(v)));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Reads a trace written by [`write_trace_csv`]. Fails with a message naming
/// the first missing required column.
pub fn read_trace_csv<R: std::io::Read>(r: R) -> Result<Vec<InteractionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DreamError::Dataset {
                line: 1,
                message: format!("trace lacks column `{name}`"),
            })
    };
    let idx = [
        "t",
        "burn_in",
        "action",
        "reward",
        "greedy_action",
        "exploited",
        "kappa_hat",
        "mu_hat_0",
        "mu_hat_1",
        "propensity",
        "forced_by_clipping",
        "forced_by_burn_in",
    ]
    .map(col);
    let mut ix = [0usize; 12];
    for (slot, r) in ix.iter_mut().zip(idx) {
        *slot = r?;
    }
    let xs: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| is_indexed(h, 'x'))
        .map(|(i, _)| i)
        .collect();
    let fs: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| is_indexed(h, 'f'))
        .map(|(i, _)| i)
        .collect();
    if xs.is_empty() || fs.is_empty() {
        return Err(DreamError::Dataset {
            line: 1,
            message: "trace lacks context or feature columns".into(),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            let s = rec.get(j).unwrap_or("");
            s.parse::<f64>().map_err(|_| DreamError::Dataset {
                line,
                message: format!("column `{}`: cannot parse `{s}`", &headers[j]),
            })
        };
        let flag = |j: usize| -> Result<bool> { Ok(num(j)? != 0.0) };
        let act = |j: usize| -> Result<Action> {
            match num(j)? {
                0.0 => Ok(Action::Zero),
                1.0 => Ok(Action::One),
                v => Err(DreamError::Dataset {
                    line,
                    message: format!("column `{}`: action must be 0 or 1, found {v}", &headers[j]),
                }),
            }
        };
        out.push(InteractionRecord {
            t: num(ix[0])? as usize,
            burn_in: flag(ix[1])?,
            action: act(ix[2])?,
            reward: num(ix[3])?,
            greedy_action: act(ix[4])?,
            exploited: flag(ix[5])?,
            kappa_hat: num(ix[6])?,
            mu_hat: [num(ix[7])?, num(ix[8])?],
            propensity: num(ix[9])?,
            forced_by_clipping: flag(ix[10])?,
            forced_by_burn_in: flag(ix[11])?,
            context: xs.iter().map(|&j| num(j)).collect::<Result<_>>()?,
            feature: fs.iter().map(|&j| num(j)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

fn is_indexed(h: &str, prefix: char) -> bool {
    h.strip_prefix(prefix)
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

/// Rebuilds the bandit's outcome model by replaying a trace in order.
pub fn refit_model(
    records: &[InteractionRecord],
    map: FeatureMap,
    omega: f64,
) -> Result<OutcomeModel> {
    let first = records.first().ok_or(DreamError::EmptyRecords)?;
    let mut model = OutcomeModel::new(map, first.context.len(), omega)?;
    for r in records {
        model.update(&r.context, r.action.index(), r.reward)?;
    }
    Ok(model)
}
