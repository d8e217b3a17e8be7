//! Doubly robust value estimation for the greedy policy learned online.
//!
//! Every function here is a pure reduction over an immutable slice of
//! [`InteractionRecord`]s. Quantities indexed `t − 1` in the estimator are
//! frozen into the record at decision time, so the reductions never consult a
//! model except for the final-time variance terms.

use std::io::Write;

use crate::arm::OutcomeModel;
use crate::error::{DreamError, Result};
use crate::policy::Action;

/// Floor and ceiling for recorded action propensities.
pub const PROPENSITY_MIN: f64 = 1e-3;
pub const PROPENSITY_MAX: f64 = 1.0;

/// One time step of a bandit trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    /// 1-based step index.
    pub t: usize,
    /// True while the step belongs to the burn-in period.
    pub burn_in: bool,
    /// Raw context, leading intercept included.
    pub context: Vec<f64>,
    /// Context after the bandit's feature map.
    pub feature: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    /// `π̂ₜ(xₜ)`, the greedy action under the estimates available at time t.
    pub greedy_action: Action,
    /// `action == greedy_action`.
    pub exploited: bool,
    /// `κ̂ₜ(xₜ)` as predicted before this step's label was seen.
    pub kappa_hat: f64,
    /// `[μ̂ₜ₋₁(xₜ, 0), μ̂ₜ₋₁(xₜ, 1)]` frozen before this step's update.
    pub mu_hat: [f64; 2],
    /// `p̂ₜ₋₁(aₜ | xₜ)` clamped to `[PROPENSITY_MIN, PROPENSITY_MAX]`.
    pub propensity: f64,
    pub forced_by_clipping: bool,
    pub forced_by_burn_in: bool,
}

impl InteractionRecord {
    /// `μ̂ₜ₋₁{xₜ, π̂ₜ(xₜ)}`.
    pub fn mu_hat_at_greedy(&self) -> f64 {
        self.mu_hat[self.greedy_action.index()]
    }

    /// `p̂ₜ₋₁(a | xₜ)` for either action, derived from the recorded propensity
    /// of the taken action.
    pub fn propensity_of(&self, a: Action) -> f64 {
        let p = if a == self.action {
            self.propensity
        } else {
            1.0 - self.propensity
        };
        p.clamp(PROPENSITY_MIN, PROPENSITY_MAX)
    }
}

/// Propensity of the taken action implied by a predicted exploration
/// probability: `1 − κ̂` when exploiting, `κ̂` otherwise.
pub fn propensity_from_kappa(kappa_hat: f64, exploited: bool) -> f64 {
    let p = if exploited {
        1.0 - kappa_hat
    } else {
        kappa_hat
    };
    p.clamp(PROPENSITY_MIN, PROPENSITY_MAX)
}

/// Point estimate, variance, interval and the naive baseline for one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueReport {
    pub v_hat: f64,
    pub sigma2_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    /// Number of records entering the doubly robust sums.
    pub t_effective: usize,
    pub baseline_avg_reward: f64,
    pub baseline_ci: (f64, f64),
    /// Set when a residual variance fell back to the constant.
    pub variance_fallback: bool,
    pub regret: Option<f64>,
}

impl ValueReport {
    /// Standard error `√(σ̂² / T)`.
    pub fn std_error(&self) -> f64 {
        (self.sigma2_hat / self.t_effective as f64).sqrt()
    }

    pub fn covers(&self, target: f64) -> bool {
        self.ci_low <= target && target <= self.ci_high
    }

    pub fn baseline_covers(&self, target: f64) -> bool {
        self.baseline_ci.0 <= target && target <= self.baseline_ci.1
    }
}

pub const REPORT_CSV_HEADER: &str =
    "run_id,algorithm,T,v_hat,sigma2_hat,ci_low,ci_high,baseline_avg,baseline_lo,baseline_hi,regret";

/// Writes one report row. Floats use 17 significant digits; a missing regret
/// is written as `NaN`.
pub fn write_report_row<W: Write>(
    w: &mut W,
    run_id: &str,
    algorithm: &str,
    t: usize,
    report: &ValueReport,
) -> std::io::Result<()> {
    let regret = report.regret.unwrap_or(f64::NAN);
    writeln!(
        w,
        "{run_id},{algorithm},{t},{},{},{},{},{},{},{},{}",
        fmt_f64(report.v_hat),
        fmt_f64(report.sigma2_hat),
        fmt_f64(report.ci_low),
        fmt_f64(report.ci_high),
        fmt_f64(report.baseline_avg_reward),
        fmt_f64(report.baseline_ci.0),
        fmt_f64(report.baseline_ci.1),
        fmt_f64(regret),
    )
}

/// 17 significant digits in scientific notation; round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn nonempty(records: &[InteractionRecord]) -> Result<()> {
    if records.is_empty() {
        Err(DreamError::EmptyRecords)
    } else {
        Ok(())
    }
}

/// `(1/T) Σ 𝕀{aₜ = π̂ₜ}/(1 − κ̂ₜ) · (rₜ − μ̂ₜ₋₁(xₜ, π̂ₜ)) + μ̂ₜ₋₁(xₜ, π̂ₜ)`.
pub fn dream_value(records: &[InteractionRecord]) -> Result<f64> {
    nonempty(records)?;
    let sum: f64 = records
        .iter()
        .map(|r| {
            let m = r.mu_hat_at_greedy();
            let w = if r.exploited {
                1.0 / (1.0 - r.kappa_hat)
            } else {
                0.0
            };
            w * (r.reward - m) + m
        })
        .sum();
    Ok(sum / records.len() as f64)
}

/// Variance estimate from explicit parts: per-action residual variances and
/// the final-model plug-in `μ̂_T{xₜ, π̂_T(xₜ)}` for each record.
pub fn dream_variance_from_parts(
    records: &[InteractionRecord],
    residual_var: [f64; 2],
    final_plugin: &[f64],
) -> Result<f64> {
    nonempty(records)?;
    if final_plugin.len() != records.len() {
        return Err(DreamError::DimensionMismatch {
            expected: records.len(),
            got: final_plugin.len(),
        });
    }
    let n = records.len() as f64;
    let noise: f64 = records
        .iter()
        .map(|r| residual_var[r.greedy_action.index()] / (1.0 - r.kappa_hat))
        .sum::<f64>()
        / n;
    Ok(noise + dispersion(final_plugin))
}

/// `(1/n) Σ (vᵢ − v̄)²`.
pub fn dispersion(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Variance of the doubly robust estimator using the final outcome model for
/// residual variances and for the greedy plug-in. Returns the estimate and
/// whether a residual-variance fallback engaged.
pub fn dream_variance(records: &[InteractionRecord], model: &OutcomeModel) -> Result<(f64, bool)> {
    nonempty(records)?;
    let (residual_var, fallback) = model.residual_variances();
    let plugin = records
        .iter()
        .map(|r| {
            model
                .predict_both(&r.context)
                .map(|m| m[usize::from(m[1] > m[0])])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        dream_variance_from_parts(records, residual_var, &plugin)?,
        fallback,
    ))
}

/// Inverse standard normal CDF (Wichura's AS241, relative error about 1e-16).
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
            + 6.726_577_092_700_870_1e4)
            * r
            + 4.592_195_393_154_987_1e4)
            * r
            + 1.373_169_376_550_946_1e4)
            * r
            + 1.971_590_950_306_551_4e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_6)
            * q;
        let den = ((((((5.226_495_278_852_854_6e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271_1e4)
            * r
            + 2.121_379_430_158_659_6e4)
            * r
            + 5.394_196_021_424_751_1e3)
            * r
            + 6.871_870_074_920_579_1e2)
            * r
            + 4.231_333_070_160_091_1e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_5e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_758_8)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Two-sided `1 − α` interval `v ± z_{α/2} √(σ² / T)`.
pub fn wald_ci(v_hat: f64, sigma2_hat: f64, t_effective: usize, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(DreamError::invalid(
            "alpha",
            format!("must lie in (0, 1], got {alpha}"),
        ));
    }
    if !(sigma2_hat >= 0.0) {
        return Err(DreamError::invalid(
            "sigma2",
            format!("must be nonnegative, got {sigma2_hat}"),
        ));
    }
    if t_effective == 0 {
        return Err(DreamError::EmptyRecords);
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    let half = z * (sigma2_hat / t_effective as f64).sqrt();
    Ok((v_hat - half, v_hat + half))
}

/// Mean reward with a Wald interval from the plug-in reward SD.
pub fn averaged_reward(records: &[InteractionRecord], alpha: f64) -> Result<(f64, (f64, f64))> {
    nonempty(records)?;
    let rewards: Vec<f64> = records.iter().map(|r| r.reward).collect();
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let ci = wald_ci(mean, dispersion(&rewards), rewards.len(), alpha)?;
    Ok((mean, ci))
}

/// A fixed evaluation policy for the known-policy estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetPolicy {
    /// The greedy policy as recorded along the trajectory; the final-time
    /// plug-in uses the final model's greedy action.
    RecordedGreedy,
    Constant(Action),
    /// Action 1 iff `wᵀf > 0` on the recorded (mapped) feature.
    Threshold(Vec<f64>),
}

impl TargetPolicy {
    pub fn action_at(&self, record: &InteractionRecord) -> Result<Action> {
        match self {
            TargetPolicy::RecordedGreedy => Ok(record.greedy_action),
            TargetPolicy::Constant(a) => Ok(*a),
            TargetPolicy::Threshold(w) => {
                if w.len() != record.feature.len() {
                    return Err(DreamError::DimensionMismatch {
                        expected: record.feature.len(),
                        got: w.len(),
                    });
                }
                Ok(Action::from_bool(
                    crate::linalg::dot(w, &record.feature) > 0.0,
                ))
            }
        }
    }

    /// `π^E(xₜ)` as used in the final-time dispersion term.
    pub fn final_action(&self, record: &InteractionRecord, model: &OutcomeModel) -> Result<Action> {
        match self {
            TargetPolicy::RecordedGreedy => Ok(Action::from_index(model.greedy(&record.context)?)),
            _ => self.action_at(record),
        }
    }
}

/// Doubly robust value of a known policy with recorded propensities.
pub fn known_policy_value(
    records: &[InteractionRecord],
    target: &TargetPolicy,
    model: &OutcomeModel,
    alpha: f64,
) -> Result<ValueReport> {
    nonempty(records)?;
    let (residual_var, fallback) = model.residual_variances();
    let n = records.len() as f64;
    let mut value = 0.0;
    let mut noise = 0.0;
    let mut plugin = Vec::with_capacity(records.len());
    for r in records {
        let a = target.action_at(r)?;
        let p = r.propensity_of(a);
        let m = r.mu_hat[a.index()];
        let w = if r.action == a { 1.0 / p } else { 0.0 };
        value += w * (r.reward - m) + m;
        noise += residual_var[a.index()] / p;
        let fa = target.final_action(r, model)?;
        plugin.push(model.predict_both(&r.context)?[fa.index()]);
    }
    let v_hat = value / n;
    let sigma2 = noise / n + dispersion(&plugin);
    build_report(records, records, v_hat, sigma2, alpha, fallback, None)
}

/// Assembles a report from an estimate over `dr_records` and the averaged
/// reward over `baseline_records`.
pub fn build_report(
    dr_records: &[InteractionRecord],
    baseline_records: &[InteractionRecord],
    v_hat: f64,
    sigma2_hat: f64,
    alpha: f64,
    variance_fallback: bool,
    regret: Option<f64>,
) -> Result<ValueReport> {
    let (ci_low, ci_high) = wald_ci(v_hat, sigma2_hat, dr_records.len(), alpha)?;
    let (baseline_avg_reward, baseline_ci) = averaged_reward(baseline_records, alpha)?;
    Ok(ValueReport {
        v_hat,
        sigma2_hat,
        ci_low,
        ci_high,
        alpha,
        t_effective: dr_records.len(),
        baseline_avg_reward,
        baseline_ci,
        variance_fallback,
        regret,
    })
}

/// Full doubly robust report. `all_records` feed the averaged-reward baseline;
/// the estimator sums skip burn-in steps unless `include_burn_in` is set.
pub fn dream_report(
    all_records: &[InteractionRecord],
    model: &OutcomeModel,
    include_burn_in: bool,
    alpha: f64,
    regret: Option<f64>,
) -> Result<ValueReport> {
    let dr: Vec<InteractionRecord> = if include_burn_in {
        all_records.to_vec()
    } else {
        all_records.iter().filter(|r| !r.burn_in).cloned().collect()
    };
    let v_hat = dream_value(&dr)?;
    let (sigma2, fallback) = dream_variance(&dr, model)?;
    build_report(&dr, all_records, v_hat, sigma2, alpha, fallback, regret)
}

/// `Σ [μ(xₜ, π*(xₜ)) − μ(xₜ, aₜ)]` with `π*` the pointwise argmax of the oracle.
pub fn cumulative_regret<F>(records: &[InteractionRecord], true_mean: F) -> Result<f64>
where
    F: Fn(&[f64], Action) -> Result<f64>,
{
    let mut total = 0.0;
    for r in records {
        let m0 = true_mean(&r.context, Action::Zero)?;
        let m1 = true_mean(&r.context, Action::One)?;
        total += m0.max(m1) - if r.action == Action::One { m1 } else { m0 };
    }
    Ok(total)
}
