//! Two-armed action selection: UCB, Thompson sampling, ε-greedy, the greedy
//! policy they are compared against, and the eigenvalue clipping guard that
//! forces pulls of an under-explored arm.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::arm::ArmState;
use crate::error::{DreamError, Result};
use crate::linalg::{dot, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Zero,
    One,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Zero => 0,
            Action::One => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Zero
        } else {
            Action::One
        }
    }

    pub fn from_bool(one: bool) -> Self {
        if one {
            Action::One
        } else {
            Action::Zero
        }
    }

    pub fn other(self) -> Self {
        match self {
            Action::Zero => Action::One,
            Action::One => Action::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Ucb,
    Ts,
    Eg,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ucb => "ucb",
            Algorithm::Ts => "ts",
            Algorithm::Eg => "eg",
        }
    }
}

impl FromStr for Algorithm {
    type Err = DreamError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ucb" => Ok(Algorithm::Ucb),
            "ts" | "thompson" => Ok(Algorithm::Ts),
            "eg" | "egreedy" | "epsilon-greedy" => Ok(Algorithm::Eg),
            other => Err(DreamError::invalid(
                "algo",
                format!("unknown algorithm `{other}`"),
            )),
        }
    }
}

/// A deterministic time schedule `t ↦ value`, `t ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// `scale · t^exponent`
    Power {
        scale: f64,
        exponent: f64,
    },
    /// `√(α log t / t)`
    SqrtLogOverT {
        alpha: f64,
    },
}

impl Schedule {
    pub fn at(&self, t: usize) -> f64 {
        let tf = t.max(1) as f64;
        match *self {
            Schedule::Constant(c) => c,
            Schedule::Power { scale, exponent } => scale * tf.powf(exponent),
            Schedule::SqrtLogOverT { alpha } => (alpha * tf.ln() / tf).sqrt(),
        }
    }

    fn is_finite_nonneg(&self) -> bool {
        match *self {
            Schedule::Constant(c) => c.is_finite() && c >= 0.0,
            Schedule::Power { scale, exponent } => {
                scale.is_finite() && scale >= 0.0 && exponent.is_finite()
            }
            Schedule::SqrtLogOverT { alpha } => alpha.is_finite() && alpha > 0.0,
        }
    }

    fn is_non_increasing(&self) -> bool {
        match *self {
            Schedule::Constant(_) => true,
            Schedule::Power { exponent, .. } => exponent <= 0.0,
            // increasing only on t < e, i.e. t ∈ {1, 2}
            Schedule::SqrtLogOverT { .. } => true,
        }
    }

    /// `value(t)·√t` non-decreasing, the admissible order for clipping rates.
    fn decays_no_faster_than_inverse_sqrt(&self) -> bool {
        match *self {
            Schedule::Constant(_) | Schedule::SqrtLogOverT { .. } => true,
            Schedule::Power { exponent, .. } => exponent >= -0.5,
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Schedule::Constant(c) => write!(f, "{c}"),
            Schedule::Power { scale, exponent } => write!(f, "{scale}*t^{exponent}"),
            Schedule::SqrtLogOverT { alpha } => write!(f, "sqrtlog:{alpha}"),
        }
    }
}

impl FromStr for Schedule {
    type Err = String;

    /// Accepts `0.01`, `0.1*t^-0.4`, `t^-0.333`, or `sqrtlog:0.5`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("cannot parse `{v}` as a number"))
        };
        if let Some(alpha) = s.strip_prefix("sqrtlog:") {
            return Ok(Schedule::SqrtLogOverT { alpha: num(alpha)? });
        }
        if let Some((head, exp)) = s.split_once("t^") {
            let head = head.trim();
            let scale = match head.strip_suffix('*') {
                Some(h) => num(h)?,
                None if head.is_empty() => 1.0,
                None => return Err(format!("malformed schedule `{s}`")),
            };
            return Ok(Schedule::Power {
                scale,
                exponent: num(exp)?,
            });
        }
        Ok(Schedule::Constant(num(s)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BurnInMode {
    /// Actions 0, 1, 0, 1, … for `t ≤ T₀`.
    Alternating,
    /// Fair coin flips for `t ≤ T₀`.
    Uniform,
}

/// Algorithm choice plus every schedule it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub algorithm: Algorithm,
    pub ucb_c: Schedule,
    pub ts_rho: f64,
    pub eg_eps: Schedule,
    pub clipping: Schedule,
    pub burn_in: usize,
    pub burn_in_mode: BurnInMode,
}

impl PolicySpec {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ucb_c: Schedule::Constant(1.0),
            ts_rho: 2.0,
            eg_eps: Schedule::Power {
                scale: 0.1,
                exponent: -0.4,
            },
            clipping: Schedule::Constant(0.01),
            burn_in: 50,
            burn_in_mode: BurnInMode::Alternating,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.ucb_c.is_finite_nonneg() || !self.ucb_c.is_non_increasing() {
            return Err(DreamError::invalid(
                "ucb-c",
                "must be a non-negative, non-increasing schedule",
            ));
        }
        if !(self.ts_rho.is_finite() && self.ts_rho >= 0.0) {
            return Err(DreamError::invalid(
                "rho",
                format!("must be non-negative, got {}", self.ts_rho),
            ));
        }
        if !self.eg_eps.is_finite_nonneg() {
            return Err(DreamError::invalid(
                "eps",
                "must be a non-negative schedule",
            ));
        }
        if matches!(self.eg_eps, Schedule::Constant(c) if c > 1.0)
            || matches!(self.eg_eps, Schedule::Power { scale, exponent } if scale > 1.0 && exponent <= 0.0)
        {
            return Err(DreamError::invalid("eps", "values must lie in [0, 1]"));
        }
        if !self.clipping.is_finite_nonneg()
            || !self.clipping.is_non_increasing()
            || !self.clipping.decays_no_faster_than_inverse_sqrt()
        {
            return Err(DreamError::invalid(
                "clip",
                "clipping rate must be non-negative, non-increasing, and decay no faster than t^(-1/2)",
            ));
        }
        if self.clipping.at(1) >= 1.0 {
            return Err(DreamError::invalid("clip", "clipping rate must be below 1"));
        }
        Ok(())
    }

    pub fn epsilon_at(&self, t: usize) -> f64 {
        self.eg_eps.at(t).clamp(0.0, 1.0)
    }
}

/// Outcome of one selection step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub action: Action,
    pub greedy_action: Action,
    pub forced_by_clipping: bool,
    pub forced_by_burn_in: bool,
}

impl Decision {
    fn plain(action: Action, greedy_action: Action) -> Self {
        Self {
            action,
            greedy_action,
            forced_by_clipping: false,
            forced_by_burn_in: false,
        }
    }

    pub fn exploited(&self) -> bool {
        self.action == self.greedy_action
    }
}

/// `𝕀{μ̂(f,1) > μ̂(f,0)}`; exact ties go to action 0.
pub fn greedy_action(arm0: &ArmState, arm1: &ArmState, feature: &[f64]) -> Result<Action> {
    let m0 = arm0.predict_mean(feature)?;
    let m1 = arm1.predict_mean(feature)?;
    Ok(Action::from_bool(m1 > m0))
}

pub fn select_ucb(
    arms: &mut [ArmState; 2],
    feature: &[f64],
    t: usize,
    spec: &PolicySpec,
) -> Result<Decision> {
    let c = spec.ucb_c.at(t);
    let greedy = greedy_action(&arms[0], &arms[1], feature)?;
    let m0 = arms[0].predict_mean(feature)?;
    let m1 = arms[1].predict_mean(feature)?;
    let s0 = arms[0].predict_sd(feature)?;
    let s1 = arms[1].predict_sd(feature)?;
    let action = Action::from_bool(m1 + c * s1 > m0 + c * s0);
    Ok(Decision::plain(action, greedy))
}

fn posterior_draw(arm: &mut ArmState, rho: f64, z: &[f64]) -> Result<Vec<f64>> {
    let chol = match arm.gram_reg_inv().cholesky() {
        Ok(l) => l,
        Err(DreamError::NotPositiveDefinite(_)) => {
            arm.refactor()?;
            arm.gram_reg_inv().cholesky()?
        }
        Err(e) => return Err(e),
    };
    let noise = chol.mul_vec(z);
    Ok(arm
        .coefficients()
        .iter()
        .zip(noise)
        .map(|(b, e)| b + rho * e)
        .collect())
}

/// Thompson sampling from `𝒩(β̂(a), ρ²(DᵀD + ωI)⁻¹)` for each arm.
pub fn select_ts<R: Rng + ?Sized>(
    arms: &mut [ArmState; 2],
    feature: &[f64],
    spec: &PolicySpec,
    rng: &mut R,
) -> Result<Decision> {
    let greedy = greedy_action(&arms[0], &arms[1], feature)?;
    let d = feature.len();
    let z0: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let z1: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let theta0 = posterior_draw(&mut arms[0], spec.ts_rho, &z0)?;
    let theta1 = posterior_draw(&mut arms[1], spec.ts_rho, &z1)?;
    let action = Action::from_bool(dot(feature, &theta1) > dot(feature, &theta0));
    Ok(Decision::plain(action, greedy))
}

/// ε-greedy: greedy with probability `1 − εₜ`, otherwise a fair coin.
pub fn select_eg<R: Rng + ?Sized>(
    arms: &[ArmState; 2],
    feature: &[f64],
    t: usize,
    spec: &PolicySpec,
    rng: &mut R,
) -> Result<Decision> {
    let greedy = greedy_action(&arms[0], &arms[1], feature)?;
    let eps = spec.epsilon_at(t);
    // both draws are always consumed so the stream layout does not depend on ε
    let u: f64 = rng.random();
    let coin: bool = rng.random();
    let action = if u < eps {
        Action::from_bool(coin)
    } else {
        greedy
    };
    Ok(Decision::plain(action, greedy))
}

/// Running Gram sums of raw contexts, overall and per action.
#[derive(Debug, Clone)]
pub struct ClippingGrams {
    per_arm: [SymMatrix; 2],
    total: SymMatrix,
    count: usize,
}

impl ClippingGrams {
    pub fn new(dim: usize) -> Self {
        Self {
            per_arm: [SymMatrix::zeros(dim), SymMatrix::zeros(dim)],
            total: SymMatrix::zeros(dim),
            count: 0,
        }
    }

    pub fn record(&mut self, context: &[f64], action: Action) -> Result<()> {
        self.per_arm[action.index()].add_outer_in_place(context, 1.0)?;
        self.total.add_outer_in_place(context, 1.0)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `t⁻¹ Σ 𝕀(aᵢ = a) xᵢxᵢᵀ` over recorded steps.
    pub fn arm_gram(&self, action: Action, t: usize) -> SymMatrix {
        self.per_arm[action.index()].scale(1.0 / t.max(1) as f64)
    }

    /// `t⁻¹ Σ xᵢxᵢᵀ` over recorded steps plus the pending context, if any.
    pub fn total_gram(&self, pending: Option<&[f64]>, t: usize) -> Result<SymMatrix> {
        let mut total = self.total.clone();
        if let Some(x) = pending {
            total.add_outer_in_place(x, 1.0)?;
        }
        Ok(total.scale(1.0 / t.max(1) as f64))
    }

    /// Smallest eigenvalue of each arm's scaled Gram matrix.
    pub fn arm_min_eigenvalues(&self, t: usize) -> Result<[f64; 2]> {
        Ok([
            self.arm_gram(Action::Zero, t).min_eigenvalue()?,
            self.arm_gram(Action::One, t).min_eigenvalue()?,
        ])
    }
}

/// Overrides the proposal to `1 − aₜ` when the unchosen arm's scaled Gram
/// matrix has `λ_min < pₜ · λ_min(total)`.
///
/// `arm_gram_unchosen` and `total_gram` are the `t⁻¹`-scaled sums; the total
/// includes the current context while the unchosen arm's sum cannot.
pub fn clipping_guard(
    arm_gram_unchosen: &SymMatrix,
    total_gram: &SymMatrix,
    proposed: Decision,
    t: usize,
    spec: &PolicySpec,
) -> Result<Decision> {
    let p = spec.clipping.at(t);
    if p <= 0.0 {
        return Ok(proposed);
    }
    let lhs = arm_gram_unchosen.min_eigenvalue()?;
    let rhs = p * total_gram.min_eigenvalue()?;
    if lhs < rhs {
        Ok(Decision {
            action: proposed.action.other(),
            forced_by_clipping: true,
            ..proposed
        })
    } else {
        Ok(proposed)
    }
}

/// One full decision at step `t`: burn-in rule, the configured algorithm, then
/// the clipping guard against the history in `grams`.
pub fn decide<R: Rng + ?Sized>(
    arms: &mut [ArmState; 2],
    grams: &ClippingGrams,
    context: &[f64],
    feature: &[f64],
    t: usize,
    spec: &PolicySpec,
    rng: &mut R,
) -> Result<Decision> {
    if t <= spec.burn_in {
        let greedy = greedy_action(&arms[0], &arms[1], feature)?;
        let action = match spec.burn_in_mode {
            BurnInMode::Alternating => Action::from_bool(t.is_multiple_of(2)),
            BurnInMode::Uniform => Action::from_bool(rng.random::<bool>()),
        };
        return Ok(Decision {
            action,
            greedy_action: greedy,
            forced_by_clipping: false,
            forced_by_burn_in: true,
        });
    }
    let proposed = match spec.algorithm {
        Algorithm::Ucb => select_ucb(arms, feature, t, spec)?,
        Algorithm::Ts => select_ts(arms, feature, spec, rng)?,
        Algorithm::Eg => select_eg(arms, feature, t, spec, rng)?,
    };
    let unchosen = grams.arm_gram(proposed.action.other(), t);
    let total = grams.total_gram(Some(context), t)?;
    clipping_guard(&unchosen, &total, proposed, t, spec)
}
