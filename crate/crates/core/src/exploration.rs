//! Probability of exploration: the online estimate κ̂ₜ(x) of
//! `Pr{aₜ ≠ π̂ₜ(xₜ)}`, and computable upper bounds on κₜ and on the tail
//! probabilities of the online ridge and mean estimators.

use crate::error::{DreamError, Result};
use crate::linalg::SymMatrix;
use crate::policy::Schedule;

pub const KAPPA_MIN: f64 = 1e-3;
pub const KAPPA_MAX: f64 = 0.5;

/// Ridge on the logistic curvature matrix; also the prior precision.
const CURVATURE_RIDGE: f64 = 1.0;
/// Floor on the per-step curvature `p(1 − p)` so saturated fits keep learning.
const CURVATURE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaKind {
    /// Online logistic regression on `(1, log t, x)`.
    Logistic,
    /// Online logistic regression on `(1, log t, |Δ̂|, |Δ̂|/(σ̂₀ + σ̂₁))` with
    /// `Δ̂ = μ̂ₜ₋₁(x, 1) − μ̂ₜ₋₁(x, 0)` and `σ̂ₐ` the prediction standard errors.
    LogisticGap,
    /// `εₜ / 2`, exact for ε-greedy.
    EgClosedForm,
    /// A fixed value regardless of time and context.
    Constant(f64),
}

impl KappaKind {
    pub fn name(&self) -> String {
        match self {
            KappaKind::Logistic => "logistic".into(),
            KappaKind::LogisticGap => "logistic-gap".into(),
            KappaKind::EgClosedForm => "eg".into(),
            KappaKind::Constant(c) => format!("const:{c}"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "logistic" => Some(KappaKind::Logistic),
            "logistic-gap" | "logistic_gap" => Some(KappaKind::LogisticGap),
            "eg" | "eg_closed_form" => Some(KappaKind::EgClosedForm),
            _ => s
                .strip_prefix("const:")
                .or_else(|| s.strip_prefix("constant:"))
                .and_then(|v| v.parse().ok())
                .map(KappaKind::Constant),
        }
    }
}

/// Sequential estimator of the exploration probability.
#[derive(Debug, Clone)]
pub struct ExplorationModel {
    kind: KappaKind,
    weights: Vec<f64>,
    /// Inverse of `ridge·I + Σ p(1 − p) ddᵀ` over the fitted designs.
    curvature_inv: SymMatrix,
    eg_schedule: Schedule,
    clamp: (f64, f64),
}

impl ExplorationModel {
    /// Logistic model over `(1, log t, z₁, …, z_k)` for `k` covariates;
    /// weights start at zero.
    pub fn logistic(covariates: usize) -> Self {
        Self::logistic_of(KappaKind::Logistic, covariates)
    }

    /// Logistic model on the raw and standardized estimated gap.
    pub fn logistic_gap() -> Self {
        Self::logistic_of(KappaKind::LogisticGap, 2)
    }

    fn logistic_of(kind: KappaKind, covariates: usize) -> Self {
        Self {
            kind,
            weights: vec![0.0; covariates + 2],
            curvature_inv: SymMatrix::scaled_identity(covariates + 2, 1.0 / CURVATURE_RIDGE),
            eg_schedule: Schedule::Constant(0.0),
            clamp: (KAPPA_MIN, KAPPA_MAX),
        }
    }

    pub fn eg_closed_form(eps: Schedule) -> Self {
        Self {
            kind: KappaKind::EgClosedForm,
            weights: Vec::new(),
            curvature_inv: SymMatrix::zeros(0),
            eg_schedule: eps,
            clamp: (KAPPA_MIN, KAPPA_MAX),
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            kind: KappaKind::Constant(value),
            weights: Vec::new(),
            curvature_inv: SymMatrix::zeros(0),
            eg_schedule: Schedule::Constant(0.0),
            clamp: (KAPPA_MIN, KAPPA_MAX),
        }
    }

    /// Builds the model for `kind`; the ε schedule is only used by
    /// [`KappaKind::EgClosedForm`].
    pub fn from_kind(kind: KappaKind, raw_dim: usize, eps: Schedule) -> Self {
        match kind {
            KappaKind::Logistic => Self::logistic(raw_dim.saturating_sub(1)),
            KappaKind::LogisticGap => Self::logistic_gap(),
            KappaKind::EgClosedForm => Self::eg_closed_form(eps),
            KappaKind::Constant(c) => Self::constant(c),
        }
    }

    pub fn with_clamp(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(DreamError::invalid(
                "kappa clamp",
                format!("need 0 < {lo} <= {hi} < 1"),
            ));
        }
        self.clamp = (lo, hi);
        Ok(self)
    }

    pub fn kind(&self) -> KappaKind {
        self.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn is_logistic(&self) -> bool {
        matches!(self.kind, KappaKind::Logistic | KappaKind::LogisticGap)
    }

    /// Covariates `z` entering the design `(1, log t, z)`. The context kind
    /// uses the context without its intercept; the gap kind uses `|Δ̂|` and
    /// `|Δ̂| / (σ̂₀ + σ̂₁)` from the frozen mean and standard-error estimates.
    /// Empty for the non-logistic kinds.
    pub fn covariates(&self, context: &[f64], mu_hat: [f64; 2], sd_hat: [f64; 2]) -> Vec<f64> {
        match self.kind {
            KappaKind::Logistic => context.iter().skip(1).copied().collect(),
            KappaKind::LogisticGap => {
                let gap = (mu_hat[1] - mu_hat[0]).abs();
                let scale = sd_hat[0] + sd_hat[1];
                vec![gap, if scale > 0.0 { gap / scale } else { 0.0 }]
            }
            _ => Vec::new(),
        }
    }

    fn design(t: usize, z: &[f64]) -> impl Iterator<Item = f64> + '_ {
        [1.0, (t.max(1) as f64).ln()]
            .into_iter()
            .chain(z.iter().copied())
    }

    fn logit(&self, t: usize, z: &[f64]) -> f64 {
        Self::design(t, z)
            .zip(&self.weights)
            .map(|(d, w)| d * w)
            .sum()
    }

    /// One online Newton step on the logistic log-loss with label
    /// `𝕀{not exploited}`: the curvature absorbs `p(1 − p) ddᵀ` by a rank-one
    /// inverse update, then `w ← w − (p − y) C⁻¹ d`. The step is invariant to
    /// rescaling of the covariates. No-op for the non-logistic kinds.
    pub fn fit_update(&mut self, t: usize, z: &[f64], exploited: bool) {
        if !self.is_logistic() {
            return;
        }
        debug_assert_eq!(z.len() + 2, self.weights.len());
        let design: Vec<f64> = Self::design(t, z).collect();
        if design.iter().any(|v| !v.is_finite()) {
            return;
        }
        let p = sigmoid(self.logit(t, z));
        let h = (p * (1.0 - p)).max(CURVATURE_FLOOR);
        let scaled: Vec<f64> = design.iter().map(|d| d * h.sqrt()).collect();
        if self
            .curvature_inv
            .sherman_morrison_in_place(&scaled)
            .is_err()
        {
            return;
        }
        let g = p - if exploited { 0.0 } else { 1.0 };
        let direction = self
            .curvature_inv
            .mul_vec(&design)
            .expect("curvature and design share the weight dimension");
        for (w, u) in self.weights.iter_mut().zip(direction) {
            *w -= g * u;
        }
    }

    /// κ̂ₜ for covariates `z`, clamped to `[κ_min, κ_max]`.
    pub fn predict(&self, t: usize, z: &[f64]) -> f64 {
        let raw = match self.kind {
            KappaKind::Logistic | KappaKind::LogisticGap => sigmoid(self.logit(t, z)),
            KappaKind::EgClosedForm => self.eg_schedule.at(t).clamp(0.0, 1.0) / 2.0,
            KappaKind::Constant(c) => c,
        };
        raw.clamp(self.clamp.0, self.clamp.1)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ── Bound calculators ───────────────────────────────────────────────────

/// Constants of the regularity conditions: context bound, design eigenvalue
/// floor, noise scale, coefficient norms and margin constants.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryParams {
    /// λ, a lower bound on `λ_min(E xxᵀ)`.
    pub lambda: f64,
    /// `L_x`, bound on `‖x‖_∞`.
    pub l_x: f64,
    pub d: usize,
    /// Sub-Gaussian noise parameter σ.
    pub sigma_sg: f64,
    /// `‖β(0)‖₂`, `‖β(1)‖₂`.
    pub beta_norms: [f64; 2],
    /// Margin exponent γ.
    pub gamma: f64,
    /// Margin constant M.
    pub margin_m: f64,
    pub margin_delta: f64,
    /// Bound U on `|μ(x, a)|`.
    pub u_bound: f64,
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("l_x", self.l_x),
            ("sigma", self.sigma_sg),
            ("gamma", self.gamma),
            ("M", self.margin_m),
            ("delta", self.margin_delta),
            ("U", self.u_bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DreamError::invalid(
                    "theory params",
                    format!("{name} must be positive, got {v}"),
                ));
            }
        }
        if self.d == 0 {
            return Err(DreamError::invalid("theory params", "d must be positive"));
        }
        if self
            .beta_norms
            .iter()
            .any(|b| !(*b >= 0.0 && b.is_finite()))
        {
            return Err(DreamError::invalid(
                "theory params",
                "beta norms must be non-negative",
            ));
        }
        Ok(())
    }

    fn d_f(&self) -> f64 {
        self.d as f64
    }

    /// `c_ξ` of the mean-estimator tail bound, or `None` when `ξ/2` does not
    /// exceed `√d L_x ‖β(a)‖₂` for some arm (the bound is then vacuous).
    pub fn c_xi(&self, xi: f64) -> Option<f64> {
        let d = self.d_f();
        let gaps = self.beta_norms.map(|b| xi / 2.0 - d.sqrt() * self.l_x * b);
        if gaps.iter().any(|g| *g <= 0.0) {
            return None;
        }
        let m = gaps[0].powi(2).min(gaps[1].powi(2));
        Some(self.lambda.powi(2) * m / (8.0 * d * d * self.sigma_sg.powi(2) * self.l_x.powi(4)))
    }
}

/// `Pr(‖β̂ₜ(a) − β(a)‖₁ > h) ≤ 2d exp{−t pₜ² λ² (h − √d‖β(a)‖₂)² / (8 d² σ² L_x²)}`,
/// capped at 1; returns 1 when `h ≤ √d‖β(a)‖₂`.
pub fn ridge_tail_bound(params: &TheoryParams, t: usize, p_t: f64, h: f64, arm: usize) -> f64 {
    let d = params.d_f();
    let excess = h - d.sqrt() * params.beta_norms[arm.min(1)];
    if excess <= 0.0 {
        return 1.0;
    }
    let exponent = t as f64 * p_t * p_t * params.lambda.powi(2) * excess * excess
        / (8.0 * d * d * params.sigma_sg.powi(2) * params.l_x.powi(2));
    (2.0 * d * (-exponent).exp()).min(1.0)
}

/// Uncapped `4d exp{−t pₜ² c_ξ}`; `None` when `c_ξ` is undefined.
pub fn mean_tail_bound_uncapped(params: &TheoryParams, t: usize, p_t: f64, xi: f64) -> Option<f64> {
    let c = params.c_xi(xi)?;
    Some(4.0 * params.d_f() * (-(t as f64) * p_t * p_t * c).exp())
}

/// `Pr{|μ̂ₜ(x,1) − μ̂ₜ(x,0) − Δₓ| > ξ} ≤ 4d exp{−t pₜ² c_ξ}`, capped at 1.
pub fn mean_tail_bound(params: &TheoryParams, t: usize, p_t: f64, xi: f64) -> Result<f64> {
    if !(xi > 0.0) {
        return Err(DreamError::invalid(
            "xi",
            format!("must be positive, got {xi}"),
        ));
    }
    Ok(mean_tail_bound_uncapped(params, t, p_t, xi).map_or(1.0, |b| b.min(1.0)))
}

/// Which algorithm's exploration bound to evaluate, with its tuning value at
/// time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundAlgorithm {
    Ucb { c_t: f64 },
    Ts { rho: f64 },
    Eg { epsilon_t: f64 },
}

/// Upper bound on κₜ(x) given the gap `Δₓ = μ(x,1) − μ(x,0)`, capped at 1.
///
/// UCB: `M (2 cₜ L_x / √((t−1) pₜ₋₁ λ) + ξ)^γ + 4d exp{−(t−1) pₜ₋₁² c_ξ}`.
/// TS: `exp(−(|Δ| − ξ)² (t−1) pₜ₋₁ λ / (4ρ² L_x²)) + 4d exp{−(t−1) pₜ₋₁² c_ξ}`.
/// EG: `εₜ / 2` exactly.
pub fn kappa_upper_bound(
    params: &TheoryParams,
    algorithm: BoundAlgorithm,
    t: usize,
    p_prev: f64,
    delta_x: f64,
    xi: f64,
) -> Result<f64> {
    if let BoundAlgorithm::Eg { epsilon_t } = algorithm {
        return Ok((epsilon_t / 2.0).min(1.0));
    }
    if !(xi > 0.0 && xi < delta_x.abs() / 2.0) {
        return Err(DreamError::invalid(
            "xi",
            format!("need 0 < xi < |delta|/2, got xi = {xi}, delta = {delta_x}"),
        ));
    }
    let n = t.saturating_sub(1) as f64;
    let tail =
        mean_tail_bound_uncapped(params, t.saturating_sub(1), p_prev, xi).unwrap_or(f64::INFINITY);
    let head = match algorithm {
        BoundAlgorithm::Ucb { c_t } => {
            let width = 2.0 * c_t * params.l_x / (n * p_prev * params.lambda).sqrt();
            params.margin_m * (width + xi).powf(params.gamma)
        }
        BoundAlgorithm::Ts { rho } => {
            let gap = delta_x.abs() - xi;
            (-(gap * gap) * n * p_prev * params.lambda / (4.0 * rho * rho * params.l_x.powi(2)))
                .exp()
        }
        BoundAlgorithm::Eg { .. } => unreachable!(),
    };
    let total = head + tail;
    Ok(if total.is_nan() { 1.0 } else { total.min(1.0) })
}
