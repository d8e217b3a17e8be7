//! Per-action online ridge regression.
//!
//! Each arm keeps the regularized Gram matrix `DᵀD + ωI`, its inverse
//! (maintained by rank-one updates), the cross product `DᵀR`, and the full
//! observation log so residual variances can be recomputed against any
//! coefficient vector.

use crate::error::{DreamError, Result};
use crate::linalg::{dot, SymMatrix};

/// Number of rank-one updates between full re-inversions of the Gram matrix.
pub const REFACTOR_INTERVAL: usize = 512;

/// Residual variance reported while an arm has no more pulls than features.
pub const RESIDUAL_VARIANCE_FALLBACK: f64 = 1.0;

/// Maps a raw context (leading intercept included) to regression features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// Use the raw context as-is: a linear model in the raw coordinates.
    Identity,
    /// `(1, cos x₁, …, cos x_k)` for raw context `(1, x₁, …, x_k)`.
    Cosine,
}

impl FeatureMap {
    pub fn apply(&self, context: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Identity => context.to_vec(),
            FeatureMap::Cosine => std::iter::once(1.0)
                .chain(context.iter().skip(1).map(|v| v.cos()))
                .collect(),
        }
    }

    /// Output dimension for a raw context of dimension `raw_dim`.
    pub fn output_dim(&self, raw_dim: usize) -> usize {
        raw_dim
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureMap::Identity => "linear",
            FeatureMap::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" | "identity" | "raw" => Some(FeatureMap::Identity),
            "cosine" | "cos" => Some(FeatureMap::Cosine),
            _ => None,
        }
    }
}

/// Ridge sufficient statistics for one action.
#[derive(Debug, Clone)]
pub struct ArmState {
    gram_reg: SymMatrix,
    gram_reg_inv: SymMatrix,
    xty: Vec<f64>,
    omega: f64,
    observations: Vec<(Vec<f64>, f64)>,
    updates_since_refactor: usize,
}

impl ArmState {
    pub fn new(dim: usize, omega: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(DreamError::invalid(
                "omega",
                format!("must be positive, got {omega}"),
            ));
        }
        if dim == 0 {
            return Err(DreamError::invalid("dim", "must be at least 1"));
        }
        Ok(Self {
            gram_reg: SymMatrix::scaled_identity(dim, omega),
            gram_reg_inv: SymMatrix::scaled_identity(dim, 1.0 / omega),
            xty: vec![0.0; dim],
            omega,
            observations: Vec::new(),
            updates_since_refactor: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn pull_count(&self) -> usize {
        self.observations.len()
    }

    pub fn gram_reg(&self) -> &SymMatrix {
        &self.gram_reg
    }

    pub fn gram_reg_inv(&self) -> &SymMatrix {
        &self.gram_reg_inv
    }

    pub fn xty(&self) -> &[f64] {
        &self.xty
    }

    pub fn observations(&self) -> &[(Vec<f64>, f64)] {
        &self.observations
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(DreamError::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// Absorbs one `(feature, reward)` observation.
    pub fn update(&mut self, feature: &[f64], reward: f64) -> Result<()> {
        self.check_dim(feature.len())?;
        if !reward.is_finite() {
            return Err(DreamError::NonFinite("reward"));
        }
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(DreamError::NonFinite("feature"));
        }
        self.gram_reg.add_outer_in_place(feature, 1.0)?;
        for (acc, x) in self.xty.iter_mut().zip(feature) {
            *acc += x * reward;
        }
        self.observations.push((feature.to_vec(), reward));
        self.updates_since_refactor += 1;
        if self.updates_since_refactor >= REFACTOR_INTERVAL {
            self.refactor()
        } else {
            match self.gram_reg_inv.sherman_morrison_in_place(feature) {
                Ok(()) => Ok(()),
                Err(DreamError::NotPositiveDefinite(_)) => self.refactor(),
                Err(e) => Err(e),
            }
        }
    }

    /// Recomputes the inverse from the Gram matrix to shed accumulated drift.
    pub fn refactor(&mut self) -> Result<()> {
        self.gram_reg_inv = self.gram_reg.inverse_spd()?;
        self.updates_since_refactor = 0;
        Ok(())
    }

    /// Ridge coefficients `(DᵀD + ωI)⁻¹ DᵀR`.
    pub fn coefficients(&self) -> Vec<f64> {
        self.gram_reg_inv
            .mul_vec(&self.xty)
            .expect("inverse and cross product share the arm dimension")
    }

    pub fn predict_mean(&self, feature: &[f64]) -> Result<f64> {
        self.check_dim(feature.len())?;
        Ok(dot(feature, &self.coefficients()))
    }

    /// `√(fᵀ (DᵀD + ωI)⁻¹ f)`. A negative quadratic form means the inverse has
    /// drifted; the arm is refactorized and the form recomputed once.
    pub fn predict_sd(&mut self, feature: &[f64]) -> Result<f64> {
        let q = self.gram_reg_inv.quadratic_form(feature)?;
        if q >= 0.0 {
            return Ok(q.sqrt());
        }
        self.refactor()?;
        let q = self.gram_reg_inv.quadratic_form(feature)?;
        if q < 0.0 {
            return Err(DreamError::NotPositiveDefinite("posterior variance"));
        }
        Ok(q.sqrt())
    }

    /// `{N(a) − d}⁻¹ Σ (fᵢᵀβ − rᵢ)²` over this arm's observations, or
    /// [`RESIDUAL_VARIANCE_FALLBACK`] when `N(a) ≤ d`.
    pub fn residual_variance(&self, coefficients: &[f64]) -> f64 {
        self.residual_variance_checked(coefficients).0
    }

    /// Same as [`ArmState::residual_variance`], also reporting whether the
    /// fallback constant was used.
    pub fn residual_variance_checked(&self, coefficients: &[f64]) -> (f64, bool) {
        let n = self.pull_count();
        let d = self.dim();
        if n <= d {
            return (RESIDUAL_VARIANCE_FALLBACK, true);
        }
        let ss: f64 = self
            .observations
            .iter()
            .map(|(f, r)| {
                let e = dot(f, coefficients) - r;
                e * e
            })
            .sum();
        (ss / (n - d) as f64, false)
    }
}

/// A pair of arm models behind a feature map: the outcome regression
/// `μ̂(x, a) = f(x)ᵀβ̂(a)` for both actions.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    map: FeatureMap,
    arms: [ArmState; 2],
}

impl OutcomeModel {
    pub fn new(map: FeatureMap, raw_dim: usize, omega: f64) -> Result<Self> {
        let dim = map.output_dim(raw_dim);
        Ok(Self {
            map,
            arms: [ArmState::new(dim, omega)?, ArmState::new(dim, omega)?],
        })
    }

    pub fn from_arms(map: FeatureMap, arms: [ArmState; 2]) -> Self {
        Self { map, arms }
    }

    pub fn map(&self) -> FeatureMap {
        self.map
    }

    pub fn arms(&self) -> &[ArmState; 2] {
        &self.arms
    }

    pub fn arms_mut(&mut self) -> &mut [ArmState; 2] {
        &mut self.arms
    }

    pub fn arm(&self, action: usize) -> &ArmState {
        &self.arms[action]
    }

    /// `[μ̂(x, 0), μ̂(x, 1)]` for a raw context.
    pub fn predict_both(&self, context: &[f64]) -> Result<[f64; 2]> {
        let f = self.map.apply(context);
        Ok([
            self.arms[0].predict_mean(&f)?,
            self.arms[1].predict_mean(&f)?,
        ])
    }

    /// Prediction standard errors `√(fᵀG⁻¹f)` of both arms, floored at zero.
    pub fn predict_sd_both(&self, context: &[f64]) -> Result<[f64; 2]> {
        let f = self.map.apply(context);
        let q0 = self.arms[0].gram_reg_inv().quadratic_form(&f)?;
        let q1 = self.arms[1].gram_reg_inv().quadratic_form(&f)?;
        Ok([q0.max(0.0).sqrt(), q1.max(0.0).sqrt()])
    }

    /// Greedy action index (ties to 0) for a raw context.
    pub fn greedy(&self, context: &[f64]) -> Result<usize> {
        let [m0, m1] = self.predict_both(context)?;
        Ok(usize::from(m1 > m0))
    }

    pub fn update(&mut self, context: &[f64], action: usize, reward: f64) -> Result<()> {
        let f = self.map.apply(context);
        self.arms[action].update(&f, reward)
    }

    /// Final-coefficient residual variances of both arms and whether either
    /// fell back to [`RESIDUAL_VARIANCE_FALLBACK`].
    pub fn residual_variances(&self) -> ([f64; 2], bool) {
        let (v0, f0) = self.arms[0].residual_variance_checked(&self.arms[0].coefficients());
        let (v1, f1) = self.arms[1].residual_variance_checked(&self.arms[1].coefficients());
        ([v0, v1], f0 || f1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_observation_coefficients() {
        let mut s = ArmState::new(2, 1.0).unwrap();
        assert_eq!(s.coefficients(), vec![0.0, 0.0]);
        s.update(&[1.0, 0.0], 2.0).unwrap();
        let b = s.coefficients();
        assert!((b[0] - 1.0).abs() < 1e-15 && b[1].abs() < 1e-15);
    }

    #[test]
    fn repeated_observation_coefficients() {
        let mut s = ArmState::new(1, 1.0).unwrap();
        s.update(&[1.0], 3.0).unwrap();
        s.update(&[1.0], 3.0).unwrap();
        assert!((s.coefficients()[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn update_rejects_bad_input() {
        let mut s = ArmState::new(2, 1.0).unwrap();
        assert!(matches!(
            s.update(&[1.0, 0.0], f64::NAN),
            Err(DreamError::NonFinite(_))
        ));
        assert!(matches!(
            s.update(&[1.0, f64::INFINITY], 1.0),
            Err(DreamError::NonFinite(_))
        ));
        assert!(matches!(
            s.update(&[1.0], 1.0),
            Err(DreamError::DimensionMismatch { .. })
        ));
        assert_eq!(s.pull_count(), 0);
        assert!(ArmState::new(2, 0.0).is_err());
    }

    #[test]
    fn predict_mean_examples() {
        let s = ArmState::new(2, 1.0).unwrap();
        assert_eq!(s.predict_mean(&[1.0, 5.0]).unwrap(), 0.0);

        // β̂ = (1, 0) after one observation of (1, 0) with reward 2.
        let mut s = ArmState::new(2, 1.0).unwrap();
        s.update(&[1.0, 0.0], 2.0).unwrap();
        assert!((s.predict_mean(&[1.0, 5.0]).unwrap() - 1.0).abs() < 1e-15);

        let beta = [2.0, -1.0, 1.5];
        assert!((dot(&[1.0, 1.0, 1.0], &beta) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn predict_sd_examples() {
        let mut s = ArmState::new(2, 1.0).unwrap();
        assert!((s.predict_sd(&[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        let mut s4 = ArmState::new(2, 4.0).unwrap();
        assert!((s4.predict_sd(&[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        s.update(&[1.0, 0.0], 0.3).unwrap();
        assert!((s.predict_sd(&[1.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let q = s.gram_reg_inv().quadratic_form(&[0.3, -2.0]).unwrap();
        let sd = s.predict_sd(&[0.3, -2.0]).unwrap();
        assert!((sd * sd - q).abs() <= 4.0 * f64::EPSILON * q);
    }

    #[test]
    fn residual_variance_examples() {
        let mut s = ArmState::new(1, 1.0).unwrap();
        s.update(&[1.0], 1.0).unwrap();
        // one pull, d = 1: fallback
        assert_eq!(
            s.residual_variance_checked(&[2.0]),
            (RESIDUAL_VARIANCE_FALLBACK, true)
        );
        s.update(&[1.0], 3.0).unwrap();
        assert!((s.residual_variance(&[2.0]) - 2.0).abs() < 1e-15);

        let mut z = ArmState::new(2, 1.0).unwrap();
        for x in [0.0, 1.0, 2.0, 3.0] {
            z.update(&[1.0, x], 1.0 + 2.0 * x).unwrap();
        }
        assert_eq!(z.residual_variance(&[1.0, 2.0]), 0.0);
    }

    #[test]
    fn refactor_keeps_inverse_consistent() {
        let mut s = ArmState::new(3, 1.0).unwrap();
        for i in 0..(REFACTOR_INTERVAL + 37) {
            let t = i as f64 * 0.01;
            s.update(&[1.0, t.cos(), (3.0 * t).sin()], t.sin()).unwrap();
        }
        let direct = s.gram_reg().inverse_spd().unwrap();
        let diff: f64 = direct
            .as_slice()
            .iter()
            .zip(s.gram_reg_inv().as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff / direct.frobenius_norm() < 1e-10);
    }

    #[test]
    fn feature_maps() {
        let x = [1.0, 0.0, std::f64::consts::PI];
        assert_eq!(FeatureMap::Identity.apply(&x), x.to_vec());
        let f = FeatureMap::Cosine.apply(&x);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], 1.0);
        assert!((f[2] + 1.0).abs() < 1e-15);
    }
}
