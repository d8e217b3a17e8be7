//! Data-generating processes and their oracle quantities.
//!
//! Contexts always carry a leading intercept: a synthetic context is
//! `(1, x₁, x₂)` and a dataset context is `(1, features…)`.

use std::f64::consts::TAU;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DreamError, Result};
use crate::policy::Action;

/// Context, mean rewards of both actions, and the noise realised for each.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraw {
    pub context: Vec<f64>,
    pub means: [f64; 2],
    pub noise: [f64; 2],
}

impl StepDraw {
    pub fn reward(&self, action: Action) -> f64 {
        let i = action.index();
        self.means[i] + self.noise[i]
    }
}

/// Two-armed bandit with `μ(x, a) = f(x)ᵀβ(a)`, `f(x) = (1, cos x₁, cos x₂)`
/// and contexts uniform on `[0, 2π]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnv {
    pub beta: [[f64; 3]; 2],
    pub noise_sd: [f64; 2],
}

impl Default for SyntheticEnv {
    fn default() -> Self {
        Self {
            beta: [[2.0, -1.0, 1.5], [1.0, 4.0, -1.5]],
            noise_sd: [0.1, 0.1],
        }
    }
}

impl SyntheticEnv {
    pub fn with_noise(noise_sd: f64) -> Self {
        Self {
            noise_sd: [noise_sd; 2],
            ..Self::default()
        }
    }

    /// Raw context dimension including the intercept.
    pub const RAW_DIM: usize = 3;

    fn mean_from_cos(&self, c1: f64, c2: f64, a: usize) -> f64 {
        let b = &self.beta[a];
        b[0] + b[1] * c1 + b[2] * c2
    }

    pub fn mean(&self, context: &[f64], action: Action) -> Result<f64> {
        if context.len() != Self::RAW_DIM {
            return Err(DreamError::DimensionMismatch {
                expected: Self::RAW_DIM,
                got: context.len(),
            });
        }
        Ok(self.mean_from_cos(context[1].cos(), context[2].cos(), action.index()))
    }

    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> StepDraw {
        let x1 = rng.random::<f64>() * TAU;
        let x2 = rng.random::<f64>() * TAU;
        let (c1, c2) = (x1.cos(), x2.cos());
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        StepDraw {
            context: vec![1.0, x1, x2],
            means: [self.mean_from_cos(c1, c2, 0), self.mean_from_cos(c1, c2, 1)],
            noise: [self.noise_sd[0] * z0, self.noise_sd[1] * z1],
        }
    }

    /// `𝕀{μ(x, 1) > μ(x, 0)}`; ties go to action 0.
    pub fn oracle_policy(&self, context: &[f64]) -> Result<Action> {
        let m0 = self.mean(context, Action::Zero)?;
        let m1 = self.mean(context, Action::One)?;
        Ok(Action::from_bool(m1 > m0))
    }

    /// Coefficients `w` such that the oracle policy is `𝕀{wᵀf(x) > 0}`.
    pub fn oracle_threshold(&self) -> Vec<f64> {
        (0..3).map(|j| self.beta[1][j] - self.beta[0][j]).collect()
    }

    /// Midpoint rule on a `grid_n × grid_n` grid over `[0, 2π]²`, averaging
    /// `g(cos x₁, cos x₂)`.
    fn integrate<G: Fn(f64, f64) -> f64>(grid_n: usize, g: G) -> Result<f64> {
        if grid_n < 100 {
            return Err(DreamError::invalid(
                "grid_n",
                format!("must be at least 100, got {grid_n}"),
            ));
        }
        let h = TAU / grid_n as f64;
        let cos: Vec<f64> = (0..grid_n).map(|i| ((i as f64 + 0.5) * h).cos()).collect();
        let mut total = 0.0;
        for &c1 in &cos {
            let mut row = 0.0;
            for &c2 in &cos {
                row += g(c1, c2);
            }
            total += row;
        }
        Ok(total / (grid_n * grid_n) as f64)
    }

    /// `V* = E[max_a μ(x, a)]`.
    pub fn oracle_value(&self, grid_n: usize) -> Result<f64> {
        Self::integrate(grid_n, |c1, c2| {
            self.mean_from_cos(c1, c2, 0)
                .max(self.mean_from_cos(c1, c2, 1))
        })
    }

    /// `E[μ(x, a)]` for a fixed action.
    pub fn oracle_action_value(&self, action: Action, grid_n: usize) -> Result<f64> {
        Self::integrate(grid_n, |c1, c2| self.mean_from_cos(c1, c2, action.index()))
    }

    /// `∫ [π*σ₁² + (1−π*)σ₀²]/(1 − κ(x)) dx + Var[μ(x, π*(x))]`, with
    /// `kappa_inf` given `(cos x₁, cos x₂)`.
    pub fn oracle_sigma_dr<K: Fn(f64, f64) -> f64>(
        &self,
        kappa_inf: K,
        grid_n: usize,
    ) -> Result<f64> {
        let noise = Self::integrate(grid_n, |c1, c2| {
            let k = kappa_inf(c1, c2);
            let one = self.mean_from_cos(c1, c2, 1) > self.mean_from_cos(c1, c2, 0);
            let s = if one {
                self.noise_sd[1]
            } else {
                self.noise_sd[0]
            };
            s * s / (1.0 - k)
        })?;
        let v = self.oracle_value(grid_n)?;
        let second = Self::integrate(grid_n, |c1, c2| {
            let m = self
                .mean_from_cos(c1, c2, 0)
                .max(self.mean_from_cos(c1, c2, 1));
            (m - v) * (m - v)
        })?;
        Ok(noise + second)
    }
}

/// Labelled rows turned into a two-armed bandit with reward
/// `N(𝕀{a = label}, noise_sd²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEnv {
    /// Feature vectors with the intercept already prepended.
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub noise_sd: f64,
}

pub const DATASET_NOISE_SD: f64 = 0.5;

impl DatasetEnv {
    /// Builds from raw feature rows, prepending the intercept.
    pub fn from_rows(rows: Vec<(Vec<f64>, u8)>, noise_sd: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(DreamError::EmptyRecords);
        }
        let width = rows[0].0.len();
        let mut feats = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for (i, (x, y)) in rows.into_iter().enumerate() {
            if x.len() != width {
                return Err(DreamError::Dataset {
                    line: i + 1,
                    message: format!("expected {width} features, found {}", x.len()),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(DreamError::Dataset {
                    line: i + 1,
                    message: "non-finite feature".into(),
                });
            }
            if y > 1 {
                return Err(DreamError::Dataset {
                    line: i + 1,
                    message: format!("label must be 0 or 1, found {y}"),
                });
            }
            feats.push(std::iter::once(1.0).chain(x).collect());
            labels.push(y);
        }
        Ok(Self {
            rows: feats,
            labels,
            noise_sd,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Context dimension including the intercept.
    pub fn raw_dim(&self) -> usize {
        self.rows[0].len()
    }
}

/// Reads `features…,label` rows. A first line with any non-numeric field is
/// treated as a header. Line numbers in errors are 1-based file lines.
pub fn load_dataset(path: &Path) -> Result<DatasetEnv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| DreamError::Dataset {
            line,
            message: e.to_string(),
        })?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if line == 1 => continue,
            Err(e) => {
                return Err(DreamError::Dataset {
                    line,
                    message: format!("non-numeric field: {e}"),
                })
            }
        };
        if values.len() < 2 {
            return Err(DreamError::Dataset {
                line,
                message: "need at least one feature and a label".into(),
            });
        }
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(DreamError::Dataset {
                line,
                message: format!(
                    "expected {} columns, found {}",
                    width.unwrap(),
                    values.len()
                ),
            });
        }
        let (label, features) = values.split_last().unwrap();
        let label = match *label {
            0.0 => 0u8,
            1.0 => 1u8,
            v => {
                return Err(DreamError::Dataset {
                    line,
                    message: format!("label must be 0 or 1, found {v}"),
                })
            }
        };
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DreamError::Dataset {
                line,
                message: "non-finite feature".into(),
            });
        }
        rows.push((features.to_vec(), label));
    }
    if rows.is_empty() {
        return Err(DreamError::Dataset {
            line: 0,
            message: "no data rows".into(),
        });
    }
    DatasetEnv::from_rows(rows, DATASET_NOISE_SD)
}

/// Rows with `n_features` coordinates uniform on `[0, 10]` and label
/// `𝕀{x₁ + x₂ > 10}`, flipped with probability `label_noise`.
pub fn generate_sea_like<R: Rng + ?Sized>(
    n: usize,
    n_features: usize,
    label_noise: f64,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, u8)>> {
    if n_features < 2 {
        return Err(DreamError::invalid("n_features", "must be at least 2"));
    }
    if !(0.0..=1.0).contains(&label_noise) {
        return Err(DreamError::invalid("label_noise", "must lie in [0, 1]"));
    }
    Ok((0..n)
        .map(|_| {
            let x: Vec<f64> = (0..n_features)
                .map(|_| rng.random::<f64>() * 10.0)
                .collect();
            let clean = x[0] + x[1] > 10.0;
            let flip = rng.random::<f64>() < label_noise;
            (x, u8::from(clean != flip))
        })
        .collect())
}

/// Writes rows as `x1,…,xk,label` with a header line.
pub fn write_dataset_csv<W: std::io::Write>(w: W, rows: &[(Vec<f64>, u8)]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    if let Some((x, _)) = rows.first() {
        let mut header: Vec<String> = (1..=x.len()).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        wtr.write_record(&header)?;
    }
    for (x, y) in rows {
        let mut fields: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        fields.push(y.to_string());
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Environment selected by an experiment. Dataset rows are shared read-only.
#[derive(Debug, Clone)]
pub enum Environment {
    Synthetic(SyntheticEnv),
    Dataset(Arc<DatasetEnv>),
}

impl Environment {
    pub fn raw_dim(&self) -> usize {
        match self {
            Environment::Synthetic(_) => SyntheticEnv::RAW_DIM,
            Environment::Dataset(d) => d.raw_dim(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Environment::Synthetic(_) => "synthetic",
            Environment::Dataset(_) => "dataset",
        }
    }

    /// Oracle `μ(x, a)`; unavailable for datasets.
    pub fn true_mean(&self, context: &[f64], action: Action) -> Result<f64> {
        match self {
            Environment::Synthetic(s) => s.mean(context, action),
            Environment::Dataset(_) => Err(DreamError::OracleUnavailable),
        }
    }

    pub fn has_oracle(&self) -> bool {
        matches!(self, Environment::Synthetic(_))
    }

    /// Value of the optimal policy: quadrature for the synthetic model, 1 for
    /// datasets since the label-matching action has mean reward 1.
    pub fn optimal_value(&self, grid_n: usize) -> Result<f64> {
        match self {
            Environment::Synthetic(s) => s.oracle_value(grid_n),
            Environment::Dataset(_) => Ok(1.0),
        }
    }

    /// Per-trajectory sampling state.
    pub fn session(&self) -> EnvSession<'_> {
        let remaining = match self {
            Environment::Synthetic(_) => Vec::new(),
            Environment::Dataset(d) => (0..d.len()).collect(),
        };
        EnvSession {
            env: self,
            remaining,
            draws: 0,
        }
    }
}

/// Sampling state for one trajectory.
#[derive(Debug, Clone)]
pub struct EnvSession<'a> {
    env: &'a Environment,
    remaining: Vec<usize>,
    draws: usize,
}

impl EnvSession<'_> {
    pub fn draws(&self) -> usize {
        self.draws
    }

    /// Draws the next context; dataset rows are drawn without replacement.
    pub fn sample_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<StepDraw> {
        let draw = match self.env {
            Environment::Synthetic(s) => s.sample_step(rng),
            Environment::Dataset(d) => {
                if self.remaining.is_empty() {
                    return Err(DreamError::DatasetExhausted(self.draws));
                }
                let k = rng.random_range(0..self.remaining.len());
                let row = self.remaining.swap_remove(k);
                let y = d.labels[row];
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                StepDraw {
                    context: d.rows[row].clone(),
                    means: [f64::from(y == 0), f64::from(y == 1)],
                    noise: [d.noise_sd * z0, d.noise_sd * z1],
                }
            }
        };
        self.draws += 1;
        Ok(draw)
    }
}
