//! Mixing-coefficient trajectories {λ_t}: Beta(α,α) marginals chained through
//! a Markov process whose temporal correlation is set by ρ, plus the core
//! convex-mix operation.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeqMixError};
use crate::numkernel::{sample_beta, Rng};

const MEAN_CLAMP: f64 = 1e-6;
const VAR_CLAMP_FRAC: f64 = 0.99;

/// Parameters of the λ-process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaConfig {
    /// Beta shape α of the marginals.
    pub alpha: f64,
    /// Temporal dependency ρ ∈ [0,1]. ρ=0 freezes the trajectory at λ_1;
    /// ρ=1 refreshes every step with the full marginal variance.
    pub rho: f64,
    /// Trajectory length T.
    pub horizon: usize,
}

impl LambdaConfig {
    pub fn new(alpha: f64, rho: f64, horizon: usize) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(SeqMixError::Param(format!("alpha must be positive, got {alpha}")));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(SeqMixError::Param(format!("rho must be in [0,1], got {rho}")));
        }
        if horizon == 0 {
            return Err(SeqMixError::Param("horizon must be at least 1".into()));
        }
        Ok(LambdaConfig { alpha, rho, horizon })
    }

    /// Var of the Beta(α,α) marginal: 1/(4(2α+1)).
    pub fn marginal_variance(&self) -> f64 {
        1.0 / (4.0 * (2.0 * self.alpha + 1.0))
    }
}

/// A realized trajectory λ_1..λ_T together with its generating config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaTrajectory {
    pub values: Vec<f64>,
    pub config: LambdaConfig,
}

impl LambdaTrajectory {
    /// Constant trajectory, mainly a test hook (λ≡1 reduces every mixup step
    /// to standard training).
    pub fn constant(value: f64, horizon: usize) -> Self {
        LambdaTrajectory {
            values: vec![value; horizon],
            config: LambdaConfig { alpha: 1.0, rho: 0.0, horizon },
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// λz + (1−λ)z′, elementwise.
pub fn mix(z: &[f64], z_prime: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if z.len() != z_prime.len() {
        return Err(SeqMixError::Shape(format!("mix of lengths {} and {}", z.len(), z_prime.len())));
    }
    Ok(z.iter().zip(z_prime).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect())
}

/// In-place variant used in inner loops.
pub fn mix_into(out: &mut [f64], z: &[f64], z_prime: &[f64], lambda: f64) {
    for ((o, a), b) in out.iter_mut().zip(z).zip(z_prime) {
        *o = lambda * a + (1.0 - lambda) * b;
    }
}

/// Invert Beta moments: find (α, β) with the given mean and variance.
///
/// ν = m(1−m)/v − 1, α = mν, β = (1−m)ν. Exact inverse: plugging the result
/// back into the closed-form Beta moments reproduces the inputs.
pub fn beta_moment_match(mean: f64, variance: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0 && mean < 1.0) {
        return Err(SeqMixError::Param(format!("mean must be in (0,1), got {mean}")));
    }
    if !(variance > 0.0) {
        return Err(SeqMixError::Param(format!("variance must be positive, got {variance}")));
    }
    let bound = mean * (1.0 - mean);
    if variance >= bound {
        return Err(SeqMixError::Feasibility(format!(
            "variance {variance} >= mean(1-mean) = {bound}; clamp before matching"
        )));
    }
    let nu = bound / variance - 1.0;
    Ok((mean * nu, (1.0 - mean) * nu))
}

/// Draw a trajectory: λ_1 ~ Beta(α,α), then
/// λ_t | λ_{t−1} ~ Beta(α_t, β_t) with conditional mean ρ·E[λ_1] + (1−ρ)·λ_{t−1}
/// and conditional variance ρ²·Var(λ_1). ρ=0 copies λ_1 forward exactly.
pub fn sample_trajectory(cfg: &LambdaConfig, rng: &mut Rng) -> Result<LambdaTrajectory> {
    let mut values = Vec::with_capacity(cfg.horizon);
    let first = sample_beta(cfg.alpha, cfg.alpha, rng)?;
    values.push(first);
    if cfg.rho == 0.0 {
        // zero conditional variance forces constancy; skip the degenerate draws
        values.resize(cfg.horizon, first);
        return Ok(LambdaTrajectory { values, config: *cfg });
    }
    let target_var = cfg.rho * cfg.rho * cfg.marginal_variance();
    for _ in 1..cfg.horizon {
        let prev = *values.last().unwrap();
        let mean =
            (cfg.rho * 0.5 + (1.0 - cfg.rho) * prev).clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP);
        let var = target_var.min(VAR_CLAMP_FRAC * mean * (1.0 - mean));
        let (a, b) = beta_moment_match(mean, var)?;
        values.push(sample_beta(a, b, rng)?);
    }
    Ok(LambdaTrajectory { values, config: *cfg })
}

/// Arithmetic mean λ̄ of the trajectory, the sequence-classification target
/// coefficient.
pub fn empirical_mean(traj: &LambdaTrajectory) -> f64 {
    traj.values.iter().sum::<f64>() / traj.values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_endpoints_and_linearity() {
        assert_eq!(mix(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(mix(&[1.0, 0.0], &[0.0, 1.0], 0.0).unwrap(), vec![0.0, 1.0]);
        assert_eq!(mix(&[2.0, 4.0], &[0.0, 0.0], 0.25).unwrap(), vec![0.5, 1.0]);
    }

    #[test]
    fn mix_dimension_mismatch() {
        assert!(mix(&[1.0], &[1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn moment_match_uniform() {
        let (a, b) = beta_moment_match(0.5, 1.0 / 12.0).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moment_match_beta22() {
        let (a, b) = beta_moment_match(0.5, 1.0 / 20.0).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn moment_match_infeasible() {
        assert!(matches!(beta_moment_match(0.3, 0.25), Err(SeqMixError::Feasibility(_))));
    }

    #[test]
    fn moment_match_round_trips() {
        for (m, v) in [(0.2, 0.01), (0.7, 0.05), (0.5, 0.2), (0.99, 0.001)] {
            let (a, b) = beta_moment_match(m, v).unwrap();
            let mean = a / (a + b);
            let var = a * b / ((a + b) * (a + b) * (a + b + 1.0));
            assert!((mean - m).abs() < 1e-12);
            assert!((var - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rho_zero_is_constant() {
        let cfg = LambdaConfig::new(0.5, 0.0, 16).unwrap();
        let mut rng = Rng::new(5);
        let traj = sample_trajectory(&cfg, &mut rng).unwrap();
        assert!(traj.values.iter().all(|v| *v == traj.values[0]));
        assert!((empirical_mean(&traj) - traj.values[0]).abs() < 1e-15);
    }

    #[test]
    fn horizon_one_is_single_marginal_draw() {
        let cfg = LambdaConfig::new(2.0, 0.7, 1).unwrap();
        let mut rng = Rng::new(6);
        let traj = sample_trajectory(&cfg, &mut rng).unwrap();
        assert_eq!(traj.len(), 1);
    }

    #[test]
    fn rho_one_marginal_matches_beta() {
        // with rho = 1 the conditional moments equal the marginal moments, so
        // lambda_2 should look Beta(alpha, alpha) across trajectories
        let cfg = LambdaConfig::new(0.5, 1.0, 2).unwrap();
        let mut rng = Rng::new(7);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let t = sample_trajectory(&cfg, &mut rng).unwrap();
            let v = t.values[1];
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!((var - 0.125).abs() < 0.005, "var {var}");
    }

    #[test]
    fn trajectories_stay_in_unit_interval() {
        let mut rng = Rng::new(8);
        for alpha in [0.1, 0.2, 0.5, 1.0, 2.0] {
            for rho in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let cfg = LambdaConfig::new(alpha, rho, 32).unwrap();
                for _ in 0..20 {
                    let t = sample_trajectory(&cfg, &mut rng).unwrap();
                    assert!(t.values.iter().all(|v| (0.0..=1.0).contains(v)));
                }
            }
        }
    }

    #[test]
    fn empirical_mean_simple() {
        let t = LambdaTrajectory::constant(0.0, 3);
        let t = LambdaTrajectory { values: vec![0.2, 0.4, 0.6], ..t };
        assert!((empirical_mean(&t) - 0.4).abs() < 1e-15);
    }
}
