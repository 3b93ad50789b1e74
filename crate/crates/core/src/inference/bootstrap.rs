use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::series::MartingaleSeries;
use crate::cox::fit_cox;
use crate::data::{Arm, SurvivalRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::estimands::EstimandSpec;
use crate::imputation::{impute, SensitivityConfig};
use crate::inference::mi_estimate;
use crate::rng;

/// Multiplier distribution; all have mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightDist {
    Normal,
    /// Two-point distribution with third moment 1.
    Mammen,
    Rademacher,
}

impl WeightDist {
    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            WeightDist::Normal => rng.sample(StandardNormal),
            WeightDist::Mammen => {
                let s5 = 5f64.sqrt();
                if rng.random::<f64>() < (s5 + 1.0) / (2.0 * s5) {
                    (1.0 - s5) / 2.0
                } else {
                    (1.0 + s5) / 2.0
                }
            }
            WeightDist::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WildBootstrap {
    /// Sample variance of the replicates, on the scale of the estimator.
    pub variance: f64,
    pub replicates: Vec<f64>,
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Replicates `W* = n^{-1/2} Σ_k ξ̂_k u_k` with fresh multipliers each time.
pub fn wild_bootstrap(series: &MartingaleSeries, b: usize, dist: WeightDist, seed: u64) -> Result<WildBootstrap> {
    Ok(wild_bootstrap_many(&[series], b, dist, seed)?.remove(0))
}

/// Bootstrap several series of equal length with shared multipliers.
pub fn wild_bootstrap_many(
    series: &[&MartingaleSeries],
    b: usize,
    dist: WeightDist,
    seed: u64,
) -> Result<Vec<WildBootstrap>> {
    if b < 2 {
        return Err(Error::InvalidConfig(format!("B must be at least 2, got {b}")));
    }
    let len = series.first().map_or(0, |s| s.len());
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::InvalidConfig("series lengths differ".into()));
    }
    let reps: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut r = rng::stream(seed, rng::domain::WILD_BOOTSTRAP, rep as u64, 0);
            let mut sums = vec![0.0; series.len()];
            for k in 0..len {
                let u = dist.sample(&mut r);
                for (acc, s) in sums.iter_mut().zip(series) {
                    *acc += s.xi[k] * u;
                }
            }
            sums.iter()
                .zip(series)
                .map(|(acc, s)| acc / (s.n() as f64).sqrt())
                .collect()
        })
        .collect();
    Ok((0..series.len())
        .map(|s| {
            let replicates: Vec<f64> = reps.iter().map(|r| r[s]).collect();
            WildBootstrap {
                variance: sample_variance(&replicates),
                replicates,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBootstrap {
    pub variance: f64,
    /// Wall-clock seconds.
    pub wall_time: f64,
    pub replicates: Vec<f64>,
    /// Resamples on which fitting, imputation or estimation failed.
    pub failures: usize,
}

/// Resample subjects within arm and rerun fit, imputation and estimation.
pub fn naive_bootstrap(
    dataset: &TrialDataset,
    spec: &EstimandSpec,
    config: &SensitivityConfig,
    b: usize,
    seed: u64,
) -> Result<NaiveBootstrap> {
    if b < 2 {
        return Err(Error::InvalidConfig(format!("B must be at least 2, got {b}")));
    }
    let start = Instant::now();
    let groups = [dataset.arm_indices(Arm::Treated), dataset.arm_indices(Arm::Control)];
    let outcomes: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut r = rng::stream(seed, rng::domain::NAIVE_BOOTSTRAP, rep as u64, 0);
            let mut records: Vec<SurvivalRecord> = Vec::with_capacity(dataset.n());
            for group in &groups {
                for _ in 0..group.len() {
                    let pick = group[r.random_range(0..group.len())];
                    records.push(dataset.records()[pick].clone());
                }
            }
            let resampled = TrialDataset::new(records, dataset.covariate_names().to_vec()).ok()?;
            let t_max = crate::data::tmax_info(&resampled).ok()?.t_tilde_max;
            spec.validate(t_max).ok()?;
            let fit1 = fit_cox(&resampled, Arm::Treated).ok()?;
            let fit0 = fit_cox(&resampled, Arm::Control).ok()?;
            let cfg = SensitivityConfig {
                seed: rng::derive(seed, rng::domain::NAIVE_BOOTSTRAP, rep as u64, 1),
                ..*config
            };
            let imputed = impute(&resampled, &fit1, &fit0, &cfg).ok()?;
            mi_estimate(&imputed, spec).ok().map(|e| e.point)
        })
        .collect();
    let replicates: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let failures = b - replicates.len();
    if replicates.len() < 2 {
        return Err(Error::TooManyFailures { failed: failures, total: b });
    }
    Ok(NaiveBootstrap {
        variance: sample_variance(&replicates),
        wall_time: start.elapsed().as_secs_f64(),
        replicates,
        failures,
    })
}
