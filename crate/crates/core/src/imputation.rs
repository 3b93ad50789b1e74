//! Multiple imputation of censored event times by inverse-transform sampling.
//!
//! A censored subject's event time is drawn from its fitted conditional
//! survival beyond the censoring time, with the hazard after a premature
//! dropout multiplied by `δ` (delta-adjusted model) or replaced by the
//! control arm's hazard (control-based model). Draws are truncated at
//! `T̃_max`, the smaller of the two arms' largest event times.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cox::CoxFit;
use crate::data::{tmax_info, Arm, Reason, SurvivalRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::rng;
use crate::step::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensitivityModel {
    /// Post-dropout hazard is `δ` times the subject's own-arm hazard.
    DeltaAdjusted,
    /// Treated dropouts switch to `δ` times the control-arm hazard.
    ControlBased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub model: SensitivityModel,
    /// Hazard multiplier for treated-arm dropouts.
    pub delta_treated: f64,
    /// Hazard multiplier for control-arm dropouts.
    pub delta_control: f64,
    /// Number of imputations.
    pub m: usize,
    pub seed: u64,
}

impl SensitivityConfig {
    pub fn new(model: SensitivityModel, delta_treated: f64, m: usize, seed: u64) -> Self {
        Self {
            model,
            delta_treated,
            delta_control: 1.0,
            m,
            seed,
        }
    }

    /// Check the configuration; returns human-readable warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        for (name, d) in [("delta_treated", self.delta_treated), ("delta_control", self.delta_control)] {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {d}")));
            }
        }
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!("m must be at least 2, got {}", self.m)));
        }
        let mut warnings = Vec::new();
        if self.model == SensitivityModel::ControlBased && self.delta_treated > 1.0 {
            warnings.push(format!(
                "control-based model with delta {} > 1: treated dropouts are assumed to do worse than control patients",
                self.delta_treated
            ));
        }
        Ok(warnings)
    }

    /// Which fitted arm and hazard multiplier govern a censored record after
    /// its censoring time. `None` for observed events.
    pub fn law(&self, record: &SurvivalRecord) -> Option<(Arm, f64)> {
        match (record.reason, record.arm, self.model) {
            (Reason::NotApplicable, _, _) => None,
            (Reason::Administrative, arm, _) => Some((arm, 1.0)),
            (Reason::Dropout, Arm::Control, _) => Some((Arm::Control, self.delta_control)),
            (Reason::Dropout, Arm::Treated, SensitivityModel::DeltaAdjusted) => {
                Some((Arm::Treated, self.delta_treated))
            }
            (Reason::Dropout, Arm::Treated, SensitivityModel::ControlBased) => {
                Some((Arm::Control, self.delta_treated))
            }
        }
    }
}

/// One imputed time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub time: f64,
    /// The draw survived past `T̃_max` and was clamped there.
    pub truncated: bool,
}

/// `m` completed versions of a dataset.
#[derive(Debug, Clone)]
pub struct ImputedDataset<'a> {
    pub base: &'a TrialDataset,
    /// `imputed_times[i][j]`: record `i`, imputation `j`.
    pub imputed_times: Vec<Vec<f64>>,
    pub truncated_flags: Vec<Vec<bool>>,
    pub t_tilde_max: f64,
    /// Candidate imputation times.
    pub grid: Vec<f64>,
    pub m: usize,
}

impl ImputedDataset<'_> {
    /// Completed times of one arm for imputation `j`, in file order.
    pub fn completed_times(&self, arm: Arm, j: usize) -> Vec<f64> {
        self.base
            .records()
            .iter()
            .zip(&self.imputed_times)
            .filter(|(r, _)| r.arm == arm)
            .map(|(_, t)| t[j])
            .collect()
    }

    /// Write `id,j,t_star,truncated` rows (j is 1-based).
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["id", "j", "t_star", "truncated"])?;
        for (i, rec) in self.base.records().iter().enumerate() {
            for j in 0..self.m {
                wtr.write_record([
                    rec.id.clone(),
                    (j + 1).to_string(),
                    self.imputed_times[i][j].to_string(),
                    u8::from(self.truncated_flags[i][j]).to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Sorted union of observed times `<= t_tilde_max`, plus `t_tilde_max`.
pub fn imputation_grid(dataset: &TrialDataset, t_tilde_max: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = dataset
        .records()
        .iter()
        .map(|r| r.time)
        .filter(|&t| t <= t_tilde_max)
        .chain(std::iter::once(t_tilde_max))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Core solve: the largest grid `t` with `log S(t-) >= log_u`, where `log S`
/// already carries the `δ` power.
fn solve(
    grid: &[f64],
    u_time: f64,
    log_u: f64,
    log_s_left: impl Fn(f64) -> f64,
    log_s_right: impl Fn(f64) -> f64,
) -> Draw {
    let t_max = *grid.last().expect("grid is nonempty");
    if u_time >= t_max {
        return Draw {
            time: u_time,
            truncated: false,
        };
    }
    let count = grid.partition_point(|&t| log_s_left(t) >= log_u);
    let floor = grid.partition_point(|&t| t < u_time);
    let idx = count.max(floor + 1).min(grid.len()) - 1;
    let time = grid[idx].max(u_time);
    let truncated = idx == grid.len() - 1 && log_s_right(t_max) >= log_u;
    Draw { time, truncated }
}

/// Draw `T*` given survival past `u_time`.
///
/// `u ~ Unif[0, p]` with `p = S(u_time)^δ`, and `T*` is the largest grid
/// point `t` whose left limit satisfies `S(t-)^δ >= u`. Using the left limit
/// makes `T*` land on the jump where the fitted curve first drops below `u`,
/// which reproduces the fitted conditional law exactly on the grid.
pub fn inverse_transform_draw<R: Rng + ?Sized>(
    survival: &StepFunction,
    u_time: f64,
    delta: f64,
    grid: &[f64],
    rng: &mut R,
) -> Result<Draw> {
    let v = 1.0 - rng.random::<f64>();
    draw_with_fraction(survival, u_time, delta, grid, v)
}

/// [`inverse_transform_draw`] with the uniform fixed at `u = v·p`, `v ∈ (0, 1]`.
pub fn draw_with_fraction(
    survival: &StepFunction,
    u_time: f64,
    delta: f64,
    grid: &[f64],
    v: f64,
) -> Result<Draw> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("imputation grid is empty".into()));
    }
    let s_u = survival.right_limit(u_time);
    if !(s_u > 0.0) {
        return Err(Error::DegenerateSurvival { time: u_time });
    }
    let log_u = delta * s_u.ln() + v.ln();
    Ok(solve(
        grid,
        u_time,
        log_u,
        |t| delta * survival.left_limit(t).ln(),
        |t| delta * survival.right_limit(t).ln(),
    ))
}

/// Draw from `exp(-c (Λ(t) - Λ(u_time)))` with `v ∈ (0, 1]`, in log space.
pub(crate) fn draw_from_hazard(
    cum_hazard: &StepFunction,
    c: f64,
    u_time: f64,
    grid: &[f64],
    v: f64,
) -> Draw {
    let log_u = -c * cum_hazard.right_limit(u_time) + v.ln();
    solve(
        grid,
        u_time,
        log_u,
        |t| -c * cum_hazard.left_limit(t),
        |t| -c * cum_hazard.right_limit(t),
    )
}

/// Select the fit for an arm.
pub(crate) fn pick<'f>(fit1: &'f CoxFit, fit0: &'f CoxFit, arm: Arm) -> &'f CoxFit {
    match arm {
        Arm::Treated => fit1,
        Arm::Control => fit0,
    }
}

/// Impute every censored record `m` times.
pub fn impute<'a>(
    dataset: &'a TrialDataset,
    fit1: &CoxFit,
    fit0: &CoxFit,
    config: &SensitivityConfig,
) -> Result<ImputedDataset<'a>> {
    config.validate()?;
    let t_tilde_max = tmax_info(dataset)?.t_tilde_max;
    let grid = imputation_grid(dataset, t_tilde_max);
    let m = config.m;
    let rows: Vec<(Vec<f64>, Vec<bool>)> = dataset
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let Some((fit_arm, delta)) = config.law(rec) else {
                return (vec![rec.time; m], vec![false; m]);
            };
            let fit = pick(fit1, fit0, fit_arm);
            let c = delta * fit.risk_score(&rec.covariates);
            (0..m)
                .map(|j| {
                    let mut r = rng::stream(config.seed, rng::domain::IMPUTATION, i as u64, j as u64);
                    let v = 1.0 - r.random::<f64>();
                    let d = draw_from_hazard(&fit.cum_hazard, c, rec.time, &grid, v);
                    (d.time, d.truncated)
                })
                .unzip()
        })
        .collect();
    let (imputed_times, truncated_flags) = rows.into_iter().unzip();
    Ok(ImputedDataset {
        base: dataset,
        imputed_times,
        truncated_flags,
        t_tilde_max,
        grid,
        m,
    })
}
