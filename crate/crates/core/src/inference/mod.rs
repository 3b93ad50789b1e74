//! Point estimation and variance: the multiple-imputation estimator,
//! Rubin's combining rule, the martingale series and its wild bootstrap.

mod bootstrap;
mod report;
mod series;

pub use bootstrap::{
    naive_bootstrap, wild_bootstrap, wild_bootstrap_many, NaiveBootstrap, WeightDist, WildBootstrap,
};
pub use report::{
    analyze, analyze_detailed, AnalysisOptions, AnalysisReport, AnalysisRun, ArmSummary, CiPair,
    SCHEMA_VERSION,
};
pub use series::{build_martingale_series, MartingaleSeries};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Arm;
use crate::error::Result;
use crate::estimands::{
    arm_component, component_weights, empirical_survival, estimand_value, influence_variance,
    influence_with, psi_weights, EstimandSpec, SurvCurvePair,
};
use crate::imputation::ImputedDataset;
use crate::step::StepFunction;

/// Per-imputation estimates of one quantity and their within-imputation variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiComponent {
    pub point: f64,
    pub per_imputation: Vec<f64>,
    pub within_vars: Vec<f64>,
}

impl MiComponent {
    fn from_parts(per_imputation: Vec<f64>, within_vars: Vec<f64>) -> Self {
        let point = per_imputation.iter().sum::<f64>() / per_imputation.len() as f64;
        Self {
            point,
            per_imputation,
            within_vars,
        }
    }

    /// Rubin's combined variance.
    pub fn rubin_variance(&self) -> f64 {
        rubin(&self.per_imputation, &self.within_vars)
    }
}

/// The multiple-imputation estimate of the contrast, plus the single-arm
/// components it is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub point: f64,
    pub per_imputation: Vec<f64>,
    pub within_vars: Vec<f64>,
    /// Curves pooled over all imputations.
    pub s1_mi: StepFunction,
    pub s0_mi: StepFunction,
    pub treated: MiComponent,
    pub control: MiComponent,
    pub n1: usize,
    pub n0: usize,
}

impl MiEstimate {
    pub fn pooled_curves(&self) -> SurvCurvePair {
        SurvCurvePair {
            s1: self.s1_mi.clone(),
            s0: self.s0_mi.clone(),
            n1: self.n1,
            n0: self.n0,
        }
    }

    pub fn component(&self, arm: Arm) -> &MiComponent {
        match arm {
            Arm::Treated => &self.treated,
            Arm::Control => &self.control,
        }
    }
}

struct PerImputation {
    value: f64,
    within: f64,
    comps: [(f64, f64); 2],
}

/// Plug-in estimate on each completed dataset, averaged.
pub fn mi_estimate(imputed: &ImputedDataset<'_>, spec: &EstimandSpec) -> Result<MiEstimate> {
    let m = imputed.m;
    let per: Vec<PerImputation> = (0..m)
        .into_par_iter()
        .map(|j| {
            let t1 = imputed.completed_times(Arm::Treated, j);
            let t0 = imputed.completed_times(Arm::Control, j);
            let curves = SurvCurvePair::from_times(&t1, &t0);
            let value = estimand_value(&curves, spec)?;
            let psi = psi_weights(&curves, spec)?;
            let within = influence_variance(&influence_with([&t1, &t0], &curves, &psi));
            let comp = |arm: Arm| -> Result<(f64, f64)> {
                let v = arm_component(curves.curve(arm), spec, arm)?;
                let w = component_weights(&curves, spec, arm)?;
                Ok((v, influence_variance(&influence_with([&t1, &t0], &curves, &w))))
            };
            Ok(PerImputation {
                value,
                within,
                comps: [comp(Arm::Treated)?, comp(Arm::Control)?],
            })
        })
        .collect::<Result<_>>()?;

    let pooled = |arm: Arm| {
        let all: Vec<f64> = (0..m).flat_map(|j| imputed.completed_times(arm, j)).collect();
        empirical_survival(&all)
    };
    let contrast = MiComponent::from_parts(
        per.iter().map(|p| p.value).collect(),
        per.iter().map(|p| p.within).collect(),
    );
    let comp = |k: usize| {
        MiComponent::from_parts(
            per.iter().map(|p| p.comps[k].0).collect(),
            per.iter().map(|p| p.comps[k].1).collect(),
        )
    };
    Ok(MiEstimate {
        point: contrast.point,
        per_imputation: contrast.per_imputation,
        within_vars: contrast.within_vars,
        s1_mi: pooled(Arm::Treated),
        s0_mi: pooled(Arm::Control),
        treated: comp(0),
        control: comp(1),
        n1: imputed.base.n1(),
        n0: imputed.base.n0(),
    })
}

/// `(m+1)/((m-1)m) Σ_j (Δ_j - Δ̄)² + m^{-1} Σ_j V_j`.
pub fn rubin(per_imputation: &[f64], within_vars: &[f64]) -> f64 {
    let m = per_imputation.len() as f64;
    let mean = per_imputation.iter().sum::<f64>() / m;
    let between: f64 = per_imputation.iter().map(|d| (d - mean).powi(2)).sum();
    let within = within_vars.iter().sum::<f64>() / within_vars.len() as f64;
    (m + 1.0) / ((m - 1.0) * m) * between + within
}

pub fn rubin_variance(est: &MiEstimate) -> f64 {
    rubin(&est.per_imputation, &est.within_vars)
}
