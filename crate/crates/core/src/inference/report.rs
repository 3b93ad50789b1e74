use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::bootstrap::{wild_bootstrap_many, WeightDist};
use super::series::build_martingale_series;
use super::{mi_estimate, MiComponent, MiEstimate};
use crate::cox::{fit_cox, residual_ingredients, CoxFit};
use crate::data::{tmax_info, Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::estimands::{component_weights, psi_weights, EstimandKind, EstimandSpec};
use crate::imputation::{impute, ImputedDataset, SensitivityConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// Bootstrap replicates.
    pub b: usize,
    pub alpha: f64,
    pub weights: WeightDist,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            b: 100,
            alpha: 0.05,
            weights: WeightDist::Normal,
        }
    }
}

/// Rubin and wild-bootstrap inference for one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiPair {
    pub point: f64,
    pub se_rubin: f64,
    pub se_wb: f64,
    pub ci_rubin: [f64; 2],
    pub ci_wb: [f64; 2],
    pub p_rubin: f64,
    pub p_wb: f64,
}

impl CiPair {
    fn new(point: f64, se_rubin: f64, se_wb: f64, alpha: f64, null: f64) -> Self {
        let std = Normal::standard();
        let z = std.inverse_cdf(1.0 - alpha / 2.0);
        let p = |se: f64| {
            if se > 0.0 {
                2.0 * std.sf(((point - null) / se).abs())
            } else if point == null {
                1.0
            } else {
                0.0
            }
        };
        Self {
            point,
            se_rubin,
            se_wb,
            ci_rubin: [point - z * se_rubin, point + z * se_rubin],
            ci_wb: [point - z * se_wb, point + z * se_wb],
            p_rubin: p(se_rubin),
            p_wb: p(se_wb),
        }
    }

    pub fn covers(&self, truth: f64) -> (bool, bool) {
        (
            self.ci_rubin[0] <= truth && truth <= self.ci_rubin[1],
            self.ci_wb[0] <= truth && truth <= self.ci_wb[1],
        )
    }
}

/// Single-arm summary: S(τ), RMST, weighted RMST, RMTL or quantile,
/// matching the estimand kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub n: usize,
    pub beta_hat: Vec<f64>,
    pub estimate: CiPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub spec: EstimandSpec,
    pub config: SensitivityConfig,
    pub t_tilde_max: f64,
    pub point: f64,
    pub se_rubin: f64,
    pub se_wb: f64,
    pub ci_rubin: [f64; 2],
    pub ci_wb: [f64; 2],
    pub p_rubin: f64,
    pub p_wb: f64,
    /// Value under no treatment effect, used for the p-values.
    pub null_value: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub weights: WeightDist,
    pub treated: ArmSummary,
    pub control: ArmSummary,
    pub warnings: Vec<String>,
}

impl AnalysisReport {
    pub fn contrast(&self) -> CiPair {
        CiPair {
            point: self.point,
            se_rubin: self.se_rubin,
            se_wb: self.se_wb,
            ci_rubin: self.ci_rubin,
            ci_wb: self.ci_wb,
            p_rubin: self.p_rubin,
            p_wb: self.p_wb,
        }
    }

    pub const CSV_HEADER: [&'static str; 21] = [
        "estimand",
        "tau",
        "model",
        "delta_treated",
        "delta_control",
        "m",
        "B",
        "point",
        "se_rubin",
        "se_wb",
        "ci_rubin_lo",
        "ci_rubin_hi",
        "ci_wb_lo",
        "ci_wb_hi",
        "p_rubin",
        "p_wb",
        "treated_estimate",
        "treated_se_wb",
        "control_estimate",
        "control_se_wb",
        "seed",
    ];

    /// One flat row matching [`Self::CSV_HEADER`].
    pub fn csv_row(&self) -> Vec<String> {
        let f = |x: f64| x.to_string();
        vec![
            format!("{:?}", self.spec.kind),
            f(self.spec.tau),
            format!("{:?}", self.config.model),
            f(self.config.delta_treated),
            f(self.config.delta_control),
            self.config.m.to_string(),
            self.b.to_string(),
            f(self.point),
            f(self.se_rubin),
            f(self.se_wb),
            f(self.ci_rubin[0]),
            f(self.ci_rubin[1]),
            f(self.ci_wb[0]),
            f(self.ci_wb[1]),
            f(self.p_rubin),
            f(self.p_wb),
            f(self.treated.estimate.point),
            f(self.treated.estimate.se_wb),
            f(self.control.estimate.point),
            f(self.control.estimate.se_wb),
            self.config.seed.to_string(),
        ]
    }
}

/// Everything computed along the way, for callers that need more than the report.
pub struct AnalysisRun<'a> {
    pub report: AnalysisReport,
    pub imputed: ImputedDataset<'a>,
    pub estimate: MiEstimate,
    pub fits: [CoxFit; 2],
}

/// Fit, impute, estimate and compute both variance estimates.
pub fn analyze(
    dataset: &TrialDataset,
    spec: &EstimandSpec,
    config: &SensitivityConfig,
    b: usize,
    alpha: f64,
) -> Result<AnalysisReport> {
    let opts = AnalysisOptions {
        b,
        alpha,
        ..AnalysisOptions::default()
    };
    Ok(analyze_detailed(dataset, spec, config, &opts)?.report)
}

pub fn analyze_detailed<'a>(
    dataset: &'a TrialDataset,
    spec: &EstimandSpec,
    config: &SensitivityConfig,
    opts: &AnalysisOptions,
) -> Result<AnalysisRun<'a>> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {}", opts.alpha)));
    }
    let warnings = config.validate()?;
    let t_tilde_max = tmax_info(dataset)?.t_tilde_max;
    spec.validate(t_tilde_max)?;

    let fit1 = fit_cox(dataset, Arm::Treated)?;
    let fit0 = fit_cox(dataset, Arm::Control)?;
    let res1 = residual_ingredients(&fit1, dataset);
    let res0 = residual_ingredients(&fit0, dataset);
    let imputed = impute(dataset, &fit1, &fit0, config)?;
    let est = mi_estimate(&imputed, spec)?;

    let pooled = est.pooled_curves();
    let weights = [
        psi_weights(&pooled, spec)?,
        component_weights(&pooled, spec, Arm::Treated)?,
        component_weights(&pooled, spec, Arm::Control)?,
    ];
    let series = weights
        .iter()
        .map(|psi| build_martingale_series(dataset, &imputed, &fit1, &fit0, &res1, &res0, psi, config))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = series.iter().collect();
    let wb = wild_bootstrap_many(&refs, opts.b, opts.weights, config.seed)?;

    let null_value = if spec.kind == EstimandKind::RmtlRatio { 1.0 } else { 0.0 };
    let contrast = CiPair::new(
        est.point,
        super::rubin_variance(&est).sqrt(),
        wb[0].variance.sqrt(),
        opts.alpha,
        null_value,
    );
    let summary = |arm: Arm, comp: &MiComponent, wb_var: f64, fit: &CoxFit| ArmSummary {
        arm,
        n: dataset.n_arm(arm),
        beta_hat: fit.beta_hat.clone(),
        estimate: CiPair::new(comp.point, comp.rubin_variance().sqrt(), wb_var.sqrt(), opts.alpha, 0.0),
    };
    let report = AnalysisReport {
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        config: *config,
        t_tilde_max,
        point: contrast.point,
        se_rubin: contrast.se_rubin,
        se_wb: contrast.se_wb,
        ci_rubin: contrast.ci_rubin,
        ci_wb: contrast.ci_wb,
        p_rubin: contrast.p_rubin,
        p_wb: contrast.p_wb,
        null_value,
        alpha: opts.alpha,
        b: opts.b,
        weights: opts.weights,
        treated: summary(Arm::Treated, &est.treated, wb[1].variance, &fit1),
        control: summary(Arm::Control, &est.control, wb[2].variance, &fit0),
        warnings,
    };
    Ok(AnalysisRun {
        report,
        imputed,
        estimate: est,
        fits: [fit1, fit0],
    })
}
