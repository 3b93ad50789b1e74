//! Simulation designs, a Monte Carlo truth oracle, and the coverage harness.
//!
//! Both designs use constant baseline hazards, so event and censoring times
//! are generated exactly by inverse transform.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Reason, SurvivalRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::estimands::{EstimandKind, EstimandSpec};
use crate::imputation::{SensitivityConfig, SensitivityModel};
use crate::inference::{analyze_detailed, AnalysisOptions, CiPair};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignName {
    /// One standard-normal covariate, short follow-up.
    Sim1,
    /// A standard-normal and a Bernoulli(0.15) covariate, long follow-up.
    Sim2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub name: DesignName,
    pub n_per_arm: usize,
    pub lambda1: f64,
    pub beta1: Vec<f64>,
    pub lambda0: f64,
    pub beta0: Vec<f64>,
    pub lambda_c: f64,
    pub beta_c: Vec<f64>,
    /// End of follow-up.
    pub admin_l: f64,
    pub tau: f64,
    /// Post-dropout hazard multiplier in the data-generating mechanism.
    pub true_delta: f64,
    pub analysis_delta_grid: Vec<f64>,
    pub model: SensitivityModel,
}

impl SimDesign {
    pub fn sim1(n_per_arm: usize) -> Self {
        Self {
            name: DesignName::Sim1,
            n_per_arm,
            lambda1: 0.35,
            beta1: vec![0.75],
            lambda0: 0.40,
            beta0: vec![0.75],
            lambda_c: 0.15,
            beta_c: vec![0.75],
            admin_l: 3.25,
            tau: 3.0,
            true_delta: 1.5,
            analysis_delta_grid: vec![0.5, 1.0, 1.5, 2.0, 2.5],
            model: SensitivityModel::DeltaAdjusted,
        }
    }

    pub fn sim2(n_per_arm: usize) -> Self {
        Self {
            name: DesignName::Sim2,
            n_per_arm,
            lambda1: 0.03,
            beta1: vec![0.24, 0.04],
            lambda0: 0.03,
            beta0: vec![-0.55, 0.65],
            lambda_c: 0.01,
            beta_c: vec![0.24, 0.20],
            admin_l: 40.0,
            tau: 24.0,
            true_delta: 2.0,
            analysis_delta_grid: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            model: SensitivityModel::DeltaAdjusted,
        }
    }

    /// Switch to the control-based mechanism: treated dropouts take on the
    /// control hazard, and the analysis grid collapses to `δ = 1`.
    pub fn control_based(mut self) -> Self {
        self.model = SensitivityModel::ControlBased;
        self.true_delta = 1.0;
        self.analysis_delta_grid = vec![1.0];
        self
    }

    pub fn covariate_names(&self) -> Vec<String> {
        match self.name {
            DesignName::Sim1 => vec!["x".into()],
            DesignName::Sim2 => vec!["x1".into(), "x2".into()],
        }
    }

    fn draw_covariates<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let x1: f64 = rng.sample(StandardNormal);
        match self.name {
            DesignName::Sim1 => vec![x1],
            DesignName::Sim2 => vec![x1, if rng.random::<f64>() < 0.15 { 1.0 } else { 0.0 }],
        }
    }

    fn hazard(&self, arm: Arm, x: &[f64]) -> f64 {
        let (lambda, beta) = match arm {
            Arm::Treated => (self.lambda1, &self.beta1),
            Arm::Control => (self.lambda0, &self.beta0),
        };
        lambda * crate::cox::dot(beta, x).exp()
    }

    fn censoring_hazard(&self, x: &[f64]) -> f64 {
        self.lambda_c * crate::cox::dot(&self.beta_c, x).exp()
    }

    pub fn estimand(&self) -> EstimandSpec {
        EstimandSpec::new(EstimandKind::RmstDiff, self.tau)
    }
}

fn exponential<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -(1.0 - rng.random::<f64>()).ln()
}

/// One simulated trial with `n_per_arm` subjects per arm (treated first).
pub fn generate_trial<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<TrialDataset> {
    let mut records = Vec::with_capacity(2 * design.n_per_arm);
    for arm in [Arm::Treated, Arm::Control] {
        for k in 0..design.n_per_arm {
            let x = design.draw_covariates(rng);
            let t = exponential(rng) / design.hazard(arm, &x);
            let c = exponential(rng) / design.censoring_hazard(&x);
            let l = design.admin_l;
            let (time, event, reason) = if t <= c && t <= l {
                (t, true, Reason::NotApplicable)
            } else if l <= c {
                (l, false, Reason::Administrative)
            } else {
                (c, false, Reason::Dropout)
            };
            records.push(SurvivalRecord {
                id: format!("{}{}", if arm == Arm::Treated { "t" } else { "c" }, k + 1),
                arm,
                time,
                event,
                reason,
                covariates: x,
            });
        }
    }
    TrialDataset::new(records, design.covariate_names())
}

/// Shares of events, administrative censorings and dropouts.
pub fn censoring_mix(dataset: &TrialDataset) -> [f64; 3] {
    let n = dataset.n() as f64;
    let count = |want: Reason| dataset.records().iter().filter(|r| r.reason == want).count() as f64 / n;
    [
        count(Reason::NotApplicable),
        count(Reason::Administrative),
        count(Reason::Dropout),
    ]
}

/// Monte Carlo truth with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub value: f64,
    pub se: f64,
    pub treated: f64,
    pub treated_se: f64,
    pub control: f64,
    pub control_se: f64,
}

/// Event time of one subject under the full mechanism, including the
/// hazard change after a premature dropout.
fn full_event_time<R: Rng + ?Sized>(design: &SimDesign, arm: Arm, rng: &mut R) -> f64 {
    let x = design.draw_covariates(rng);
    let h = design.hazard(arm, &x);
    let exposure = exponential(rng);
    let t = exposure / h;
    let c = exponential(rng) / design.censoring_hazard(&x);
    let dropped = c < t && c < design.admin_l;
    if !dropped || arm == Arm::Control {
        return t;
    }
    let h_after = match design.model {
        SensitivityModel::DeltaAdjusted => design.true_delta * h,
        SensitivityModel::ControlBased => design.true_delta * design.hazard(Arm::Control, &x),
    };
    c + (exposure - h * c) / h_after
}

/// RMST difference at `design.tau` under the full mechanism, by simulation
/// with `draws` subjects per arm.
pub fn true_estimand(design: &SimDesign, draws: usize, seed: u64) -> Truth {
    const CHUNKS: usize = 64;
    let per_arm = |arm: Arm| -> (f64, f64) {
        let sums: Vec<(f64, f64, usize)> = (0..CHUNKS)
            .into_par_iter()
            .map(|chunk| {
                let mut r = rng::stream(seed, rng::domain::ORACLE, arm.code() as u64, chunk as u64);
                let size = draws / CHUNKS + usize::from(chunk < draws % CHUNKS);
                let (mut s, mut s2) = (0.0, 0.0);
                for _ in 0..size {
                    let y = full_event_time(design, arm, &mut r).min(design.tau);
                    s += y;
                    s2 += y * y;
                }
                (s, s2, size)
            })
            .collect();
        let (s, s2, k) = sums
            .iter()
            .fold((0.0, 0.0, 0), |acc, v| (acc.0 + v.0, acc.1 + v.1, acc.2 + v.2));
        let k = k as f64;
        let mean = s / k;
        let var = (s2 / k - mean * mean) * k / (k - 1.0);
        (mean, (var / k).sqrt())
    };
    let (treated, treated_se) = per_arm(Arm::Treated);
    let (control, control_se) = per_arm(Arm::Control);
    Truth {
        value: treated - control,
        se: treated_se.hypot(control_se),
        treated,
        treated_se,
        control,
        control_se,
    }
}

/// Calibration of one estimator across Monte Carlo replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McMetrics {
    pub point_mean: f64,
    pub true_value: f64,
    /// Standard deviation of the point estimates across replicates.
    pub true_sd: f64,
    pub mean_se_rubin: f64,
    pub mean_se_wb: f64,
    /// `(mean SE - true sd) / true sd · 100`.
    pub rel_bias_rubin: f64,
    pub rel_bias_wb: f64,
    /// Fraction of replicates whose interval contains `true_value`.
    pub coverage_rubin: f64,
    pub coverage_wb: f64,
    pub reps: usize,
}

impl McMetrics {
    pub fn from_estimates(estimates: &[CiPair], true_value: f64) -> Self {
        let k = estimates.len() as f64;
        let mean = |f: &dyn Fn(&CiPair) -> f64| estimates.iter().map(f).sum::<f64>() / k;
        let point_mean = mean(&|e| e.point);
        let true_sd =
            (estimates.iter().map(|e| (e.point - point_mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        let mean_se_rubin = mean(&|e| e.se_rubin);
        let mean_se_wb = mean(&|e| e.se_wb);
        let covered = |which: usize| {
            estimates
                .iter()
                .filter(|e| {
                    let (r, w) = e.covers(true_value);
                    if which == 0 {
                        r
                    } else {
                        w
                    }
                })
                .count() as f64
                / k
        };
        Self {
            point_mean,
            true_value,
            true_sd,
            mean_se_rubin,
            mean_se_wb,
            rel_bias_rubin: (mean_se_rubin - true_sd) / true_sd * 100.0,
            rel_bias_wb: (mean_se_wb - true_sd) / true_sd * 100.0,
            coverage_rubin: covered(0),
            coverage_wb: covered(1),
            reps: estimates.len(),
        }
    }
}

/// Metrics for one analysis `δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub analysis_delta: f64,
    pub contrast: McMetrics,
    pub treated: McMetrics,
    pub control: McMetrics,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub design: SimDesign,
    pub m: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub reps: usize,
    pub truth: Truth,
    pub rows: Vec<McRow>,
}

/// Which quantity a CSV export reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum McTarget {
    Contrast,
    Treated,
    Control,
}

impl McReport {
    /// CSV with columns `n, m, model, point_est_x100, true_sd_x100,
    /// se_rubin_x100, se_wb_x100, relbias_rubin_pct, relbias_wb_pct,
    /// cover_rubin_pct, cover_wb_pct`.
    pub fn write_csv(&self, target: McTarget, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "n",
            "m",
            "model",
            "point_est_x100",
            "true_sd_x100",
            "se_rubin_x100",
            "se_wb_x100",
            "relbias_rubin_pct",
            "relbias_wb_pct",
            "cover_rubin_pct",
            "cover_wb_pct",
        ])?;
        for row in &self.rows {
            let mm = match target {
                McTarget::Contrast => &row.contrast,
                McTarget::Treated => &row.treated,
                McTarget::Control => &row.control,
            };
            let model = match self.design.model {
                SensitivityModel::DeltaAdjusted => format!("delta={:.2}", row.analysis_delta),
                SensitivityModel::ControlBased => format!("control-based delta={:.2}", row.analysis_delta),
            };
            let f2 = |x: f64| format!("{x:.2}");
            wtr.write_record([
                self.design.n_per_arm.to_string(),
                self.m.to_string(),
                model,
                f2(mm.point_mean * 100.0),
                f2(mm.true_sd * 100.0),
                f2(mm.mean_se_rubin * 100.0),
                f2(mm.mean_se_wb * 100.0),
                f2(mm.rel_bias_rubin),
                f2(mm.rel_bias_wb),
                format!("{:.1}", mm.coverage_rubin * 100.0),
                format!("{:.1}", mm.coverage_wb * 100.0),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub reps: usize,
    pub m: usize,
    pub b: usize,
    pub seed: u64,
    pub oracle_draws: usize,
}

/// Generate `reps` trials, analyze each at every `δ` of the design's grid,
/// and summarize calibration against the oracle truth.
pub fn run_monte_carlo(design: &SimDesign, opts: &McOptions) -> Result<McReport> {
    if opts.reps < 2 {
        return Err(Error::InvalidConfig("at least 2 replicates are needed".into()));
    }
    let truth = true_estimand(design, opts.oracle_draws, opts.seed);
    let spec = design.estimand();
    let analysis = AnalysisOptions {
        b: opts.b,
        ..AnalysisOptions::default()
    };
    let grid = &design.analysis_delta_grid;
    let outcomes: Vec<Vec<Option<[CiPair; 3]>>> = (0..opts.reps)
        .into_par_iter()
        .map(|rep| {
            let mut r = rng::stream(opts.seed, rng::domain::TRIAL, rep as u64, 0);
            let data = generate_trial(design, &mut r).ok();
            grid.iter()
                .enumerate()
                .map(|(k, &delta)| {
                    let data = data.as_ref()?;
                    let config = SensitivityConfig {
                        model: design.model,
                        delta_treated: delta,
                        delta_control: 1.0,
                        m: opts.m,
                        seed: rng::derive(opts.seed, rng::domain::MONTE_CARLO, rep as u64, k as u64),
                    };
                    let run = analyze_detailed(data, &spec, &config, &analysis).ok()?;
                    let rep = run.report;
                    Some([rep.contrast(), rep.treated.estimate, rep.control.estimate])
                })
                .collect()
        })
        .collect();

    let total = opts.reps * grid.len();
    let failed: usize = outcomes.iter().flatten().filter(|o| o.is_none()).count();
    if failed * 100 > total {
        return Err(Error::TooManyFailures { failed, total });
    }
    let rows = grid
        .iter()
        .enumerate()
        .map(|(k, &delta)| {
            let ok: Vec<&[CiPair; 3]> = outcomes.iter().filter_map(|o| o[k].as_ref()).collect();
            let pick = |idx: usize| -> Vec<CiPair> { ok.iter().map(|e| e[idx].clone()).collect() };
            McRow {
                analysis_delta: delta,
                contrast: McMetrics::from_estimates(&pick(0), truth.value),
                treated: McMetrics::from_estimates(&pick(1), truth.treated),
                control: McMetrics::from_estimates(&pick(2), truth.control),
                failures: opts.reps - ok.len(),
            }
        })
        .collect();
    Ok(McReport {
        design: design.clone(),
        m: opts.m,
        b: opts.b,
        reps: opts.reps,
        truth,
        rows,
    })
}
