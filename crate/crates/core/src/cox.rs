//! Per-arm Cox proportional hazards model.
//!
//! Newton–Raphson on the Breslow-tie partial likelihood, the Breslow
//! cumulative baseline hazard, and the counting-process ingredients (risk-set
//! averages, score residuals, martingale increments) used by the variance
//! machinery.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::step::{Continuity, StepFunction};

const MAX_ITERATIONS: usize = 50;
const GRADIENT_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-6;
const MAX_ABS_BETA: f64 = 50.0;
const SINGULAR_TOL: f64 = 1e-10;
/// Beyond this magnitude a singular information matrix is read as a
/// likelihood that keeps increasing towards infinity.
const MONOTONE_HINT: f64 = 20.0;

/// Risk-set averages at each event-grid time, evaluated at `beta_hat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskStats {
    /// `n_a^{-1} Σ_j exp(β'x_j) Y_j(u)`.
    pub u0: Vec<f64>,
    /// `n_a^{-1} Σ_j exp(β'x_j) Y_j(u) x_j`.
    pub u1: Vec<Vec<f64>>,
    /// `u1 / u0`.
    pub e: Vec<Vec<f64>>,
}

/// A fitted per-arm Cox model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub arm: Arm,
    pub beta_hat: Vec<f64>,
    /// Breslow `Λ̂`, right-continuous with knots on `event_grid`.
    pub cum_hazard: StepFunction,
    /// Increments `dΛ̂(u)` aligned with `event_grid`.
    pub d_lambda: Vec<f64>,
    /// Observed information divided by the arm size.
    pub info_matrix: Vec<Vec<f64>>,
    /// Inverse of `info_matrix`.
    pub info_inverse: Vec<Vec<f64>>,
    pub event_grid: Vec<f64>,
    pub risk_stats: RiskStats,
    pub n_arm: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Log partial likelihood after each accepted iterate, starting at `β = 0`.
    pub log_likelihood_trace: Vec<f64>,
}

impl CoxFit {
    pub fn p(&self) -> usize {
        self.beta_hat.len()
    }

    /// `exp(β̂'x)`.
    pub fn risk_score(&self, x: &[f64]) -> f64 {
        dot(&self.beta_hat, x).exp()
    }

    /// `Λ̂` just after each grid time.
    pub fn cum_hazard_at_knots(&self) -> &[f64] {
        self.cum_hazard.values()
    }

    /// Number of grid times `<= t`.
    pub fn grid_count_le(&self, t: f64) -> usize {
        self.event_grid.partition_point(|&u| u <= t)
    }

    /// Prefix sums `P(u_k) = Σ_{l <= k} E(β̂, u_l) dΛ̂(u_l)`.
    pub fn e_dlambda_prefix(&self) -> Vec<Vec<f64>> {
        let p = self.p();
        let mut acc = vec![0.0; p];
        self.risk_stats
            .e
            .iter()
            .zip(&self.d_lambda)
            .map(|(e, &dl)| {
                for (a, &ej) in acc.iter_mut().zip(e) {
                    *a += ej * dl;
                }
                acc.clone()
            })
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Arm data in descending time order, ready for risk-set sweeps.
struct ArmData {
    times: Vec<f64>,
    events: Vec<bool>,
    xs: Vec<Vec<f64>>,
    p: usize,
}

impl ArmData {
    fn from_dataset(dataset: &TrialDataset, arm: Arm) -> Self {
        let mut idx = dataset.arm_indices(arm);
        let recs = dataset.records();
        idx.sort_by(|&a, &b| recs[b].time.total_cmp(&recs[a].time));
        Self {
            times: idx.iter().map(|&i| recs[i].time).collect(),
            events: idx.iter().map(|&i| recs[i].event).collect(),
            xs: idx.iter().map(|&i| recs[i].covariates.clone()).collect(),
            p: dataset.p(),
        }
    }

    fn len(&self) -> usize {
        self.times.len()
    }

    /// Log partial likelihood, score and observed information at `beta`,
    /// using covariates centred at `center` for numerical stability.
    fn evaluate(&self, beta: &[f64], center: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = self.p;
        let xc: Vec<Vec<f64>> = self
            .xs
            .iter()
            .map(|x| x.iter().zip(center).map(|(a, c)| a - c).collect())
            .collect();
        let eta: Vec<f64> = xc.iter().map(|x| dot(beta, x)).collect();
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut loglik = 0.0;
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let n = self.len();
        let mut i = 0;
        while i < n {
            let t = self.times[i];
            let mut j = i;
            let mut d = 0.0;
            let mut event_eta = 0.0;
            let mut event_x = vec![0.0; p];
            while j < n && self.times[j] == t {
                let w = (eta[j] - shift).exp();
                s0 += w;
                for a in 0..p {
                    s1[a] += w * xc[j][a];
                    for b in 0..p {
                        s2[a * p + b] += w * xc[j][a] * xc[j][b];
                    }
                }
                if self.events[j] {
                    d += 1.0;
                    event_eta += eta[j];
                    for a in 0..p {
                        event_x[a] += xc[j][a];
                    }
                }
                j += 1;
            }
            if d > 0.0 {
                loglik += event_eta - d * (s0.ln() + shift);
                for a in 0..p {
                    let ma = s1[a] / s0;
                    grad[a] += event_x[a] - d * ma;
                    for b in 0..p {
                        let mb = s1[b] / s0;
                        info[(a, b)] += d * (s2[a * p + b] / s0 - ma * mb);
                    }
                }
            }
            i = j;
        }
        (loglik, grad, info)
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fit the Cox model to one arm by Newton–Raphson from `β = 0`.
pub fn fit_cox(dataset: &TrialDataset, arm: Arm) -> Result<CoxFit> {
    let data = ArmData::from_dataset(dataset, arm);
    let n_arm = data.len();
    let p = data.p;
    if !data.events.iter().any(|&e| e) {
        return Err(Error::NoEventsInArm { arm: arm.code() });
    }
    let center: Vec<f64> = (0..p)
        .map(|a| data.xs.iter().map(|x| x[a]).sum::<f64>() / n_arm as f64)
        .collect();

    let mut beta = vec![0.0; p];
    let (mut loglik, mut grad, mut info) = data.evaluate(&beta, &center);
    let mut trace = vec![loglik];
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    loop {
        let grad_norm = max_abs(grad.iter().copied());
        if p == 0 || (grad_norm <= GRADIENT_TOL && last_step <= STEP_TOL) {
            break;
        }
        if iterations >= MAX_ITERATIONS {
            return Err(Error::NonConvergence {
                arm: arm.code(),
                iterations,
                reason: "iteration limit reached".into(),
            });
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None if max_abs(beta.iter().copied()) > MONOTONE_HINT => {
                return Err(Error::NonConvergence {
                    arm: arm.code(),
                    iterations,
                    reason: "monotone likelihood (coefficients diverging)".into(),
                })
            }
            None => return Err(Error::SingularInformation { arm: arm.code() }),
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let eval = data.evaluate(&cand, &center);
            if eval.0.is_finite() && eval.0 >= loglik - 1e-12 * loglik.abs().max(1.0) {
                accepted = Some((cand, eval));
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        let Some((cand, eval)) = accepted else {
            // No ascent possible along the Newton direction: at the optimum
            // up to rounding.
            if grad_norm <= GRADIENT_TOL {
                break;
            }
            return Err(Error::NonConvergence {
                arm: arm.code(),
                iterations,
                reason: "step halving failed to increase the likelihood".into(),
            });
        };
        last_step = max_abs(beta.iter().zip(&cand).map(|(a, b)| a - b));
        beta = cand;
        (loglik, grad, info) = eval;
        trace.push(loglik);
        if max_abs(beta.iter().copied()) > MAX_ABS_BETA {
            return Err(Error::NonConvergence {
                arm: arm.code(),
                iterations,
                reason: "monotone likelihood (|beta| > 50)".into(),
            });
        }
    }

    let scaled = &info / n_arm as f64;
    // Information that is negligible next to the covariate's own spread means
    // the risk sets carry no contrast (e.g. every risk set is a singleton).
    for a in 0..p {
        let spread = data.xs.iter().map(|x| (x[a] - center[a]).powi(2)).sum::<f64>() / n_arm as f64;
        if !(scaled[(a, a)] > SINGULAR_TOL * spread) {
            return Err(Error::SingularInformation { arm: arm.code() });
        }
    }
    let inverse = if p == 0 {
        DMatrix::zeros(0, 0)
    } else {
        scaled
            .clone()
            .cholesky()
            .ok_or(Error::SingularInformation { arm: arm.code() })?
            .inverse()
    };

    let (event_grid, d_lambda, risk_stats) = breslow(&data, &beta, n_arm);
    let mut cum = 0.0;
    let cum_values: Vec<f64> = d_lambda
        .iter()
        .map(|dl| {
            cum += dl;
            cum
        })
        .collect();
    let cum_hazard = StepFunction::new(event_grid.clone(), cum_values, 0.0, Continuity::Right)?;

    Ok(CoxFit {
        arm,
        beta_hat: beta,
        cum_hazard,
        d_lambda,
        info_matrix: to_rows(&scaled),
        info_inverse: to_rows(&inverse),
        event_grid,
        risk_stats,
        n_arm,
        converged: true,
        iterations,
        log_likelihood_trace: trace,
    })
}

/// Breslow increments and risk-set averages at the distinct event times.
fn breslow(data: &ArmData, beta: &[f64], n_arm: usize) -> (Vec<f64>, Vec<f64>, RiskStats) {
    let p = data.p;
    let na = n_arm as f64;
    let mut grid = Vec::new();
    let mut dl = Vec::new();
    let mut u0 = Vec::new();
    let mut u1 = Vec::new();
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let n = data.len();
    let mut i = 0;
    while i < n {
        let t = data.times[i];
        let mut d = 0.0;
        while i < n && data.times[i] == t {
            let w = dot(beta, &data.xs[i]).exp();
            s0 += w;
            for a in 0..p {
                s1[a] += w * data.xs[i][a];
            }
            if data.events[i] {
                d += 1.0;
            }
            i += 1;
        }
        if d > 0.0 {
            grid.push(t);
            dl.push(d / s0);
            u0.push(s0 / na);
            u1.push(s1.iter().map(|v| v / na).collect::<Vec<f64>>());
        }
    }
    grid.reverse();
    dl.reverse();
    u0.reverse();
    u1.reverse();
    let e = u0
        .iter()
        .zip(&u1)
        .map(|(&z, one)| one.iter().map(|v| v / z).collect())
        .collect();
    (grid, dl, RiskStats { u0, u1, e })
}

/// `t -> exp(-Λ̂(t) exp(β̂'x))`, right-continuous.
pub fn conditional_survival(fit: &CoxFit, x: &[f64]) -> StepFunction {
    let r = fit.risk_score(x);
    fit.cum_hazard.map(|lambda| (-lambda * r).exp())
}

/// Score residuals and martingale increments for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualIngredients {
    pub arm: Arm,
    /// Dataset indices of the arm's subjects, in file order.
    pub subjects: Vec<usize>,
    /// `H_{a,i}` per subject.
    pub score_residuals: Vec<Vec<f64>>,
    /// `exp(β̂'x_i)` per subject.
    pub risk_scores: Vec<f64>,
    times: Vec<f64>,
    events: Vec<bool>,
    grid: Vec<f64>,
    d_lambda: Vec<f64>,
}

impl ResidualIngredients {
    /// `dM̂_i(u)` at every event-grid time, for subject `local` (position in `subjects`).
    pub fn martingale_increments(&self, local: usize) -> Vec<(f64, f64)> {
        let t = self.times[local];
        let r = self.risk_scores[local];
        self.grid
            .iter()
            .zip(&self.d_lambda)
            .map(|(&u, &dl)| {
                let dn = if self.events[local] && u == t { 1.0 } else { 0.0 };
                let at_risk = if t >= u { 1.0 } else { 0.0 };
                (u, dn - r * at_risk * dl)
            })
            .collect()
    }
}

pub fn residual_ingredients(fit: &CoxFit, dataset: &TrialDataset) -> ResidualIngredients {
    let subjects = dataset.arm_indices(fit.arm);
    let recs = dataset.records();
    let prefix = fit.e_dlambda_prefix();
    let lambda = fit.cum_hazard_at_knots();
    let p = fit.p();
    let mut score_residuals = Vec::with_capacity(subjects.len());
    let mut risk_scores = Vec::with_capacity(subjects.len());
    for &i in &subjects {
        let rec = &recs[i];
        let r = fit.risk_score(&rec.covariates);
        let k = fit.grid_count_le(rec.time);
        let (lam, pre) = if k == 0 {
            (0.0, vec![0.0; p])
        } else {
            (lambda[k - 1], prefix[k - 1].clone())
        };
        let mut h: Vec<f64> = (0..p).map(|a| -r * (rec.covariates[a] * lam - pre[a])).collect();
        if rec.event {
            let e = &fit.risk_stats.e[k - 1];
            for a in 0..p {
                h[a] += rec.covariates[a] - e[a];
            }
        }
        score_residuals.push(h);
        risk_scores.push(r);
    }
    ResidualIngredients {
        arm: fit.arm,
        times: subjects.iter().map(|&i| recs[i].time).collect(),
        events: subjects.iter().map(|&i| recs[i].event).collect(),
        subjects,
        score_residuals,
        risk_scores,
        grid: fit.event_grid.clone(),
        d_lambda: fit.d_lambda.clone(),
    }
}
