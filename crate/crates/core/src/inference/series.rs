//! The empirical martingale series behind the wild bootstrap.
//!
//! The multiple-imputation estimator decomposes into `(1 + m) n` terms:
//! one "parameter" term per subject, carrying the subject's own
//! contribution and the effect of estimating the Cox model it helped fit,
//! and `m` "imputation" terms per subject, carrying the draw noise.
//!
//! The model-estimation part for subject `j` of fitted arm `f`, acting on
//! the curve of arm `a`, is
//!
//! ```text
//! ∫ψ_a(t) φ_j(t) dt,  φ_j(t) = {g2(t) - g1(t)}' Γ̂_f^{-1} H_j - ∫_0^t G(t,u)/U0(u) dM̂_j(u)
//! ```
//!
//! where `G`, `g1`, `g2` average over the censored subjects of arm `a`
//! whose imputation law uses fit `f`. Integrals over `t` are swapped with
//! the martingale integral so that every term costs a prefix-sum lookup.

use serde::{Deserialize, Serialize};

use crate::cox::{dot, CoxFit, ResidualIngredients};
use crate::data::{Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::estimands::{empirical_survival, ArmPsi, PsiWeights};
use crate::imputation::{pick, ImputedDataset, SensitivityConfig};
use crate::step::StepFunction;

/// Ordered series: arm-1 parameter terms, arm-1 imputation terms (subject
/// major, imputation minor), arm-0 parameter terms, arm-0 imputation terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSeries {
    pub xi: Vec<f64>,
    pub n1: usize,
    pub n0: usize,
    pub m: usize,
}

impl MartingaleSeries {
    pub fn n(&self) -> usize {
        self.n1 + self.n0
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn treated_parameter_terms(&self) -> &[f64] {
        &self.xi[..self.n1]
    }

    pub fn treated_imputation_terms(&self) -> &[f64] {
        &self.xi[self.n1..self.n1 * (1 + self.m)]
    }

    pub fn control_parameter_terms(&self) -> &[f64] {
        let start = self.n1 * (1 + self.m);
        &self.xi[start..start + self.n0]
    }

    pub fn control_imputation_terms(&self) -> &[f64] {
        &self.xi[self.n1 * (1 + self.m) + self.n0..]
    }

    /// `n^{-1} Σ ξ̂²`: the variance the wild bootstrap estimates.
    pub fn variance(&self) -> f64 {
        self.xi.iter().map(|x| x * x).sum::<f64>() / self.n() as f64
    }
}

/// Censored subject whose imputation law is governed by one fit.
struct Censored {
    index: usize,
    time: f64,
    c: f64,
    x: Vec<f64>,
}

/// Output of one (fit, target arm) sweep.
struct Sweep {
    /// `(dataset index, ∫_{U_k}^H ψ_a S_k)` per swept subject.
    tails: Vec<(usize, f64)>,
    /// `Γ̂_f^{-1} · n_a^{-1} Σ_k c_k ∫ψ_a S_k D_k`.
    beta_weight: Vec<f64>,
    /// `Σ_{l <= k} K(u_l) dΛ̂(u_l) / U0(u_l)` on the fit's grid.
    k_prefix: Vec<f64>,
    /// `K(u_k) / U0(u_k)` on the fit's grid.
    k_over_u0: Vec<f64>,
}

fn sweep(fit: &CoxFit, psi: &ArmPsi, horizon: f64, subjects: &[Censored], n_target: usize) -> Sweep {
    let p = fit.p();
    let grid = &fit.event_grid;
    let lam = fit.cum_hazard_at_knots();
    let prefix = fit.e_dlambda_prefix();
    let at = |count: usize| -> (f64, Vec<f64>) {
        if count == 0 {
            (0.0, vec![0.0; p])
        } else {
            (lam[count - 1], prefix[count - 1].clone())
        }
    };

    let mut bounds: Vec<f64> = std::iter::once(0.0)
        .chain(grid.iter().copied().filter(|&u| u < horizon))
        .chain(psi.density.knots_between(0.0, horizon).iter().copied())
        .collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();
    bounds.push(horizon);
    let nseg = bounds.len() - 1;
    let mut seg_psi = Vec::with_capacity(nseg);
    let mut seg_lam = Vec::with_capacity(nseg);
    let mut seg_pre = Vec::with_capacity(nseg);
    let mut seg_grid = Vec::with_capacity(nseg);
    for &lo in &bounds[..nseg] {
        let count = fit.grid_count_le(lo);
        let (l, pre) = at(count);
        seg_psi.push(psi.density.right_limit(lo));
        seg_lam.push(l);
        seg_pre.push(pre);
        seg_grid.push((count > 0 && grid[count - 1] == lo).then(|| count - 1));
    }
    let mut atoms: Vec<(f64, f64, f64, Vec<f64>)> = psi
        .atoms
        .iter()
        .filter(|&&(loc, w)| w != 0.0 && loc <= horizon)
        .map(|&(loc, w)| {
            let (l, pre) = at(grid.partition_point(|&u| u < loc));
            (loc, w, l, pre)
        })
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut k_raw = vec![0.0; grid.len()];
    let mut a_vec = vec![0.0; p];
    let mut tails = Vec::with_capacity(subjects.len());
    for subj in subjects {
        let u = subj.time;
        if u >= horizon {
            tails.push((subj.index, 0.0));
            continue;
        }
        let (lam_u, pre_u) = at(fit.grid_count_le(u));
        let s0 = bounds.partition_point(|&b| b <= u) - 1;
        let surv_d = |l: f64, pre: &[f64]| -> (f64, Vec<f64>) {
            let dl = l - lam_u;
            let s = (-subj.c * dl).exp();
            let d = (0..p).map(|a| (pre[a] - pre_u[a]) - subj.x[a] * dl).collect();
            (s, d)
        };
        let mut acc = 0.0;
        let mut acc_a = vec![0.0; p];
        let mut atom_ptr = atoms.len();
        for s in (s0..nseg).rev() {
            let lo = bounds[s].max(u);
            let hi = bounds[s + 1];
            let (sv, d) = surv_d(seg_lam[s], &seg_pre[s]);
            let w = seg_psi[s] * sv * (hi - lo);
            acc += w;
            for a in 0..p {
                acc_a[a] += w * d[a];
            }
            while atom_ptr > 0 && atoms[atom_ptr - 1].0 > lo {
                let (_, mass, l, ref pre) = atoms[atom_ptr - 1];
                let (sa, da) = surv_d(l, pre);
                acc += mass * sa;
                for a in 0..p {
                    acc_a[a] += mass * sa * da[a];
                }
                atom_ptr -= 1;
            }
            if let Some(g) = seg_grid[s] {
                if bounds[s] > u {
                    k_raw[g] += subj.c * acc;
                }
            }
        }
        for a in 0..p {
            a_vec[a] += subj.c * acc_a[a];
        }
        tails.push((subj.index, acc));
    }

    let inv_n = 1.0 / n_target as f64;
    let beta_weight: Vec<f64> = (0..p)
        .map(|r| inv_n * dot(&fit.info_inverse[r], &a_vec))
        .collect();
    let k_over_u0: Vec<f64> = k_raw
        .iter()
        .zip(&fit.risk_stats.u0)
        .map(|(k, u0)| inv_n * k / u0)
        .collect();
    let mut run = 0.0;
    let k_prefix = k_over_u0
        .iter()
        .zip(&fit.d_lambda)
        .map(|(ku, dl)| {
            run += ku * dl;
            run
        })
        .collect();
    Sweep {
        tails,
        beta_weight,
        k_prefix,
        k_over_u0,
    }
}

/// Build the series for weights `psi`, linearizing around the curves
/// pooled over all imputations.
pub fn build_martingale_series(
    dataset: &TrialDataset,
    imputed: &ImputedDataset<'_>,
    fit1: &CoxFit,
    fit0: &CoxFit,
    residuals1: &ResidualIngredients,
    residuals0: &ResidualIngredients,
    psi: &PsiWeights,
    config: &SensitivityConfig,
) -> Result<MartingaleSeries> {
    let m = imputed.m;
    let recs = dataset.records();
    let n = dataset.n();
    let sqrt_n = (n as f64).sqrt();
    let horizon = psi.tau;
    if residuals1.arm != Arm::Treated || residuals0.arm != Arm::Control {
        return Err(Error::InvalidConfig("residual ingredients passed for the wrong arms".into()));
    }

    // ∫_{U_i}^H ψ_a S_i for each censored subject, and φ contributions per fit subject.
    let mut tail = vec![0.0; n];
    let mut phi = vec![0.0; n];
    for target in [Arm::Treated, Arm::Control] {
        let psi_a = psi.arm(target);
        if psi_a.is_zero() {
            continue;
        }
        for fit_arm in [Arm::Treated, Arm::Control] {
            let fit = pick(fit1, fit0, fit_arm);
            let subjects: Vec<Censored> = recs
                .iter()
                .enumerate()
                .filter(|(_, r)| r.arm == target)
                .filter_map(|(i, r)| {
                    let (f, delta) = config.law(r)?;
                    (f == fit_arm).then(|| Censored {
                        index: i,
                        time: r.time,
                        c: delta * fit.risk_score(&r.covariates),
                        x: r.covariates.clone(),
                    })
                })
                .collect();
            if subjects.is_empty() {
                continue;
            }
            let sw = sweep(fit, psi_a, horizon, &subjects, dataset.n_arm(target));
            for &(i, v) in &sw.tails {
                tail[i] = v;
            }
            let res = match fit_arm {
                Arm::Treated => residuals1,
                Arm::Control => residuals0,
            };
            for (local, &j) in res.subjects.iter().enumerate() {
                let rec = &recs[j];
                let count = fit.grid_count_le(rec.time);
                let mut b = if count > 0 {
                    -res.risk_scores[local] * sw.k_prefix[count - 1]
                } else {
                    0.0
                };
                if rec.event {
                    b += sw.k_over_u0[count - 1];
                }
                phi[j] += dot(&sw.beta_weight, &res.score_residuals[local]) - b;
            }
        }
    }

    let mut xi = Vec::with_capacity((1 + m) * n);
    for arm in [Arm::Treated, Arm::Control] {
        let psi_a = psi.arm(arm);
        let n_a = dataset.n_arm(arm) as f64;
        let members = dataset.arm_indices(arm);
        let pooled: Vec<f64> = members
            .iter()
            .flat_map(|&i| imputed.imputed_times[i].iter().copied())
            .collect();
        let s_mi: StepFunction = empirical_survival(&pooled);
        let centre = psi_a.apply(&s_mi, horizon);
        let cum = |t: f64| psi_a.density.integral(0.0, t.min(horizon));
        let atoms_in = |lo: f64, hi: f64| -> f64 {
            // Σ w over atoms with lo < loc <= hi.
            psi_a
                .atoms
                .iter()
                .filter(|&&(loc, _)| loc > lo && loc <= hi)
                .map(|&(_, w)| w)
                .sum()
        };
        let scale = sqrt_n / n_a;
        for &i in &members {
            let r = &recs[i];
            let own = cum(r.time) + atoms_in(f64::NEG_INFINITY, r.time);
            let censored_part = if r.event { 0.0 } else { tail[i] };
            xi.push(scale * (own + censored_part - centre + phi[i]));
        }
        let imp_scale = sqrt_n / (m as f64 * n_a);
        for &i in &members {
            let r = &recs[i];
            for j in 0..m {
                if r.event || r.time >= horizon {
                    xi.push(0.0);
                    continue;
                }
                let t_star = imputed.imputed_times[i][j];
                let drawn = cum(t_star) - cum(r.time) + atoms_in(r.time, t_star);
                xi.push(imp_scale * (drawn - tail[i]));
            }
        }
    }
    Ok(MartingaleSeries {
        xi,
        n1: dataset.n1(),
        n0: dataset.n0(),
        m,
    })
}
