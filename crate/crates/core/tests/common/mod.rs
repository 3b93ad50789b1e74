//! Independent oracles shared by the integration tests. Nothing here calls
//! into the estimation code it is used to check.

#![allow(dead_code)]

use survsens::data::{Arm, Reason, SurvivalRecord, TrialDataset};

/// Log partial likelihood with Breslow ties for one covariate, written
/// directly from the definition: a double loop over events and risk sets.
pub fn brute_log_pl(times: &[f64], events: &[bool], x: &[f64], beta: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        let denom: f64 = (0..times.len())
            .filter(|&k| times[k] >= times[i])
            .map(|k| (beta * x[k]).exp())
            .sum();
        ll += beta * x[i] - denom.ln();
    }
    ll
}

/// Score of [`brute_log_pl`], by the same double loop.
pub fn brute_score(times: &[f64], events: &[bool], x: &[f64], beta: f64) -> f64 {
    let mut u = 0.0;
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        let (mut s0, mut s1) = (0.0, 0.0);
        for k in 0..times.len() {
            if times[k] >= times[i] {
                let r = (beta * x[k]).exp();
                s0 += r;
                s1 += r * x[k];
            }
        }
        u += x[i] - s1 / s0;
    }
    u
}

/// One-sample Kolmogorov–Smirnov distance of `sample` against `cdf`.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let f = cdf(s[i]);
        d = d.max((i as f64 / n - f).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    d
}

/// Critical KS distance at level 0.01 for large samples.
pub fn ks_critical_01(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Restricted mean `∫_0^τ P(T > t) dt` computed as `mean(min(T, τ))`.
pub fn mean_min(times: &[f64], tau: f64) -> f64 {
    times.iter().map(|t| t.min(tau)).sum::<f64>() / times.len() as f64
}

/// A small two-arm dataset from `(arm, time, event, dropout, x)` tuples.
pub fn dataset(rows: &[(Arm, f64, bool, bool, f64)]) -> TrialDataset {
    let records = rows
        .iter()
        .enumerate()
        .map(|(k, &(arm, time, event, dropout, x))| SurvivalRecord {
            id: format!("s{k}"),
            arm,
            time,
            event,
            reason: match (event, dropout) {
                (true, _) => Reason::NotApplicable,
                (false, true) => Reason::Dropout,
                (false, false) => Reason::Administrative,
            },
            covariates: vec![x],
        })
        .collect();
    TrialDataset::new(records, vec!["x".into()]).unwrap()
}
