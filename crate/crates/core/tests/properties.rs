mod common;

use proptest::prelude::*;

use common::{brute_log_pl, brute_score, dataset, ks_critical_01, ks_distance, mean_min};
use survsens::cox::{conditional_survival, fit_cox, residual_ingredients};
use survsens::data::{derive_reason, read_csv, tmax_info, write_csv, Arm, Reason, TrialDataset};
use survsens::estimands::{
    empirical_survival, estimand_value, psi_weights, EstimandKind, EstimandSpec, SurvCurvePair,
};
use survsens::imputation::{draw_with_fraction, impute, SensitivityConfig, SensitivityModel};
use survsens::inference::{
    analyze_detailed, build_martingale_series, mi_estimate, rubin_variance, AnalysisOptions,
};
use survsens::rng;
use survsens::simulation::{generate_trial, SimDesign};
use survsens::step::{Continuity, StepFunction};

type Row = (Arm, f64, bool, bool, f64);

/// Times on a 0.1 lattice so ties are common.
fn arm_rows(arm: Arm, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Row>> {
    prop::collection::vec((1u32..60, 0u8..10, -2.0f64..2.0), n).prop_map(move |v| {
        v.into_iter()
            .enumerate()
            .map(|(k, (t, kind, x))| {
                let event = k == 0 || kind < 6;
                (arm, f64::from(t) * 0.1, event, !event && kind < 8, x)
            })
            .collect()
    })
}

fn trial(n: std::ops::Range<usize>) -> impl Strategy<Value = TrialDataset> {
    (arm_rows(Arm::Treated, n.clone()), arm_rows(Arm::Control, n)).prop_map(|(mut a, b)| {
        a.extend(b);
        dataset(&a)
    })
}

fn step_function() -> impl Strategy<Value = StepFunction> {
    (prop::collection::btree_set(0u32..400, 0..12), -3.0f64..3.0, any::<bool>()).prop_flat_map(
        |(knots, before, left)| {
            let k = knots.len();
            prop::collection::vec(-3.0f64..3.0, k).prop_map(move |values| {
                let knots: Vec<f64> = knots.iter().map(|&t| f64::from(t) * 0.025).collect();
                let cont = if left { Continuity::Left } else { Continuity::Right };
                StepFunction::new(knots, values, before, cont).unwrap()
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn step_integral_is_additive(f in step_function(), a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.0f64..10.0) {
        let mut p = [a, b, c];
        p.sort_by(f64::total_cmp);
        let whole = f.integral(p[0], p[2]);
        let parts = f.integral(p[0], p[1]) + f.integral(p[1], p[2]);
        prop_assert!((whole - parts).abs() <= 1e-9 * (1.0 + whole.abs()));
        prop_assert_eq!(f.integral(p[2], p[0]), 0.0);
    }

    #[test]
    fn step_integral_matches_midpoint_sum(f in step_function(), b in 0.1f64..10.0) {
        // Midpoint rule on a grid that refines every knot interval is exact.
        let mut cuts: Vec<f64> = std::iter::once(0.0)
            .chain(f.knots().iter().copied().filter(|&k| k > 0.0 && k < b))
            .chain(std::iter::once(b))
            .collect();
        cuts.dedup();
        let sum: f64 = cuts.windows(2).map(|w| f.eval(0.5 * (w[0] + w[1])) * (w[1] - w[0])).sum();
        prop_assert!((f.integral(0.0, b) - sum).abs() <= 1e-9 * (1.0 + sum.abs()));
    }

    #[test]
    fn integrated_survival_is_mean_of_truncated_times(
        times in prop::collection::vec(0.0f64..20.0, 1..200),
        tau in 0.01f64..25.0,
    ) {
        let s = empirical_survival(&times);
        let direct = mean_min(&times, tau);
        prop_assert!((s.integral(0.0, tau) - direct).abs() <= 1e-12 * direct.abs().max(1e-300));
    }

    #[test]
    fn estimands_ignore_record_order(
        t1 in prop::collection::vec(1u32..100, 2..40).prop_shuffle(),
        t0 in prop::collection::vec(1u32..100, 2..40),
        seed in any::<u64>(),
    ) {
        let t1: Vec<f64> = t1.into_iter().map(|t| f64::from(t) * 0.05).collect();
        let t0: Vec<f64> = t0.into_iter().map(|t| f64::from(t) * 0.05).collect();
        let mut p1 = t1.clone();
        let mut p0 = t0.clone();
        // Deterministic reshuffle driven by the seed.
        let mut r = rng::stream(seed, 0, 0, 0);
        use rand::seq::SliceRandom;
        p1.shuffle(&mut r);
        p0.shuffle(&mut r);
        let a = SurvCurvePair::from_times(&t1, &t0);
        let b = SurvCurvePair::from_times(&p1, &p0);
        let w = StepFunction::new(vec![1.0], vec![0.5], 1.0, Continuity::Right).unwrap();
        let specs = [
            EstimandSpec::new(EstimandKind::SurvDiffAt, 1.5),
            EstimandSpec::new(EstimandKind::RmstDiff, 2.0),
            EstimandSpec { weight_fn: Some(w), ..EstimandSpec::new(EstimandKind::WeightedRmstDiff, 2.0) },
            EstimandSpec::new(EstimandKind::RmtlRatio, 2.0),
            EstimandSpec::new(EstimandKind::QuantileDiff, 0.5),
        ];
        for spec in &specs {
            match (estimand_value(&a, spec), estimand_value(&b, spec)) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
                (Err(_), Err(_)) => {}
                (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
            }
        }
    }

    #[test]
    fn linear_form_predicts_small_perturbations(
        t1 in prop::collection::vec(1u32..100, 5..60),
        t0 in prop::collection::vec(1u32..100, 5..60),
        eps in 0.002f64..0.01,
        treated in any::<bool>(),
    ) {
        let t1: Vec<f64> = t1.into_iter().map(|t| f64::from(t) * 0.03).collect();
        let t0: Vec<f64> = t0.into_iter().map(|t| f64::from(t) * 0.03).collect();
        let base = SurvCurvePair::from_times(&t1, &t0);
        let tau = 2.0;
        prop_assume!(base.s1.eval(tau) > 0.0 && base.s0.eval(tau) > 0.0);
        // Keep restricted mean lost time away from zero so the ratio stays
        // in its first-order regime at this perturbation size.
        let lost = |s: &StepFunction| tau - s.integral(0.0, tau);
        prop_assume!(lost(&base.s1) > 0.25 * tau && lost(&base.s0) > 0.25 * tau);
        let shrink = |s: &StepFunction| s.map(|v| v * (1.0 - eps));
        let moved = if treated {
            SurvCurvePair { s1: shrink(&base.s1), ..base.clone() }
        } else {
            SurvCurvePair { s0: shrink(&base.s0), ..base.clone() }
        };
        let zero = StepFunction::constant(0.0);
        let w = StepFunction::new(vec![1.0], vec![0.5], 1.0, Continuity::Right).unwrap();
        let specs = [
            EstimandSpec::new(EstimandKind::SurvDiffAt, tau),
            EstimandSpec::new(EstimandKind::RmstDiff, tau),
            EstimandSpec { weight_fn: Some(w), ..EstimandSpec::new(EstimandKind::WeightedRmstDiff, tau) },
            EstimandSpec::new(EstimandKind::RmtlRatio, tau),
        ];
        for spec in &specs {
            let psi = psi_weights(&base, spec).unwrap();
            let actual = estimand_value(&moved, spec).unwrap() - estimand_value(&base, spec).unwrap();
            let diff1 = if treated { base.s1.map(|v| -eps * v) } else { zero.clone() };
            let diff0 = if treated { zero.clone() } else { base.s0.map(|v| -eps * v) };
            let predicted = psi.linear_form(&diff1, &diff0);
            prop_assert!(
                (actual - predicted).abs() <= 0.05 * actual.abs() + 1e-12,
                "{:?}: actual {} predicted {}", spec.kind, actual, predicted
            );
        }
    }

    #[test]
    fn csv_round_trip_is_exact(data in trial(2..30)) {
        let mut first = Vec::new();
        write_csv(&data, &mut first).unwrap();
        let back = read_csv(first.as_slice(), data.covariate_names()).unwrap();
        prop_assert_eq!(&back, &data);
        let mut second = Vec::new();
        write_csv(&back, &mut second).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn reason_derivation_is_idempotent(data in trial(2..30), cut in 0.5f64..6.0) {
        let once = derive_reason(&data, cut).unwrap();
        let twice = derive_reason(&once, cut).unwrap();
        prop_assert_eq!(&once, &twice);
        for r in once.records().iter().filter(|r| !r.event) {
            prop_assert_eq!(r.reason == Reason::Administrative, r.time >= cut);
        }
    }

    #[test]
    fn t_tilde_max_is_the_smaller_maximum(data in trial(2..30)) {
        let info = tmax_info(&data).unwrap();
        prop_assert!(info.t_tilde_max <= info.t1_max && info.t_tilde_max <= info.t0_max);
        prop_assert!(info.t_tilde_max == info.t1_max || info.t_tilde_max == info.t0_max);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn breslow_martingale_increments_cancel(data in trial(3..40)) {
        for arm in Arm::BOTH {
            let Ok(fit) = fit_cox(&data, arm) else { continue };
            let res = residual_ingredients(&fit, &data);
            let mut sums = vec![0.0; fit.event_grid.len()];
            let mut scale = vec![0.0; fit.event_grid.len()];
            for local in 0..res.subjects.len() {
                for (k, (_, dm)) in res.martingale_increments(local).into_iter().enumerate() {
                    sums[k] += dm;
                    scale[k] += dm.abs();
                }
            }
            for (s, sc) in sums.iter().zip(&scale) {
                prop_assert!(s.abs() <= 1e-10 * sc.max(1.0), "{} vs scale {}", s, sc);
            }
        }
    }

    #[test]
    fn cox_estimate_maximizes_partial_likelihood(
        rows in prop::collection::vec((1u32..30, 0u8..10, -2.0f64..2.0), 2..=8),
    ) {
        let times: Vec<f64> = rows.iter().map(|r| f64::from(r.0) * 0.1).collect();
        let events: Vec<bool> = rows.iter().enumerate().map(|(k, r)| k == 0 || r.1 < 6).collect();
        let x: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let mut all: Vec<Row> = (0..rows.len())
            .map(|k| (Arm::Treated, times[k], events[k], false, x[k]))
            .collect();
        all.push((Arm::Control, 1.0, true, false, 0.0));
        all.push((Arm::Control, 2.0, true, false, 1.0));
        let data = dataset(&all);
        let Ok(fit) = fit_cox(&data, Arm::Treated) else { return Ok(()) };
        let beta = fit.beta_hat[0];

        let at_hat = brute_log_pl(&times, &events, &x, beta);
        let grid_best = (-1000..=1000)
            .map(|k| brute_log_pl(&times, &events, &x, f64::from(k) * 0.01))
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(at_hat >= grid_best - 1e-9, "beta {} ll {} grid {}", beta, at_hat, grid_best);
        prop_assert!(brute_score(&times, &events, &x, beta).abs() < 1e-6);
        prop_assert!(fit.log_likelihood_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        prop_assert!((fit.log_likelihood_trace.last().unwrap() - at_hat).abs() < 1e-9 * (1.0 + at_hat.abs()));

        // Observed information against a central difference of the score.
        let h = 1e-5;
        let fd = -(brute_score(&times, &events, &x, beta + h) - brute_score(&times, &events, &x, beta - h)) / (2.0 * h);
        let info = fit.info_matrix[0][0] * fit.n_arm as f64;
        prop_assert!((info - fd).abs() <= 1e-4 * fd.abs().max(1e-8), "info {} fd {}", info, fd);
    }

    #[test]
    fn conditional_survival_is_a_proper_curve(data in trial(3..40), x in -2.0f64..2.0) {
        let Ok(fit) = fit_cox(&data, Arm::Control) else { return Ok(()) };
        let s = conditional_survival(&fit, &[x]);
        prop_assert_eq!(s.value_before_first(), 1.0);
        let mut prev = 1.0;
        for (&v, &lam) in s.values().iter().zip(fit.cum_hazard_at_knots()) {
            // Far in the tail the closed form can underflow to exactly zero.
            prop_assert!(v >= 0.0 && v <= prev);
            let closed = (-lam * fit.risk_score(&[x])).exp();
            prop_assert!((v - closed).abs() <= 1e-14);
            prev = v;
        }
    }

    #[test]
    fn imputed_times_respect_the_grid(data in trial(3..40), delta in 0.2f64..4.0, seed in any::<u64>(), control in any::<bool>()) {
        let (Ok(f1), Ok(f0)) = (fit_cox(&data, Arm::Treated), fit_cox(&data, Arm::Control)) else { return Ok(()) };
        let model = if control { SensitivityModel::ControlBased } else { SensitivityModel::DeltaAdjusted };
        let cfg = SensitivityConfig::new(model, delta, 3, seed);
        let imp = impute(&data, &f1, &f0, &cfg).unwrap();
        let grid_max = *imp.grid.last().unwrap();
        for (i, rec) in data.records().iter().enumerate() {
            for j in 0..cfg.m {
                let t = imp.imputed_times[i][j];
                if rec.event {
                    prop_assert_eq!(t, rec.time);
                    continue;
                }
                prop_assert!(t >= rec.time);
                prop_assert!(imp.grid.contains(&t) || t == rec.time);
                if imp.truncated_flags[i][j] {
                    prop_assert_eq!(t, grid_max);
                }
            }
        }
    }

    #[test]
    fn imputed_time_is_nonincreasing_in_delta(
        data in trial(3..40), d1 in 0.1f64..5.0, d2 in 0.1f64..5.0, v in 1e-9f64..=1.0, who in any::<prop::sample::Index>(),
    ) {
        let Ok(fit) = fit_cox(&data, Arm::Treated) else { return Ok(()) };
        let rec = &data.records()[who.index(data.n())];
        let s = conditional_survival(&fit, &rec.covariates);
        let grid = survsens::imputation::imputation_grid(&data, tmax_info(&data).unwrap().t_tilde_max);
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let a = draw_with_fraction(&s, rec.time, lo, &grid, v);
        let b = draw_with_fraction(&s, rec.time, hi, &grid, v);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!(b.time <= a.time);
        }
    }

    #[test]
    fn models_agree_when_nothing_is_a_dropout(data in trial(3..40), seed in any::<u64>()) {
        let admin = derive_reason(&data, 1e-9).unwrap();
        let (Ok(f1), Ok(f0)) = (fit_cox(&admin, Arm::Treated), fit_cox(&admin, Arm::Control)) else { return Ok(()) };
        let a = impute(&admin, &f1, &f0, &SensitivityConfig::new(SensitivityModel::DeltaAdjusted, 1.0, 4, seed)).unwrap();
        let b = impute(&admin, &f1, &f0, &SensitivityConfig::new(SensitivityModel::ControlBased, 1.0, 4, seed)).unwrap();
        prop_assert_eq!(a.imputed_times, b.imputed_times);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mi_point_is_the_imputation_mean(seed in any::<u64>(), delta in 0.5f64..3.0) {
        let d = SimDesign::sim1(60);
        let data = generate_trial(&d, &mut rng::stream(seed, rng::domain::TRIAL, 0, 0)).unwrap();
        let t_max = tmax_info(&data).unwrap().t_tilde_max;
        let (Ok(f1), Ok(f0)) = (fit_cox(&data, Arm::Treated), fit_cox(&data, Arm::Control)) else { return Ok(()) };
        let cfg = SensitivityConfig::new(SensitivityModel::DeltaAdjusted, delta, 5, seed);
        let imp = impute(&data, &f1, &f0, &cfg).unwrap();
        let spec = EstimandSpec::new(EstimandKind::RmstDiff, 0.9 * t_max);
        let est = mi_estimate(&imp, &spec).unwrap();
        let mean = est.per_imputation.iter().sum::<f64>() / est.per_imputation.len() as f64;
        prop_assert_eq!(est.point, mean);
        let within = est.within_vars.iter().sum::<f64>() / est.within_vars.len() as f64;
        prop_assert!(rubin_variance(&est) >= within);

        let r1 = residual_ingredients(&f1, &data);
        let r0 = residual_ingredients(&f0, &data);
        let psi = psi_weights(&est.pooled_curves(), &spec).unwrap();
        let series = build_martingale_series(&data, &imp, &f1, &f0, &r1, &r0, &psi, &cfg).unwrap();
        prop_assert_eq!(series.len(), (1 + cfg.m) * data.n());
        prop_assert_eq!(series.treated_parameter_terms().len(), data.n1());
        prop_assert_eq!(series.control_imputation_terms().len(), data.n0() * cfg.m);
    }

    #[test]
    fn thread_count_does_not_change_results(seed in any::<u64>()) {
        let d = SimDesign::sim1(80);
        let data = generate_trial(&d, &mut rng::stream(seed, rng::domain::TRIAL, 0, 0)).unwrap();
        let t_max = tmax_info(&data).unwrap().t_tilde_max;
        let spec = EstimandSpec::new(EstimandKind::RmstDiff, 0.9 * t_max);
        let cfg = SensitivityConfig::new(SensitivityModel::DeltaAdjusted, 1.5, 4, seed);
        let opts = AnalysisOptions { b: 30, ..AnalysisOptions::default() };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                analyze_detailed(&data, &spec, &cfg, &opts).map(|r| (r.report, r.imputed.imputed_times))
            })
        };
        match (run(1), run(3)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a.is_ok(), b.is_ok()),
        }
    }
}

#[test]
fn generator_event_times_follow_truncated_exponential() {
    let mut d = SimDesign::sim1(20_000);
    d.beta1 = vec![0.0];
    d.beta_c = vec![0.0];
    let data = generate_trial(&d, &mut rng::stream(21, rng::domain::TRIAL, 0, 0)).unwrap();
    // With covariate effects off, observed event times have density
    // proportional to λ exp(-(λ + λ_C) t) on [0, L].
    let rate = d.lambda1 + d.lambda_c;
    let l = d.admin_l;
    let cdf = |t: f64| (1.0 - (-rate * t).exp()) / (1.0 - (-rate * l).exp());
    let times: Vec<f64> = data
        .records()
        .iter()
        .filter(|r| r.arm == Arm::Treated && r.event)
        .map(|r| r.time)
        .collect();
    let dist = ks_distance(&times, cdf);
    assert!(dist < ks_critical_01(times.len()), "KS distance {dist} over {} events", times.len());
}

#[test]
fn doubled_hazard_residuals_are_exponential() {
    // Constant hazard, no covariate effect: after censoring at u the imputed
    // residual under δ = 2 is Exponential(2λ), up to Breslow estimation error
    // and the discreteness of the grid.
    let mut d = SimDesign::sim1(20_000);
    d.beta1 = vec![0.0];
    d.beta_c = vec![0.0];
    d.admin_l = 40.0;
    let data = generate_trial(&d, &mut rng::stream(22, rng::domain::TRIAL, 0, 0)).unwrap();
    let fit = fit_cox(&data, Arm::Treated).unwrap();
    let t_max = tmax_info(&data).unwrap().t_tilde_max;
    let grid = survsens::imputation::imputation_grid(&data, t_max);
    let s = conditional_survival(&fit, &[0.0]);
    let u = 0.5;
    let mut r = rng::stream(23, 0, 0, 0);
    let residuals: Vec<f64> = (0..100_000)
        .map(|_| {
            survsens::imputation::inverse_transform_draw(&s, u, 2.0, &grid, &mut r)
                .unwrap()
                .time
                - u
        })
        .collect();
    let lambda = d.lambda1;
    let dist = ks_distance(&residuals, |t| 1.0 - (-2.0 * lambda * t).exp());
    // 0.0052 is the level-0.01 KS bound at 10^5 draws; the rest covers Λ̂ error.
    assert!(dist < ks_critical_01(residuals.len()) + 0.015, "KS distance {dist}");
}
