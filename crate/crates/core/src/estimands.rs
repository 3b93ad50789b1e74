//! Treatment-effect functionals of two survival curves, their linearization
//! weights, and per-subject influence values.

use serde::{Deserialize, Serialize};

use crate::data::Arm;
use crate::error::{Error, Result};
use crate::step::{Continuity, StepFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimandKind {
    /// `S1(τ) - S0(τ)`.
    SurvDiffAt,
    /// Difference in restricted mean survival time up to `τ`.
    RmstDiff,
    /// `∫_0^τ ω(t) {S1(t) - S0(t)} dt`.
    WeightedRmstDiff,
    /// Ratio of restricted mean time lost, treated over control.
    RmtlRatio,
    /// Difference of the `τ`-th survival quantiles, `τ ∈ (0, 1)`.
    QuantileDiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSpec {
    pub kind: EstimandKind,
    pub tau: f64,
    /// Nonnegative weight for [`EstimandKind::WeightedRmstDiff`].
    pub weight_fn: Option<StepFunction>,
    /// Density-estimation bandwidth for [`EstimandKind::QuantileDiff`].
    pub bandwidth: Option<f64>,
}

impl EstimandSpec {
    pub fn new(kind: EstimandKind, tau: f64) -> Self {
        Self {
            kind,
            tau,
            weight_fn: None,
            bandwidth: None,
        }
    }

    /// Check the spec against the data's `T̃_max`.
    pub fn validate(&self, t_tilde_max: f64) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidSpec(format!("tau must be positive, got {}", self.tau)));
        }
        match self.kind {
            EstimandKind::QuantileDiff => {
                if self.tau >= 1.0 {
                    return Err(Error::InvalidSpec(format!(
                        "quantile level tau must lie in (0, 1), got {}",
                        self.tau
                    )));
                }
                if let Some(h) = self.bandwidth {
                    if !(h > 0.0 && h.is_finite()) {
                        return Err(Error::InvalidSpec(format!("bandwidth must be positive, got {h}")));
                    }
                }
            }
            _ if self.tau >= t_tilde_max => {
                return Err(Error::InvalidSpec(format!(
                    "tau = {} violates tau < T_max = {} (the smaller of the two arms' largest event times)",
                    self.tau, t_tilde_max
                )));
            }
            _ => {}
        }
        if self.kind == EstimandKind::WeightedRmstDiff {
            let w = self
                .weight_fn
                .as_ref()
                .ok_or_else(|| Error::InvalidSpec("weighted RMST needs a weight function".into()))?;
            if w.value_before_first() < 0.0 || w.values().iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidSpec("weight function must be nonnegative".into()));
            }
        } else if self.weight_fn.is_some() {
            return Err(Error::InvalidSpec("a weight function is only used by weighted RMST".into()));
        }
        Ok(())
    }

    fn weight(&self) -> StepFunction {
        self.weight_fn.clone().unwrap_or_else(|| StepFunction::constant(1.0))
    }
}

/// `t -> (1/n) Σ 1(T_i >= t)`, left-continuous.
pub fn empirical_survival(times: &[f64]) -> StepFunction {
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i];
        while i < sorted.len() && sorted[i] == t {
            i += 1;
        }
        knots.push(t);
        values.push((sorted.len() - i) as f64 / n);
    }
    StepFunction::new(knots, values, 1.0, Continuity::Left).expect("sorted distinct knots")
}

/// Survival curves of the two arms plus the sample sizes behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvCurvePair {
    pub s1: StepFunction,
    pub s0: StepFunction,
    /// Subjects per arm (used for the default quantile bandwidth).
    pub n1: usize,
    pub n0: usize,
}

impl SurvCurvePair {
    pub fn from_times(t1: &[f64], t0: &[f64]) -> Self {
        Self {
            s1: empirical_survival(t1),
            s0: empirical_survival(t0),
            n1: t1.len(),
            n0: t0.len(),
        }
    }

    pub fn curve(&self, arm: Arm) -> &StepFunction {
        match arm {
            Arm::Treated => &self.s1,
            Arm::Control => &self.s0,
        }
    }

    pub fn n(&self, arm: Arm) -> usize {
        match arm {
            Arm::Treated => self.n1,
            Arm::Control => self.n0,
        }
    }
}

/// `inf{q : S(q) <= level}`.
pub fn survival_quantile(curve: &StepFunction, level: f64, arm: Arm) -> Result<f64> {
    if curve.value_before_first() <= level {
        return Ok(0.0);
    }
    curve
        .values()
        .iter()
        .position(|&v| v <= level)
        .map(|j| curve.knots()[j])
        .ok_or(Error::QuantileUndefined {
            arm: arm.code(),
            level,
        })
}

/// The single-arm functional underlying an estimand: `S(τ)`, RMST, weighted
/// RMST, RMTL or the `τ`-quantile.
pub fn arm_component(curve: &StepFunction, spec: &EstimandSpec, arm: Arm) -> Result<f64> {
    let tau = spec.tau;
    Ok(match spec.kind {
        EstimandKind::SurvDiffAt => curve.eval(tau),
        EstimandKind::RmstDiff => curve.integral(0.0, tau),
        EstimandKind::WeightedRmstDiff => curve.integral_product(&spec.weight(), 0.0, tau),
        EstimandKind::RmtlRatio => tau - curve.integral(0.0, tau),
        EstimandKind::QuantileDiff => survival_quantile(curve, tau, arm)?,
    })
}

pub fn estimand_value(curves: &SurvCurvePair, spec: &EstimandSpec) -> Result<f64> {
    let c1 = arm_component(&curves.s1, spec, Arm::Treated)?;
    let c0 = arm_component(&curves.s0, spec, Arm::Control)?;
    if spec.kind == EstimandKind::RmtlRatio {
        if c0 == 0.0 {
            return Err(Error::ZeroDenominator);
        }
        Ok(c1 / c0)
    } else {
        Ok(c1 - c0)
    }
}

/// Linearization weight of one arm: a density on `[0, τ]` plus point masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmPsi {
    pub density: StepFunction,
    /// `(location, mass)` pairs.
    pub atoms: Vec<(f64, f64)>,
}

impl ArmPsi {
    pub fn zero() -> Self {
        Self {
            density: StepFunction::constant(0.0),
            atoms: Vec::new(),
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            density: self.density.map(|v| v * k),
            atoms: self.atoms.iter().map(|&(t, w)| (t, w * k)).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.density.value_before_first() == 0.0
            && self.density.values().iter().all(|&v| v == 0.0)
            && self.atoms.iter().all(|&(_, w)| w == 0.0)
    }

    /// `∫_0^τ ψ(t) f(t) dt` with atoms applied to `f`'s own evaluation.
    pub fn apply(&self, f: &StepFunction, tau: f64) -> f64 {
        self.density.integral_product(f, 0.0, tau)
            + self.atoms.iter().map(|&(t, w)| w * f.eval(t)).sum::<f64>()
    }
}

/// `ψ_1` and `ψ_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiWeights {
    pub tau: f64,
    pub treated: ArmPsi,
    pub control: ArmPsi,
}

impl PsiWeights {
    pub fn arm(&self, arm: Arm) -> &ArmPsi {
        match arm {
            Arm::Treated => &self.treated,
            Arm::Control => &self.control,
        }
    }

    /// Predicted change `Σ_a ∫ψ_a (S'_a - S_a)` given the curve differences.
    pub fn linear_form(&self, d1: &StepFunction, d0: &StepFunction) -> f64 {
        self.treated.apply(d1, self.tau) + self.control.apply(d0, self.tau)
    }
}

/// Standard deviation of the distribution a survival curve describes,
/// with any mass left at the end placed on the last knot.
fn curve_sd(curve: &StepFunction) -> f64 {
    let mut prev = curve.value_before_first();
    let (mut m1, mut m2) = (0.0, 0.0);
    for (&t, &v) in curve.knots().iter().zip(curve.values()) {
        let mass = prev - v;
        m1 += mass * t;
        m2 += mass * t * t;
        prev = v;
    }
    if let Some(&last) = curve.knots().last() {
        m1 += prev * last;
        m2 += prev * last * last;
    }
    (m2 - m1 * m1).max(0.0).sqrt()
}

/// Symmetric-difference estimate of `dS/dt` at `q`.
pub fn survival_slope(curve: &StepFunction, q: f64, bandwidth: f64) -> f64 {
    (curve.eval(q + bandwidth) - curve.eval(q - bandwidth)) / (2.0 * bandwidth)
}

/// Default bandwidth `1.06 · sd · n^{-1/5}`.
pub fn default_bandwidth(curve: &StepFunction, n: usize) -> f64 {
    1.06 * curve_sd(curve) * (n.max(1) as f64).powf(-0.2)
}

/// Linearization of [`arm_component`] for one arm.
pub fn component_psi(curves: &SurvCurvePair, spec: &EstimandSpec, arm: Arm) -> Result<ArmPsi> {
    let curve = curves.curve(arm);
    let tau = spec.tau;
    Ok(match spec.kind {
        EstimandKind::SurvDiffAt => ArmPsi {
            density: StepFunction::constant(0.0),
            atoms: vec![(tau, 1.0)],
        },
        EstimandKind::RmstDiff => ArmPsi {
            density: StepFunction::constant(1.0),
            atoms: Vec::new(),
        },
        EstimandKind::WeightedRmstDiff => ArmPsi {
            density: spec.weight(),
            atoms: Vec::new(),
        },
        EstimandKind::RmtlRatio => ArmPsi {
            density: StepFunction::constant(-1.0),
            atoms: Vec::new(),
        },
        EstimandKind::QuantileDiff => {
            let q = survival_quantile(curve, tau, arm)?;
            let h = spec
                .bandwidth
                .unwrap_or_else(|| default_bandwidth(curve, curves.n(arm)));
            let slope = survival_slope(curve, q, h);
            if !(slope.abs() > 0.0) || !slope.is_finite() {
                return Err(Error::DensityZero { arm: arm.code() });
            }
            ArmPsi {
                density: StepFunction::constant(0.0),
                atoms: vec![(q, -1.0 / slope)],
            }
        }
    })
}

/// Linearization weights of the two-arm estimand.
///
/// For the ratio and quantile kinds the sign of each arm's weight is
/// confirmed against a finite difference of [`estimand_value`] under a
/// uniform upward shift of that arm's curve.
pub fn psi_weights(curves: &SurvCurvePair, spec: &EstimandSpec) -> Result<PsiWeights> {
    let p1 = component_psi(curves, spec, Arm::Treated)?;
    let p0 = component_psi(curves, spec, Arm::Control)?;
    let mut psi = if spec.kind == EstimandKind::RmtlRatio {
        let r0 = arm_component(&curves.s0, spec, Arm::Control)?;
        if r0 == 0.0 {
            return Err(Error::ZeroDenominator);
        }
        let ratio = estimand_value(curves, spec)?;
        PsiWeights {
            tau: spec.tau,
            treated: p1.scaled(1.0 / r0),
            control: p0.scaled(-ratio / r0),
        }
    } else {
        PsiWeights {
            tau: spec.tau,
            treated: p1,
            control: p0.scaled(-1.0),
        }
    };
    if spec.kind == EstimandKind::QuantileDiff {
        // The level is not a time; integrate up to the furthest atom instead.
        psi.tau = psi
            .treated
            .atoms
            .iter()
            .chain(&psi.control.atoms)
            .map(|&(t, _)| t)
            .fold(0.0, f64::max);
    }
    if matches!(spec.kind, EstimandKind::RmtlRatio | EstimandKind::QuantileDiff) {
        for arm in Arm::BOTH {
            let predicted_sign = |psi: &PsiWeights| {
                let unit = StepFunction::constant(1.0);
                psi.arm(arm).apply(&unit, psi.tau).signum()
            };
            if let Some(observed) = shift_sign(curves, spec, arm)? {
                if observed != predicted_sign(&psi) {
                    let flipped = psi.arm(arm).scaled(-1.0);
                    match arm {
                        Arm::Treated => psi.treated = flipped,
                        Arm::Control => psi.control = flipped,
                    }
                }
            }
        }
    }
    Ok(psi)
}

/// Weights linearizing [`arm_component`] of one arm, zero for the other.
pub fn component_weights(curves: &SurvCurvePair, spec: &EstimandSpec, arm: Arm) -> Result<PsiWeights> {
    let own = component_psi(curves, spec, arm)?;
    let tau = if spec.kind == EstimandKind::QuantileDiff {
        own.atoms.iter().map(|&(t, _)| t).fold(0.0, f64::max)
    } else {
        spec.tau
    };
    let (treated, control) = match arm {
        Arm::Treated => (own, ArmPsi::zero()),
        Arm::Control => (ArmPsi::zero(), own),
    };
    Ok(PsiWeights {
        tau,
        treated,
        control,
    })
}

/// Sign of the change in the estimand when one arm's curve is raised
/// uniformly; `None` if no tried shift moves it.
fn shift_sign(curves: &SurvCurvePair, spec: &EstimandSpec, arm: Arm) -> Result<Option<f64>> {
    let base = estimand_value(curves, spec)?;
    for eps in [0.01, 0.02, 0.05, 0.1] {
        let mut shifted = curves.clone();
        let raised = curves.curve(arm).map(|v| v + eps);
        match arm {
            Arm::Treated => shifted.s1 = raised,
            Arm::Control => shifted.s0 = raised,
        }
        if let Ok(v) = estimand_value(&shifted, spec) {
            let diff = v - base;
            if diff != 0.0 && diff.is_finite() {
                return Ok(Some(diff.signum()));
            }
        }
    }
    Ok(None)
}

/// Per-subject influence values `φ_i = ∫ψ_a {1(T_i >= t) - Ŝ_a(t)} dt` for
/// each arm (`[treated, control]`).
pub fn influence_values(
    completed_times: [&[f64]; 2],
    spec: &EstimandSpec,
    curves: &SurvCurvePair,
) -> Result<[Vec<f64>; 2]> {
    let psi = psi_weights(curves, spec)?;
    Ok(influence_with(completed_times, curves, &psi))
}

/// Influence values under precomputed weights.
pub fn influence_with(
    completed_times: [&[f64]; 2],
    curves: &SurvCurvePair,
    psi: &PsiWeights,
) -> [Vec<f64>; 2] {
    let tau = psi.tau;
    let one = |arm: Arm, times: &[f64]| {
        let p = psi.arm(arm);
        let curve = curves.curve(arm);
        let centre = p.apply(curve, tau);
        times
            .iter()
            .map(|&t| {
                p.density.integral(0.0, t.min(tau))
                    + p.atoms
                        .iter()
                        .map(|&(loc, w)| if t >= loc { w } else { 0.0 })
                        .sum::<f64>()
                    - centre
            })
            .collect()
    };
    [
        one(Arm::Treated, completed_times[0]),
        one(Arm::Control, completed_times[1]),
    ]
}

/// `Σ_a n_a^{-2} Σ_{i in a} φ_i²`.
pub fn influence_variance(phi: &[Vec<f64>; 2]) -> f64 {
    phi.iter()
        .map(|v| {
            let n = v.len() as f64;
            v.iter().map(|x| x * x).sum::<f64>() / (n * n)
        })
        .sum()
}


#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> SurvCurvePair {
        SurvCurvePair::from_times(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0])
    }

    #[test]
    fn empirical_survival_counts() {
        let s = empirical_survival(&[1.0, 2.0, 3.0]);
        assert_eq!(s.eval(1.0), 1.0);
        assert!((s.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.eval(2.5) - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.integral(0.0, 2.5) - 5.5 / 3.0).abs() < 1e-15);
        let single = empirical_survival(&[5.0]);
        assert_eq!((single.eval(5.0), single.eval(5.0 + 1e-9)), (1.0, 0.0));
    }

    #[test]
    fn rmst_and_rmtl_examples() {
        let rmst = estimand_value(&pair(), &EstimandSpec::new(EstimandKind::RmstDiff, 2.5)).unwrap();
        assert!((rmst - 0.5).abs() < 1e-12);
        let ratio = estimand_value(&pair(), &EstimandSpec::new(EstimandKind::RmtlRatio, 2.5)).unwrap();
        assert!((ratio - (2.5 - 11.0 / 6.0) / (2.5 - 4.0 / 3.0)).abs() < 1e-12);
        assert!((ratio - 0.5714).abs() < 1e-4);
    }

    #[test]
    fn identical_curves_are_neutral() {
        let same = SurvCurvePair::from_times(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]);
        for (kind, tau, want) in [
            (EstimandKind::SurvDiffAt, 2.5, 0.0),
            (EstimandKind::RmstDiff, 2.5, 0.0),
            (EstimandKind::RmtlRatio, 2.5, 1.0),
            (EstimandKind::QuantileDiff, 0.5, 0.0),
        ] {
            assert_eq!(estimand_value(&same, &EstimandSpec::new(kind, tau)).unwrap(), want);
        }
        let mut w = EstimandSpec::new(EstimandKind::WeightedRmstDiff, 2.5);
        w.weight_fn = Some(StepFunction::constant(2.0));
        assert_eq!(estimand_value(&same, &w).unwrap(), 0.0);
    }

    #[test]
    fn rmst_weights_are_plus_minus_one() {
        let psi = psi_weights(&pair(), &EstimandSpec::new(EstimandKind::RmstDiff, 2.5)).unwrap();
        assert_eq!(psi.treated.density.eval(1.0), 1.0);
        assert_eq!(psi.control.density.eval(1.0), -1.0);
        assert!(psi.treated.atoms.is_empty() && psi.control.atoms.is_empty());
        let mut w = EstimandSpec::new(EstimandKind::WeightedRmstDiff, 2.5);
        w.weight_fn = Some(StepFunction::constant(1.0));
        let psi_w = psi_weights(&pair(), &w).unwrap();
        assert_eq!(psi_w.treated.density.eval(1.0), 1.0);
        assert_eq!(psi_w.control.density.eval(1.0), -1.0);
    }

    #[test]
    fn rmtl_ratio_weights_match_finite_difference() {
        let spec = EstimandSpec::new(EstimandKind::RmtlRatio, 2.5);
        let curves = pair();
        let psi = psi_weights(&curves, &spec).unwrap();
        let base = estimand_value(&curves, &spec).unwrap();
        for (arm, eps) in [(Arm::Treated, 0.01), (Arm::Treated, -0.01), (Arm::Control, 0.01), (Arm::Control, -0.01)] {
            let mut shifted = curves.clone();
            let bump = StepFunction::constant(eps);
            let zero = StepFunction::constant(0.0);
            match arm {
                Arm::Treated => shifted.s1 = curves.s1.map(|v| v + eps),
                Arm::Control => shifted.s0 = curves.s0.map(|v| v + eps),
            }
            let actual = estimand_value(&shifted, &spec).unwrap() - base;
            let predicted = match arm {
                Arm::Treated => psi.linear_form(&bump, &zero),
                Arm::Control => psi.linear_form(&zero, &bump),
            };
            assert!((actual - predicted).abs() <= 0.05 * actual.abs(), "{arm:?} {eps}: {actual} vs {predicted}");
        }
        // Raising the control curve lowers control RMTL, so the ratio rises.
        assert!(psi.control.density.eval(1.0) > 0.0);
        assert!(psi.treated.density.eval(1.0) < 0.0);
    }

    #[test]
    fn quantile_weight_signs() {
        let grid = |rate: f64| -> Vec<f64> {
            (0..20_000).map(|i| -(1.0 - (i as f64 + 0.5) / 20_000.0).ln() / rate).collect()
        };
        let curves = SurvCurvePair::from_times(&grid(1.0), &grid(2.0));
        let spec = EstimandSpec::new(EstimandKind::QuantileDiff, 0.5);
        let psi = psi_weights(&curves, &spec).unwrap();
        assert!(psi.treated.atoms[0].1 > 0.0);
        assert!(psi.control.atoms[0].1 < 0.0);
        // |1/S'(median)| = 1/(rate/2)
        assert!((psi.treated.atoms[0].1 - 2.0).abs() < 0.05);
        assert!((psi.control.atoms[0].1 + 1.0).abs() < 0.05);
    }

    #[test]
    fn quantile_undefined_below_curve() {
        let curves = SurvCurvePair::from_times(&[1.0, 2.0], &[1.0, 2.0]);
        let s = survival_quantile(&curves.s1, 0.5, Arm::Treated).unwrap();
        assert_eq!(s, 1.0);
        let high = SurvCurvePair::from_times(&[1.0, 2.0, 9.0, 9.0], &[1.0, 2.0]);
        let mut c = high.clone();
        c.s1 = StepFunction::new(vec![1.0], vec![0.6], 1.0, Continuity::Left).unwrap();
        assert!(matches!(
            estimand_value(&c, &EstimandSpec::new(EstimandKind::QuantileDiff, 0.5)),
            Err(Error::QuantileUndefined { arm: 1, .. })
        ));
    }

    #[test]
    fn influence_closed_forms() {
        let t1 = [0.5, 1.0, 2.0, 4.0, 4.0];
        let t0 = [0.2, 0.7, 1.5, 3.0];
        let curves = SurvCurvePair::from_times(&t1, &t0);
        let tau = 2.5;
        let phi = influence_values([&t1, &t0], &EstimandSpec::new(EstimandKind::RmstDiff, tau), &curves).unwrap();
        let var_of = |t: &[f64]| {
            let n = t.len() as f64;
            let y: Vec<f64> = t.iter().map(|x| x.min(tau)).collect();
            let mean = y.iter().sum::<f64>() / n;
            y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n / n
        };
        assert!((influence_variance(&phi) - var_of(&t1) - var_of(&t0)).abs() < 1e-12);

        let phi = influence_values([&t1, &t0], &EstimandSpec::new(EstimandKind::SurvDiffAt, tau), &curves).unwrap();
        let bern = |t: &[f64]| {
            let n = t.len() as f64;
            let p = t.iter().filter(|&&x| x >= tau).count() as f64 / n;
            p * (1.0 - p) / n
        };
        assert!((influence_variance(&phi) - bern(&t1) - bern(&t0)).abs() < 1e-12);
    }

    #[test]
    fn identical_times_have_zero_influence() {
        let t = [2.0; 4];
        let curves = SurvCurvePair::from_times(&t, &t);
        let phi = influence_values([&t, &t], &EstimandSpec::new(EstimandKind::RmstDiff, 1.5), &curves).unwrap();
        assert!(phi.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn tau_rule_is_enforced() {
        let spec = EstimandSpec::new(EstimandKind::RmstDiff, 24.0);
        assert!(spec.validate(24.0).is_err());
        assert!(spec.validate(24.5).is_ok());
        assert!(EstimandSpec::new(EstimandKind::QuantileDiff, 1.5).validate(10.0).is_err());
    }
}
