//! Girsanov change of measure between marked binomial laws.

use std::sync::Arc;

use crate::basis::{convert_coeffs_Z_to_R, OrthogonalBasis};
use crate::chaos::{doleans_exponential, Kernel};
use crate::config_space::{ModelParams, PathFunctional, Space};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMeasure {
    pub jump_prob: f64,
    pub mark_probs: Vec<f64>,
}

impl TargetMeasure {
    pub fn new(jump_prob: f64, mark_probs: Vec<f64>) -> Result<Self> {
        if !(jump_prob > 0.0 && jump_prob < 1.0) {
            return Err(Error::InvalidParam(format!("target lambda = {jump_prob} must lie in (0,1)")));
        }
        if mark_probs.iter().any(|&q| !(q > 0.0)) {
            return Err(Error::InvalidParam("every target Q(k) must be positive".into()));
        }
        let s: f64 = mark_probs.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParam(format!("target Q sums to {s}, not 1")));
        }
        Ok(TargetMeasure { jump_prob, mark_probs })
    }

    /// The source law itself.
    pub fn identity(params: &ModelParams) -> Self {
        TargetMeasure { jump_prob: params.jump_prob, mark_probs: params.mark_probs.clone() }
    }

    pub fn as_params(&self, params: &ModelParams) -> Result<ModelParams> {
        self.check(params)?;
        ModelParams::new(params.horizon, params.marks.clone(), self.jump_prob, self.mark_probs.clone(), params.seed)
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        if self.mark_probs.len() != params.n_marks() {
            return Err(Error::InvalidParam("target and source mark sets differ".into()));
        }
        Ok(())
    }

    /// Per-step density factors by digit.
    fn step_ratios(&self, params: &ModelParams) -> Vec<f64> {
        let mut v = vec![(1.0 - self.jump_prob) / (1.0 - params.jump_prob)];
        v.extend(
            (0..params.n_marks()).map(|k| self.jump_prob * self.mark_probs[k] / params.nu(k)),
        );
        v
    }
}

/// g(t,k) = λ̃Q̃(k)/(λQ(k)) − (1−λ̃)/(1−λ), constant in t, as ΔZ coefficients.
pub fn girsanov_drift(params: &ModelParams, target: &TargetMeasure) -> Result<Kernel> {
    target.check(params)?;
    let ratio = target.step_ratios(params);
    let mut g = Kernel::new();
    for t in 1..=params.horizon {
        for k in 0..params.n_marks() {
            g.insert(vec![(t, k)], ratio[k + 1] - ratio[0]);
        }
    }
    Ok(g)
}

/// L_t = Π_{s≤t} per-step ratio, accumulated in log space.
pub fn girsanov_density(space: &Arc<Space>, target: &TargetMeasure, t: usize) -> Result<PathFunctional> {
    target.check(&space.params)?;
    if t > space.horizon() {
        return Err(Error::OutOfRange(format!("time {t}")));
    }
    let logs: Vec<f64> = target.step_ratios(&space.params).iter().map(|x| x.ln()).collect();
    Ok(PathFunctional::from_fn(space, |w| w.digits[..t].iter().map(|&d| logs[d]).sum::<f64>().exp()))
}

/// φ(k) = (λ̃(1−λ)/(λ(1−λ̃)))·Q̃(k)/Q(k) − 1.
pub fn girsanov_varphi(params: &ModelParams, target: &TargetMeasure) -> Result<Vec<f64>> {
    target.check(params)?;
    let (l, lt) = (params.jump_prob, target.jump_prob);
    let c = lt * (1.0 - l) / (l * (1.0 - lt));
    Ok((0..params.n_marks()).map(|k| c * target.mark_probs[k] / params.mark_probs[k] - 1.0).collect())
}

/// ((1−λ̃)/(1−λ))^T Π_{jumps} (1 + φ(V_s)).
pub fn compound_density(space: &Arc<Space>, target: &TargetMeasure) -> Result<PathFunctional> {
    let phi = girsanov_varphi(&space.params, target)?;
    let base = ((1.0 - target.jump_prob) / (1.0 - space.params.jump_prob)).ln() * space.horizon() as f64;
    Ok(PathFunctional::from_fn(space, |w| {
        let s: f64 = w.digits.iter().filter(|&&d| d != 0).map(|&d| (1.0 + phi[d - 1]).ln()).sum();
        (base + s).exp()
    }))
}

/// ξ_t(h) through the Doléans exponential, h the ΔR-form of the drift up to t.
pub fn doleans_density(
    basis: &OrthogonalBasis,
    space: &Arc<Space>,
    target: &TargetMeasure,
    t: usize,
) -> Result<PathFunctional> {
    let g: Kernel = girsanov_drift(&space.params, target)?
        .into_iter()
        .filter(|(s, _)| s[0].0 <= t)
        .collect();
    let h = convert_coeffs_Z_to_R(basis, &g);
    doleans_exponential(basis, space, &h, None)
}

/// E[F L_T].
pub fn reweighted_expectation(f: &PathFunctional, target: &TargetMeasure) -> Result<f64> {
    let (s, v) = f.exact()?;
    let l = girsanov_density(s, target, s.horizon())?;
    Ok(s.expect(&v.iter().zip(l.values()?).map(|(a, b)| a * b).collect::<Vec<_>>()))
}
