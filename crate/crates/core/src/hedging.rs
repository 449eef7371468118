//! Ternary market: a riskless asset and a risky asset jumping by b or a.
//!
//! Mark index 0 is the up move (mark +1, return b) and mark index 1 the down
//! move (mark −1, return a). Strategies are stored per atom: `phi[t-1][a]` is
//! the holding over (t−1, t] on the 𝔉_{t−1} atom `a`.

use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::basis::{build_basis, OrthogonalBasis};
use crate::config_space::{ModelParams, PathFunctional, Space};
use crate::error::{Error, Result};
use crate::malliavin::gradient;

#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub lambda: f64,
    pub p: f64,
    pub horizon: usize,
    pub x: f64,
    pub a0: f64,
}

impl MarketParams {
    pub fn new(a: f64, b: f64, r: f64, lambda: f64, p: f64, horizon: usize, x: f64, a0: f64) -> Result<Self> {
        if !(-1.0 < a && a < r && r < b) {
            return Err(Error::InvalidParam(format!("need -1 < a < r < b, got a={a}, r={r}, b={b}")));
        }
        if !(lambda > 0.0 && lambda < 1.0) || !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParam("lambda and p must lie in (0,1)".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidParam("T must be at least 1".into()));
        }
        if !(x >= 0.0) || !(a0 > 0.0) {
            return Err(Error::InvalidParam("need x >= 0 and a0 > 0".into()));
        }
        Ok(MarketParams { a, b, r, lambda, p, horizon, x, a0 })
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }

    /// ρ = λq/(1−λp).
    pub fn rho(&self) -> f64 {
        self.lambda * self.q() / (1.0 - self.lambda * self.p)
    }

    /// μ = λ(bp+aq) − r; zero exactly when S̃ is a martingale.
    pub fn drift_gap(&self) -> f64 {
        self.lambda * (self.b * self.p + self.a * self.q()) - self.r
    }

    /// The underlying marked binomial law on 𝔼 = {1, −1}.
    pub fn model_params(&self) -> Result<ModelParams> {
        ModelParams::new(self.horizon, vec![1.0, -1.0], self.lambda, vec![self.p, self.q()], 0)
    }

    /// Return of the risky asset for a digit.
    pub fn step_return(&self, digit: usize) -> f64 {
        match digit {
            1 => self.b,
            2 => self.a,
            _ => 0.0,
        }
    }
}

/// Price tables indexed `[t][rank]`, t = 0..=T.
#[derive(Debug, Clone)]
pub struct PricePaths {
    pub riskless: Vec<f64>,
    pub price: Vec<Vec<f64>>,
    pub discounted: Vec<Vec<f64>>,
}

impl PricePaths {
    /// ΔS̃_t as a table.
    pub fn increment(&self, t: usize) -> Vec<f64> {
        self.discounted[t].iter().zip(&self.discounted[t - 1]).map(|(x, y)| x - y).collect()
    }
}

pub fn price_paths(market: &MarketParams, space: &Space) -> Result<PricePaths> {
    check_space(market, space)?;
    let n = space.size();
    let riskless: Vec<f64> = (0..=market.horizon).map(|t| market.a0 * (1.0 + market.r).powi(t as i32)).collect();
    let mut price = vec![vec![1.0; n]];
    for t in 1..=market.horizon {
        let prev = &price[t - 1];
        let row = (0..n).map(|r| prev[r] * (1.0 + market.step_return(space.digit(r, t)))).collect();
        price.push(row);
    }
    let discounted = price
        .iter()
        .zip(&riskless)
        .map(|(row, a)| row.iter().map(|s| s / a).collect())
        .collect();
    Ok(PricePaths { riskless, price, discounted })
}

fn check_space(market: &MarketParams, space: &Space) -> Result<()> {
    if space.params != market.model_params()? {
        return Err(Error::SpaceMismatch);
    }
    Ok(())
}

/// A market with its enumerated space, basis and price tables.
#[derive(Debug, Clone)]
pub struct Market {
    pub params: MarketParams,
    pub space: Arc<Space>,
    pub basis: OrthogonalBasis,
    pub paths: PricePaths,
}

impl Market {
    pub fn new(params: MarketParams) -> Result<Self> {
        let mp = params.model_params()?;
        let space = Space::new(mp.clone())?;
        let basis = build_basis(&mp)?;
        let paths = price_paths(&params, &space)?;
        Ok(Market { params, space, basis, paths })
    }

    /// (S_T − K)₊ on undiscounted prices.
    pub fn european_call(&self, strike: f64) -> PathFunctional {
        let st = &self.paths.price[self.params.horizon];
        PathFunctional::exact_unchecked(&self.space, st.iter().map(|s| (s - strike).max(0.0)).collect())
    }

    /// S̃_T as a claim.
    pub fn discounted_terminal(&self) -> PathFunctional {
        PathFunctional::exact_unchecked(&self.space, self.paths.discounted[self.params.horizon].clone())
    }

    fn claim_values<'a>(&self, claim: &'a PathFunctional) -> Result<&'a [f64]> {
        let (s, v) = claim.exact()?;
        if **s != *self.space {
            return Err(Error::SpaceMismatch);
        }
        Ok(v)
    }

    /// Conditional P-moments of ΔS̃_t per 𝔉_{t−1} atom: (first, second).
    fn moments(&self, t: usize) -> (Vec<f64>, Vec<f64>) {
        let s = &self.space;
        let inc = self.paths.increment(t);
        let probs = s.step_probs();
        let atoms = s.atom_count(t - 1);
        let mut m1 = vec![0.0; atoms];
        let mut m2 = vec![0.0; atoms];
        for a in 0..atoms {
            for (d, pd) in probs.iter().enumerate() {
                let x = inc[s.with_digit(a, t, d)];
                m1[a] += pd * x;
                m2[a] += pd * x * x;
            }
        }
        (m1, m2)
    }

    /// Residual of ΔS̃_t = S̃_{t−1}/(1+r)·((b−aρ)ΔR_1 + aΔR_{−1} + μ), all t.
    pub fn factorization_residual(&self) -> f64 {
        let p = &self.params;
        let (c1, c2) = (p.b - p.a * p.rho(), p.a);
        let mut worst: f64 = 0.0;
        for t in 1..=p.horizon {
            let inc = self.paths.increment(t);
            for (r, x) in inc.iter().enumerate() {
                let dr = &self.basis.dr[self.space.digit(r, t)];
                let want = self.paths.discounted[t - 1][r] / (1.0 + p.r) * (c1 * dr[0] + c2 * dr[1] + p.drift_gap());
                worst = worst.max((x - want).abs());
            }
        }
        worst
    }

    /// max_t |E[ΔS̃_t | 𝔉_{t−1}]| over atoms.
    pub fn martingale_defect(&self) -> f64 {
        (1..=self.params.horizon)
            .flat_map(|t| self.moments(t).0)
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Ê[G | 𝔉_t] as a full table, by backward recursion under the
    /// minimal martingale measure.
    pub fn hat_cond(&self, mmm: &MinimalMartingaleMeasure, values: &[f64], t: usize) -> Vec<f64> {
        let s = &self.space;
        let probs = s.step_probs();
        let mut cur = values.to_vec();
        for u in (t + 1..=self.params.horizon).rev() {
            let factor = &mmm.factors[u - 1];
            cur = (0..s.size())
                .map(|r| {
                    probs
                        .iter()
                        .enumerate()
                        .map(|(d, pd)| {
                            let rd = s.with_digit(r, u, d);
                            pd * factor[rd] * cur[rd]
                        })
                        .sum()
                })
                .collect();
        }
        cur
    }

    /// Trinomial law equivalence: max over t and s of the gap between
    /// E[s^{S_t/S_{t−1}}] and λp s^{1+b} + λq s^{1+a} + (1−λ) s.
    pub fn trinomial_pgf_residual(&self, grid: &[f64]) -> f64 {
        let p = &self.params;
        let (pb, qb) = (p.lambda * p.p, p.lambda * p.q());
        let mut worst: f64 = 0.0;
        for &s in grid {
            let tri = pb * s.powf(1.0 + p.b) + qb * s.powf(1.0 + p.a) + (1.0 - pb - qb) * s;
            for t in 1..=p.horizon {
                let ratio: Vec<f64> = (0..self.space.size())
                    .map(|r| s.powf(self.paths.price[t][r] / self.paths.price[t - 1][r]))
                    .collect();
                worst = worst.max((self.space.expect(&ratio) - tri).abs());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// λ(bp+aq) − r.
    pub gap: f64,
    /// Per-step increment of K using the conditional variance of ΔS̃.
    pub k_step: f64,
    /// Per-step increment with the denominator λp(1−λp)b² + a²λq(1−λq).
    pub k_step_printed: f64,
    /// K_t for t = 0..=T.
    pub k: Vec<f64>,
}

pub fn martingale_diagnostics(market: &MarketParams) -> Diagnostics {
    let (l, p, q, a, b) = (market.lambda, market.p, market.q(), market.a, market.b);
    let (k1, k2) = step_kappas(market);
    let c1 = b - a * market.rho();
    let gap = market.drift_gap();
    let k_step = gap * gap / (c1 * c1 * k1 + a * a * k2);
    let k_step_printed = gap * gap / (l * p * (1.0 - l * p) * b * b + a * a * l * q * (1.0 - l * q));
    Diagnostics { gap, k_step, k_step_printed, k: (0..=market.horizon).map(|t| t as f64 * k_step).collect() }
}

/// (κ₁, κ_{−1}) of the orthogonal basis under (λ, p).
fn step_kappas(market: &MarketParams) -> (f64, f64) {
    let (lp, lq) = (market.lambda * market.p, market.lambda * market.q());
    let k1 = lp * (1.0 - lp);
    let rho = market.rho();
    // Var(ΔZ_{−1} + ρΔZ_1)
    let k2 = lq * (1.0 - lq) + rho * rho * k1 - 2.0 * rho * lp * lq;
    (k1, k2)
}

#[derive(Debug, Clone)]
pub struct MinimalMartingaleMeasure {
    /// θ_t per 𝔉_{t−1} atom.
    pub theta: Vec<Vec<f64>>,
    /// Per-step factors (1−θ_tΔS̃_t)/(1−θ_tE[ΔS̃_t|𝔉_{t−1}]) as full tables.
    pub factors: Vec<Vec<f64>>,
    /// dP̂/dP per configuration.
    pub density: Vec<f64>,
    /// True when the density is not strictly positive everywhere.
    pub signed: bool,
}

pub fn minimal_martingale_measure(market: &Market) -> MinimalMartingaleMeasure {
    let s = &market.space;
    let mut theta = Vec::new();
    let mut factors = Vec::new();
    let mut density = vec![1.0; s.size()];
    for t in 1..=market.params.horizon {
        let (m1, m2) = market.moments(t);
        let th: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| a / b).collect();
        let inc = market.paths.increment(t);
        let f: Vec<f64> = (0..s.size())
            .map(|r| {
                let a = s.atom(r, t - 1);
                (1.0 - th[a] * inc[r]) / (1.0 - th[a] * m1[a])
            })
            .collect();
        for (d, x) in density.iter_mut().zip(&f) {
            *d *= x;
        }
        theta.push(th);
        factors.push(f);
    }
    let signed = density.iter().any(|&d| d <= 0.0);
    if signed {
        warn!("minimal martingale measure is signed for these parameters");
    }
    MinimalMartingaleMeasure { theta, factors, density, signed }
}

#[derive(Debug, Clone)]
pub struct KunitaWatanabe {
    pub f0: f64,
    /// ξ_t per 𝔉_{t−1} atom.
    pub xi: Vec<Vec<f64>>,
    /// L_t tables for t = 0..=T.
    pub residual: Vec<Vec<f64>>,
    /// V̂_t = Ê[F | 𝔉_t] tables for t = 0..=T.
    pub value: Vec<Vec<f64>>,
}

impl KunitaWatanabe {
    /// max |F − F₀ − Σξ_tΔS̃_t − L_T|.
    pub fn identity_residual(&self, market: &Market, claim: &PathFunctional) -> Result<f64> {
        let f = market.claim_values(claim)?;
        let gains = gains(market, &self.xi);
        let lt = &self.residual[market.params.horizon];
        Ok((0..f.len()).map(|r| (f[r] - self.f0 - gains[r] - lt[r]).abs()).fold(0.0, f64::max))
    }

    /// max_t |E[ΔL_tΔS̃_t | 𝔉_{t−1}]| over atoms.
    pub fn orthogonality_residual(&self, market: &Market) -> f64 {
        let s = &market.space;
        let mut worst: f64 = 0.0;
        for t in 1..=market.params.horizon {
            let inc = market.paths.increment(t);
            let prod: Vec<f64> =
                (0..s.size()).map(|r| (self.residual[t][r] - self.residual[t - 1][r]) * inc[r]).collect();
            let c = s.cond_expect(&prod, t - 1);
            worst = c.iter().fold(worst, |m, x| m.max(x.abs()));
        }
        worst
    }
}

/// Σ_t φ_tΔS̃_t per configuration.
fn gains(market: &Market, phi: &[Vec<f64>]) -> Vec<f64> {
    let s = &market.space;
    let mut g = vec![0.0; s.size()];
    for t in 1..=market.params.horizon {
        let inc = market.paths.increment(t);
        for (r, gr) in g.iter_mut().enumerate() {
            *gr += phi[t - 1][s.atom(r, t - 1)] * inc[r];
        }
    }
    g
}

pub fn kunita_watanabe(market: &Market, claim: &PathFunctional) -> Result<KunitaWatanabe> {
    let f = market.claim_values(claim)?;
    let s = &market.space;
    let horizon = market.params.horizon;
    let mmm = minimal_martingale_measure(market);
    let value: Vec<Vec<f64>> = (0..=horizon).map(|t| market.hat_cond(&mmm, f, t)).collect();
    let f0 = value[0][0];
    let probs = s.step_probs();
    let mut xi = Vec::new();
    for t in 1..=horizon {
        let (_, m2) = market.moments(t);
        let inc = market.paths.increment(t);
        let row: Vec<f64> = (0..s.atom_count(t - 1))
            .map(|a| {
                let cov: f64 = probs
                    .iter()
                    .enumerate()
                    .map(|(d, pd)| {
                        let rd = s.with_digit(a, t, d);
                        pd * (value[t][rd] - value[t - 1][a]) * inc[rd]
                    })
                    .sum();
                cov / m2[a]
            })
            .collect();
        xi.push(row);
    }
    let mut residual = vec![vec![0.0; s.size()]];
    let mut g = vec![0.0; s.size()];
    for t in 1..=horizon {
        let inc = market.paths.increment(t);
        for (r, gr) in g.iter_mut().enumerate() {
            *gr += xi[t - 1][s.atom(r, t - 1)] * inc[r];
        }
        residual.push((0..s.size()).map(|r| value[t][r] - f0 - g[r]).collect());
    }
    Ok(KunitaWatanabe { f0, xi, residual, value })
}

/// ξ_t = (1+r)/S̃_{t−1} Σ_k w_k Ê[D_{(t,k)}F | 𝔉_{t−1}], the gradient form.
pub fn kw_xi_from_gradient(market: &Market, claim: &PathFunctional) -> Result<Vec<Vec<f64>>> {
    market.claim_values(claim)?;
    let p = &market.params;
    let (k1, k2) = (market.basis.kappa[0], market.basis.kappa[1]);
    let c1 = p.b - p.a * p.rho();
    let denom = c1 * c1 * k1 + p.a * p.a * k2;
    let w = [c1 * k1 / denom, p.a * k2 / denom];
    let mmm = minimal_martingale_measure(market);
    let s = &market.space;
    let mut out = Vec::new();
    for t in 1..=p.horizon {
        let mut acc = vec![0.0; s.atom_count(t - 1)];
        for (k, wk) in w.iter().enumerate() {
            let d = gradient(&market.basis, claim, t, k)?;
            let h = market.hat_cond(&mmm, d.values()?, t);
            for (a, x) in acc.iter_mut().enumerate() {
                *x += wk * h[a];
            }
        }
        for (a, x) in acc.iter_mut().enumerate() {
            *x *= (1.0 + p.r) / market.paths.discounted[t - 1][a];
        }
        out.push(acc);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    /// φ_t per 𝔉_{t−1} atom, t = 1..=T.
    pub phi: Vec<Vec<f64>>,
    /// α_0 (one entry) then α_t per 𝔉_{t−1} atom.
    pub alpha: Vec<Vec<f64>>,
}

impl Strategy {
    /// α from α₀ = `initial` and α_t = α_{t−1} − (φ_t − φ_{t−1})S̃_{t−1}, φ₀ = 0.
    pub fn with_alpha(market: &Market, phi: Vec<Vec<f64>>, initial: f64) -> Self {
        let s = &market.space;
        let mut alpha = vec![vec![initial]];
        for t in 1..=market.params.horizon {
            let row = (0..s.atom_count(t - 1))
                .map(|a| {
                    let prev_alpha = if t == 1 { alpha[0][0] } else { alpha[t - 1][s.atom(a, t - 2)] };
                    let prev_phi = if t == 1 { 0.0 } else { phi[t - 2][s.atom(a, t - 2)] };
                    prev_alpha - (phi[t - 1][a] - prev_phi) * market.paths.discounted[t - 1][a]
                })
                .collect();
            alpha.push(row);
        }
        Strategy { phi, alpha }
    }

    /// max |A_t(α_{t+1}−α_t) + S_t(φ_{t+1}−φ_t)| over t = 0..T−1 and all paths.
    pub fn self_financing_residual(&self, market: &Market) -> f64 {
        let s = &market.space;
        let mut worst: f64 = 0.0;
        for t in 0..market.params.horizon {
            for r in 0..s.size() {
                let (a_now, p_now) = if t == 0 {
                    (self.alpha[0][0], 0.0)
                } else {
                    (self.alpha[t][s.atom(r, t - 1)], self.phi[t - 1][s.atom(r, t - 1)])
                };
                let a_next = self.alpha[t + 1][s.atom(r, t)];
                let p_next = self.phi[t][s.atom(r, t)];
                let v = market.paths.riskless[t] * (a_next - a_now) + market.paths.price[t][r] * (p_next - p_now);
                worst = worst.max(v.abs());
            }
        }
        worst
    }

    /// E[(F − x − Σφ_tΔS̃_t)²].
    pub fn quadratic_risk(&self, market: &Market, claim: &PathFunctional, x: f64) -> Result<f64> {
        let f = market.claim_values(claim)?;
        let g = gains(market, &self.phi);
        let sq: Vec<f64> = (0..f.len()).map(|r| (f[r] - x - g[r]).powi(2)).collect();
        Ok(market.space.expect(&sq))
    }
}

#[derive(Debug, Clone)]
pub struct OptimalHedge {
    pub strategy: Strategy,
    pub residual_risk: f64,
    /// Risk of the same recursion driven by Ê[F|𝔉_t] instead of Ê[F|𝔉_{t−1}];
    /// that variant is not predictable.
    pub residual_risk_unpredictable: f64,
    pub theta: Vec<Vec<f64>>,
}

pub fn optimal_strategy(market: &Market, claim: &PathFunctional, x: f64) -> Result<OptimalHedge> {
    let f = market.claim_values(claim)?;
    let s = &market.space;
    let kw = kunita_watanabe(market, claim)?;
    let mmm = minimal_martingale_measure(market);
    let horizon = market.params.horizon;
    let mut phi: Vec<Vec<f64>> = Vec::new();
    let mut g = vec![0.0; s.size()];
    let mut g_alt = vec![0.0; s.size()];
    for t in 1..=horizon {
        let inc = market.paths.increment(t);
        let row: Vec<f64> = (0..s.atom_count(t - 1))
            .map(|a| kw.xi[t - 1][a] + mmm.theta[t - 1][a] * (kw.value[t - 1][a] - x - g[a]))
            .collect();
        for r in 0..s.size() {
            let a = s.atom(r, t - 1);
            g[r] += row[a] * inc[r];
            let alt = kw.xi[t - 1][a] + mmm.theta[t - 1][a] * (kw.value[t][r] - x - g_alt[r]);
            g_alt[r] += alt * inc[r];
        }
        phi.push(row);
    }
    let risk = |gain: &[f64]| s.expect(&(0..f.len()).map(|r| (f[r] - x - gain[r]).powi(2)).collect::<Vec<_>>());
    let strategy = Strategy::with_alpha(market, phi, kw.f0 / market.paths.price[0][0]);
    Ok(OptimalHedge {
        residual_risk: risk(&g),
        residual_risk_unpredictable: risk(&g_alt),
        theta: mmm.theta,
        strategy,
    })
}

/// Largest horizon the least-squares oracle accepts.
pub const LS_MAX_HORIZON: usize = 8;

/// Global minimizer of E[(F − x − Σφ_tΔS̃_t)²] over predictable φ, from the
/// normal equations with one unknown per (t, 𝔉_{t−1} atom).
pub fn ls_oracle(market: &Market, claim: &PathFunctional, x: f64) -> Result<(Strategy, f64)> {
    let f = market.claim_values(claim)?;
    let horizon = market.params.horizon;
    if horizon > LS_MAX_HORIZON {
        return Err(Error::OutOfRange(format!("least-squares oracle needs T <= {LS_MAX_HORIZON}, got {horizon}")));
    }
    let s = &market.space;
    let offsets: Vec<usize> = (1..=horizon).scan(0, |acc, t| {
        let o = *acc;
        *acc += s.atom_count(t - 1);
        Some(o)
    }).collect();
    let dim = offsets[horizon - 1] + s.atom_count(horizon - 1);
    let incs: Vec<Vec<f64>> = (1..=horizon).map(|t| market.paths.increment(t)).collect();
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut idx = vec![0usize; horizon];
    let mut val = vec![0.0; horizon];
    for r in 0..s.size() {
        let pr = s.probs()[r];
        for t in 1..=horizon {
            idx[t - 1] = offsets[t - 1] + s.atom(r, t - 1);
            val[t - 1] = incs[t - 1][r];
        }
        for i in 0..horizon {
            rhs[idx[i]] += pr * (f[r] - x) * val[i];
            for j in 0..horizon {
                gram[(idx[i], idx[j])] += pr * val[i] * val[j];
            }
        }
    }
    let sol = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => {
            warn!("singular normal equations; using the minimum-norm solution");
            gram.svd(true, true).solve(&rhs, 1e-12).map_err(|_| Error::Singular)?
        }
    };
    let phi: Vec<Vec<f64>> = (1..=horizon)
        .map(|t| (0..s.atom_count(t - 1)).map(|a| sol[offsets[t - 1] + a]).collect())
        .collect();
    let mmm = minimal_martingale_measure(market);
    let f0 = market.space.expect(&f.iter().zip(&mmm.density).map(|(a, b)| a * b).collect::<Vec<_>>());
    let strategy = Strategy::with_alpha(market, phi, f0 / market.paths.price[0][0]);
    let risk = strategy.quadratic_risk(market, claim, x)?;
    Ok((strategy, risk))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_space::max_abs_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mart(t: usize) -> Market {
        Market::new(MarketParams::new(-0.1, 0.2, 0.025, 0.5, 0.5, t, 1.0, 1.0).unwrap()).unwrap()
    }

    fn non_mart(t: usize) -> Market {
        Market::new(MarketParams::new(-0.1, 0.2, 0.0, 0.5, 0.5, t, 1.0, 1.0).unwrap()).unwrap()
    }

    fn random_claim(m: &Market, seed: u64) -> PathFunctional {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..m.space.size()).map(|_| rng.random::<f64>() * 2.0).collect();
        PathFunctional::from_table(&m.space, v).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(MarketParams::new(-0.1, 0.2, 0.3, 0.5, 0.5, 2, 1.0, 1.0).is_err());
        assert!(MarketParams::new(-1.0, 0.2, 0.0, 0.5, 0.5, 2, 1.0, 1.0).is_err());
        assert!(MarketParams::new(-0.1, 0.2, 0.0, 1.0, 0.5, 2, 1.0, 1.0).is_err());
        let p = MarketParams::new(-0.1, 0.2, 0.0, 0.5, 0.5, 2, 1.0, 1.0).unwrap();
        assert!((p.rho() - 1.0 / 3.0).abs() < 1e-15);
        let m = Market::new(p).unwrap();
        assert!((m.basis.gamma(1, 0) + m.params.rho()).abs() < 1e-15);
        let (k1, k2) = step_kappas(&m.params);
        assert!((k1 - m.basis.kappa[0]).abs() < 1e-15 && (k2 - m.basis.kappa[1]).abs() < 1e-15);
    }

    #[test]
    fn prices() {
        let m = non_mart(2);
        let up = m.space.configuration(0).augment(1, 0).augment(2, 0).rank(3);
        assert!((m.paths.price[2][up] - 1.44).abs() < 1e-15);
        let p = MarketParams::new(-0.1, 0.2, 0.05, 0.5, 0.5, 3, 1.0, 1.0).unwrap();
        let m = Market::new(p).unwrap();
        assert_eq!(m.paths.price[3][0], 1.0);
        assert!((m.paths.discounted[3][0] - 1.05f64.powi(-3)).abs() < 1e-15);
        assert!(m.factorization_residual() < 1e-15);
        assert!(mart(3).martingale_defect() < 1e-15);
        assert!(non_mart(3).martingale_defect() > 1e-3);
        assert!(mart(3).factorization_residual() < 1e-15);
    }

    #[test]
    fn diagnostics() {
        let d = martingale_diagnostics(&mart(3).params);
        assert!(d.gap.abs() < 1e-15 && d.k.iter().all(|k| k.abs() < 1e-28));
        let d = martingale_diagnostics(&non_mart(4).params);
        assert!((d.gap - 0.025).abs() < 1e-15);
        assert!((d.k_step_printed - 0.0666666666666667).abs() < 1e-12);
        assert!((d.k_step - 0.000625 / 0.011875).abs() < 1e-12);
        for t in 0..=4 {
            assert!((d.k[t] - t as f64 * d.k_step).abs() < 1e-15);
        }
        // K from enumeration
        let m = non_mart(2);
        for t in 1..=2 {
            let (m1, m2) = m.moments(t);
            for a in 0..m1.len() {
                assert!((m1[a] * m1[a] / (m2[a] - m1[a] * m1[a]) - d.k_step).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn minimal_martingale_measure_properties() {
        let m = mart(3);
        let q = minimal_martingale_measure(&m);
        assert!(q.theta.iter().flatten().all(|t| t.abs() < 1e-12));
        assert!(q.density.iter().all(|d| (d - 1.0).abs() < 1e-12));
        let m = non_mart(3);
        let q = minimal_martingale_measure(&m);
        assert!(!q.signed && q.density.iter().all(|&d| d > 0.0));
        assert!((m.space.expect(&q.density) - 1.0).abs() < 1e-12);
        for t in 1..=3 {
            let inc = m.paths.increment(t);
            let w: Vec<f64> = inc.iter().zip(&q.density).map(|(a, b)| a * b).collect();
            let c = m.space.cond_expect(&w, t - 1);
            assert!(c.iter().all(|x| x.abs() < 1e-12));
        }
        let p = MarketParams::new(-0.51, 0.5, -0.5, 0.1, 0.5, 2, 1.0, 1.0).unwrap();
        let q = minimal_martingale_measure(&Market::new(p).unwrap());
        assert!(q.signed);
    }

    #[test]
    fn kunita_watanabe_examples() {
        let m = mart(3);
        let kw = kunita_watanabe(&m, &m.discounted_terminal()).unwrap();
        assert!(kw.xi.iter().flatten().all(|x| (x - 1.0).abs() < 1e-12));
        assert!(kw.residual[3].iter().all(|x| x.abs() < 1e-12));
        let c = PathFunctional::constant(&m.space, 2.5);
        let kw = kunita_watanabe(&m, &c).unwrap();
        assert!((kw.f0 - 2.5).abs() < 1e-15);
        assert!(kw.xi.iter().flatten().all(|x| x.abs() < 1e-12));
        for m in [mart(3), non_mart(3)] {
            let n0 = PathFunctional::from_fn(&m.space, |w| if w.jumps_up_to(3) == 0 { 1.0 } else { 0.0 });
            for claim in [n0, random_claim(&m, 5), m.european_call(1.05)] {
                let kw = kunita_watanabe(&m, &claim).unwrap();
                assert!(kw.identity_residual(&m, &claim).unwrap() < 1e-10);
                assert!(kw.orthogonality_residual(&m) < 1e-12);
                let via = kw_xi_from_gradient(&m, &claim).unwrap();
                for t in 0..3 {
                    assert!(max_abs_diff(&via[t], &kw.xi[t]) < 1e-10);
                }
                let mmm = minimal_martingale_measure(&m);
                for t in 1..=3 {
                    let l = &kw.residual[t];
                    let w: Vec<f64> = (0..l.len()).map(|r| (l[r] - kw.residual[t - 1][r]) * mmm.density[r]).collect();
                    assert!(m.space.cond_expect(&w, t - 1).iter().all(|x| x.abs() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn optimal_matches_oracle() {
        for t in [2, 3, 4] {
            for m in [mart(t), non_mart(t)] {
                let mut claims: Vec<PathFunctional> = (0..3).map(|s| random_claim(&m, s)).collect();
                claims.push(m.european_call(1.05));
                for c in &claims {
                    let h = optimal_strategy(&m, c, 1.0).unwrap();
                    let (ls, res) = ls_oracle(&m, c, 1.0).unwrap();
                    assert!((h.residual_risk - res).abs() < 1e-8, "{} {}", h.residual_risk, res);
                    for (a, b) in h.strategy.phi.iter().zip(&ls.phi) {
                        assert!(max_abs_diff(a, b) < 1e-7);
                    }
                    assert!(h.strategy.self_financing_residual(&m) < 1e-10);
                    assert!(ls.self_financing_residual(&m) < 1e-10);
                    assert!((h.strategy.quadratic_risk(&m, c, 1.0).unwrap() - h.residual_risk).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn replication_and_constants() {
        let m = mart(3);
        let st = m.discounted_terminal();
        let h = optimal_strategy(&m, &st, 1.0).unwrap();
        assert!(h.strategy.phi.iter().flatten().all(|x| (x - 1.0).abs() < 1e-12));
        assert!(h.residual_risk < 1e-10);
        assert!(ls_oracle(&m, &st, 1.0).unwrap().1 < 1e-10);
        let c = PathFunctional::constant(&m.space, 1.0);
        let h = optimal_strategy(&m, &c, 1.0).unwrap();
        assert!(h.strategy.phi.iter().flatten().all(|x| x.abs() < 1e-12));
        assert!(h.residual_risk < 1e-20);
    }

    #[test]
    fn oracle_orthogonal_claim_and_dominance() {
        // L = ΔR_{-1} at t=1 scaled so that it is uncorrelated with ΔS̃_1.
        let m = mart(2);
        let (k1, k2) = step_kappas(&m.params);
        let c1 = m.params.b - m.params.a * m.params.rho();
        let a = m.params.a;
        let claim = PathFunctional::from_fn(&m.space, |w| {
            let dr = &m.basis.dr[w.digit(1)];
            a * k2 * dr[0] - c1 * k1 * dr[1]
        });
        let (ls, res) = ls_oracle(&m, &claim, 0.0).unwrap();
        assert!(ls.phi[0].iter().all(|x| x.abs() < 1e-10));
        let var = crate::malliavin::variance(&claim).unwrap();
        assert!((res - var).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for t in [2, 3, 4] {
            let m = non_mart(t);
            for seed in 0..5 {
                let c = random_claim(&m, 100 + seed);
                let (_, best) = ls_oracle(&m, &c, 0.5).unwrap();
                for _ in 0..200 {
                    let phi: Vec<Vec<f64>> = (1..=t)
                        .map(|u| (0..m.space.atom_count(u - 1)).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
                        .collect();
                    let s = Strategy::with_alpha(&m, phi, 0.0);
                    assert!(best <= s.quadratic_risk(&m, &c, 0.5).unwrap() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn trinomial_equivalence() {
        let grid: Vec<f64> = (1..=20).map(|i| i as f64 * 0.1).collect();
        for m in [mart(3), non_mart(4)] {
            assert!(m.trinomial_pgf_residual(&grid) < 1e-12);
        }
    }

    #[test]
    fn mismatched_space() {
        let m = mart(2);
        let other = non_mart(3);
        assert_eq!(kunita_watanabe(&m, &other.discounted_terminal()).unwrap_err(), Error::SpaceMismatch);
    }
}
