//! Malliavin and L¹ operators on exact tables.
//!
//! Points are (t, k) with t in 1..=T and k a zero-based mark index.
//! `add_one_cost` is the literal D⁺. `gradient` is the chaos annihilation
//! operator D, which mixes D⁺ across marks through M: D_(t,l) = Σ_k M_kl D⁺_(t,k).
//! The two coincide when there is a single mark.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::basis::OrthogonalBasis;
use crate::chaos::{self, check_support, rank_order, reconstruct, stroock_decompose};
use crate::config_space::{cumulative, draw_digit, expectation, stream_rng, PathFunctional, Space};
use crate::error::{Error, Result};
use crate::tensor;

/// u(ω,(t,k)) for every configuration and point.
#[derive(Debug, Clone)]
pub struct ProcessTable {
    space: Arc<Space>,
    values: Vec<f64>,
    predictable: bool,
}

impl ProcessTable {
    pub fn new(space: &Arc<Space>, values: Vec<f64>, predictable: bool) -> Result<Self> {
        let want = space.size() * space.horizon() * space.n_marks();
        if values.len() != want {
            return Err(Error::InvalidParam(format!(
                "process table has {} entries, expected {want}",
                values.len()
            )));
        }
        let u = ProcessTable { space: space.clone(), values, predictable };
        if predictable {
            if let Some(t) = u.first_unpredictable_time() {
                return Err(Error::NotPredictable(t));
            }
        }
        Ok(u)
    }

    pub fn from_fn<F: Fn(usize, usize, usize) -> f64>(
        space: &Arc<Space>,
        f: F,
        predictable: bool,
    ) -> Result<Self> {
        let (tt, m) = (space.horizon(), space.n_marks());
        let mut v = Vec::with_capacity(space.size() * tt * m);
        for r in 0..space.size() {
            for t in 1..=tt {
                for k in 0..m {
                    v.push(f(r, t, k));
                }
            }
        }
        ProcessTable::new(space, v, predictable)
    }

    /// A deterministic process from an order-1 kernel.
    pub fn deterministic(space: &Arc<Space>, h: &chaos::Kernel) -> Result<Self> {
        ProcessTable::from_fn(space, |_, t, k| h.get(&vec![(t, k)]).copied().unwrap_or(0.0), true)
    }

    pub fn zeros(space: &Arc<Space>) -> Self {
        ProcessTable::from_fn(space, |_, _, _| 0.0, true).unwrap()
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn is_predictable(&self) -> bool {
        self.predictable
    }

    fn idx(&self, r: usize, t: usize, k: usize) -> usize {
        (r * self.space.horizon() + (t - 1)) * self.space.n_marks() + k
    }

    pub fn get(&self, r: usize, t: usize, k: usize) -> f64 {
        self.values[self.idx(r, t, k)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The functional ω ↦ u(ω,(t,k)).
    pub fn slice(&self, t: usize, k: usize) -> Vec<f64> {
        (0..self.space.size()).map(|r| self.get(r, t, k)).collect()
    }

    /// Earliest t at which u(·,(t,k)) is not constant on 𝔉_{t-1} atoms.
    pub fn first_unpredictable_time(&self) -> Option<usize> {
        let s = &self.space;
        for t in 1..=s.horizon() {
            for k in 0..s.n_marks() {
                for r in 0..s.size() {
                    let rep = s.atom(r, t - 1);
                    if (self.get(r, t, k) - self.get(rep, t, k)).abs() > 1e-12 {
                        return Some(t);
                    }
                }
            }
        }
        None
    }
}

fn check_point(space: &Space, t: usize, k: usize) -> Result<()> {
    check_support(&[(t, k)], space.horizon(), space.n_marks())
}

fn pointwise<F: Fn(usize) -> f64>(space: &Arc<Space>, f: F) -> PathFunctional {
    PathFunctional::exact_unchecked(space, (0..space.size()).map(f).collect())
}

/// D⁺_(t,k)F(ω) = F(ω, digit t := k) − F(ω, digit t := 0).
pub fn add_one_cost(f: &PathFunctional, t: usize, k: usize) -> Result<PathFunctional> {
    let (s, v) = f.exact()?;
    check_point(s, t, k)?;
    Ok(pointwise(s, |r| v[s.with_digit(r, t, k + 1)] - v[s.with_digit(r, t, 0)]))
}

/// D⁻_(t,k)F: F(ω) − F(ω, digit t := 0) when digit t is mark k, else 0.
pub fn remove_one_cost(f: &PathFunctional, t: usize, k: usize) -> Result<PathFunctional> {
    let (s, v) = f.exact()?;
    check_point(s, t, k)?;
    Ok(pointwise(s, |r| {
        if s.digit(r, t) == k + 1 {
            v[r] - v[s.with_digit(r, t, 0)]
        } else {
            0.0
        }
    }))
}

/// D̄_t F = F(ω) − F(ω, digit t := 0).
pub fn bar_grad(f: &PathFunctional, t: usize) -> Result<PathFunctional> {
    let (s, v) = f.exact()?;
    check_point(s, t, 0)?;
    Ok(pointwise(s, |r| v[r] - v[s.with_digit(r, t, 0)]))
}

/// D̃_(t,k)F = F(ω, digit t := k) − F(ω).
pub fn tilde_grad(f: &PathFunctional, t: usize, k: usize) -> Result<PathFunctional> {
    let (s, v) = f.exact()?;
    check_point(s, t, k)?;
    Ok(pointwise(s, |r| v[s.with_digit(r, t, k + 1)] - v[r]))
}

/// Chaos gradient D_(t,l)F = Σ_k M_kl D⁺_(t,k)F.
pub fn gradient(basis: &OrthogonalBasis, f: &PathFunctional, t: usize, l: usize) -> Result<PathFunctional> {
    let (s, v) = f.exact()?;
    check_point(s, t, l)?;
    let m = s.n_marks();
    Ok(pointwise(s, |r| {
        let base = v[s.with_digit(r, t, 0)];
        (0..m)
            .map(|k| basis.matrix_m[(k, l)] * (v[s.with_digit(r, t, k + 1)] - base))
            .sum()
    }))
}

/// D as the annihilation operator on the chaotic expansion, computed from the
/// Stroock coefficients without touching D⁺.
pub fn gradient_via_chaos(
    basis: &OrthogonalBasis,
    f: &PathFunctional,
    t: usize,
    k: usize,
) -> Result<PathFunctional> {
    let (s, _) = f.exact()?;
    check_point(s, t, k)?;
    let c = stroock_decompose(basis, f)?.to_dense(s);
    let mut shifted = vec![0.0; s.size()];
    for r in 0..s.size() {
        if s.digit(r, t) == 0 {
            shifted[r] = c[s.with_digit(r, t, k + 1)];
        }
    }
    tensor::apply_all(s, &mut shifted, &basis.eval_matrix());
    Ok(PathFunctional::exact_unchecked(s, shifted))
}

/// Process (t,k) ↦ D⁺_(t,k)F.
pub fn add_one_cost_process(f: &PathFunctional) -> Result<ProcessTable> {
    let (s, v) = f.exact()?;
    ProcessTable::from_fn(s, |r, t, k| v[s.with_digit(r, t, k + 1)] - v[s.with_digit(r, t, 0)], false)
}

/// Process (t,k) ↦ D_(t,k)F.
pub fn gradient_process(basis: &OrthogonalBasis, f: &PathFunctional) -> Result<ProcessTable> {
    let (s, v) = f.exact()?;
    let m = s.n_marks();
    ProcessTable::from_fn(
        s,
        |r, t, l| {
            let base = v[s.with_digit(r, t, 0)];
            (0..m)
                .map(|k| basis.matrix_m[(k, l)] * (v[s.with_digit(r, t, k + 1)] - base))
                .sum()
        },
        false,
    )
}

/// Iterated add-one cost: Σ_{J ⊆ [n]} (−1)^{n−|J|} F(ω with the points of J
/// added and the other support times cleared).
pub fn iterated_difference(f: &PathFunctional, support: &[(usize, usize)]) -> Result<PathFunctional> {
    let (s, v) = f.exact()?;
    check_support(support, s.horizon(), s.n_marks())?;
    let n = support.len();
    Ok(pointwise(s, |r| {
        let mut acc = 0.0;
        for mask in 0u32..(1 << n) {
            let mut q = r;
            for (i, &(t, k)) in support.iter().enumerate() {
                let d = if mask & (1 << i) != 0 { k + 1 } else { 0 };
                q = s.with_digit(q, t, d);
            }
            let sign = if (n - mask.count_ones() as usize) % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * v[q];
        }
        acc
    }))
}

/// Iterated chaos gradient D^(n), each slot mixed by M.
pub fn iterated_gradient(
    basis: &OrthogonalBasis,
    f: &PathFunctional,
    support: &[(usize, usize)],
) -> Result<PathFunctional> {
    let (s, _) = f.exact()?;
    check_support(support, s.horizon(), s.n_marks())?;
    let m = s.n_marks();
    let n = support.len();
    let mut acc = vec![0.0; s.size()];
    let mut choice = vec![0usize; n];
    loop {
        let w: f64 = (0..n).map(|j| basis.matrix_m[(choice[j], support[j].1)]).product();
        if w != 0.0 {
            let sup: Vec<(usize, usize)> =
                support.iter().zip(&choice).map(|(&(t, _), &c)| (t, c)).collect();
            let d = iterated_difference(f, &sup)?;
            for (a, x) in acc.iter_mut().zip(d.values()?) {
                *a += w * x;
            }
        }
        let mut j = 0;
        while j < n {
            choice[j] += 1;
            if choice[j] < m {
                break;
            }
            choice[j] = 0;
            j += 1;
        }
        if j == n {
            break;
        }
    }
    Ok(PathFunctional::exact_unchecked(s, acc))
}

/// δu = Σ_(t,k) (E_t u(·,(t,k))) ΔR_(t,k), E_t integrating digit t out.
///
/// This is the exact adjoint of D for the κ-weighted pairing; for u not
/// depending on digit t it reduces to the Itô-type sum Σ u ΔR.
pub fn divergence(basis: &OrthogonalBasis, u: &ProcessTable) -> Result<PathFunctional> {
    let s = u.space();
    let step = s.step_probs();
    let mut out = vec![0.0; s.size()];
    for (r, o) in out.iter_mut().enumerate() {
        for t in 1..=s.horizon() {
            let d = s.digit(r, t);
            for k in 0..s.n_marks() {
                let avg: f64 = (0..s.radix()).map(|e| step[e] * u.get(s.with_digit(r, t, e), t, k)).sum();
                *o += avg * basis.dr[d][k];
            }
        }
    }
    Ok(PathFunctional::exact_unchecked(s, out))
}

/// δu obtained by solving E[F δu] = E[Σ κ D F u] over the indicator basis.
pub fn divergence_adjoint(basis: &OrthogonalBasis, u: &ProcessTable) -> Result<PathFunctional> {
    let s = u.space();
    let p = s.probs();
    let m = s.n_marks();
    let mut out = vec![0.0; s.size()];
    // For F = 1_{ω}: D_(t,l)F(ω') = Σ_k M_kl (1{ω = ω'_t←k} − 1{ω = ω'_t←0}).
    for r2 in 0..s.size() {
        for t in 1..=s.horizon() {
            for l in 0..m {
                let w = p[r2] * basis.kappa[l] * u.get(r2, t, l);
                if w == 0.0 {
                    continue;
                }
                out[s.with_digit(r2, t, 0)] -= w * (0..m).map(|k| basis.matrix_m[(k, l)]).sum::<f64>();
                for k in 0..m {
                    out[s.with_digit(r2, t, k + 1)] += w * basis.matrix_m[(k, l)];
                }
            }
        }
    }
    for (o, q) in out.iter_mut().zip(p) {
        *o /= q;
    }
    Ok(PathFunctional::exact_unchecked(s, out))
}

/// δ̃u = Σ_{(t,k)∈ω} u(ω,(t,k)) − Σ_(t,k) u(ω,(t,k)) λQ(k).
pub fn tilde_divergence(u: &ProcessTable) -> PathFunctional {
    let s = u.space();
    let nu: Vec<f64> = (0..s.n_marks()).map(|k| s.params.nu(k)).collect();
    pointwise(s, |r| {
        let mut acc = 0.0;
        for t in 1..=s.horizon() {
            let d = s.digit(r, t);
            if d != 0 {
                acc += u.get(r, t, d - 1);
            }
            for (k, n) in nu.iter().enumerate() {
                acc -= u.get(r, t, k) * n;
            }
        }
        acc
    })
}

/// L by chaos grading: order n scaled by −n.
pub fn number_operator(basis: &OrthogonalBasis, f: &PathFunctional) -> Result<PathFunctional> {
    let (s, _) = f.exact()?;
    let c = stroock_decompose(basis, f)?.grade(|n| -(n as f64));
    Ok(reconstruct(basis, s, &c))
}

/// −δ(DF).
pub fn minus_delta_gradient(basis: &OrthogonalBasis, f: &PathFunctional) -> Result<PathFunctional> {
    divergence(basis, &gradient_process(basis, f)?)?.scale(-1.0)
}

/// L⁻¹ on centered functionals: order n scaled by −1/n.
pub fn l_inverse(basis: &OrthogonalBasis, f: &PathFunctional) -> Result<PathFunctional> {
    let (s, v) = f.exact()?;
    let mean = s.expect(v);
    let scale = 1.0 + v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if mean.abs() > 1e-9 * scale {
        return Err(Error::CenterFirst(mean));
    }
    let c = stroock_decompose(basis, f)?.grade(|n| if n == 0 { 0.0 } else { -1.0 / n as f64 });
    Ok(reconstruct(basis, s, &c))
}

/// L̃F = −δ̃(D⁺F).
pub fn l_tilde(f: &PathFunctional) -> Result<PathFunctional> {
    tilde_divergence(&add_one_cost_process(f)?).scale(-1.0)
}

/// Γ̃(F,G) = ½[L̃(FG) − F L̃G − G L̃F].
pub fn gamma_tilde(f: &PathFunctional, g: &PathFunctional) -> Result<PathFunctional> {
    let lfg = l_tilde(&f.mul(g)?)?;
    let lf = l_tilde(f)?;
    let lg = l_tilde(g)?;
    let (s, a) = f.exact()?;
    let b = g.values()?;
    let (x, y, z) = (lfg.values()?, lf.values()?, lg.values()?);
    Ok(pointwise(s, |r| 0.5 * (x[r] - a[r] * z[r] - b[r] * y[r])))
}

/// The four-integral expansion of Γ̃ through D⁺, D⁻ and D̄.
pub fn gamma_tilde_expanded(f: &PathFunctional, g: &PathFunctional) -> Result<PathFunctional> {
    let (s, a) = f.exact()?;
    let b = g.values()?;
    let m = s.n_marks();
    Ok(pointwise(s, |r| {
        let mut acc = 0.0;
        for t in 1..=s.horizon() {
            let r0 = s.with_digit(r, t, 0);
            let (fbar, gbar) = (a[r] - a[r0], b[r] - b[r0]);
            for k in 0..m {
                let rk = s.with_digit(r, t, k + 1);
                let (fp, gp) = (a[rk] - a[r0], b[rk] - b[r0]);
                acc += s.params.nu(k) * (fp * gp - fp * gbar - gp * fbar);
            }
            if s.digit(r, t) != 0 {
                acc += fbar * gbar;
            }
        }
        0.5 * acc
    }))
}

/// P_τF by multiplying order n by e^{−nτ}.
pub fn ou_spectral(basis: &OrthogonalBasis, f: &PathFunctional, tau: f64) -> Result<PathFunctional> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParam(format!("tau = {tau} must be nonnegative")));
    }
    let (s, _) = f.exact()?;
    let c = stroock_decompose(basis, f)?.grade(|n| (-(n as f64) * tau).exp());
    Ok(reconstruct(basis, s, &c))
}

#[derive(Debug, Clone)]
pub struct MehlerEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

/// Mehler Monte Carlo: every digit is kept with probability e^{−τ} and
/// otherwise redrawn from the per-step law. Configuration r uses stream
/// `stream + r`, so the result does not depend on evaluation order.
pub fn ou_mehler_mc(f: &PathFunctional, tau: f64, n_samples: usize, stream: u64) -> Result<MehlerEstimate> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParam(format!("tau = {tau} must be nonnegative")));
    }
    let (s, v) = f.exact()?;
    let keep = (-tau).exp();
    let cdf = cumulative(s.step_probs());
    let mut mean = Vec::with_capacity(s.size());
    let mut std_err = Vec::with_capacity(s.size());
    for r in 0..s.size() {
        let mut rng = stream_rng(s.params.seed, stream.wrapping_add(r as u64));
        let (mut a, mut a2) = (0.0, 0.0);
        for _ in 0..n_samples {
            let mut q = 0;
            for t in 1..=s.horizon() {
                let d = if rng.random::<f64>() < keep { s.digit(r, t) } else { draw_digit(&cdf, &mut rng) };
                q += d * s.stride(t);
            }
            a += v[q];
            a2 += v[q] * v[q];
        }
        let mu = a / n_samples as f64;
        let var = (a2 / n_samples as f64 - mu * mu).max(0.0) * n_samples as f64 / (n_samples as f64 - 1.0).max(1.0);
        mean.push(mu);
        std_err.push((var / n_samples as f64).sqrt());
    }
    Ok(MehlerEstimate { mean, std_err })
}

/// Gauss-Laguerre nodes and weights (Golub-Welsch).
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let j = DMatrix::from_fn(n, n, |i, k| {
        if i == k {
            (2 * i + 1) as f64
        } else if i + 1 == k || k + 1 == i {
            i.max(k) as f64
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// −∫₀^∞ P_τF dτ by Gauss-Laguerre quadrature on the chaos expansion.
pub fn l_inverse_quadrature(basis: &OrthogonalBasis, f: &PathFunctional, nodes: usize) -> Result<PathFunctional> {
    let (s, _) = f.exact()?;
    let c = stroock_decompose(basis, f)?.to_dense(s);
    let (x, w) = gauss_laguerre(nodes);
    // ∫ e^{−nτ} dτ = ∫ e^{−τ} e^{−(n−1)τ} dτ
    let factor: Vec<f64> = (0..=s.horizon())
        .map(|n| {
            if n == 0 {
                0.0
            } else {
                -x.iter().zip(&w).map(|(xi, wi)| wi * (-((n - 1) as f64) * xi).exp()).sum::<f64>()
            }
        })
        .collect();
    let mut scaled: Vec<f64> = c.iter().enumerate().map(|(r, v)| v * factor[rank_order(s, r)]).collect();
    tensor::apply_all(s, &mut scaled, &basis.eval_matrix());
    Ok(PathFunctional::exact_unchecked(s, scaled))
}

/// E[D_(t,k)F | 𝔉_{t−1}].
pub fn clark_integrand(basis: &OrthogonalBasis, f: &PathFunctional) -> Result<ProcessTable> {
    conditioned(&gradient_process(basis, f)?)
}

/// E[D⁺_(t,k)F | 𝔉_{t−1}], the integrand against ΔZ.
pub fn clark_z_integrand(f: &PathFunctional) -> Result<ProcessTable> {
    conditioned(&add_one_cost_process(f)?)
}

fn conditioned(u: &ProcessTable) -> Result<ProcessTable> {
    let s = u.space().clone();
    let (tt, m) = (s.horizon(), s.n_marks());
    let mut v = vec![0.0; u.values.len()];
    for t in 1..=tt {
        for k in 0..m {
            let c = s.cond_expect(&u.slice(t, k), t - 1);
            for r in 0..s.size() {
                v[(r * tt + t - 1) * m + k] = c[r];
            }
        }
    }
    ProcessTable::new(&s, v, true)
}

/// Σ u(ω,(t,k)) X_k(digit_t(ω)) over points with t in `times`.
fn integrate(u: &ProcessTable, inc: &[Vec<f64>], times: std::ops::RangeInclusive<usize>) -> Vec<f64> {
    let s = u.space();
    (0..s.size())
        .map(|r| {
            times
                .clone()
                .map(|t| {
                    let d = s.digit(r, t);
                    (0..s.n_marks()).map(|k| u.get(r, t, k) * inc[d][k]).sum::<f64>()
                })
                .sum()
        })
        .collect()
}

/// E[F] + Σ E[D F | 𝔉_{t−1}] ΔR.
pub fn clark_reconstruct(basis: &OrthogonalBasis, f: &PathFunctional) -> Result<PathFunctional> {
    let (s, v) = f.exact()?;
    let u = clark_integrand(basis, f)?;
    let e = s.expect(v);
    let sum = integrate(&u, &basis.dr, 1..=s.horizon());
    Ok(PathFunctional::exact_unchecked(s, sum.iter().map(|x| x + e).collect()))
}

/// E[F] + Σ E[D⁺F | 𝔉_{t−1}] ΔZ.
pub fn clark_z_reconstruct(basis: &OrthogonalBasis, f: &PathFunctional) -> Result<PathFunctional> {
    let (s, v) = f.exact()?;
    let u = clark_z_integrand(f)?;
    let e = s.expect(v);
    let sum = integrate(&u, &basis.dz, 1..=s.horizon());
    Ok(PathFunctional::exact_unchecked(s, sum.iter().map(|x| x + e).collect()))
}

/// E[F|𝔉_t] + Σ_{s>t} E[D F | 𝔉_{s−1}] ΔR.
pub fn clark_from(basis: &OrthogonalBasis, f: &PathFunctional, t: usize) -> Result<PathFunctional> {
    let (s, v) = f.exact()?;
    let u = clark_integrand(basis, f)?;
    let c = s.cond_expect(v, t);
    let sum = integrate(&u, &basis.dr, t + 1..=s.horizon());
    Ok(PathFunctional::exact_unchecked(s, sum.iter().zip(&c).map(|(x, y)| x + y).collect()))
}

/// Both sides of the Mecke identity:
/// E[Σ_{(t,k)∈η} u(η,(t,k))] and E[Σ_(t,k) u(π_tη + δ_(t,k),(t,k)) λQ(k)].
pub fn mecke_check(u: &ProcessTable) -> (f64, f64) {
    let s = u.space();
    let p = s.probs();
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for r in 0..s.size() {
        for t in 1..=s.horizon() {
            let d = s.digit(r, t);
            if d != 0 {
                lhs += p[r] * u.get(r, t, d - 1);
            }
            for k in 0..s.n_marks() {
                rhs += p[r] * s.params.nu(k) * u.get(s.with_digit(r, t, k + 1), t, k);
            }
        }
    }
    (lhs, rhs)
}

/// Σ κ_k E[|D_(t,k)F|²], the Poincaré upper bound on var(F).
pub fn poincare_energy(basis: &OrthogonalBasis, f: &PathFunctional) -> Result<f64> {
    let (s, _) = f.exact()?;
    let u = gradient_process(basis, f)?;
    let mut acc = 0.0;
    for t in 1..=s.horizon() {
        for k in 0..s.n_marks() {
            let sq: Vec<f64> = u.slice(t, k).iter().map(|x| x * x).collect();
            acc += basis.kappa[k] * s.expect(&sq);
        }
    }
    Ok(acc)
}

/// E[Σ κ_k (D_(t,k)F) u(·,(t,k))].
pub fn kappa_pairing(basis: &OrthogonalBasis, f: &PathFunctional, u: &ProcessTable) -> Result<f64> {
    let (s, _) = f.exact()?;
    let d = gradient_process(basis, f)?;
    let mut acc = 0.0;
    for t in 1..=s.horizon() {
        for k in 0..s.n_marks() {
            let prod: Vec<f64> = d.slice(t, k).iter().zip(u.slice(t, k)).map(|(a, b)| a * b).collect();
            acc += basis.kappa[k] * s.expect(&prod);
        }
    }
    Ok(acc)
}

pub fn variance(f: &PathFunctional) -> Result<f64> {
    let m = expectation(f)?;
    expectation(&f.map(|x| (x - m) * (x - m))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;
    use crate::chaos::{multiple_integral, Kernel};
    use crate::config_space::{max_abs_diff, ModelParams};

    fn cti() -> (Arc<Space>, OrthogonalBasis) {
        let p = ModelParams::canonical();
        (Space::new(p.clone()).unwrap(), build_basis(&p).unwrap())
    }

    fn five() -> (Arc<Space>, OrthogonalBasis) {
        let p = ModelParams::new(5, vec![1.0, 2.0, 3.0], 0.3, vec![0.5, 0.3, 0.2], 4).unwrap();
        (Space::new(p.clone()).unwrap(), build_basis(&p).unwrap())
    }

    fn simple(t: usize) -> (Arc<Space>, OrthogonalBasis) {
        let p = ModelParams::new(t, vec![1.0], 0.3, vec![1.0], 5).unwrap();
        (Space::new(p.clone()).unwrap(), build_basis(&p).unwrap())
    }

    fn rand_f(s: &Arc<Space>, seed: u64) -> PathFunctional {
        let mut rng = stream_rng(seed, 3);
        PathFunctional::from_table(s, (0..s.size()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    fn rand_u(s: &Arc<Space>, seed: u64, predictable: bool) -> ProcessTable {
        let mut rng = stream_rng(seed, 4);
        let n = s.size() * s.horizon() * s.n_marks();
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        if !predictable {
            return ProcessTable::new(s, raw, false).unwrap();
        }
        let (tt, m) = (s.horizon(), s.n_marks());
        ProcessTable::from_fn(s, |r, t, k| raw[(s.atom(r, t - 1) * tt + t - 1) * m + k], true).unwrap()
    }

    fn dr(s: &Arc<Space>, b: &OrthogonalBasis, t: usize, k: usize) -> PathFunctional {
        pointwise(s, |r| b.dr[s.digit(r, t)][k])
    }

    #[test]
    fn add_one_cost_examples() {
        let (s, b) = cti();
        let c = PathFunctional::constant(&s, 3.0);
        assert!(add_one_cost(&c, 2, 1).unwrap().values().unwrap().iter().all(|&x| x == 0.0));
        let n = PathFunctional::counting(&s, 3);
        for t in 1..=3 {
            for k in 0..2 {
                assert!(add_one_cost(&n, t, k).unwrap().values().unwrap().iter().all(|&x| x == 1.0));
            }
        }
        let mut h = Kernel::new();
        h.insert(vec![(1, 0)], 0.4);
        h.insert(vec![(2, 1)], -1.3);
        let j = multiple_integral(&b, &s, &h, 1).unwrap();
        // D⁺ of a first-chaos element is constant; against ΔR it is M⁻ᵀh.
        let d = add_one_cost(&j, 2, 1).unwrap();
        assert!(d.values().unwrap().iter().all(|x| (x + 1.3).abs() < 1e-14));
        let g = gradient(&b, &j, 2, 1).unwrap();
        assert!(g.values().unwrap().iter().all(|x| (x + 1.3).abs() < 1e-14));
        assert!(add_one_cost(&c, 4, 0).is_err());
    }

    #[test]
    fn d_plus_is_not_annihilation_with_two_marks() {
        let (s, b) = cti();
        let f = dr(&s, &b, 1, 1);
        let dp = add_one_cost(&f, 1, 0).unwrap();
        assert!(dp.values().unwrap().iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-14));
        let d = gradient(&b, &f, 1, 0).unwrap();
        assert!(d.values().unwrap().iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn remove_and_tilde() {
        let (s, _) = cti();
        let n = PathFunctional::counting(&s, 3);
        let d = remove_one_cost(&n, 2, 1).unwrap();
        for r in 0..s.size() {
            let want = if s.digit(r, 2) == 2 { 1.0 } else { 0.0 };
            assert_eq!(d.values().unwrap()[r], want);
        }
        let f = rand_f(&s, 1);
        let dt = tilde_grad(&f, 3, 0).unwrap();
        for r in 0..s.size() {
            if s.digit(r, 3) == 1 {
                assert_eq!(dt.values().unwrap()[r], 0.0);
            }
        }
        let c = PathFunctional::constant(&s, 1.0);
        assert!(tilde_grad(&c, 1, 0).unwrap().values().unwrap().iter().all(|&x| x == 0.0));
        assert!(bar_grad(&c, 1).unwrap().values().unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn product_rules() {
        let (s, _) = five();
        let f = rand_f(&s, 2);
        let g = rand_f(&s, 3);
        let fg = f.mul(&g).unwrap();
        for t in 1..=5 {
            for k in 0..3 {
                let lhs = add_one_cost(&fg, t, k).unwrap();
                let (df, dg) = (add_one_cost(&f, t, k).unwrap(), add_one_cost(&g, t, k).unwrap());
                let (a, b) = (f.values().unwrap(), g.values().unwrap());
                let rhs: Vec<f64> = (0..s.size())
                    .map(|r| {
                        let r0 = s.with_digit(r, t, 0);
                        let (x, y) = (df.values().unwrap()[r], dg.values().unwrap()[r]);
                        a[r0] * y + b[r0] * x + x * y
                    })
                    .collect();
                assert!(max_abs_diff(lhs.values().unwrap(), &rhs) < 1e-12);

                let lhs = remove_one_cost(&fg, t, k).unwrap();
                let (df, dg) = (remove_one_cost(&f, t, k).unwrap(), remove_one_cost(&g, t, k).unwrap());
                let rhs: Vec<f64> = (0..s.size())
                    .map(|r| {
                        let (x, y) = (df.values().unwrap()[r], dg.values().unwrap()[r]);
                        a[r] * y + b[r] * x - x * y
                    })
                    .collect();
                assert!(max_abs_diff(lhs.values().unwrap(), &rhs) < 1e-12);
            }
        }
    }

    #[test]
    fn iterated_difference_examples() {
        let (s, b) = cti();
        let f = rand_f(&s, 5);
        let a = iterated_difference(&f, &[(2, 1)]).unwrap();
        assert_eq!(a.values().unwrap(), add_one_cost(&f, 2, 1).unwrap().values().unwrap());
        let prod = dr(&s, &b, 1, 0).mul(&dr(&s, &b, 2, 0)).unwrap();
        let d2 = iterated_difference(&prod, &[(1, 0), (2, 0)]).unwrap();
        assert!(d2.values().unwrap().iter().all(|x| (x - 1.0).abs() < 1e-14));
        assert_eq!(iterated_difference(&f, &[(2, 0), (2, 1)]).unwrap_err(), Error::BadSupport);
    }

    #[test]
    fn stroock_from_iterated_gradient() {
        let (s, b) = five();
        let f = rand_f(&s, 6);
        let c = stroock_decompose(&b, &f).unwrap();
        for sup in [vec![(1, 2)], vec![(2, 0), (4, 1)], vec![(1, 1), (3, 2), (5, 0)]] {
            let d = iterated_gradient(&b, &f, &sup).unwrap();
            let e = expectation(&d).unwrap() / chaos::factorial(sup.len());
            assert!((e - c.get(&sup)).abs() < 1e-12);
            // ΔZ-kernel through iterated D⁺
            let dz = iterated_difference(&f, &sup).unwrap();
            let g = crate::basis::convert_coeffs_R_to_Z(&b, &c.orders[sup.len() - 1]);
            let ez = expectation(&dz).unwrap() / chaos::factorial(sup.len());
            assert!((ez - g.get(&sup).copied().unwrap_or(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_chaos_annihilation() {
        for (s, b) in [cti(), five(), simple(4)] {
            let f = rand_f(&s, 7);
            for t in 1..=s.horizon() {
                for k in 0..s.n_marks() {
                    let a = gradient(&b, &f, t, k).unwrap();
                    let c = gradient_via_chaos(&b, &f, t, k).unwrap();
                    assert!(max_abs_diff(a.values().unwrap(), c.values().unwrap()) < 1e-12);
                }
            }
        }
        let (s, b) = simple(4);
        let f = rand_f(&s, 8);
        for t in 1..=4 {
            let a = add_one_cost(&f, t, 0).unwrap();
            let c = gradient_via_chaos(&b, &f, t, 0).unwrap();
            assert!(max_abs_diff(a.values().unwrap(), c.values().unwrap()) < 1e-12);
        }
    }

    #[test]
    fn divergence_is_adjoint() {
        for (s, b) in [cti(), five()] {
            let u = rand_u(&s, 9, false);
            let a = divergence(&b, &u).unwrap();
            let c = divergence_adjoint(&b, &u).unwrap();
            assert!(max_abs_diff(a.values().unwrap(), c.values().unwrap()) < 1e-10);
            let f = rand_f(&s, 10);
            let lhs = expectation(&f.mul(&a).unwrap()).unwrap();
            let rhs = kappa_pairing(&b, &f, &u).unwrap();
            assert!((lhs - rhs).abs() < 1e-10);
        }
        let (s, b) = cti();
        let mut h = Kernel::new();
        h.insert(vec![(2, 1)], 1.0);
        let u = ProcessTable::deterministic(&s, &h).unwrap();
        let d = divergence(&b, &u).unwrap();
        assert!(max_abs_diff(d.values().unwrap(), dr(&s, &b, 2, 1).values().unwrap()) < 1e-15);
        let z = divergence(&b, &ProcessTable::zeros(&s)).unwrap();
        assert!(z.values().unwrap().iter().all(|&x| x == 0.0));
        let u = rand_u(&s, 11, true);
        let ito = integrate(&u, &b.dr, 1..=3);
        assert!(max_abs_diff(divergence(&b, &u).unwrap().values().unwrap(), &ito) < 1e-14);
    }

    #[test]
    fn predictability_is_checked() {
        let (s, _) = cti();
        let bad = ProcessTable::from_fn(&s, |r, t, _| s.digit(r, t) as f64, true);
        assert_eq!(bad.unwrap_err(), Error::NotPredictable(1));
    }

    #[test]
    fn tilde_divergence_examples() {
        let (s, _) = cti();
        let one = ProcessTable::from_fn(&s, |_, _, _| 1.0, true).unwrap();
        let d = tilde_divergence(&one);
        let want = PathFunctional::counting(&s, 3).map(|x| x - 1.5).unwrap();
        assert!(max_abs_diff(d.values().unwrap(), want.values().unwrap()) < 1e-14);
        let (s, _) = five();
        let u = rand_u(&s, 12, true);
        assert!(expectation(&tilde_divergence(&u)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn l1_integration_by_parts() {
        let (s, _) = five();
        let f = rand_f(&s, 13);
        let u = rand_u(&s, 14, true);
        let p = s.probs();
        let mut lhs = 0.0;
        let mut bar = 0.0;
        let mut tilde = 0.0;
        for t in 1..=5 {
            let db = bar_grad(&f, t).unwrap();
            for k in 0..3 {
                let dp = add_one_cost(&f, t, k).unwrap();
                let dt = tilde_grad(&f, t, k).unwrap();
                for r in 0..s.size() {
                    let w = p[r] * s.params.nu(k) * u.get(r, t, k);
                    lhs += w * dp.values().unwrap()[r];
                    bar += w * db.values().unwrap()[r];
                    tilde += w * dt.values().unwrap()[r];
                }
            }
        }
        let fd = expectation(&f.mul(&tilde_divergence(&u)).unwrap()).unwrap();
        assert!((lhs - fd - bar).abs() < 1e-12);
        assert!((tilde - fd).abs() < 1e-12);
    }

    #[test]
    fn mecke() {
        let (s, _) = cti();
        let one = ProcessTable::from_fn(&s, |_, _, _| 1.0, true).unwrap();
        let (a, b) = mecke_check(&one);
        assert!((a - 1.5).abs() < 1e-14 && (b - 1.5).abs() < 1e-14);
        assert_eq!(mecke_check(&ProcessTable::zeros(&s)), (0.0, 0.0));
        let (s, _) = five();
        let (a, b) = mecke_check(&rand_u(&s, 15, false));
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn number_operator_identities() {
        for (s, b) in [cti(), five()] {
            let f = rand_f(&s, 16);
            let l = number_operator(&b, &f).unwrap();
            let m = minus_delta_gradient(&b, &f).unwrap();
            assert!(max_abs_diff(l.values().unwrap(), m.values().unwrap()) < 1e-10);
            let fc = f.centered().unwrap();
            let li = l_inverse(&b, &fc).unwrap();
            let back = number_operator(&b, &li).unwrap();
            assert!(max_abs_diff(back.values().unwrap(), fc.values().unwrap()) < 1e-10);
            assert!(matches!(l_inverse(&b, &PathFunctional::constant(&s, 1.0)), Err(Error::CenterFirst(m)) if (m - 1.0).abs() < 1e-12));
        }
        let (s, b) = cti();
        let c = number_operator(&b, &PathFunctional::constant(&s, 2.0)).unwrap();
        assert!(c.values().unwrap().iter().all(|x| x.abs() < 1e-14));
        let zero = l_inverse(&b, &PathFunctional::constant(&s, 0.0)).unwrap();
        assert!(zero.values().unwrap().iter().all(|x| x.abs() < 1e-14));
        let k = crate::chaos::tests::random_kernel(&s, 2, 1);
        let j = multiple_integral(&b, &s, &k, 2).unwrap();
        let l = number_operator(&b, &j).unwrap();
        assert!(max_abs_diff(l.values().unwrap(), j.scale(-2.0).unwrap().values().unwrap()) < 1e-12);
    }

    #[test]
    fn l_tilde_equals_l_with_one_mark() {
        let (s, b) = simple(5);
        let f = rand_f(&s, 17);
        let a = l_tilde(&f).unwrap();
        let c = number_operator(&b, &f).unwrap();
        assert!(max_abs_diff(a.values().unwrap(), c.values().unwrap()) < 1e-10);
    }

    #[test]
    fn gamma_tilde_identities() {
        let (s, _) = five();
        let f = rand_f(&s, 18);
        let g = rand_f(&s, 19);
        let a = gamma_tilde(&f, &g).unwrap();
        let e = gamma_tilde_expanded(&f, &g).unwrap();
        assert!(max_abs_diff(a.values().unwrap(), e.values().unwrap()) < 1e-12);
        let sym = gamma_tilde(&g, &f).unwrap();
        assert!(max_abs_diff(a.values().unwrap(), sym.values().unwrap()) < 1e-12);
        let c = gamma_tilde(&f, &PathFunctional::constant(&s, 2.0)).unwrap();
        assert!(c.values().unwrap().iter().all(|x| x.abs() < 1e-12));
        let lhs = -expectation(&a).unwrap();
        let rhs = 0.5
            * (expectation(&f.mul(&l_tilde(&g).unwrap()).unwrap()).unwrap()
                + expectation(&g.mul(&l_tilde(&f).unwrap()).unwrap()).unwrap());
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn ou_semigroup() {
        let (s, b) = cti();
        let f = rand_f(&s, 20);
        let p0 = ou_spectral(&b, &f, 0.0).unwrap();
        assert!(max_abs_diff(p0.values().unwrap(), f.values().unwrap()) < 1e-12);
        let mc = ou_mehler_mc(&f, 0.0, 10, 0).unwrap();
        assert!(max_abs_diff(&mc.mean, f.values().unwrap()) < 1e-12);
        let mut h = Kernel::new();
        h.insert(vec![(1, 1)], 0.7);
        h.insert(vec![(3, 0)], -0.2);
        let j = multiple_integral(&b, &s, &h, 1).unwrap();
        let pj = ou_spectral(&b, &j, 0.8).unwrap();
        assert!(max_abs_diff(pj.values().unwrap(), j.scale((-0.8f64).exp()).unwrap().values().unwrap()) < 1e-12);
        assert!(ou_spectral(&b, &f, -1.0).is_err());

        let n3 = PathFunctional::counting(&s, 3);
        let spec = ou_spectral(&b, &n3, 1.0).unwrap();
        let mc = ou_mehler_mc(&n3, 1.0, 20_000, 100).unwrap();
        for r in 0..s.size() {
            assert!((mc.mean[r] - spec.values().unwrap()[r]).abs() <= 5.0 * mc.std_err[r] + 1e-12);
        }
    }

    #[test]
    fn commutation_and_contraction() {
        let (s, b) = five();
        let f = rand_f(&s, 21);
        for tau in [0.0, 0.3, 1.0, 2.5] {
            let pf = ou_spectral(&b, &f, tau).unwrap();
            for (t, k) in [(1, 0), (3, 2), (5, 1)] {
                let lhs = gradient(&b, &pf, t, k).unwrap();
                let rhs = ou_spectral(&b, &gradient(&b, &f, t, k).unwrap(), tau).unwrap().scale((-tau).exp()).unwrap();
                assert!(max_abs_diff(lhs.values().unwrap(), rhs.values().unwrap()) < 1e-10);
            }
            for p in [1, 2] {
                let a = expectation(&pf.map(|x| x.abs().powi(p)).unwrap()).unwrap();
                let c = expectation(&f.map(|x| x.abs().powi(p)).unwrap()).unwrap();
                assert!(a <= c + 1e-12);
            }
        }
    }

    #[test]
    fn l_inverse_by_quadrature() {
        let (s, b) = five();
        let f = rand_f(&s, 22).centered().unwrap();
        let a = l_inverse(&b, &f).unwrap();
        let q = l_inverse_quadrature(&b, &f, 64).unwrap();
        assert!(max_abs_diff(a.values().unwrap(), q.values().unwrap()) < 1e-8);
    }

    #[test]
    fn clark() {
        let (s, b) = cti();
        let f = dr(&s, &b, 1, 0);
        let u = clark_integrand(&b, &f).unwrap();
        for r in 0..s.size() {
            for t in 1..=3 {
                for k in 0..2 {
                    let want = if (t, k) == (1, 0) { 1.0 } else { 0.0 };
                    assert!((u.get(r, t, k) - want).abs() < 1e-14);
                }
            }
        }
        let c = clark_integrand(&b, &PathFunctional::constant(&s, 4.0)).unwrap();
        assert!(c.values().iter().all(|&x| x == 0.0));
        let all_up = PathFunctional::indicator(&s, 1 + 3 + 9);
        let back = clark_reconstruct(&b, &all_up).unwrap();
        assert!(max_abs_diff(back.values().unwrap(), all_up.values().unwrap()) < 1e-12);
        for (s, b) in [cti(), five()] {
            let f = rand_f(&s, 23);
            let z = clark_z_reconstruct(&b, &f).unwrap();
            assert!(max_abs_diff(z.values().unwrap(), f.values().unwrap()) < 1e-12);
            for t in 0..=s.horizon() {
                let c = clark_from(&b, &f, t).unwrap();
                assert!(max_abs_diff(c.values().unwrap(), f.values().unwrap()) < 1e-12);
            }
        }
    }

    #[test]
    fn poincare() {
        let (s, b) = five();
        for seed in 0..20 {
            let f = rand_f(&s, 100 + seed);
            assert!(variance(&f).unwrap() <= poincare_energy(&b, &f).unwrap() + 1e-12);
        }
    }

    #[test]
    fn callable_rejected() {
        let f = PathFunctional::callable(ModelParams::canonical(), |_| 0.0);
        assert_eq!(add_one_cost(&f, 1, 0).unwrap_err(), Error::ExactModeRequired);
    }
}
