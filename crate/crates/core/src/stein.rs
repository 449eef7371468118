//! Chen-Stein solvers, Poisson and compound Poisson bounds, head runs, DNA
//! word counts and exact total-variation distances.

use std::sync::Arc;

use statrs::distribution::{Discrete, Poisson};

use crate::basis::build_basis;
use crate::config_space::{ModelParams, PathFunctional, Space};
use crate::error::{Error, Result};
use crate::malliavin::{gradient, l_inverse, tilde_grad};

pub const PMF_TAIL_TOL: f64 = 1e-12;

pub fn poisson_pmf(lambda: f64, len: usize) -> Vec<f64> {
    let d = Poisson::new(lambda).expect("positive rate");
    (0..len).map(|k| d.pmf(k as u64)).collect()
}

pub fn default_kmax(lambda0: f64) -> usize {
    (10.0 * lambda0 + 50.0).ceil() as usize
}

/// (sup|φ|, sup|∇φ|, sup|∇²φ|) bounds.
pub fn stein_constants(lambda0: f64) -> Result<(f64, f64, f64)> {
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidParam(format!("lambda0 = {lambda0} must be positive")));
    }
    let e = 1.0 - (-lambda0).exp();
    Ok((
        (2.0 / (std::f64::consts::E * lambda0)).sqrt().min(1.0),
        e / lambda0,
        2.0 * e / (lambda0 * lambda0),
    ))
}

#[derive(Debug, Clone)]
pub struct SteinSolution {
    pub lambda0: f64,
    /// Membership of k in A for k = 0..=K_max.
    pub set: Vec<bool>,
    /// φ(0..=K_max+1), φ(0) = 0.
    pub phi: Vec<f64>,
    /// ∇φ(k) for k = 0..=K_max.
    pub grad: Vec<f64>,
    /// ∇²φ(k) for k = 0..K_max.
    pub grad2: Vec<f64>,
    pub residual: f64,
}

impl SteinSolution {
    pub fn sup_phi(&self) -> f64 {
        self.phi.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    /// sup over k ≥ 1; φ(0) is not fixed by the equation.
    pub fn sup_grad(&self) -> f64 {
        self.grad.iter().skip(1).fold(0.0, |a, x| a.max(x.abs()))
    }

    pub fn sup_grad2(&self) -> f64 {
        self.grad2.iter().skip(1).fold(0.0, |a, x| a.max(x.abs()))
    }

    /// Worst excess of |φ(k) − φ(a) − ∇φ(a)(k−a)| over ‖∇²φ‖/2·|(k−a)(k−a−1)|,
    /// for 1 ≤ a, k ≤ `range`.
    pub fn taylor_excess(&self, range: usize) -> f64 {
        let c = self.sup_grad2() / 2.0;
        let top = range.min(self.phi.len() - 2);
        let mut worst = f64::NEG_INFINITY;
        for a in 1..=top {
            for k in 1..=top {
                let d = k as f64 - a as f64;
                let lhs = (self.phi[k] - self.phi[a] - self.grad[a] * d).abs();
                worst = worst.max(lhs - c * (d * (d - 1.0)).abs());
            }
        }
        worst
    }
}

/// Solves 1_A(k) − P(Poi(λ₀) ∈ A) = λ₀φ(k+1) − kφ(k), φ(0) = 0, for k ≤ K_max.
pub fn solve_stein_poisson(lambda0: f64, set: &[bool], kmax: Option<usize>) -> Result<SteinSolution> {
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidParam(format!("lambda0 = {lambda0} must be positive")));
    }
    let kmax = kmax.unwrap_or_else(|| default_kmax(lambda0)).max(set.len().saturating_sub(1));
    let mut a = set.to_vec();
    a.resize(kmax + 1, false);
    // pmf far enough out that the remaining tail is below rounding
    let len = kmax + 1 + (20.0 * lambda0.sqrt() + 60.0) as usize;
    let p = poisson_pmf(lambda0, len);
    // tails computed from the top keep small probabilities accurate
    let mut tail = vec![0.0; len + 1];
    let mut tail_a = vec![0.0; len + 1];
    for k in (0..len).rev() {
        tail[k] = tail[k + 1] + p[k];
        tail_a[k] = tail_a[k + 1] + if k <= kmax && a[k] { p[k] } else { 0.0 };
    }
    let pa = tail_a[0];
    let mut phi = vec![0.0; kmax + 2];
    let mut head = 0.0;
    let mut head_a = 0.0;
    for k in 0..=kmax {
        head += p[k];
        if a[k] {
            head_a += p[k];
        }
        let (up, up_a) = (tail[k + 1], tail_a[k + 1]);
        phi[k + 1] = (head_a * up - up_a * head) / (lambda0 * p[k]);
    }
    let mut residual: f64 = 0.0;
    for k in 0..=kmax {
        let lhs = if a[k] { 1.0 } else { 0.0 } - pa;
        let rhs = lambda0 * phi[k + 1] - k as f64 * phi[k];
        residual = residual.max((lhs - rhs).abs());
    }
    let grad: Vec<f64> = (0..=kmax).map(|k| phi[k + 1] - phi[k]).collect();
    let grad2: Vec<f64> = (0..kmax).map(|k| grad[k + 1] - grad[k]).collect();
    Ok(SteinSolution { lambda0, set: a, phi, grad, grad2, residual })
}

/// Law of a nonnegative integer valued exact functional.
pub fn law_of(f: &PathFunctional) -> Result<Vec<f64>> {
    let (s, v) = f.exact()?;
    let mut pmf = Vec::new();
    for (x, p) in v.iter().zip(s.probs()) {
        let k = as_count(*x)?;
        if pmf.len() <= k {
            pmf.resize(k + 1, 0.0);
        }
        pmf[k] += p;
    }
    Ok(pmf)
}

fn as_count(x: f64) -> Result<usize> {
    if x < -1e-9 || (x - x.round()).abs() > 1e-9 {
        return Err(Error::UnsupportedForm(format!("value {x} is not a nonnegative integer")));
    }
    Ok(x.round() as usize)
}

/// ½Σ|a−b| with each table's missing mass (1 − Σ) folded into one extra bin.
pub fn exact_tv(a: &[f64], b: &[f64]) -> Result<f64> {
    if let Some(&x) = a.iter().chain(b).find(|&&x| x < 0.0) {
        return Err(Error::NegativePmf(x));
    }
    let n = a.len().max(b.len());
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let body: f64 = (0..n).map(|i| (get(a, i) - get(b, i)).abs()).sum();
    let ta = (1.0 - a.iter().sum::<f64>()).max(0.0);
    let tb = (1.0 - b.iter().sum::<f64>()).max(0.0);
    Ok(0.5 * (body + (ta - tb).abs()))
}

/// sup_A |P(A) − Q(A)|, attained at A = {a > b}; tail bins included.
pub fn tv_sup_form(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let ta = (1.0 - a.iter().sum::<f64>()).max(0.0);
    let tb = (1.0 - b.iter().sum::<f64>()).max(0.0);
    let diffs = (0..n).map(|i| get(a, i) - get(b, i)).chain(std::iter::once(ta - tb));
    let (mut pos, mut neg) = (0.0, 0.0);
    for d in diffs {
        if d > 0.0 {
            pos += d
        } else {
            neg -= d
        }
    }
    f64::max(pos, neg)
}

#[derive(Debug, Clone)]
pub struct PoissonBound {
    pub lambda0: f64,
    pub first_term: f64,
    pub second_term: f64,
    pub bound: f64,
    pub exact_tv: f64,
}

/// Both expectation terms of the Poisson Stein-Malliavin bound, evaluated by
/// enumeration, for a Z₊-valued functional of a simple binomial process.
pub fn poisson_bound(f: &PathFunctional, lambda0: f64) -> Result<PoissonBound> {
    let (s, v) = f.exact()?;
    if s.n_marks() != 1 {
        return Err(Error::MarkSpaceSize(s.n_marks()));
    }
    let law = law_of(f)?;
    let mean = s.expect(v);
    if (mean - lambda0).abs() > 1e-9 {
        return Err(Error::MeanMismatch { got: mean, expected: lambda0 });
    }
    let (_, c1, c2) = stein_constants(lambda0)?;
    let basis = build_basis(&s.params)?;
    let g = l_inverse(&basis, &f.centered()?)?;
    let nu = s.params.jump_prob;
    let mut pairing = vec![0.0; s.size()];
    let mut rem = vec![0.0; s.size()];
    for t in 1..=s.horizon() {
        let dt = tilde_grad(f, t, 0)?;
        let dg = gradient(&basis, &g, t, 0)?;
        let (dt, dg) = (dt.values()?, dg.values()?);
        for r in 0..s.size() {
            pairing[r] += nu * dt[r] * (-dg[r]);
            rem[r] += nu * (dt[r] * (dt[r] - 1.0)).abs() * dg[r].abs();
        }
    }
    let first = c1 * s.expect(&pairing.iter().map(|x| (lambda0 - x).abs()).collect::<Vec<_>>());
    let second = c2 / 2.0 * s.expect(&rem);
    let poi = poisson_pmf(lambda0, law.len().max(default_kmax(lambda0)) + 1);
    Ok(PoissonBound {
        lambda0,
        first_term: first,
        second_term: second,
        bound: first + second,
        exact_tv: exact_tv(&law, &poi)?,
    })
}

#[derive(Debug, Clone)]
pub struct CompoundTarget {
    pub lambda0: f64,
    /// g_V(k) at index k; index 0 unused (zero).
    pub marks: Vec<f64>,
    pub pmf: Vec<f64>,
    pub d_pc: f64,
}

impl CompoundTarget {
    /// `g_v[k]` is P(V = k); g_v[0] must be 0.
    pub fn new(lambda0: f64, g_v: Vec<f64>) -> Result<Self> {
        if !(lambda0 > 0.0) {
            return Err(Error::InvalidParam(format!("lambda0 = {lambda0} must be positive")));
        }
        if g_v.first().copied().unwrap_or(0.0) != 0.0 || g_v.len() < 2 {
            return Err(Error::InvalidParam("mark law must live on positive integers".into()));
        }
        if let Some(&x) = g_v.iter().find(|&&x| x < 0.0) {
            return Err(Error::NegativePmf(x));
        }
        let total: f64 = g_v.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!("mark law sums to {total}")));
        }
        // Panjer recursion
        let mut pmf = vec![(-lambda0).exp()];
        let mut acc = pmf[0];
        let mean: f64 = g_v.iter().enumerate().map(|(k, g)| k as f64 * g).sum();
        let cap = ((lambda0 * mean) * 20.0 + 200.0) as usize * 10;
        let mut l = 1;
        while 1.0 - acc > PMF_TAIL_TOL && l < cap {
            let s: f64 = (1..g_v.len().min(l + 1)).map(|k| k as f64 * g_v[k] * pmf[l - k]).sum();
            let v = lambda0 / l as f64 * s;
            pmf.push(v);
            acc += v;
            l += 1;
        }
        let g1 = g_v[1];
        let d_pc = if g1 > 0.0 { (1.0f64).min(1.0 / (lambda0 * g1)) } else { 1.0 } * lambda0.exp();
        Ok(CompoundTarget { lambda0, marks: g_v, pmf, d_pc })
    }

    /// Pólya-Aeppli target: geometric(1−α) marks on 1..=cutoff, the tail
    /// P(V ≥ cutoff) = α^{cutoff−1} lumped on the last mark.
    pub fn geometric(lambda0: f64, alpha: f64, cutoff: usize) -> Result<Self> {
        if cutoff == 0 {
            return Err(Error::InvalidParam("cutoff must be at least 1".into()));
        }
        let mut g = geometric_marks(alpha, cutoff);
        g[cutoff] = alpha.powi(cutoff as i32 - 1);
        CompoundTarget::new(lambda0, g)
    }

    pub fn mean_mark(&self) -> f64 {
        self.marks.iter().enumerate().map(|(k, g)| k as f64 * g).sum()
    }
}

/// P(V = k) = (1−α)α^{k−1} for k = 1..=cutoff (index 0 is zero).
pub fn geometric_marks(alpha: f64, cutoff: usize) -> Vec<f64> {
    let mut g = vec![0.0; cutoff + 1];
    for k in 1..=cutoff {
        g[k] = (1.0 - alpha) * alpha.powi(k as i32 - 1);
    }
    g
}

/// Pólya-Aeppli pmf from its closed form.
pub fn polya_aeppli_pmf(lambda0: f64, alpha: f64, len: usize) -> Vec<f64> {
    if alpha == 0.0 {
        return poisson_pmf(lambda0, len.max(1));
    }
    let mut out = vec![(-lambda0).exp(); len.max(1)];
    let lam = lambda0 * (1.0 - alpha);
    for k in 1..len {
        // Σ_j C(k−1, j−1) (λ(1−α))^j α^{k−j} / j!, summed by term ratios so
        // nothing overflows on long supports.
        let mut term = lam * alpha.powi(k as i32 - 1);
        let mut s = term;
        for j in 2..=k {
            term *= (k - j + 1) as f64 / (j - 1) as f64 * lam / (j as f64 * alpha);
            s += term;
        }
        out[k] = (-lambda0).exp() * s;
    }
    out
}

#[derive(Debug, Clone)]
pub struct CompoundSolution {
    /// ψ(0..=L_max), ψ(0) = 0.
    pub psi: Vec<f64>,
    pub residual: f64,
}

impl CompoundSolution {
    pub fn sup(&self) -> f64 {
        self.psi.iter().skip(1).fold(0.0, |a, x| a.max(x.abs()))
    }

    fn at(&self, l: usize) -> f64 {
        self.psi.get(l).copied().unwrap_or(0.0)
    }
}

pub fn default_lmax(target: &CompoundTarget) -> usize {
    target.pmf.len().max(50) + 100
}

/// Solves λ₀Σ_k k g_V(k) ψ(ℓ+k) − ℓψ(ℓ) = 1_A(ℓ) − P(PC ∈ A), with ψ = 0
/// beyond L_max, by backward substitution. The residual includes the ℓ = 0
/// equation, which measures the truncation.
pub fn compound_stein_solve(target: &CompoundTarget, set: &[bool], lmax: Option<usize>) -> Result<CompoundSolution> {
    let lmax = lmax.unwrap_or_else(|| default_lmax(target));
    let inside = |l: usize| set.get(l).copied().unwrap_or(false);
    let pa: f64 = target.pmf.iter().enumerate().filter(|(l, _)| inside(*l)).map(|(_, p)| p).sum();
    let w: Vec<f64> = target.marks.iter().enumerate().map(|(k, g)| target.lambda0 * k as f64 * g).collect();
    let mut psi = vec![0.0; lmax + 1];
    let shifted = |psi: &[f64], l: usize| -> f64 {
        (1..w.len()).map(|k| w[k] * psi.get(l + k).copied().unwrap_or(0.0)).sum()
    };
    for l in (1..=lmax).rev() {
        let rhs = if inside(l) { 1.0 } else { 0.0 } - pa;
        psi[l] = (shifted(&psi, l) - rhs) / l as f64;
        if !psi[l].is_finite() {
            return Err(Error::Singular);
        }
    }
    let mut residual: f64 = 0.0;
    for l in 0..=lmax {
        let rhs = if inside(l) { 1.0 } else { 0.0 } - pa;
        residual = residual.max((shifted(&psi, l) - l as f64 * psi[l] - rhs).abs());
    }
    Ok(CompoundSolution { psi, residual })
}

/// A compound functional Σ_j V_j ΔN_j of a marked binomial process with
/// positive integer marks: its per-step law.
#[derive(Debug, Clone)]
pub struct FirstChaosCount {
    pub horizon: usize,
    /// P(W_t = w) for w = 0..; index 0 includes "no jump".
    pub step: Vec<f64>,
}

impl FirstChaosCount {
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        let mut step = vec![1.0 - params.jump_prob];
        for (k, q) in params.marks.iter().zip(&params.mark_probs) {
            let w = as_count(*k)?;
            if w == 0 {
                return Err(Error::UnsupportedForm("marks must be positive integers".into()));
            }
            if step.len() <= w {
                step.resize(w + 1, 0.0);
            }
            step[w] += params.jump_prob * q;
        }
        Ok(FirstChaosCount { horizon: params.horizon, step })
    }

    /// Accepts an exact table only if it equals Y_T on every configuration.
    pub fn from_functional(f: &PathFunctional) -> Result<Self> {
        let (s, v) = f.exact()?;
        let y = PathFunctional::compound(s, s.horizon());
        if crate::config_space::max_abs_diff(v, y.values()?) > 1e-12 {
            return Err(Error::UnsupportedForm("only first-chaos counts Σ V_j ΔN_j are supported".into()));
        }
        FirstChaosCount::from_params(&s.params)
    }

    pub fn mean(&self) -> f64 {
        self.horizon as f64 * self.step.iter().enumerate().map(|(k, p)| k as f64 * p).sum::<f64>()
    }

    /// pmf of the sum of `steps` independent steps.
    pub fn law(&self, steps: usize) -> Vec<f64> {
        let mut pmf = vec![1.0];
        for _ in 0..steps {
            pmf = convolve(&pmf, &self.step);
        }
        pmf
    }
}

pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct CompoundBound {
    /// sup over the family of the first term, evaluated exactly.
    pub evaluated: f64,
    /// Index into the family where the sup is attained.
    pub argmax: usize,
    /// The second term; zero on the first chaos.
    pub second_term: f64,
    /// d_PC · Σ_t (Σ_k k ν(t,k))², the Stein-constant relaxation.
    pub bound: f64,
    pub exact_tv: f64,
}

/// Evaluates the compound Poisson bound for a first-chaos count.
///
/// On the first chaos −D⁺L̃⁻¹(F − E F) at (t,k) equals the mark k, so the
/// first term is |Σ_(t,k) k ν(t,k) E[ψ(F_{¬t} + k) − ψ(F + k)]| with F_{¬t}
/// the count without step t, and the second term vanishes.
pub fn compound_poisson_bound(
    count: &FirstChaosCount,
    target: &CompoundTarget,
    family: &[Vec<bool>],
) -> Result<CompoundBound> {
    let mean = count.mean();
    let want = target.lambda0 * target.mean_mark();
    if (mean - want).abs() > 1e-9 {
        return Err(Error::MeanMismatch { got: mean, expected: want });
    }
    let full = count.law(count.horizon);
    let rest = count.law(count.horizon - 1);
    let t = count.horizon as f64;
    let mut best = (0.0, 0);
    for (i, set) in family.iter().enumerate() {
        let lmax = default_lmax(target).max(full.len() + count.step.len() + 50);
        let sol = compound_stein_solve(target, set, Some(lmax))?;
        let mut acc = 0.0;
        for (k, pk) in count.step.iter().enumerate().skip(1) {
            if *pk == 0.0 {
                continue;
            }
            let e_rest: f64 = rest.iter().enumerate().map(|(x, p)| p * sol.at(x + k)).sum();
            let e_full: f64 = full.iter().enumerate().map(|(x, p)| p * sol.at(x + k)).sum();
            acc += t * k as f64 * pk * (e_rest - e_full);
        }
        if acc.abs() > best.0 || i == 0 {
            best = (acc.abs(), i);
        }
    }
    let per_step: f64 = count.step.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    Ok(CompoundBound {
        evaluated: best.0,
        argmax: best.1,
        second_term: 0.0,
        bound: target.d_pc * t * per_step * per_step,
        exact_tv: exact_tv(&full, &target.pmf)?,
    })
}

/// The set {ℓ : P(F = ℓ) > P(PC = ℓ)}, which attains the TV distance.
pub fn tv_optimal_set(a: &[f64], b: &[f64]) -> Vec<bool> {
    let n = a.len().max(b.len());
    (0..n).map(|i| a.get(i).copied().unwrap_or(0.0) > b.get(i).copied().unwrap_or(0.0)).collect()
}

/// Number of clumps of heads of length ≥ m starting in the first n tosses,
/// over n+m−1 tosses. Falls back to a callable when the space is too large.
pub fn head_run_functional(n: usize, m: usize, p: f64) -> Result<PathFunctional> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParam("n and m must be positive".into()));
    }
    let params = ModelParams::new(n + m - 1, vec![1.0], p, vec![1.0], 0)?;
    let u = move |w: &crate::config_space::Configuration| -> f64 {
        let c = |i: usize| w.digits[i - 1] as f64;
        let mut s: f64 = (1..=m).map(c).product();
        for i in 1..n {
            s += (1.0 - c(i)) * (1..=m).map(|l| c(i + l)).product::<f64>();
        }
        s
    };
    match Space::new(params.clone()) {
        Ok(space) => Ok(PathFunctional::from_fn(&space, u)),
        Err(Error::EnumerationTooLarge { .. }) => Ok(PathFunctional::callable(params, u)),
        Err(e) => Err(e),
    }
}

pub fn head_run_lambda0(n: usize, m: usize, p: f64) -> f64 {
    p.powi(m as i32) * ((n as f64 - 1.0) * (1.0 - p) + 1.0)
}

/// The variance display from the proof: λ₀ − 2mqp^{2m} − (2m−1)q²p^{2m} − p^{2m}.
pub fn head_run_variance_identity(n: usize, m: usize, p: f64) -> f64 {
    let q = 1.0 - p;
    let p2m = p.powi(2 * m as i32);
    let m = m as f64;
    head_run_lambda0(n, m as usize, p) - 2.0 * m * q * p2m - (2.0 * m - 1.0) * q * q * p2m - p2m
}

/// Var[U] in closed form, obtained by counting overlapping clump pairs.
pub fn head_run_variance(n: usize, m: usize, p: f64) -> f64 {
    let q = 1.0 - p;
    let p2m = p.powi(2 * m as i32);
    let l0 = head_run_lambda0(n, m, p);
    let (nf, mf) = (n as f64, m as f64);
    // pairs with the initial clump at distance > m, and non-initial pairs at distance > m
    let a = if n > m + 1 { 2.0 * (nf - mf - 1.0) * q * p2m } else { 0.0 };
    let b = if n > m + 2 { (nf - 1.0 - mf) * (nf - 2.0 - mf) * q * q * p2m } else { 0.0 };
    l0 + a + b - l0 * l0
}

pub fn head_run_bound(n: usize, m: usize, p: f64) -> f64 {
    let q = 1.0 - p;
    let l0 = head_run_lambda0(n, m, p);
    let p2m = p.powi(2 * m as i32);
    let (nf, mf) = (n as f64, m as f64);
    p2m * (2.0 * (mf - 1.0) * q * q + 2.0 * mf * q + 1.0)
        + (nf - mf + 1.0) * q * p.powi(2 * m as i32 + 1) * (1.0 - (-l0).exp()) / l0
}

fn check_dna(n: usize, h: usize, alpha: f64, mu: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) || !(mu > 0.0 && mu < 1.0) || h >= n || h == 0 {
        return Err(Error::InvalidParam("need 0 <= alpha < 1, 0 < mu < 1, 0 < h < n".into()));
    }
    Ok(())
}

pub fn dna_lambda0(n: usize, h: usize, alpha: f64, mu: f64) -> f64 {
    (n - h + 1) as f64 * (1.0 - alpha) * mu
}

/// The Pólya-Aeppli target of the DNA count.
pub fn dna_target(n: usize, h: usize, alpha: f64, mu: f64, cutoff: usize) -> Result<CompoundTarget> {
    check_dna(n, h, alpha, mu)?;
    CompoundTarget::geometric(dna_lambda0(n, h, alpha, mu), alpha, cutoff)
}

/// 2hμ + (n−h+1)·d_PC·μ².
pub fn dna_bound(n: usize, h: usize, alpha: f64, mu: f64) -> Result<f64> {
    check_dna(n, h, alpha, mu)?;
    let l0 = dna_lambda0(n, h, alpha, mu);
    let d = (1.0f64).min(1.0 / (l0 * (1.0 - alpha))) * l0.exp();
    Ok(2.0 * h as f64 * mu + (n - h + 1) as f64 * d * mu * mu)
}

/// The DNA clump count as a first-chaos count: n−h+1 steps, jump probability
/// (1−α)μ, geometric(1−α) marks truncated at `cutoff`.
pub fn dna_count(n: usize, h: usize, alpha: f64, mu: f64, cutoff: usize) -> Result<FirstChaosCount> {
    check_dna(n, h, alpha, mu)?;
    let lam = (1.0 - alpha) * mu;
    let mut step = vec![1.0 - lam];
    step.extend(geometric_marks(alpha, cutoff).into_iter().skip(1).map(|g| lam * g));
    Ok(FirstChaosCount { horizon: n - h + 1, step })
}

/// Exact pmf of H by convolution.
pub fn dna_functional(n: usize, h: usize, alpha: f64, mu: f64, cutoff: usize) -> Result<Vec<f64>> {
    let c = dna_count(n, h, alpha, mu, cutoff)?;
    Ok(c.law(c.horizon))
}

/// Space of the simple binomial process on which head runs live.
pub fn head_run_space(n: usize, m: usize, p: f64) -> Result<Arc<Space>> {
    Space::new(ModelParams::new(n + m - 1, vec![1.0], p, vec![1.0], 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_space::{expectation, stream_rng};
    use rand::Rng;

    fn random_set(seed: u64, len: usize) -> Vec<bool> {
        let mut rng = stream_rng(seed, 9);
        (0..len).map(|_| rng.random::<bool>()).collect()
    }

    #[test]
    fn constants() {
        let (a, b, c) = stein_constants(1.0).unwrap();
        assert!((a - 0.857763).abs() < 1e-6);
        assert!((b - 0.632121).abs() < 1e-6);
        assert!((c - 1.264241).abs() < 1e-6);
        let (_, b, _) = stein_constants(1.375).unwrap();
        assert!((b - 0.543390).abs() < 1e-6);
        let (a, _, _) = stein_constants(50.0).unwrap();
        assert!((a - (2.0 / (std::f64::consts::E * 50.0)).sqrt()).abs() < 1e-15);
        assert!(stein_constants(0.0).is_err());
    }

    #[test]
    fn poisson_solver() {
        let empty = solve_stein_poisson(1.0, &[], None).unwrap();
        assert!(empty.phi.iter().all(|&x| x.abs() < 1e-15));
        let all = solve_stein_poisson(1.0, &vec![true; 400], Some(399)).unwrap();
        assert!(all.sup_phi() < 1e-12);
        let s = solve_stein_poisson(1.0, &[true], Some(50)).unwrap();
        assert!(s.residual < 1e-12);
        assert!(s.sup_grad() <= 1.0 - (-1.0f64).exp() + 1e-12);
        assert!(solve_stein_poisson(-1.0, &[true], None).is_err());
    }

    #[test]
    fn taylor_inequality() {
        for seed in 0..20 {
            let s = solve_stein_poisson(1.3, &random_set(seed, 30), None).unwrap();
            assert!(s.taylor_excess(40) <= 1e-12);
        }
    }

    #[test]
    fn tv_examples() {
        assert_eq!(exact_tv(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(exact_tv(&[1.0], &[0.0, 1.0]).unwrap(), 1.0);
        let poi = poisson_pmf(0.5, 41);
        let bern = [0.5, 0.5];
        let e = (-0.5f64).exp();
        let tail = 1.0 - e * 1.5;
        let want = 0.5 * ((0.5 - e).abs() + (0.5 - 0.5 * e).abs() + tail);
        let got = exact_tv(&bern, &poi).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - tv_sup_form(&bern, &poi)).abs() < 1e-12);
        assert!(exact_tv(&[-0.1, 1.1], &[1.0]).is_err());
    }

    #[test]
    fn poisson_bound_dominates() {
        let s = Space::new(ModelParams::new(5, vec![1.0], 0.2, vec![1.0], 0).unwrap()).unwrap();
        let n = PathFunctional::counting(&s, 5);
        let b = poisson_bound(&n, 1.0).unwrap();
        assert!(b.exact_tv <= b.bound, "{b:?}");
        let s1 = Space::new(ModelParams::new(1, vec![1.0], 0.3, vec![1.0], 0).unwrap()).unwrap();
        let f = PathFunctional::counting(&s1, 1);
        let b = poisson_bound(&f, 0.3).unwrap();
        let want = exact_tv(&[0.7, 0.3], &poisson_pmf(0.3, 60)).unwrap();
        assert!((b.exact_tv - want).abs() < 1e-12);
        assert!(b.exact_tv <= b.bound + 1e-12, "{b:?}");
        assert!(poisson_bound(&f, 0.4).is_err());
        let two = Space::new(ModelParams::canonical()).unwrap();
        let y = PathFunctional::compound(&two, 3);
        assert_eq!(poisson_bound(&y, 0.0).unwrap_err(), Error::MarkSpaceSize(2));
        let pm = PathFunctional::from_fn(&s, |w| if w.digit(1) == 1 { 1.0 } else { -1.0 });
        let c = pm.centered().unwrap().map(|x| x + 0.0).unwrap();
        assert!(matches!(poisson_bound(&c, 0.0), Err(Error::UnsupportedForm(_))));
    }

    #[test]
    fn compound_solver() {
        let t = CompoundTarget::geometric(0.8, 0.3, 60).unwrap();
        assert!((t.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let z = compound_stein_solve(&t, &[], None).unwrap();
        assert!(z.sup() == 0.0);
        for seed in 0..10 {
            let sol = compound_stein_solve(&t, &random_set(seed, 25), None).unwrap();
            assert!(sol.residual < 1e-10, "{}", sol.residual);
            assert!(sol.sup() <= t.d_pc);
        }
        let delta = CompoundTarget::new(1.2, vec![0.0, 1.0]).unwrap();
        let set = random_set(3, 12);
        let psi = compound_stein_solve(&delta, &set, Some(120)).unwrap();
        let phi = solve_stein_poisson(1.2, &set, Some(120)).unwrap();
        for l in 1..40 {
            assert!((psi.psi[l] - phi.phi[l]).abs() < 1e-12);
        }
    }

    #[test]
    fn panjer_matches_polya_aeppli() {
        let t = CompoundTarget::geometric(0.9, 0.25, 80).unwrap();
        let pa = polya_aeppli_pmf(0.9, 0.25, t.pmf.len());
        assert!(t.pmf.iter().zip(&pa).all(|(a, b)| (a - b).abs() < 1e-14));
        let poi = CompoundTarget::new(0.9, vec![0.0, 1.0]).unwrap();
        let p = poisson_pmf(0.9, poi.pmf.len());
        assert!(poi.pmf.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn compound_bound_first_chaos() {
        let p = ModelParams::new(30, vec![1.0, 2.0, 3.0], 0.03, vec![0.6, 0.3, 0.1], 0).unwrap();
        let count = FirstChaosCount::from_params(&p).unwrap();
        let g = vec![0.0, 0.6, 0.3, 0.1];
        let target = CompoundTarget::new(0.9, g).unwrap();
        let law = count.law(30);
        let mut family: Vec<Vec<bool>> = (0..30).map(|s| random_set(s, 12)).collect();
        family.push(tv_optimal_set(&law, &target.pmf));
        let b = compound_poisson_bound(&count, &target, &family).unwrap();
        assert!(b.exact_tv <= b.bound);
        assert!((b.evaluated - b.exact_tv).abs() < 1e-10);
        assert_eq!(b.argmax, 30);
        assert_eq!(b.second_term, 0.0);
        let bad = CompoundTarget::new(1.0, vec![0.0, 1.0]).unwrap();
        assert!(compound_poisson_bound(&count, &bad, &family).is_err());

        let s = Space::new(ModelParams::new(3, vec![1.0, 2.0], 0.2, vec![0.5, 0.5], 0).unwrap()).unwrap();
        assert!(FirstChaosCount::from_functional(&PathFunctional::compound(&s, 3)).is_ok());
        let sq = PathFunctional::compound(&s, 3).map(|x| x * x).unwrap();
        assert!(matches!(FirstChaosCount::from_functional(&sq), Err(Error::UnsupportedForm(_))));
    }

    #[test]
    fn unit_marks_reduce_to_poisson() {
        let p = ModelParams::new(10, vec![1.0], 0.1, vec![1.0], 0).unwrap();
        let count = FirstChaosCount::from_params(&p).unwrap();
        let target = CompoundTarget::new(1.0, vec![0.0, 1.0]).unwrap();
        let b = compound_poisson_bound(&count, &target, &[vec![true]]).unwrap();
        let tv = exact_tv(&count.law(10), &poisson_pmf(1.0, 60)).unwrap();
        assert!((b.exact_tv - tv).abs() < 1e-12);
        assert!((b.bound - target.d_pc * 10.0 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn head_run_examples() {
        let u = head_run_functional(1, 3, 0.4).unwrap();
        let law = law_of(&u).unwrap();
        assert!((law[1] - 0.4f64.powi(3)).abs() < 1e-15);
        let u = head_run_functional(10, 2, 0.5).unwrap();
        assert!((expectation(&u).unwrap() - 1.375).abs() < 1e-12);
        assert!((head_run_lambda0(10, 2, 0.5) - 1.375).abs() < 1e-15);
        assert!((head_run_bound(10, 2, 0.5) - 0.295164).abs() < 1e-6);
        assert!((head_run_variance_identity(10, 2, 0.5) - 1.140625).abs() < 1e-12);
        for (n, m) in [(8, 2), (10, 2), (10, 3)] {
            for p in [0.3, 0.5, 0.7] {
                let u = head_run_functional(n, m, p).unwrap();
                let v = crate::malliavin::variance(&u).unwrap();
                assert!((v - head_run_variance(n, m, p)).abs() < 1e-12, "{n} {m} {p}");
            }
        }
        let small = head_run_bound(10, 2, 0.01);
        let lead = 0.01f64.powi(4) * (2.0 * 0.99 * 0.99 + 4.0 * 0.99 + 1.0);
        assert!((small / lead - 1.0).abs() < 0.02, "{small} {lead}");
        let big = head_run_functional(40, 2, 0.5).unwrap();
        assert!(!big.is_exact());
    }

    #[test]
    fn l_tilde_equals_l_on_head_run() {
        let u = head_run_functional(6, 2, 0.4).unwrap();
        let s = u.space().unwrap().clone();
        let b = build_basis(&s.params).unwrap();
        let a = crate::malliavin::l_tilde(&u).unwrap();
        let c = crate::malliavin::number_operator(&b, &u).unwrap();
        assert!(crate::config_space::max_abs_diff(a.values().unwrap(), c.values().unwrap()) < 1e-10);
    }

    #[test]
    fn dna_examples() {
        let l0 = dna_lambda0(1000, 5, 0.2, 0.001);
        assert!((l0 - 0.7968).abs() < 1e-12);
        assert!((l0.exp() - 2.218431).abs() < 1e-6);
        assert!((dna_bound(1000, 5, 0.2, 0.001).unwrap() - 0.012210).abs() < 1e-6);
        assert!(dna_bound(10, 10, 0.2, 0.01).is_err());
        let h = dna_functional(50, 5, 0.0, 0.02, 40).unwrap();
        let binom = dna_count(50, 5, 0.0, 0.02, 40).unwrap();
        assert_eq!(binom.step.len(), 41);
        assert!(binom.step[2..].iter().all(|&x| x == 0.0));
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
