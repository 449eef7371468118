//! Multiple integrals J_n against ΔR, chaotic decomposition, Doléans exponentials.
//!
//! A kernel of order n is stored on time-ordered supports ((t₁,k₁),..,(tₙ,kₙ)),
//! t strictly increasing, k a zero-based mark index. A support is in bijection
//! with a configuration (digit tᵢ = kᵢ+1, others 0), which gives the dense
//! layout used for evaluation.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::basis::{convert_coeffs_R_to_Z, OrthogonalBasis};
use crate::config_space::{PathFunctional, Space};
use crate::error::{Error, Result};
use crate::tensor;

pub type Support = Vec<(usize, usize)>;
pub type Kernel = BTreeMap<Support, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosCoefficients {
    pub f0: f64,
    /// `orders[n-1]` is the order-n kernel.
    pub orders: Vec<Kernel>,
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

pub fn check_support(support: &[(usize, usize)], horizon: usize, n_marks: usize) -> Result<()> {
    for (i, &(t, k)) in support.iter().enumerate() {
        if t == 0 || t > horizon || k >= n_marks {
            return Err(Error::OutOfRange(format!("point ({t},{k})")));
        }
        if i > 0 && support[i - 1].0 >= t {
            return Err(Error::BadSupport);
        }
    }
    Ok(())
}

pub fn support_rank(space: &Space, support: &[(usize, usize)]) -> usize {
    support.iter().map(|&(t, k)| (k + 1) * space.stride(t)).sum()
}

pub fn support_of_rank(space: &Space, rank: usize) -> Support {
    (1..=space.horizon())
        .filter_map(|t| {
            let d = space.digit(rank, t);
            (d != 0).then(|| (t, d - 1))
        })
        .collect()
}

/// Number of jumps encoded by a rank, i.e. the chaos order of that support.
pub(crate) fn rank_order(space: &Space, rank: usize) -> usize {
    (1..=space.horizon()).filter(|&t| space.digit(rank, t) != 0).count()
}

impl ChaosCoefficients {
    pub fn zero(horizon: usize) -> Self {
        ChaosCoefficients { f0: 0.0, orders: vec![Kernel::new(); horizon] }
    }

    pub fn order(&self, n: usize) -> Option<&Kernel> {
        self.orders.get(n.wrapping_sub(1))
    }

    pub fn get(&self, support: &[(usize, usize)]) -> f64 {
        if support.is_empty() {
            return self.f0;
        }
        self.orders
            .get(support.len() - 1)
            .and_then(|k| k.get(support))
            .copied()
            .unwrap_or(0.0)
    }

    /// Dense array c[rank(S)] = n!·f_n(S), c[0] = f0.
    pub fn to_dense(&self, space: &Space) -> Vec<f64> {
        let mut c = vec![0.0; space.size()];
        c[0] = self.f0;
        for (i, kernel) in self.orders.iter().enumerate() {
            let nf = factorial(i + 1);
            for (s, v) in kernel {
                c[support_rank(space, s)] += nf * v;
            }
        }
        c
    }

    /// Inverse of `to_dense`; entries with |value| ≤ `drop` are omitted.
    pub fn from_dense(space: &Space, c: &[f64], drop: f64) -> Self {
        let mut out = ChaosCoefficients::zero(space.horizon());
        out.f0 = c[0];
        for (r, &v) in c.iter().enumerate().skip(1) {
            if v.abs() > drop {
                let s = support_of_rank(space, r);
                let n = s.len();
                out.orders[n - 1].insert(s, v / factorial(n));
            }
        }
        out
    }

    /// Multiplies the order-n kernel by `w(n)`.
    pub fn grade<W: Fn(usize) -> f64>(&self, w: W) -> Self {
        ChaosCoefficients {
            f0: self.f0 * w(0),
            orders: self
                .orders
                .iter()
                .enumerate()
                .map(|(i, k)| k.iter().map(|(s, v)| (s.clone(), v * w(i + 1))).collect())
                .collect(),
        }
    }

    /// CSV rows `order,support,value`, support written as `t:k;t:k`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("order,support,value\n");
        out.push_str(&format!("0,,{}\n", crate::fmt17(self.f0)));
        for (i, kernel) in self.orders.iter().enumerate() {
            for (s, v) in kernel {
                let sup: Vec<String> = s.iter().map(|(t, k)| format!("{t}:{k}")).collect();
                out.push_str(&format!("{},{},{}\n", i + 1, sup.join(";"), crate::fmt17(*v)));
            }
        }
        out
    }
}

/// J_n(f_n)(ω) = n!·Σ_{ordered supports} f_n Π ΔR.
pub fn multiple_integral(
    basis: &OrthogonalBasis,
    space: &Arc<Space>,
    kernel: &Kernel,
    n: usize,
) -> Result<PathFunctional> {
    if n == 0 {
        let c = kernel.get(&Vec::new()).copied().unwrap_or(0.0);
        return Ok(PathFunctional::constant(space, c));
    }
    if n > space.horizon() {
        log::warn!("order {n} exceeds the horizon; J_n is zero");
        return Ok(PathFunctional::constant(space, 0.0));
    }
    let mut coeffs = ChaosCoefficients::zero(space.horizon());
    for (s, &v) in kernel {
        if s.len() != n {
            return Err(Error::InvalidParam(format!(
                "support of length {} in an order-{n} kernel",
                s.len()
            )));
        }
        check_support(s, space.horizon(), space.n_marks())?;
        coeffs.orders[n - 1].insert(s.clone(), v);
    }
    Ok(reconstruct(basis, space, &coeffs))
}

/// J̃_n(f) = Σ_{ordered supports} f Π ΔR, i.e. J_n(f)/n!.
pub fn ordered_integral(
    basis: &OrthogonalBasis,
    space: &Arc<Space>,
    kernel: &Kernel,
    n: usize,
) -> Result<PathFunctional> {
    multiple_integral(basis, space, kernel, n)?.scale(1.0 / factorial(n))
}

/// Term-by-term evaluation of J_n, independent of the tensor transform.
pub fn multiple_integral_direct(
    basis: &OrthogonalBasis,
    space: &Arc<Space>,
    kernel: &Kernel,
    n: usize,
) -> PathFunctional {
    let nf = factorial(n);
    let values = (0..space.size())
        .map(|r| {
            kernel
                .iter()
                .map(|(s, v)| {
                    nf * v * s.iter().map(|&(t, k)| basis.dr[space.digit(r, t)][k]).product::<f64>()
                })
                .sum()
        })
        .collect();
    PathFunctional::exact_unchecked(space, values)
}

/// F = f0 + Σ_n J_n(f_n).
pub fn reconstruct(
    basis: &OrthogonalBasis,
    space: &Arc<Space>,
    coeffs: &ChaosCoefficients,
) -> PathFunctional {
    let mut c = coeffs.to_dense(space);
    tensor::apply_all(space, &mut c, &basis.eval_matrix());
    PathFunctional::exact_unchecked(space, c)
}

/// Stroock: f_n(S) = E[D^(n)_S F]/n! with D the chaos gradient.
///
/// Computed in one pass per digit: each digit is either integrated out
/// (digit not in S) or differenced then mixed by Mᵀ (digit in S).
pub fn stroock_decompose(basis: &OrthogonalBasis, f: &PathFunctional) -> Result<ChaosCoefficients> {
    let (space, values) = f.exact()?;
    let mut c = values.to_vec();
    tensor::apply_all(space, &mut c, &stroock_matrix(basis));
    Ok(ChaosCoefficients::from_dense(space, &c, 0.0))
}

pub(crate) fn stroock_matrix(basis: &OrthogonalBasis) -> Vec<Vec<f64>> {
    let m = basis.n_marks();
    let mut mat = vec![vec![0.0; m + 1]; m + 1];
    mat[0] = basis.step.clone();
    for l in 0..m {
        for k in 0..m {
            let w = basis.matrix_m[(k, l)];
            mat[l + 1][k + 1] += w;
            mat[l + 1][0] -= w;
        }
    }
    mat
}

/// Chaos coefficients by orthogonal projection, f_n(S) = E[F Π ΔR/κ]/n!.
pub fn orthogonal_projection(basis: &OrthogonalBasis, f: &PathFunctional) -> Result<ChaosCoefficients> {
    let (space, values) = f.exact()?;
    let mut c = values.to_vec();
    tensor::apply_all(space, &mut c, &basis.projection_matrix());
    Ok(ChaosCoefficients::from_dense(space, &c, 0.0))
}

/// ⟨f,g⟩ of order n: n!·Σ_{ordered} f g Π κ.
pub fn inner_product(basis: &OrthogonalBasis, f: &Kernel, g: &Kernel) -> f64 {
    let mut s = 0.0;
    let mut n = 0;
    for (sup, a) in f {
        if let Some(b) = g.get(sup) {
            n = sup.len();
            s += a * b * sup.iter().map(|&(_, k)| basis.kappa[k]).product::<f64>();
        }
    }
    factorial(n) * s
}

/// cov(F,G) = Σ n!⟨f_n,g_n⟩.
pub fn chaos_covariance(basis: &OrthogonalBasis, f: &ChaosCoefficients, g: &ChaosCoefficients) -> f64 {
    f.orders
        .iter()
        .zip(&g.orders)
        .enumerate()
        .map(|(i, (a, b))| factorial(i + 1) * inner_product(basis, a, b))
        .sum()
}

/// Restriction of a kernel to supports inside times 1..=t.
pub fn truncate(kernel: &Kernel, t: usize) -> Kernel {
    kernel
        .iter()
        .filter(|(s, _)| s.iter().all(|&(u, _)| u <= t))
        .map(|(s, v)| (s.clone(), *v))
        .collect()
}

/// Symmetric tensor product on ordered supports: the average over the ways of
/// splitting a support into an f-part and a g-part.
pub fn symmetric_product(f: &Kernel, a: usize, g: &Kernel, b: usize, space: &Space) -> Kernel {
    let n = a + b;
    let mut out = Kernel::new();
    if n == 0 || n > space.horizon() {
        return out;
    }
    let norm = binomial(n, a);
    for r in 1..space.size() {
        let s = support_of_rank(space, r);
        if s.len() != n {
            continue;
        }
        let mut acc = 0.0;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a {
                continue;
            }
            let (mut fs, mut gs) = (Vec::new(), Vec::new());
            for (i, p) in s.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    fs.push(*p)
                } else {
                    gs.push(*p)
                }
            }
            let fv = if a == 0 { 1.0 } else { f.get(&fs).copied().unwrap_or(0.0) };
            let gv = if b == 0 { 1.0 } else { g.get(&gs).copied().unwrap_or(0.0) };
            acc += fv * gv;
        }
        if acc != 0.0 {
            out.insert(s, acc / norm);
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// ξ(h) = c·Π_t (1 + Σ_k g(t,k) ΔZ_(t,k)), g the ΔZ-form of h.
pub fn doleans_exponential(
    basis: &OrthogonalBasis,
    space: &Arc<Space>,
    h: &Kernel,
    constant: Option<f64>,
) -> Result<PathFunctional> {
    for s in h.keys() {
        if s.len() != 1 {
            return Err(Error::InvalidParam("Doléans exponential takes an order-1 kernel".into()));
        }
        check_support(s, space.horizon(), space.n_marks())?;
    }
    let g = convert_coeffs_R_to_Z(basis, h);
    let c = constant.unwrap_or(1.0);
    let values = (0..space.size())
        .map(|r| {
            let mut prod = c;
            for t in 1..=space.horizon() {
                let d = space.digit(r, t);
                let mut fac = 1.0;
                for k in 0..space.n_marks() {
                    if let Some(v) = g.get(&vec![(t, k)]) {
                        fac += v * basis.dz[d][k];
                    }
                }
                prod *= fac;
            }
            prod
        })
        .collect();
    Ok(PathFunctional::exact_unchecked(space, values))
}

/// Series form 1 + Σ_n J_n(h^{⊗n})/n!.
pub fn doleans_series(basis: &OrthogonalBasis, space: &Arc<Space>, h: &Kernel) -> PathFunctional {
    let mut coeffs = ChaosCoefficients::zero(space.horizon());
    coeffs.f0 = 1.0;
    for r in 1..space.size() {
        let s = support_of_rank(space, r);
        let v: f64 = s.iter().map(|p| h.get(&vec![*p]).copied().unwrap_or(0.0)).product();
        if v != 0.0 {
            let n = s.len();
            coeffs.orders[n - 1].insert(s, v / factorial(n));
        }
    }
    reconstruct(basis, space, &coeffs)
}
