//! Enumeration identity suite: every residual is computed exactly on the full
//! sample space and compared with a fixed tolerance.

use std::sync::Arc;

use rand::Rng;

use crate::basis::{build_basis, OrthogonalBasis};
use crate::chaos::{
    chaos_covariance, factorial, multiple_integral, orthogonal_projection, reconstruct, stroock_decompose,
    support_of_rank, truncate, inner_product, Kernel,
};
use crate::config_space::{conditional_expectation, expectation, max_abs_diff, stream_rng, ModelParams, PathFunctional, Space};
use crate::error::Result;
use crate::malliavin::{
    add_one_cost, bar_grad, clark_reconstruct, divergence, divergence_adjoint, gamma_tilde, iterated_gradient,
    kappa_pairing, l_tilde, mecke_check, minus_delta_gradient, number_operator, poincare_energy, remove_one_cost,
    tilde_divergence, variance, ProcessTable,
};

pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
}

impl InvariantCheck {
    pub fn pass(&self) -> bool {
        self.residual <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub checks: Vec<InvariantCheck>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(InvariantCheck::pass)
    }

    /// The check with the largest residual relative to its tolerance.
    pub fn worst(&self) -> Option<&InvariantCheck> {
        self.checks
            .iter()
            .max_by(|a, b| (a.residual / a.tolerance).total_cmp(&(b.residual / b.tolerance)))
    }
}

/// Uniform(−1,1) table.
pub fn random_functional(space: &Arc<Space>, seed: u64) -> PathFunctional {
    let mut rng = stream_rng(seed, 21);
    PathFunctional::from_table(space, (0..space.size()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
        .expect("table has the space size")
}

/// Uniform(−1,1) kernel on every ordered support of length n.
pub fn random_kernel(space: &Space, n: usize, seed: u64) -> Kernel {
    let mut rng = stream_rng(seed, 22);
    (1..space.size())
        .map(|r| support_of_rank(space, r))
        .filter(|s| s.len() == n)
        .map(|s| (s, rng.random::<f64>() * 2.0 - 1.0))
        .collect()
}

/// Uniform(−1,1) process, optionally made predictable by reading only the
/// 𝔉_{t−1} atom.
pub fn random_process(space: &Arc<Space>, seed: u64, predictable: bool) -> ProcessTable {
    let mut rng = stream_rng(seed, 23);
    let (tt, m) = (space.horizon(), space.n_marks());
    let raw: Vec<f64> = (0..space.size() * tt * m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    if predictable {
        ProcessTable::from_fn(space, |r, t, k| raw[(space.atom(r, t - 1) * tt + t - 1) * m + k], true)
    } else {
        ProcessTable::new(space, raw, false)
    }
    .expect("table has the space size")
}

struct Suite {
    checks: Vec<InvariantCheck>,
}

impl Suite {
    fn push(&mut self, name: &str, residual: f64) {
        self.checks.push(InvariantCheck { name: name.into(), residual, tolerance: IDENTITY_TOL });
    }
}

fn values(f: &PathFunctional) -> &[f64] {
    f.values().expect("exact functional")
}

/// Runs the identity suite on the space of `params`, random inputs drawn from `seed`.
pub fn run_suite(params: &ModelParams, seed: u64) -> Result<Report> {
    let space = Space::new(params.clone())?;
    let basis = build_basis(params)?;
    let mut suite = Suite { checks: Vec::new() };
    basis_checks(&mut suite, &space, &basis);
    chaos_checks(&mut suite, &space, &basis, seed)?;
    operator_checks(&mut suite, &space, &basis, seed)?;
    Ok(Report { checks: suite.checks })
}

fn basis_checks(suite: &mut Suite, space: &Arc<Space>, basis: &OrthogonalBasis) {
    let m = space.n_marks();
    let step = &basis.step;
    let mut orth: f64 = 0.0;
    let mut centred: f64 = 0.0;
    for k in 0..m {
        let mean: f64 = (0..=m).map(|d| step[d] * basis.dr[d][k]).sum();
        centred = centred.max(mean.abs());
        for l in 0..m {
            let e: f64 = (0..=m).map(|d| step[d] * basis.dr[d][k] * basis.dr[d][l]).sum();
            let want = if k == l { basis.kappa[k] } else { 0.0 };
            orth = orth.max((e - want).abs());
        }
    }
    suite.push("basis orthogonality", orth);
    // The per-step law is shared, so E[ΔR|𝔉_{t−1}] reduces to the step mean;
    // checked on the tables for every t anyway.
    let mut cond: f64 = 0.0;
    let mut law: f64 = 0.0;
    for t in 1..=space.horizon() {
        let sum: Vec<f64> = (0..space.size()).map(|r| basis.dr[space.digit(r, t)].iter().sum()).collect();
        cond = space.cond_expect(&sum, t - 1).iter().fold(cond, |a, x| a.max(x.abs()));
        for k in 0..m {
            for d in 0..=m {
                let p_t: f64 = (0..space.size())
                    .filter(|&r| space.digit(r, t) == d)
                    .map(|r| space.probs()[r])
                    .sum();
                law = law.max((p_t - step[d]).abs() * basis.dr[d][k].abs().max(1.0));
            }
        }
    }
    suite.push("basis conditional centring", cond.max(centred));
    suite.push("basis identical law across time", law);
}

fn chaos_checks(suite: &mut Suite, space: &Arc<Space>, basis: &OrthogonalBasis, seed: u64) -> Result<()> {
    let top = space.horizon().min(3);
    let mut iso: f64 = 0.0;
    for n in 1..=top {
        for m in 1..=top {
            let f = random_kernel(space, n, seed + 10 + n as u64);
            let g = random_kernel(space, m, seed + 20 + m as u64);
            let jf = multiple_integral(basis, space, &f, n)?;
            let jg = multiple_integral(basis, space, &g, m)?;
            let lhs = expectation(&jf.mul(&jg)?)?;
            let rhs = if n == m { factorial(n) * inner_product(basis, &f, &g) } else { 0.0 };
            iso = iso.max((lhs - rhs).abs());
        }
    }
    suite.push("isometry", iso);

    let mut trunc: f64 = 0.0;
    for n in 1..=top {
        let f = random_kernel(space, n, seed + 30 + n as u64);
        let jf = multiple_integral(basis, space, &f, n)?;
        for t in 0..=space.horizon() {
            let c = conditional_expectation(&jf, t)?;
            let want = multiple_integral(basis, space, &truncate(&f, t), n)?;
            trunc = trunc.max(max_abs_diff(values(&c), values(&want)));
        }
    }
    suite.push("conditional truncation", trunc);

    let f = random_functional(space, seed + 40);
    let g = random_functional(space, seed + 41);
    let cf = stroock_decompose(basis, &f)?;
    let back = reconstruct(basis, space, &cf);
    let clark = clark_reconstruct(basis, &f)?;
    suite.push("stroock round trip", max_abs_diff(values(&back), values(&f)));
    suite.push("clark round trip", max_abs_diff(values(&clark), values(&f)));
    let proj = orthogonal_projection(basis, &f)?;
    let mut sp: f64 = (cf.f0 - proj.f0).abs();
    for (a, b) in cf.orders.iter().zip(&proj.orders) {
        for (s, v) in a {
            sp = sp.max((v - b.get(s).copied().unwrap_or(0.0)).abs());
        }
    }
    suite.push("stroock equals projection", sp);

    // E[D^(n)F] against E[F Π ΔR/κ] on every support up to length 3.
    let mut l38: f64 = 0.0;
    for r in 1..space.size() {
        let sup = support_of_rank(space, r);
        if sup.len() > top {
            continue;
        }
        let d = expectation(&iterated_gradient(basis, &f, &sup)?)?;
        let vals = values(&f);
        let w: f64 = (0..space.size())
            .map(|q| {
                let prod: f64 = sup.iter().map(|&(t, k)| basis.dr[space.digit(q, t)][k] / basis.kappa[k]).product();
                space.probs()[q] * vals[q] * prod
            })
            .sum();
        l38 = l38.max((d - w).abs());
    }
    suite.push("iterated gradient moment", l38);

    let cg = stroock_decompose(basis, &g)?;
    let cov = expectation(&f.mul(&g)?)? - expectation(&f)? * expectation(&g)?;
    suite.push("covariance expansion", (cov - chaos_covariance(basis, &cf, &cg)).abs());
    Ok(())
}

fn operator_checks(suite: &mut Suite, space: &Arc<Space>, basis: &OrthogonalBasis, seed: u64) -> Result<()> {
    let f = random_functional(space, seed + 50);
    let g = random_functional(space, seed + 51);
    let u = random_process(space, seed + 52, false);
    let up = random_process(space, seed + 53, true);
    let (tt, m) = (space.horizon(), space.n_marks());
    let p = space.probs();

    let (a, b) = mecke_check(&u);
    suite.push("mecke", (a - b).abs());

    let mut lhs = 0.0;
    let mut bar = 0.0;
    for t in 1..=tt {
        let db = bar_grad(&f, t)?;
        for k in 0..m {
            let dp = add_one_cost(&f, t, k)?;
            for r in 0..space.size() {
                let w = p[r] * space.params.nu(k) * up.get(r, t, k);
                lhs += w * values(&dp)[r];
                bar += w * values(&db)[r];
            }
        }
    }
    let fd = expectation(&f.mul(&tilde_divergence(&up))?)?;
    suite.push("L1 integration by parts", (lhs - fd - bar).abs());

    let del = divergence(basis, &u)?;
    let l2 = (expectation(&f.mul(&del)?)? - kappa_pairing(basis, &f, &u)?).abs();
    let adj = max_abs_diff(values(&del), values(&divergence_adjoint(basis, &u)?));
    suite.push("L2 integration by parts", l2.max(adj));

    let l = number_operator(basis, &f)?;
    suite.push("L = -delta D", max_abs_diff(values(&l), values(&minus_delta_gradient(basis, &f)?)));

    let fg = f.mul(&g)?;
    let (fv, gv) = (values(&f), values(&g));
    let mut plus: f64 = 0.0;
    let mut minus: f64 = 0.0;
    for t in 1..=tt {
        for k in 0..m {
            let (dfg, df, dg) = (add_one_cost(&fg, t, k)?, add_one_cost(&f, t, k)?, add_one_cost(&g, t, k)?);
            let (mfg, mf, mg) = (remove_one_cost(&fg, t, k)?, remove_one_cost(&f, t, k)?, remove_one_cost(&g, t, k)?);
            for r in 0..space.size() {
                let r0 = space.with_digit(r, t, 0);
                let (x, y) = (values(&df)[r], values(&dg)[r]);
                plus = plus.max((values(&dfg)[r] - (fv[r0] * y + gv[r0] * x + x * y)).abs());
                let (x, y) = (values(&mf)[r], values(&mg)[r]);
                minus = minus.max((values(&mfg)[r] - (fv[r] * y + gv[r] * x - x * y)).abs());
            }
        }
    }
    suite.push("add-one product rule", plus);
    suite.push("remove-one product rule", minus);

    let gam = expectation(&gamma_tilde(&f, &g)?)?;
    let rhs = 0.5 * (expectation(&f.mul(&l_tilde(&g)?)?)? + expectation(&g.mul(&l_tilde(&f)?)?)?);
    suite.push("carre du champ duality", (gam + rhs).abs());

    let excess = (variance(&f)? - poincare_energy(basis, &f)?).max(0.0);
    suite.push("poincare", excess);
    Ok(())
}
