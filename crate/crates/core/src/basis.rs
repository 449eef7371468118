//! Centered increments ΔZ and their Gram-Schmidt orthogonalization ΔR.

use nalgebra::DMatrix;

use crate::config_space::{Configuration, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OrthogonalBasis {
    /// ΔZ = M·ΔR; lower triangular, unit diagonal, entries γ.
    pub matrix_m: DMatrix<f64>,
    pub matrix_m_inv: DMatrix<f64>,
    pub kappa: Vec<f64>,
    /// ΔZ_k as a function of the digit: `dz[d][k]`.
    pub dz: Vec<Vec<f64>>,
    /// ΔR_k as a function of the digit: `dr[d][k]`.
    pub dr: Vec<Vec<f64>>,
    pub step: Vec<f64>,
}

pub fn build_basis(params: &ModelParams) -> Result<OrthogonalBasis> {
    let m = params.n_marks();
    let nu: Vec<f64> = (0..m).map(|k| params.nu(k)).collect();
    let cov = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            nu[i] * (1.0 - nu[i])
        } else {
            -nu[i] * nu[j]
        }
    });
    // Rows of `a` express ΔR_j in terms of ΔZ: ΔR_j = Σ_i a[j,i] ΔZ_i.
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut gamma = DMatrix::<f64>::identity(m, m);
    let mut kappa = vec![0.0; m];
    for n in 0..m {
        let mut row = DMatrix::<f64>::zeros(1, m);
        row[(0, n)] = 1.0;
        for j in 0..n {
            let c: f64 = (0..m).map(|i| a[(j, i)] * cov[(n, i)]).sum();
            let g = c / kappa[j];
            gamma[(n, j)] = g;
            for i in 0..m {
                row[(0, i)] -= g * a[(j, i)];
            }
        }
        a.set_row(n, &row.row(0));
        let rv = a.row(n);
        let k = (&rv * &cov * rv.transpose())[(0, 0)];
        if !(k >= 1e-14) {
            return Err(Error::DegenerateMark(n));
        }
        kappa[n] = k;
    }
    let step = params.step_probs();
    let dz: Vec<Vec<f64>> = (0..=m)
        .map(|d| (0..m).map(|k| if d == k + 1 { 1.0 } else { 0.0 } - nu[k]).collect())
        .collect();
    let dr = dz
        .iter()
        .map(|z| (0..m).map(|j| (0..m).map(|i| a[(j, i)] * z[i]).sum()).collect())
        .collect();
    Ok(OrthogonalBasis { matrix_m: gamma, matrix_m_inv: a, kappa, dz, dr, step })
}

impl OrthogonalBasis {
    pub fn n_marks(&self) -> usize {
        self.kappa.len()
    }

    /// The γ coefficient of row i, column j (zero-based).
    pub fn gamma(&self, i: usize, j: usize) -> f64 {
        self.matrix_m[(i, j)]
    }

    /// Digit-to-basis evaluation matrix `b[d][s]`: 1 for s=0, ΔR_{s-1}(d) otherwise.
    pub(crate) fn eval_matrix(&self) -> Vec<Vec<f64>> {
        self.dr
            .iter()
            .map(|row| std::iter::once(1.0).chain(row.iter().copied()).collect())
            .collect()
    }

    /// Inverse of `eval_matrix` by orthogonality: row 0 is the law, row s is
    /// P(d)ΔR_{s-1}(d)/κ.
    pub(crate) fn projection_matrix(&self) -> Vec<Vec<f64>> {
        let r = self.step.len();
        (0..r)
            .map(|s| {
                (0..r)
                    .map(|d| {
                        if s == 0 {
                            self.step[d]
                        } else {
                            self.step[d] * self.dr[d][s - 1] / self.kappa[s - 1]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// CSV dump of M, M⁻¹ and κ.
    pub fn to_csv(&self) -> String {
        let m = self.n_marks();
        let mut out = String::from("matrix,row,col,value\n");
        for (name, mat) in [("M", &self.matrix_m), ("M_inv", &self.matrix_m_inv)] {
            for i in 0..m {
                for j in 0..m {
                    out.push_str(&format!("{name},{i},{j},{}\n", crate::fmt17(mat[(i, j)])));
                }
            }
        }
        for (k, v) in self.kappa.iter().enumerate() {
            out.push_str(&format!("kappa,{k},0,{}\n", crate::fmt17(*v)));
        }
        out
    }
}

/// 1{digit_t = k} − λQ(k), with zero-based mark index k.
pub fn delta_z(params: &ModelParams, omega: &Configuration, t: usize, k: usize) -> f64 {
    let hit = if omega.digit(t) == k + 1 { 1.0 } else { 0.0 };
    hit - params.nu(k)
}

pub fn delta_r(basis: &OrthogonalBasis, omega: &Configuration, t: usize, k: usize) -> f64 {
    basis.dr[omega.digit(t)][k]
}

/// Applies `mat` to every tensor slot of an order-n kernel:
/// out(p₁..pₙ) = Σ_i Π mat[(iⱼ, pⱼ)] f(i₁..iₙ) on matching times.
pub fn transform_slots(
    kernel: &crate::chaos::Kernel,
    mat: &DMatrix<f64>,
) -> crate::chaos::Kernel {
    let m = mat.nrows();
    let mut out = crate::chaos::Kernel::new();
    for (support, &v) in kernel {
        if v == 0.0 {
            continue;
        }
        let n = support.len();
        let mut p = vec![0usize; n];
        loop {
            let w: f64 = (0..n).map(|j| mat[(support[j].1, p[j])]).product();
            if w != 0.0 {
                let key: Vec<(usize, usize)> =
                    support.iter().zip(&p).map(|(&(t, _), &pj)| (t, pj)).collect();
                *out.entry(key).or_insert(0.0) += w * v;
            }
            // odometer over p
            let mut j = 0;
            while j < n {
                p[j] += 1;
                if p[j] < m {
                    break;
                }
                p[j] = 0;
                j += 1;
            }
            if j == n {
                break;
            }
        }
    }
    out
}

/// Coefficients against ΔR to coefficients against ΔZ (transpose-inverse action).
#[allow(non_snake_case)]
pub fn convert_coeffs_R_to_Z(
    basis: &OrthogonalBasis,
    f: &crate::chaos::Kernel,
) -> crate::chaos::Kernel {
    transform_slots(f, &basis.matrix_m_inv)
}

#[allow(non_snake_case)]
pub fn convert_coeffs_Z_to_R(
    basis: &OrthogonalBasis,
    g: &crate::chaos::Kernel,
) -> crate::chaos::Kernel {
    transform_slots(g, &basis.matrix_m)
}
