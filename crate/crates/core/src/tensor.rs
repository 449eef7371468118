//! Per-digit linear maps on rank-indexed tables.
//!
//! A table over {0..r-1}^T is a T-fold tensor; `apply` replaces the slice
//! along digit t by `mat * slice`.

use crate::config_space::Space;

/// `mat[s][d]`: output digit s from input digit d.
pub(crate) fn apply(space: &Space, data: &mut [f64], t: usize, mat: &[Vec<f64>]) {
    let r = space.radix();
    let stride = space.stride(t);
    let block = stride * r;
    let mut buf = vec![0.0; r];
    let mut out = vec![0.0; r];
    for hi in (0..data.len()).step_by(block) {
        for lo in 0..stride {
            let base = hi + lo;
            for (d, b) in buf.iter_mut().enumerate() {
                *b = data[base + d * stride];
            }
            for (s, o) in out.iter_mut().enumerate() {
                *o = mat[s].iter().zip(&buf).map(|(m, b)| m * b).sum();
            }
            for (s, o) in out.iter().enumerate() {
                data[base + s * stride] = *o;
            }
        }
    }
}

pub(crate) fn apply_all(space: &Space, data: &mut [f64], mat: &[Vec<f64>]) {
    for t in 1..=space.horizon() {
        apply(space, data, t, mat);
    }
}
