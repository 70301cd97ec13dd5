//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.

use super::matrix::dot;
use super::{LinalgError, Matrix};

const MAX_SWEEPS: usize = 80;

/// `m = u · Diag(s) · vt` with `k = min(rows, cols)` singular triplets.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// rows × k, orthonormal columns.
    pub u: Matrix,
    /// Non-negative, non-increasing.
    pub s: Vec<f64>,
    /// k × cols, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.s.len();
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for j in 0..k {
                us[(i, j)] *= self.s[j];
            }
        }
        us.matmul(&self.vt)
            .expect("svd factors have matching shapes")
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite("svd input"));
    }
    if m.rows() >= m.cols() {
        svd_tall(m)
    } else {
        let t = svd_tall(&m.transpose())?;
        Ok(SvdResult {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        })
    }
}

fn svd_tall(m: &Matrix) -> Result<SvdResult, LinalgError> {
    let (rows, n) = m.shape();
    // Columns of the working matrix are kept as rows of `work` for contiguous access.
    let mut work = m.transpose();
    let mut v = Matrix::identity(n);

    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        for i in 0..n.saturating_sub(1) {
            for j in i + 1..n {
                let alpha = dot(work.row(i), work.row(i));
                let beta = dot(work.row(j), work.row(j));
                let gamma = dot(work.row(i), work.row(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut work, i, j, c, s);
                rotate_rows(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
        sweeps += 1;
        if sweeps == MAX_SWEEPS {
            return Err(LinalgError::NoConvergence {
                routine: "svd",
                iterations: sweeps,
            });
        }
    }

    let norms: Vec<f64> = (0..n)
        .map(|i| dot(work.row(i), work.row(i)).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let s: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let cutoff = s.first().copied().unwrap_or(0.0) * (rows.max(n) as f64) * f64::EPSILON;

    // u stored as k rows of length `rows`, transposed at the end.
    let mut u_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut null = Vec::new();
    for (slot, &i) in order.iter().enumerate() {
        if s[slot] > cutoff && s[slot] > 0.0 {
            u_rows.push(work.row(i).iter().map(|x| x / s[slot]).collect());
        } else {
            u_rows.push(vec![0.0; rows]);
            null.push(slot);
        }
    }
    complete_orthonormal(&mut u_rows, &null);

    let u = Matrix::from_fn(rows, n, |r, c| u_rows[c][r]);
    let vt = Matrix::from_fn(n, n, |r, c| v[(order[r], c)]);
    Ok(SvdResult { u, s, vt })
}

fn rotate_rows(m: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    let cols = m.cols();
    for k in 0..cols {
        let a = m[(i, k)];
        let b = m[(j, k)];
        m[(i, k)] = c * a - s * b;
        m[(j, k)] = s * a + c * b;
    }
}

/// Fills the listed slots with unit vectors orthogonal to every other slot.
fn complete_orthonormal(vectors: &mut [Vec<f64>], slots: &[usize]) {
    if slots.is_empty() {
        return;
    }
    let dim = vectors[0].len();
    let mut candidate = 0;
    for &slot in slots {
        loop {
            assert!(candidate < dim, "cannot complete basis beyond dimension");
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            // Two Gram-Schmidt passes.
            for _ in 0..2 {
                for (other, vec) in vectors.iter().enumerate() {
                    if other == slot {
                        continue;
                    }
                    let proj = dot(&e, vec);
                    for (x, y) in e.iter_mut().zip(vec) {
                        *x -= proj * y;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-8 {
                vectors[slot] = e.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_diagonal() {
        assert_eq!(svd(&Matrix::identity(2)).unwrap().s, vec![1.0, 1.0]);
        let r = svd(&Matrix::from_diag(&[3.0, 4.0])).unwrap();
        assert_eq!(r.s, vec![4.0, 3.0]);
        assert!(
            r.reconstruct()
                .sub(&Matrix::from_diag(&[3.0, 4.0]))
                .unwrap()
                .frobenius_norm()
                < 1e-14
        );
    }

    #[test]
    fn rank_deficient_input_keeps_orthonormal_u() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![0.0, 0.0]]);
        let r = svd(&m).unwrap();
        assert!(r.s[1] < 1e-12);
        let utu = r.u.t_matmul(&r.u).unwrap();
        assert!(utu.sub(&Matrix::identity(2)).unwrap().frobenius_norm() < 1e-12);
        assert!(r.reconstruct().sub(&m).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn zero_matrix() {
        let r = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(r.s, vec![0.0, 0.0]);
        let utu = r.u.t_matmul(&r.u).unwrap();
        assert!(utu.sub(&Matrix::identity(2)).unwrap().frobenius_norm() < 1e-12);
    }
}
