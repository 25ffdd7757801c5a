//! One-sided (Hestenes) Jacobi SVD: orthogonalizes the columns of `A` by plane
//! rotations, which is Jacobi diagonalization of `AᵀA` without forming it.

use nalgebra::DMatrix;

const TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 100;

/// Singular values of `a` in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut w = if a.nrows() >= a.ncols() {
        a.clone()
    } else {
        a.transpose()
    };
    let (m, n) = w.shape();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                {
                    let cp = w.column(p);
                    let cq = w.column(q);
                    for i in 0..m {
                        alpha += cp[i] * cp[i];
                        beta += cq[i] * cq[i];
                        gamma += cp[i] * cq[i];
                    }
                }
                if gamma == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let xp = w[(i, p)];
                    let xq = w[(i, q)];
                    w[(i, p)] = c * xp - s * xq;
                    w[(i, q)] = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}
