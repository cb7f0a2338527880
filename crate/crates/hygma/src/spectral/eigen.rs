//! Symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! Small dense symmetric matrices (agent counts, so tens of rows at most) are
//! diagonalized by sweeping all off-diagonal pairs with Givens rotations until
//! the largest off-diagonal magnitude drops below `1e-10` or 100 sweeps have
//! run. Eigenvalues come back ascending with matching orthonormal eigenvector
//! columns, so `A = V · diag(λ) · Vᵀ`.

use crate::tensor::Tensor;

use super::SpectralError;

/// Largest off-diagonal magnitude allowed at convergence.
const OFF_DIAG_TOL: f64 = 1e-10;
/// Maximum asymmetry tolerated in the input.
const SYMMETRY_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues (ascending) and eigenvector columns of a symmetric matrix.
pub fn eigh(m: &Tensor) -> Result<(Vec<f64>, Tensor), SpectralError> {
    if m.rank() != 2 || m.shape()[0] != m.shape()[1] {
        return Err(SpectralError::NotSquare(m.rows(), m.cols()));
    }
    let n = m.shape()[0];
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (m.at(i, j) - m.at(j, i)).abs();
            if diff > SYMMETRY_TOL {
                return Err(SpectralError::NotSymmetric { i, j, diff });
            }
        }
    }

    let mut a = m.clone();
    let mut v = Tensor::eye(n);
    for _sweep in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a.at(i, j).abs());
            }
        }
        if off < OFF_DIAG_TOL {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq.abs() < OFF_DIAG_TOL * 1e-3 {
                    continue;
                }
                // Symmetric Schur rotation annihilating a[p][q].
                let theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let (app, aqq) = (a.at(p, p), a.at(q, q));
                a.set(p, p, c * c * app - 2.0 * s * c * apq + s * s * aqq);
                a.set(q, q, s * s * app + 2.0 * s * c * apq + c * c * aqq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a.at(k, p);
                        let akq = a.at(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(p, k, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                        a.set(q, k, s * akp + c * akq);
                    }
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    // Sort ascending by eigenvalue, permuting eigenvector columns alongside.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.at(i, i).partial_cmp(&a.at(j, j)).expect("finite eigenvalues"));
    let values: Vec<f64> = order.iter().map(|&i| a.at(i, i)).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (dst, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, dst, v.at(row, src));
        }
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn reconstruct(values: &[f64], vectors: &Tensor) -> Tensor {
        let n = values.len();
        let mut out = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for (k, &lam) in values.iter().enumerate() {
                    s += vectors.at(i, k) * lam * vectors.at(j, k);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn two_by_two_hand_case() {
        let m = Tensor::from_vec(vec![2.0, 1.0, 1.0, 2.0], &[2, 2]).unwrap();
        let (vals, vecs) = eigh(&m).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        // First column ∝ [1,-1]/√2, second ∝ [1,1]/√2 (sign-free check).
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs.at(0, 0).abs() - inv).abs() < 1e-12);
        assert!((vecs.at(0, 0) + vecs.at(1, 0)).abs() < 1e-12);
        assert!((vecs.at(0, 1) - vecs.at(1, 1)).abs() < 1e-12);
    }

    #[test]
    fn diagonal_matrix_sorts_ascending() {
        let m = Tensor::from_vec(
            vec![5.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 2.0],
            &[3, 3],
        )
        .unwrap();
        let (vals, _) = eigh(&m).unwrap();
        assert_eq!(vals, vec![-1.0, 2.0, 5.0]);
    }

    #[test]
    fn random_matrices_reconstruct_and_stay_orthonormal() {
        let mut rng = crate::test_rng(42);
        for trial in 0..25 {
            let n = rng.gen_range(1..=12);
            let mut m = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for j in i..n {
                    let v = rng.gen_range(-3.0..3.0);
                    m.set(i, j, v);
                    m.set(j, i, v);
                }
            }
            let (vals, vecs) = eigh(&m).unwrap();
            let rec = reconstruct(&vals, &vecs);
            assert!(max_abs_diff(&rec, &m) < 1e-8, "trial {trial}: reconstruction");
            let gram = vecs.transpose().matmul(&vecs).unwrap();
            assert!(max_abs_diff(&gram, &Tensor::eye(n)) < 1e-8, "trial {trial}: orthonormality");
            for w in vals.windows(2) {
                assert!(w[0] <= w[1], "eigenvalues not ascending");
            }
        }
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = Tensor::from_vec(vec![1.0, 2.0, 0.5, 1.0], &[2, 2]).unwrap();
        assert!(matches!(eigh(&m), Err(SpectralError::NotSymmetric { .. })));
    }

    #[test]
    fn non_square_rejected() {
        let m = Tensor::zeros(&[2, 3]);
        assert!(matches!(eigh(&m), Err(SpectralError::NotSquare(2, 3))));
    }

    #[test]
    fn one_by_one_is_trivial() {
        let m = Tensor::from_vec(vec![7.0], &[1, 1]).unwrap();
        let (vals, vecs) = eigh(&m).unwrap();
        assert_eq!(vals, vec![7.0]);
        assert_eq!(vecs.data(), &[1.0]);
    }
}
