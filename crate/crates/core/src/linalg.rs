//! Small dense linear-algebra kernels: a cyclic Jacobi eigensolver for
//! symmetric matrices, plus the handful of statistics helpers the pipeline
//! needs. Kept dependency-free so every factorization in the crate is
//! reproducible bit-for-bit.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Eigendecomposition of a real symmetric matrix by the cyclic Jacobi method.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues sorted descending and
/// eigenvectors as the corresponding columns, so `a ≈ V · diag(λ) · Vᵀ`.
/// Jacobi is slower than tridiagonalization but keeps the eigenvector matrix
/// orthogonal to machine precision, which the whitening and rotation
/// invariants lean on.
pub fn symmetric_eigh(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "symmetric_eigh",
            expected: n,
            actual: a.ncols(),
        });
    }
    if n == 0 {
        return Err(Error::invalid("symmetric_eigh: empty matrix"));
    }

    // Flat row-major buffers; the rotations touch two rows and two columns at
    // a time and the indexing is easier to keep straight by hand.
    let mut m: Vec<f64> = a.iter().copied().collect();
    let mut v: Vec<f64> = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let total_sq: f64 = m.iter().map(|x| x * x).sum();
    if !total_sq.is_finite() {
        return Err(Error::invalid("symmetric_eigh: non-finite input"));
    }
    let off_tol = total_sq * 1e-26 + f64::MIN_POSITIVE;

    const MAX_SWEEPS: usize = 64;
    for _ in 0..MAX_SWEEPS {
        let mut off_sq = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off_sq += m[p * n + q] * m[p * n + q];
            }
        }
        if off_sq <= off_tol {
            break;
        }

        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                // Rotation angle that annihilates m[p,q] (Rutishauser).
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    1.0 / (2.0 * theta)
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // M ← Rᵀ M R with R = [[c, s], [-s, c]] in the (p,q) plane.
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                // Clean the annihilated pair to avoid drift.
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;

                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());

    let eigenvalues = Array1::from_iter(order.iter().map(|&i| diag[i]));
    let mut eigenvectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            eigenvectors[(k, dst)] = v[k * n + src];
        }
    }
    Ok((eigenvalues, eigenvectors))
}

/// Linear-interpolation quantile (the common "type 7" rule) of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile fraction out of range");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Pearson correlation coefficient; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson: length mismatch");
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..n {
        let da = a[i] - ma;
        let db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va <= 0.0 || vb <= 0.0 {
        0.0
    } else {
        cov / (va.sqrt() * vb.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng as _;

    #[test]
    fn eigh_known_2x2() {
        // [[2,1],[1,2]] has eigenpairs (3, [1,1]/√2) and (1, [1,-1]/√2).
        let a = arr2(&[[2.0, 1.0], [1.0, 2.0]]);
        let (vals, vecs) = symmetric_eigh(&a).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        let s = 1.0 / 2f64.sqrt();
        assert!((vecs[(0, 0)].abs() - s).abs() < 1e-12);
        assert!((vecs[(1, 0)].abs() - s).abs() < 1e-12);
        assert!((vecs[(0, 0)] - vecs[(1, 0)]).abs() < 1e-12); // same sign
    }

    #[test]
    fn eigh_reconstructs_and_is_orthogonal() {
        let mut rng = crate::rng::rng(11);
        for n in [1usize, 3, 8, 25] {
            let mut a = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..=i {
                    let x: f64 = rng.gen_range(-1.0..1.0);
                    a[(i, j)] = x;
                    a[(j, i)] = x;
                }
            }
            let (vals, vecs) = symmetric_eigh(&a).unwrap();
            // VᵀV = I
            let vtv = vecs.t().dot(&vecs);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((vtv[(i, j)] - want).abs() < 1e-12, "VtV[{i},{j}]");
                }
            }
            // V diag(λ) Vᵀ = A
            let lam = Array2::from_diag(&vals);
            let rec = vecs.dot(&lam).dot(&vecs.t());
            for i in 0..n {
                for j in 0..n {
                    assert!((rec[(i, j)] - a[(i, j)]).abs() < 1e-10, "rec[{i},{j}]");
                }
            }
            // Sorted descending.
            for i in 1..n {
                assert!(vals[i - 1] >= vals[i] - 1e-12);
            }
        }
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 4.0, 6.0];
        assert!((pearson(&a, &b) - 1.0).abs() < 1e-12);
        let c = [3.0, 2.0, 1.0];
        assert!((pearson(&a, &c) + 1.0).abs() < 1e-12);
        let flat = [5.0, 5.0, 5.0];
        assert_eq!(pearson(&a, &flat), 0.0);
    }
}
