//! Dense symmetric eigensolvers and small orthogonalization helpers.
//!
//! Two solvers are provided. [`jacobi_eigen`] runs cyclic Jacobi rotations and
//! is used for the small covariance and Gram matrices (a few hundred rows at
//! most). [`tridiagonal_ql_eigen`] reduces to tridiagonal form with Householder
//! reflections and then applies implicit QL iterations; it is the workhorse for
//! graph Laplacians and Nystrom blocks where n reaches the thousands.
//!
//! Both return eigenpairs sorted in ascending eigenvalue order with the sign of
//! every eigenvector fixed by [`fix_sign`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Eigenvalues (ascending) and matching unit eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymmetricEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Reorders eigenpairs so eigenvalues are descending.
    pub fn into_descending(mut self) -> Self {
        let n = self.values.len();
        self.values.reverse();
        let mut v = DMatrix::zeros(self.vectors.nrows(), n);
        for j in 0..n {
            v.set_column(j, &self.vectors.column(n - 1 - j));
        }
        self.vectors = v;
        self
    }
}

/// Largest absolute asymmetry `max |a_ij - a_ji|`.
pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Flips `v` so that its largest-magnitude entry is positive.
/// Ties go to the lowest index.
pub fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    // Magnitudes within a relative 1e-12 of the maximum count as tied.
    let cutoff = max * (1.0 - 1e-12);
    if let Some(&lead) = v.iter().find(|x| x.abs() >= cutoff) {
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn check_square_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::dims(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("matrix contains non-finite entries"));
    }
    let asym = max_asymmetry(a);
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Packs eigenpairs (values + vectors given as rows of `vt`) into ascending order.
fn finish(values: Vec<f64>, vt: Vec<f64>, n: usize) -> SymmetricEigen {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out_vals = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    let mut buf = vec![0.0; n];
    for (j, &src) in order.iter().enumerate() {
        out_vals.push(values[src]);
        buf.copy_from_slice(&vt[src * n..(src + 1) * n]);
        fix_sign(&mut buf);
        for (i, x) in buf.iter().enumerate() {
            vectors[(i, j)] = *x;
        }
    }
    SymmetricEigen {
        values: out_vals,
        vectors,
    }
}

/// Cyclic Jacobi eigendecomposition of a real symmetric matrix.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen> {
    check_square_symmetric(a)?;
    let n = a.nrows();
    // Row-major working copy, symmetrized from the lower triangle.
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            m[i * n + j] = a[(r, c)];
        }
    }
    // vt holds eigenvectors as rows.
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }

    const MAX_SWEEPS: usize = 100;
    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q].abs();
            }
        }
        if off == 0.0 {
            break;
        }
        let threshold = if sweep < 3 {
            0.2 * off / (n * n) as f64
        } else {
            0.0
        };
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                if apq.abs() <= threshold || apq == 0.0 {
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Columns p, q.
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                // Rows p, q.
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vp = vt[p * n + k];
                    let vq = vt[q * n + k];
                    vt[p * n + k] = c * vp - s * vq;
                    vt[q * n + k] = s * vp + c * vq;
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    Ok(finish(values, vt, n))
}

/// Householder tridiagonalization followed by implicit QL.
///
/// O(n^3) with a small constant; suitable for dense matrices up to a few
/// thousand rows.
pub fn tridiagonal_ql_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen> {
    check_square_symmetric(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    // Row-major copy of the lower triangle mirrored.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            v[i * n + j] = a[(r, c)];
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(n, &mut v, &mut d, &mut e);
    // Transpose so eigenvector columns become contiguous rows for the QL sweeps.
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vt[j * n + i] = v[i * n + j];
        }
    }
    tql2(n, &mut vt, &mut d, &mut e)?;
    Ok(finish(d, vt, n))
}

fn tred2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let idx = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
    }
    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
                v[idx(j, i)] = 0.0;
            }
        } else {
            for x in &mut d[..i] {
                *x /= scale;
                h += *x * *x;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[idx(j, i)] = f;
                g = e[j] + v[idx(j, j)] * f;
                for k in (j + 1)..i {
                    let vkj = v[idx(k, j)];
                    g += vkj * d[k];
                    e[k] += vkj * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[idx(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[idx(n - 1, i)] = v[idx(i, i)];
        v[idx(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[idx(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[idx(k, i + 1)] * v[idx(k, j)];
                }
                for k in 0..=i {
                    v[idx(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[idx(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
        v[idx(n - 1, j)] = 0.0;
    }
    v[idx(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal (d, e); `vt` stores eigenvectors as rows.
fn tql2(n: usize, vt: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::domain("QL iteration failed to converge"));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = vt.split_at_mut((i + 1) * n);
                    let row_i = &mut lo[i * n..];
                    let row_i1 = &mut hi[..n];
                    for k in 0..n {
                        let hk = row_i1[k];
                        row_i1[k] = s * row_i[k] + c * hk;
                        row_i[k] = c * row_i[k] - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Orthonormal basis of the column span of `m` via modified Gram-Schmidt with
/// one reorthogonalization pass.
///
/// A column whose residual after orthogonalization falls below `1e-10` of the
/// largest column norm is reported as [`Error::RankDeficient`].
pub fn orthonormal_basis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if cols > rows {
        return Err(Error::RankDeficient { column: rows });
    }
    let max_norm = (0..cols).map(|j| m.column(j).norm()).fold(0.0f64, f64::max);
    let mut q = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        let mut v = m.column(j).clone_owned();
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dot(&v);
                v.axpy(-proj, &qi, 1.0);
            }
        }
        let norm = v.norm();
        if max_norm == 0.0 || !(norm > 1e-10 * max_norm) {
            return Err(Error::RankDeficient { column: j });
        }
        q.set_column(j, &(v / norm));
    }
    Ok(q)
}

/// Singular values of `m` (descending) from the eigenvalues of `mᵀm`.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let gram = m.transpose() * m;
    let eig = jacobi_eigen(&gram)?;
    Ok(eig
        .values
        .iter()
        .rev()
        .map(|&x| x.max(0.0).sqrt())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let x: f64 = rng.random_range(-1.0..1.0);
                a[(i, j)] = x;
                a[(j, i)] = x;
            }
        }
        a
    }

    fn check_decomposition(a: &DMatrix<f64>, eig: &SymmetricEigen, tol: f64) {
        let n = a.nrows();
        let v = &eig.vectors;
        let vtv = v.transpose() * v;
        assert!((vtv - DMatrix::identity(n, n)).amax() < tol);
        for k in 0..n {
            let r = a * v.column(k) - v.column(k) * eig.values[k];
            assert!(r.norm() < tol, "residual {} for pair {}", r.norm(), k);
        }
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn jacobi_random() {
        for seed in 0..5 {
            let a = random_symmetric(12, seed);
            let eig = jacobi_eigen(&a).unwrap();
            check_decomposition(&a, &eig, 1e-12);
        }
    }

    #[test]
    fn ql_random() {
        for (n, seed) in [(1, 1), (2, 2), (7, 3), (60, 4), (150, 5)] {
            let a = random_symmetric(n, seed);
            let eig = tridiagonal_ql_eigen(&a).unwrap();
            check_decomposition(&a, &eig, 1e-10);
        }
    }

    #[test]
    fn solvers_agree() {
        let a = random_symmetric(20, 9);
        let j = jacobi_eigen(&a).unwrap();
        let q = tridiagonal_ql_eigen(&a).unwrap();
        for k in 0..20 {
            assert!((j.values[k] - q.values[k]).abs() < 1e-12);
            // Same sign convention, simple spectrum: vectors coincide.
            assert!((j.vectors.column(k) - q.vectors.column(k)).amax() < 1e-9);
        }
    }

    #[test]
    fn diagonal_and_zero_matrices() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -1.0, 2.0]));
        let eig = jacobi_eigen(&a).unwrap();
        assert_eq!(eig.values, vec![-1.0, 2.0, 3.0]);
        let z = DMatrix::<f64>::zeros(4, 4);
        let eig = tridiagonal_ql_eigen(&z).unwrap();
        assert!(eig.values.iter().all(|&x| x == 0.0));
        check_decomposition(&z, &eig, 1e-14);
    }

    #[test]
    fn rejects_asymmetric() {
        let mut a = DMatrix::<f64>::identity(3, 3);
        a[(0, 2)] = 1.0;
        assert!(matches!(jacobi_eigen(&a), Err(Error::NotSymmetric { .. })));
        assert!(matches!(
            tridiagonal_ql_eigen(&a),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sign_convention() {
        let mut v = vec![0.1, -0.9, 0.3];
        fix_sign(&mut v);
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
        let mut tie = vec![-0.5, 0.5];
        fix_sign(&mut tie);
        assert_eq!(tie, vec![0.5, -0.5]);
    }

    #[test]
    fn gram_schmidt_detects_dependent_column() {
        let m = DMatrix::from_column_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 2.0, -3.0, 0.0]);
        assert!(matches!(
            orthonormal_basis(&m),
            Err(Error::RankDeficient { column: 2 })
        ));
        let q = orthonormal_basis(&m.columns(0, 2).clone_owned()).unwrap();
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).amax() < 1e-15);
    }
}
