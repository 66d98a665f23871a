//! Symmetric eigensolvers shared by the quadrature rules and the sector
//! eigenproblem.
//!
//! The building blocks are the implicit-shift QL iteration on a symmetric
//! tridiagonal matrix with plane-rotation accumulation, a Householder
//! reduction of dense symmetric matrices to tridiagonal form, and Cholesky
//! factorizations used to reduce generalized problems `A x = lambda B x`
//! to standard form `(L^-1 A L^-T) u = lambda u` with `x = L^-T u`.

use std::fmt;

/// Iteration cap per eigenvalue in the QL sweep.
const MAX_QL_SWEEPS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LinalgError {
    /// QL iteration failed to isolate the eigenvalue at `index`.
    Convergence { index: usize },
    /// Cholesky pivot at `index` was not positive.
    NotPositiveDefinite { index: usize },
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinalgError::Convergence { index } => {
                write!(f, "QL iteration did not converge at eigenvalue index {index}")
            }
            LinalgError::NotPositiveDefinite { index } => {
                write!(f, "matrix is not positive definite (pivot {index})")
            }
        }
    }
}

impl std::error::Error for LinalgError {}

/// Implicit-shift QL iteration on the symmetric tridiagonal matrix with
/// diagonal `d` and off-diagonal `e[0..n-1]` (`e` must have length n, the
/// last slot is workspace). Every plane rotation applied to the matrix is
/// also applied to the column pairs of each vector in `rows`, so passing
/// the rows of an orthogonal `Q` accumulates the full eigenvector matrix
/// while passing a single unit row tracks one component of every
/// eigenvector. Eigenvalues land in `d`, unsorted.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], rows: &mut [Vec<f64>]) -> Result<(), LinalgError> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    assert_eq!(e.len(), n, "off-diagonal workspace must have length n");
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_SWEEPS {
                return Err(LinalgError::Convergence { index: l });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut i = m;
            let mut underflowed = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // deflate and restart the sweep on this block
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflowed = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in rows.iter_mut() {
                    let f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if underflowed && i > l {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Sorts eigenvalues ascending and permutes the tracked row components
/// (one entry per eigenvector) the same way.
fn sort_eigen(d: &mut [f64], rows: &mut [Vec<f64>]) {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let sorted_d: Vec<f64> = order.iter().map(|&k| d[k]).collect();
    d.copy_from_slice(&sorted_d);
    for row in rows.iter_mut() {
        let sorted_row: Vec<f64> = order.iter().map(|&k| row[k]).collect();
        row.copy_from_slice(&sorted_row);
    }
}

/// Eigenvalues of a symmetric tridiagonal matrix, sorted ascending,
/// together with the first component of each normalized eigenvector.
pub(crate) fn tridiagonal_eigen_first_components(
    diag: &[f64],
    off: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), LinalgError> {
    let n = diag.len();
    assert_eq!(off.len() + 1, n.max(1), "off-diagonal must have length n - 1");
    let mut d = diag.to_vec();
    let mut e = Vec::with_capacity(n);
    e.extend_from_slice(off);
    e.push(0.0);
    let mut first = vec![0.0; n];
    if n > 0 {
        first[0] = 1.0;
    }
    let mut rows = [first];
    tridiagonal_ql(&mut d, &mut e, &mut rows)?;
    sort_eigen(&mut d, &mut rows);
    let [first] = rows;
    Ok((d, first))
}

/// Householder reduction of the dense symmetric matrix `z` to tridiagonal
/// form, accumulating the orthogonal transform into `z` itself. Returns
/// the tridiagonal (diagonal, off-diagonal-with-workspace-slot) pair ready
/// for [`tridiagonal_ql`] with the rows of `z`.
fn householder_tridiagonalize(z: &mut [Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = z.len();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..i).map(|k| z[i][k].abs()).sum();
            if scale == 0.0 {
                e[i] = z[i][l];
            } else {
                for k in 0..i {
                    z[i][k] /= scale;
                    h += z[i][k] * z[i][k];
                }
                let f = z[i][l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z[i][l] = f - g;
                let mut f_acc = 0.0;
                for j in 0..i {
                    z[j][i] = z[i][j] / h;
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += z[j][k] * z[i][k];
                    }
                    for k in (j + 1)..i {
                        g_acc += z[k][j] * z[i][k];
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * z[i][j];
                }
                let hh = f_acc / (h + h);
                for j in 0..i {
                    let f = z[i][j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        z[j][k] -= f * e[k] + g * z[i][k];
                    }
                }
            }
        } else {
            e[i] = z[i][l];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += z[i][k] * z[k][j];
                }
                for row in z.iter_mut().take(i) {
                    row[j] -= g * row[i];
                }
            }
        }
        d[i] = z[i][i];
        z[i][i] = 1.0;
        for j in 0..i {
            z[j][i] = 0.0;
            z[i][j] = 0.0;
        }
    }
    // rotate the off-diagonal into the leading n-1 slots expected by QL
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    (d, e)
}

/// Full eigendecomposition of a dense symmetric matrix. Returns the
/// eigenvalues sorted ascending and the matching orthonormal eigenvectors,
/// one `Vec` per eigenvector.
pub(crate) fn symmetric_dense_eigen(
    mut a: Vec<Vec<f64>>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), LinalgError> {
    let n = a.len();
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let (mut d, mut e) = householder_tridiagonalize(&mut a);
    tridiagonal_ql(&mut d, &mut e, &mut a)?;
    sort_eigen(&mut d, &mut a);
    let vectors: Vec<Vec<f64>> = (0..n).map(|k| (0..n).map(|i| a[i][k]).collect()).collect();
    Ok((d, vectors))
}

/// Cholesky factor of a symmetric tridiagonal positive definite matrix:
/// returns the lower bidiagonal `L` as (diagonal, subdiagonal).
pub(crate) fn cholesky_bidiagonal(
    diag: &[f64],
    off: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), LinalgError> {
    let n = diag.len();
    let mut l_diag = vec![0.0; n];
    let mut l_off = vec![0.0; n.saturating_sub(1)];
    for i in 0..n {
        let mut pivot = diag[i];
        if i > 0 {
            l_off[i - 1] = off[i - 1] / l_diag[i - 1];
            pivot -= l_off[i - 1] * l_off[i - 1];
        }
        if pivot <= 0.0 || !pivot.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { index: i });
        }
        l_diag[i] = pivot.sqrt();
    }
    Ok((l_diag, l_off))
}

/// Generalized symmetric eigenproblem `A x = lambda B x` with both
/// matrices symmetric tridiagonal and `B` positive definite. Reduces to
/// standard form through the bidiagonal Cholesky factor of `B`, solves the
/// dense reduced matrix, and back-transforms. Returned eigenvectors are
/// B-orthonormal; eigenvalues are sorted ascending.
pub(crate) fn generalized_tridiagonal_eigen(
    a_diag: &[f64],
    a_off: &[f64],
    b_diag: &[f64],
    b_off: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>), LinalgError> {
    let n = a_diag.len();
    let (l_diag, l_off) = cholesky_bidiagonal(b_diag, b_off)?;
    // W = L^-1 A, one forward-substitution sweep per row
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut row = vec![0.0; n];
        if i > 0 {
            row[i - 1] = a_off[i - 1];
        }
        row[i] = a_diag[i];
        if i + 1 < n {
            row[i + 1] = a_off[i];
        }
        if i > 0 {
            let li = l_off[i - 1];
            let (done, current) = w.split_at_mut(i);
            let prev = &done[i - 1];
            for j in 0..n {
                row[j] -= li * prev[j];
            }
            current[0] = row;
        } else {
            w[0] = row;
        }
        for v in w[i].iter_mut() {
            *v /= l_diag[i];
        }
    }
    // C = W L^-T by solving C L^T = W column by column within each row
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut v = w[i][j];
            if j > 0 {
                v -= l_off[j - 1] * c[i][j - 1];
            }
            c[i][j] = v / l_diag[j];
        }
    }
    symmetrize(&mut c);
    let (values, reduced) = symmetric_dense_eigen(c)?;
    let vectors = reduced
        .into_iter()
        .map(|u| back_substitute_bidiagonal(&l_diag, &l_off, u))
        .collect();
    Ok((values, vectors))
}

/// Solves `L^T x = u` for lower bidiagonal `L`.
fn back_substitute_bidiagonal(l_diag: &[f64], l_off: &[f64], mut u: Vec<f64>) -> Vec<f64> {
    let n = u.len();
    if n == 0 {
        return u;
    }
    u[n - 1] /= l_diag[n - 1];
    for i in (0..n - 1).rev() {
        u[i] = (u[i] - l_off[i] * u[i + 1]) / l_diag[i];
    }
    u
}

/// Dense Cholesky factor (lower triangular) of a symmetric positive
/// definite matrix.
pub(crate) fn cholesky_dense(b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LinalgError> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = b[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(LinalgError::NotPositiveDefinite { index: i });
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Generalized symmetric eigenproblem `A x = lambda B x` for dense
/// symmetric `A` and dense symmetric positive definite `B`. Eigenvalues
/// sorted ascending; eigenvectors B-orthonormal.
pub(crate) fn generalized_dense_eigen(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<Vec<f64>>), LinalgError> {
    let n = a.len();
    let l = cholesky_dense(b)?;
    // W = L^-1 A by forward substitution on each column of A
    let mut w = vec![vec![0.0; n]; n];
    for j in 0..n {
        for i in 0..n {
            let mut v = a[i][j];
            for k in 0..i {
                v -= l[i][k] * w[k][j];
            }
            w[i][j] = v / l[i][i];
        }
    }
    // C = W L^-T by solving C L^T = W
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut v = w[i][j];
            for k in 0..j {
                v -= c[i][k] * l[j][k];
            }
            c[i][j] = v / l[j][j];
        }
    }
    symmetrize(&mut c);
    let (values, reduced) = symmetric_dense_eigen(c)?;
    let vectors = reduced
        .into_iter()
        .map(|u| back_substitute_dense(&l, u))
        .collect();
    Ok((values, vectors))
}

/// Solves `L^T x = u` for dense lower triangular `L`.
fn back_substitute_dense(l: &[Vec<f64>], mut u: Vec<f64>) -> Vec<f64> {
    let n = u.len();
    for i in (0..n).rev() {
        let mut v = u[i];
        for k in (i + 1)..n {
            v -= l[k][i] * u[k];
        }
        u[i] = v / l[i][i];
    }
    u
}

fn symmetrize(c: &mut [Vec<f64>]) {
    let n = c.len();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (c[i][j] + c[j][i]);
            c[i][j] = avg;
            c[j][i] = avg;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
            .collect()
    }

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                a[i][j] = v;
                a[j][i] = v;
            }
        }
        a
    }

    #[test]
    fn tridiagonal_two_by_two() {
        let (values, first) = tridiagonal_eigen_first_components(&[2.0, 2.0], &[1.0]).unwrap();
        assert_relative_eq!(values[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(values[1], 3.0, max_relative = 1e-14);
        // eigenvectors (1,-1)/sqrt(2) and (1,1)/sqrt(2)
        assert_relative_eq!(first[0].abs(), 0.5f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(first[1].abs(), 0.5f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn tridiagonal_zero_diagonal() {
        let (values, _) = tridiagonal_eigen_first_components(&[0.0, 0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_relative_eq!(values[0], -(2.0f64.sqrt()), max_relative = 1e-14);
        assert!(values[1].abs() < 1e-14);
        assert_relative_eq!(values[2], 2.0f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn dense_eigen_reconstructs_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 12, 30] {
            let a = random_symmetric(n, &mut rng);
            let (values, vectors) = symmetric_dense_eigen(a.clone()).unwrap();
            let norm: f64 = values.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
            for (lambda, v) in values.iter().zip(&vectors) {
                let av = mat_vec(&a, v);
                for i in 0..n {
                    assert!(
                        (av[i] - lambda * v[i]).abs() <= 1e-10 * norm,
                        "residual too large at n={n}"
                    );
                }
            }
            // orthonormality
            for p in 0..n {
                for q in 0..=p {
                    let dot: f64 = vectors[p].iter().zip(&vectors[q]).map(|(x, y)| x * y).sum();
                    let expected = if p == q { 1.0 } else { 0.0 };
                    assert!((dot - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dense_eigen_handles_degenerate_spectra() {
        // identity plus a rank-one bump has an (n-1)-fold eigenvalue
        let n = 6;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 1.0;
        }
        for i in 0..n {
            for j in 0..n {
                a[i][j] += 0.5 / n as f64;
            }
        }
        let (values, _) = symmetric_dense_eigen(a).unwrap();
        for k in 0..n - 1 {
            assert_relative_eq!(values[k], 1.0, max_relative = 1e-12);
        }
        assert_relative_eq!(values[n - 1], 1.5, max_relative = 1e-12);
    }

    #[test]
    fn generalized_dense_matches_scaled_identity() {
        // B = 4 I turns the problem into eigenvalues of A / 4
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 8;
        let a = random_symmetric(n, &mut rng);
        let mut b = vec![vec![0.0; n]; n];
        for i in 0..n {
            b[i][i] = 4.0;
        }
        let (gen_values, gen_vectors) = generalized_dense_eigen(&a, &b).unwrap();
        let (std_values, _) = symmetric_dense_eigen(a.clone()).unwrap();
        for k in 0..n {
            assert_relative_eq!(gen_values[k], std_values[k] / 4.0, max_relative = 1e-10);
        }
        // B-normalization: x^T B x = 1
        for v in &gen_vectors {
            let bv = mat_vec(&b, v);
            let quad: f64 = v.iter().zip(&bv).map(|(x, y)| x * y).sum();
            assert_relative_eq!(quad, 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn generalized_tridiagonal_solves_residual_and_b_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 40;
        let a_diag: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let a_off: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // diagonally dominant B stays positive definite
        let b_off: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let b_diag: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..2.0)).collect();
        let (values, vectors) = generalized_tridiagonal_eigen(&a_diag, &a_off, &b_diag, &b_off).unwrap();
        let tri_mat = |d: &[f64], o: &[f64]| -> Vec<Vec<f64>> {
            let mut m = vec![vec![0.0; n]; n];
            for i in 0..n {
                m[i][i] = d[i];
                if i + 1 < n {
                    m[i][i + 1] = o[i];
                    m[i + 1][i] = o[i];
                }
            }
            m
        };
        let a = tri_mat(&a_diag, &a_off);
        let b = tri_mat(&b_diag, &b_off);
        let scale: f64 = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (lambda, x) in values.iter().zip(&vectors) {
            let ax = mat_vec(&a, x);
            let bx = mat_vec(&b, x);
            for i in 0..n {
                assert!((ax[i] - lambda * bx[i]).abs() <= 1e-9 * scale.max(1.0));
            }
            let quad: f64 = x.iter().zip(&bx).map(|(p, q)| p * q).sum();
            assert_relative_eq!(quad, 1.0, max_relative = 1e-9);
        }
        for p in 0..n {
            let bx = mat_vec(&b, &vectors[p]);
            for q in 0..p {
                let dot: f64 = vectors[q].iter().zip(&bx).map(|(x, y)| x * y).sum();
                assert!(dot.abs() < 1e-9, "B-orthogonality violated: {dot}");
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite_matrices() {
        assert!(matches!(
            cholesky_bidiagonal(&[1.0, -1.0], &[0.0]),
            Err(LinalgError::NotPositiveDefinite { index: 1 })
        ));
        let indefinite = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(
            cholesky_dense(&indefinite),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
    }
}
