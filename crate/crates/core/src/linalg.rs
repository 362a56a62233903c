//! Dense kernels shared by the network, the projector and the evaluators.

use nalgebra::DMatrix;

/// `C <- A·B + beta·C` with explicit (row, column) strides.
///
/// Each output element accumulates over `k` in a fixed order that does not
/// depend on `n`, so a column of `C` is bit-identical whether it is computed
/// alone or as part of a wider batch.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(extent(m, k, rsa, csa) <= a.len(), "gemm: A out of bounds");
    assert!(extent(k, n, rsb, csb) <= b.len(), "gemm: B out of bounds");
    assert!(extent(m, n, rsc, csc) <= c.len(), "gemm: C out of bounds");
    // SAFETY: all three operands were bounds-checked against their strides
    // above and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest singular value.
pub(crate) fn sigma_max(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let sv = if a.nrows() >= a.ncols() {
        a.clone().singular_values()
    } else {
        a.transpose().singular_values()
    };
    sv.iter().cloned().fold(0.0, f64::max)
}

/// Spectral norm of a symmetric matrix.
pub(crate) fn symmetric_spectral_norm(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}

/// Orthonormal basis of the column space from a Householder QR with
/// column-norm pivoting.
pub(crate) struct PivotedBasis {
    pub basis: DMatrix<f64>,
    pub rank: usize,
}

/// Columns whose pivoted residual norm falls below `rel_tol * sigma_max`
/// are treated as dependent.
pub(crate) fn pivoted_qr_basis(a: &DMatrix<f64>, rel_tol: f64) -> PivotedBasis {
    let (m, n) = a.shape();
    let sigma_max = sigma_max(a);
    let tol = rel_tol * sigma_max;
    let mut work = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::new();
    let steps = m.min(n);

    // Applies `I - 2 v v'` to rows `j..` of a column slice.
    fn reflect(v: &[f64], col: &mut [f64]) {
        let proj = dot(v, col);
        for (c, vi) in col.iter_mut().zip(v) {
            *c -= 2.0 * proj * vi;
        }
    }

    for j in 0..steps {
        let mut best = j;
        let mut best_norm = -1.0;
        for c in j..n {
            let nrm = norm(&work.column(c).as_slice()[j..]);
            if nrm > best_norm {
                best_norm = nrm;
                best = c;
            }
        }
        if best_norm <= tol || sigma_max == 0.0 {
            break;
        }
        work.swap_columns(j, best);

        let mut v = work.column(j).as_slice()[j..].to_vec();
        let alpha = if v[0] >= 0.0 { -best_norm } else { best_norm };
        v[0] -= alpha;
        let vnorm = norm(&v);
        if vnorm > 0.0 {
            v.iter_mut().for_each(|x| *x /= vnorm);
            for c in j..n {
                reflect(&v, &mut work.column_mut(c).as_mut_slice()[j..]);
            }
        }
        reflectors.push(v);
    }

    let rank = reflectors.len();
    let mut basis = DMatrix::<f64>::zeros(m, rank);
    for k in 0..rank {
        basis[(k, k)] = 1.0;
    }
    for (j, v) in reflectors.iter().enumerate().rev() {
        for c in 0..rank {
            reflect(v, &mut basis.column_mut(c).as_mut_slice()[j..]);
        }
    }
    PivotedBasis { basis, rank }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut s = rng::stream(seed, 0, 0);
        DMatrix::from_fn(rows, cols, |_, _| rng::standard_normal(&mut s))
    }

    #[test]
    fn gemm_matches_naive_product() {
        let a = random_matrix(7, 5, 1);
        let b = random_matrix(5, 3, 2);
        let mut c = vec![0.0; 21];
        gemm((7, 5, 3), a.as_slice(), (1, 7), b.as_slice(), (1, 5), 0.0, &mut c, (1, 7));
        let expected = &a * &b;
        for (x, y) in c.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_columns_do_not_depend_on_batch_width() {
        let a = random_matrix(33, 41, 3);
        let b = random_matrix(41, 9, 4);
        let mut wide = vec![0.0; 33 * 9];
        gemm((33, 41, 9), a.as_slice(), (1, 33), b.as_slice(), (1, 41), 0.0, &mut wide, (1, 33));
        for j in 0..9 {
            let mut single = vec![0.0; 33];
            let col = &b.as_slice()[j * 41..(j + 1) * 41];
            gemm((33, 41, 1), a.as_slice(), (1, 33), col, (1, 41), 0.0, &mut single, (1, 33));
            assert_eq!(&wide[j * 33..(j + 1) * 33], &single[..]);
        }
    }

    #[test]
    fn pivoted_basis_detects_rank_and_is_orthonormal() {
        let left = random_matrix(12, 4, 5);
        let right = random_matrix(4, 9, 6);
        let a = &left * &right;
        let qr = pivoted_qr_basis(&a, 1e-8);
        assert_eq!(qr.rank, 4);
        let gram = qr.basis.transpose() * &qr.basis;
        assert!((gram - DMatrix::<f64>::identity(4, 4)).norm() < 1e-12);
        // Every column of `a` lies in the span.
        let resid = &a - &qr.basis * (qr.basis.transpose() * &a);
        assert!(resid.norm() < 1e-10 * a.norm());
    }

    #[test]
    fn pivoted_basis_of_zero_matrix_is_empty() {
        let qr = pivoted_qr_basis(&DMatrix::zeros(5, 3), 1e-8);
        assert_eq!(qr.rank, 0);
    }
}
