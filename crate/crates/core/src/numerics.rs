//! Dense complex linear-algebra kernel shared by every other module.
//!
//! Matrices are stored column-major (nalgebra's layout), and `vec`/`unvec`
//! stack columns, so `vec(A)` walks the storage in order. All routines are
//! pure functions over immutable inputs and safe to call concurrently.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

/// Complex scalar used throughout the crate.
pub type C64 = Complex<f64>;
/// Dense complex matrix, column-major.
pub type CMatrix = DMatrix<C64>;
/// Dense complex vector.
pub type CVector = DVector<C64>;

/// Relative tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Condition-number estimate above which `solve_hpd` refuses to solve.
pub const SINGULARITY_COND: f64 = 1e14;
/// Eigenvalues below this fraction of the largest are clamped to zero when
/// a PSD result is expected (quadrature round-off makes them slightly negative).
pub const PSD_CLAMP_REL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix is not Hermitian: relative asymmetry {asymmetry:.3e} exceeds {tol:.1e}")]
    NotHermitian { asymmetry: f64, tol: f64 },
    #[error("matrix is numerically singular: condition estimate {cond_estimate:.3e}")]
    Singular { cond_estimate: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
}

fn hermitian_asymmetry(a: &CMatrix) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.adjoint()).norm() / norm
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted descending.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors in the columns,
/// so `A = V diag(k) V^H`.
pub fn hermitian_eig(a: &CMatrix) -> Result<(DVector<f64>, CMatrix), NumericsError> {
    let asymmetry = hermitian_asymmetry(a);
    if asymmetry > HERMITIAN_TOL {
        return Err(NumericsError::NotHermitian {
            asymmetry,
            tol: HERMITIAN_TOL,
        });
    }
    // Work on the exactly-Hermitian average so round-off in the input cannot
    // leak into complex eigenvalues.
    let sym = (a + a.adjoint()).scale(0.5);
    let eig = sym.symmetric_eigen();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = CMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).clone_owned())
            .collect::<Vec<_>>(),
    );
    Ok((values, vectors))
}

/// Eigendecomposition of a Hermitian PSD matrix with tiny negative
/// eigenvalues clamped to zero (relative threshold [`PSD_CLAMP_REL`]).
pub fn hermitian_eig_psd(a: &CMatrix) -> Result<(DVector<f64>, CMatrix), NumericsError> {
    let (mut values, vectors) = hermitian_eig(a)?;
    let max = values.iter().cloned().fold(0.0_f64, f64::max);
    let floor = PSD_CLAMP_REL * max;
    for v in values.iter_mut() {
        if *v < floor {
            *v = v.max(0.0);
        }
    }
    Ok((values, vectors))
}

/// Solves `A X = B` for Hermitian positive-definite `A` via Cholesky.
pub fn solve_hpd(a: &CMatrix, b: &CMatrix) -> Result<CMatrix, NumericsError> {
    let chol = cholesky_hpd(a)?;
    Ok(chol.solve(b))
}

/// Solves `A x = b` for a single right-hand side.
pub fn solve_hpd_vec(a: &CMatrix, b: &CVector) -> Result<CVector, NumericsError> {
    let chol = cholesky_hpd(a)?;
    Ok(chol.solve(b))
}

/// Cholesky factorization with a Hermitian check and a cheap condition
/// estimate from the factor's diagonal.
pub fn cholesky_hpd(a: &CMatrix) -> Result<nalgebra::Cholesky<C64, nalgebra::Dyn>, NumericsError> {
    let asymmetry = hermitian_asymmetry(a);
    if asymmetry > HERMITIAN_TOL {
        return Err(NumericsError::NotHermitian {
            asymmetry,
            tol: HERMITIAN_TOL,
        });
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or(NumericsError::Singular {
            cond_estimate: f64::INFINITY,
        })?;
    let diag = chol.l_dirty().diagonal();
    let (mut dmin, mut dmax) = (f64::INFINITY, 0.0_f64);
    for d in diag.iter() {
        dmin = dmin.min(d.re);
        dmax = dmax.max(d.re);
    }
    // cond(A) ~= (max diag L / min diag L)^2 for the Cholesky factor.
    let cond_estimate = (dmax / dmin).powi(2);
    if !cond_estimate.is_finite() || cond_estimate > SINGULARITY_COND {
        return Err(NumericsError::Singular { cond_estimate });
    }
    Ok(chol)
}

/// Column-stacks a matrix: `vec(A)[i + j*rows] = A[(i, j)]`.
pub fn vec(a: &CMatrix) -> CVector {
    CVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`]: reshapes a column-stacked vector back into a matrix.
pub fn unvec(v: &CVector, rows: usize, cols: usize) -> Result<CMatrix, NumericsError> {
    if v.len() != rows * cols {
        return Err(NumericsError::DimensionMismatch {
            expected: format!("{rows}x{cols} = {} entries", rows * cols),
            got: format!("{} entries", v.len()),
        });
    }
    Ok(CMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Kronecker product with block structure `[a_ij * B]`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    fn random_cmatrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            C64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0)
        })
    }

    fn random_cvector(rng: &mut impl Rng, n: usize) -> CVector {
        CVector::from_fn(n, |_, _| {
            C64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0)
        })
    }

    #[test]
    fn eig_identity_is_all_ones() {
        let (vals, _) = hermitian_eig(&CMatrix::identity(3, 3)).unwrap();
        for v in vals.iter() {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn eig_diagonal_sorted_with_standard_basis() {
        let a = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0)]));
        let (vals, vecs) = hermitian_eig(&a).unwrap();
        assert_relative_eq!(vals[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(vals[1], 1.0, max_relative = 1e-12);
        // Eigenvectors are +-e2, +-e1.
        assert!(vecs[(1, 0)].norm() > 0.999 && vecs[(0, 0)].norm() < 1e-12);
        assert!(vecs[(0, 1)].norm() > 0.999 && vecs[(1, 1)].norm() < 1e-12);
    }

    #[test]
    fn eig_reconstructs_seeded_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = random_cmatrix(&mut rng, 6, 6);
        let a = &b * b.adjoint();
        let (vals, vecs) = hermitian_eig(&a).unwrap();
        let mut recon = CMatrix::zeros(6, 6);
        for r in 0..6 {
            let v = vecs.column(r);
            recon += (v * v.adjoint()).scale(vals[r]);
        }
        assert!((&a - recon).norm() / a.norm() < 1e-8);
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let mut a = CMatrix::identity(3, 3);
        a[(0, 1)] = C64::new(0.5, 0.0);
        assert!(matches!(
            hermitian_eig(&a),
            Err(NumericsError::NotHermitian { .. })
        ));
    }

    #[test]
    fn eig_reconstruction_and_orthonormality_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..1000 {
            let n = 1 + (trial % 64);
            let b = random_cmatrix(&mut rng, n, n);
            let a = &b * b.adjoint();
            let (vals, vecs) = hermitian_eig(&a).unwrap();
            let gram = vecs.adjoint() * &vecs;
            assert!((gram - CMatrix::identity(n, n)).norm() < 1e-8);
            let recon = &vecs
                * CMatrix::from_diagonal(&CVector::from_iterator(
                    n,
                    vals.iter().map(|&v| C64::new(v, 0.0)),
                ))
                * vecs.adjoint();
            assert!((&a - recon).norm() / (1.0 + a.norm()) < 1e-8);
        }
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let a = CMatrix::identity(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_cmatrix(&mut rng, 4, 2);
        let x = solve_hpd(&a, &b).unwrap();
        assert!((x - b).norm() < 1e-14);
    }

    #[test]
    fn solve_scalar_scaling() {
        let a = CMatrix::identity(2, 2).scale(2.0);
        let b = CVector::from_vec(vec![C64::new(4.0, 0.0), C64::new(6.0, 0.0)]);
        let x = solve_hpd_vec(&a, &b).unwrap();
        assert_relative_eq!(x[0].re, 2.0, max_relative = 1e-12);
        assert_relative_eq!(x[1].re, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn solve_matches_sherman_morrison() {
        // A = s^2 I + p p^H has the closed-form inverse
        // A^-1 = (I - p p^H / (s^2 + |p|^2)) / s^2.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 8;
        let sigma2 = 0.7;
        let p = random_cvector(&mut rng, n);
        let b = random_cvector(&mut rng, n);
        let a = CMatrix::identity(n, n).scale(sigma2) + &p * p.adjoint();
        let x = solve_hpd_vec(&a, &b).unwrap();
        let coeff = (p.adjoint() * &b)[(0, 0)] / C64::new(sigma2 + p.norm_squared(), 0.0);
        let expect = (&b - &p * coeff).unscale(sigma2);
        assert!((&x - &expect).norm() / expect.norm() < 1e-9);
        assert!((&a * &x - &b).norm() / b.norm() < 1e-9);
    }

    #[test]
    fn solve_rejects_singular() {
        let mut a = CMatrix::identity(3, 3);
        a[(2, 2)] = C64::new(1e-30, 0.0);
        assert!(matches!(
            solve_hpd(&a, &CMatrix::identity(3, 3)),
            Err(NumericsError::Singular { .. })
        ));
    }

    #[test]
    fn solve_residual_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 2 + rng.gen_range(0..30);
            let b = random_cmatrix(&mut rng, n, n);
            let a = &b * b.adjoint() + CMatrix::identity(n, n);
            let rhs = random_cmatrix(&mut rng, n, 3);
            let x = solve_hpd(&a, &rhs).unwrap();
            assert!((&a * &x - &rhs).norm() / rhs.norm() < 1e-9);
        }
    }

    #[test]
    fn vec_is_column_stacking() {
        let a = CMatrix::from_column_slice(
            2,
            2,
            &[
                C64::new(1.0, 0.0), // a
                C64::new(2.0, 0.0), // b
                C64::new(3.0, 0.0), // c
                C64::new(4.0, 0.0), // d
            ],
        );
        // [[a, c], [b, d]] stacks to [a, b, c, d].
        let v = vec(&a);
        for (i, expect) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            assert_eq!(v[i].re, *expect);
        }
    }

    #[test]
    fn vec_kron_identity() {
        // vec(A X B) = (B^T kron A) vec(X)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_cmatrix(&mut rng, 3, 3);
        let x = random_cmatrix(&mut rng, 3, 3);
        let b = random_cmatrix(&mut rng, 3, 3);
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn kron_identity_blockdiag() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = random_cmatrix(&mut rng, 2, 2);
        let k = kron(&CMatrix::identity(2, 2), &b);
        assert!((k.view((0, 0), (2, 2)).clone_owned() - &b).norm() < 1e-15);
        assert!((k.view((2, 2), (2, 2)).clone_owned() - &b).norm() < 1e-15);
        assert!(k.view((0, 2), (2, 2)).norm() < 1e-15);
    }

    #[test]
    fn kron_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_cmatrix(&mut rng, 2, 2);
        let b = random_cmatrix(&mut rng, 2, 2);
        let c = random_cmatrix(&mut rng, 2, 2);
        let d = random_cmatrix(&mut rng, 2, 2);
        let lhs = kron(&a, &b) * kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn unvec_rejects_bad_dims() {
        let v = CVector::zeros(5);
        assert!(unvec(&v, 2, 3).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn vec_unvec_roundtrip(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_cmatrix(&mut rng, rows, cols);
                let back = unvec(&vec(&a), rows, cols).unwrap();
                prop_assert!((back - &a).norm() == 0.0);
            }
        }
    }
}
