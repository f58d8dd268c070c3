//! Divided differences, Loewner matrices, and the Frechet differential
//! `H -> Df(A)(H)` of matrix power functions, together with its inverse.
//!
//! In the eigenbasis of `A` the differential is a Hadamard product with the
//! Loewner matrix of divided differences; the inverse is the Hadamard
//! division, defined whenever no divided difference vanishes.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{OpcertError, Result};
use crate::matcore::{as_f64, spectral_decompose, CMatrix, HermitianMatrix};
use crate::{real, tol, Real};

/// `t -> t^p` on `(0, infinity)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerFunction<R: Real> {
    pub exponent: R,
}

impl<R: Real> PowerFunction<R> {
    pub fn new(exponent: R) -> Result<Self> {
        if !exponent.is_finite() {
            return Err(OpcertError::BadParameter {
                what: "power function exponent must be finite".into(),
            });
        }
        Ok(Self { exponent })
    }

    pub fn eval(&self, t: R) -> R {
        t.powf(self.exponent)
    }

    pub fn deriv(&self, t: R) -> R {
        self.exponent * t.powf(self.exponent - R::one())
    }
}

/// Symmetric matrix of divided differences `f[lambda_i, lambda_j]`, with
/// `f'(lambda_i)` on the diagonal.
#[derive(Clone, Debug)]
pub struct LoewnerMatrix<R: Real> {
    pub values: DMatrix<R>,
}

impl<R: Real> LoewnerMatrix<R> {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    fn max_abs(&self) -> R {
        self.values
            .iter()
            .fold(R::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }
}

/// `(f(t) - f(s))/(t - s)`, switching to the midpoint derivative when the
/// gap falls under `tol::DIVIDED_DIFF_GAP * max(t, s, 1)`; the switch keeps
/// the extension continuous to about 1e-8 relative while capping the
/// cancellation of the quotient.
pub fn divided_difference<R: Real>(f: &PowerFunction<R>, s: R, t: R) -> Result<R> {
    if s <= R::zero() || t <= R::zero() {
        return Err(OpcertError::DomainViolation {
            what: format!(
                "divided difference requires positive arguments, got ({:.6e}, {:.6e})",
                as_f64(s),
                as_f64(t)
            ),
        });
    }
    let scale = t.max(s).max(R::one());
    if (t - s).abs() > real::<R>(tol::DIVIDED_DIFF_GAP) * scale {
        Ok((f.eval(t) - f.eval(s)) / (t - s))
    } else {
        Ok(f.deriv((s + t) * real::<R>(0.5)))
    }
}

/// Loewner matrix of `f` at a positive spectrum.
pub fn loewner_matrix<R: Real>(
    f: &PowerFunction<R>,
    eigenvalues: &DVector<R>,
) -> Result<LoewnerMatrix<R>> {
    let n = eigenvalues.len();
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = divided_difference(f, eigenvalues[i], eigenvalues[j])?;
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(LoewnerMatrix { values })
}

fn decompose_pd<R: Real>(
    a: &HermitianMatrix<R>,
) -> Result<crate::matcore::SpectralDecomposition<R>> {
    let sd = spectral_decompose(a)?;
    sd.require_pd()?;
    Ok(sd)
}

fn check_direction_dim<R: Real>(a: &HermitianMatrix<R>, h: &CMatrix<R>) -> Result<()> {
    if h.nrows() != a.dim() || h.ncols() != a.dim() {
        return Err(OpcertError::DimensionMismatch {
            left: a.dim(),
            right: h.nrows().max(h.ncols()),
        });
    }
    Ok(())
}

/// `Df(A)(H) = U ((U* H U) o L_f) U*`: the differential of `A -> f(A)` in
/// direction `H`, linear in `H`, Hermitian for Hermitian `H`.
pub fn frechet_apply<R: Real>(
    f: &PowerFunction<R>,
    a: &HermitianMatrix<R>,
    h: &CMatrix<R>,
) -> Result<CMatrix<R>> {
    check_direction_dim(a, h)?;
    let sd = decompose_pd(a)?;
    let lf = loewner_matrix(f, &sd.eigenvalues)?;
    let mut hadamard = sd.eigenvectors.adjoint() * h * &sd.eigenvectors;
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            hadamard[(i, j)] *= Complex::new(lf.values[(i, j)], R::zero());
        }
    }
    Ok(&sd.eigenvectors * hadamard * sd.eigenvectors.adjoint())
}

/// Inverse of the differential: Hadamard division by the Loewner matrix.
/// Entries below `tol::LOEWNER_SINGULAR` relative to the largest make the
/// differential numerically singular, which is an error rather than a clip.
pub fn frechet_inverse_apply<R: Real>(
    f: &PowerFunction<R>,
    a: &HermitianMatrix<R>,
    h: &CMatrix<R>,
) -> Result<CMatrix<R>> {
    check_direction_dim(a, h)?;
    let sd = decompose_pd(a)?;
    let lf = loewner_matrix(f, &sd.eigenvalues)?;
    let max_abs = lf.max_abs();
    let threshold = real::<R>(tol::LOEWNER_SINGULAR) * max_abs;
    if max_abs == R::zero() {
        return Err(OpcertError::SingularDifferential {
            min_abs: 0.0,
            threshold: 0.0,
        });
    }
    let mut hadamard = sd.eigenvectors.adjoint() * h * &sd.eigenvectors;
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            let l = lf.values[(i, j)];
            if l.abs() < threshold {
                return Err(OpcertError::SingularDifferential {
                    min_abs: as_f64(l.abs()),
                    threshold: as_f64(threshold),
                });
            }
            hadamard[(i, j)] /= Complex::new(l, R::zero());
        }
    }
    Ok(&sd.eigenvectors * hadamard * sd.eigenvectors.adjoint())
}

/// `Re Tr(H* Df(A)(H)) = sum_{i,j} |(U*HU)_{ij}|^2 L_f[i][j]`, evaluated in
/// the manifestly real form.
pub fn frechet_trace_form<R: Real>(
    f: &PowerFunction<R>,
    a: &HermitianMatrix<R>,
    h: &CMatrix<R>,
) -> Result<R> {
    check_direction_dim(a, h)?;
    let sd = decompose_pd(a)?;
    let lf = loewner_matrix(f, &sd.eigenvalues)?;
    let hadamard = sd.eigenvectors.adjoint() * h * &sd.eigenvectors;
    let mut acc = R::zero();
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            acc += hadamard[(i, j)].norm_sqr() * lf.values[(i, j)];
        }
    }
    Ok(acc)
}

/// Trace form of the inverse differential, the quadratic form certified for
/// the convexity of `A -> Df(A)^{-1}`.
pub fn frechet_inverse_trace_form<R: Real>(
    f: &PowerFunction<R>,
    a: &HermitianMatrix<R>,
    h: &CMatrix<R>,
) -> Result<R> {
    let x = frechet_inverse_apply(f, a, h)?;
    let mut s = Complex::new(R::zero(), R::zero());
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            s += h[(i, j)].conj() * x[(i, j)];
        }
    }
    Ok(s.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{
        matrix_function, random_hermitian, random_pd, random_unitary, PdSamplerSpec,
    };
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn pf(p: f64) -> PowerFunction<f64> {
        PowerFunction::new(p).unwrap()
    }

    fn flip() -> CMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex::new(0.0, 0.0),
                Complex::new(1.0, 0.0),
                Complex::new(1.0, 0.0),
                Complex::new(0.0, 0.0),
            ],
        )
    }

    fn diag(values: &[f64]) -> HermitianMatrix<f64> {
        HermitianMatrix::from_real(DMatrix::from_diagonal(&DVector::from_row_slice(values)))
            .unwrap()
    }

    #[test]
    fn divided_difference_of_square() {
        assert_relative_eq!(divided_difference(&pf(2.0), 1.0, 3.0).unwrap(), 4.0);
    }

    #[test]
    fn divided_difference_on_diagonal_is_derivative() {
        assert_relative_eq!(divided_difference(&pf(1.5), 1.0, 1.0).unwrap(), 1.5);
    }

    #[test]
    fn divided_difference_closed_form() {
        assert_relative_eq!(
            divided_difference(&pf(1.5), 1.0, 4.0).unwrap(),
            7.0 / 3.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn divided_difference_rejects_nonpositive() {
        assert!(matches!(
            divided_difference(&pf(0.5), -1.0, 2.0),
            Err(OpcertError::DomainViolation { .. })
        ));
    }

    #[test]
    fn divided_difference_is_continuous_across_switch() {
        let f = pf(0.5);
        let t0 = 2.0;
        let just_above = t0 + 1.2e-7 * t0;
        let just_below = t0 + 0.8e-7 * t0;
        let a = divided_difference(&f, t0, just_above).unwrap();
        let b = divided_difference(&f, t0, just_below).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-7);
        assert_relative_eq!(a, f.deriv(t0), max_relative = 1e-6);
    }

    #[test]
    fn loewner_matrix_of_square() {
        let l = loewner_matrix(&pf(2.0), &DVector::from_row_slice(&[1.0, 3.0])).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 4.0, 6.0]);
        assert!((l.values - expect).norm() < 1e-13);
    }

    #[test]
    fn loewner_matrix_of_identity_function_is_all_ones() {
        let l = loewner_matrix(&pf(1.0), &DVector::from_row_slice(&[0.3, 2.0, 7.0])).unwrap();
        for v in l.values.iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn loewner_matrix_single_eigenvalue() {
        let l = loewner_matrix(&pf(1.5), &DVector::from_row_slice(&[4.0])).unwrap();
        assert_relative_eq!(l.values[(0, 0)], 1.5 * 2.0, max_relative = 1e-14);
    }

    #[test]
    fn frechet_of_square_is_anticommutator() {
        let a = random_pd::<f64>(&PdSamplerSpec::new(4, -1.0, 1.0, 81).unwrap()).unwrap();
        let h = random_hermitian::<f64>(4, 82).unwrap();
        let out = frechet_apply(&pf(2.0), &a, h.matrix()).unwrap();
        let expect = a.matrix() * h.matrix() + h.matrix() * a.matrix();
        assert!((out - &expect).norm() <= 1e-11 * (1.0 + expect.norm()));
    }

    #[test]
    fn frechet_of_identity_function_is_identity() {
        let a = random_pd::<f64>(&PdSamplerSpec::new(3, -1.0, 1.0, 83).unwrap()).unwrap();
        let h = crate::matcore::random_ginibre::<f64>(3, 84).unwrap();
        let out = frechet_apply(&pf(1.0), &a, &h).unwrap();
        assert!((out - &h).norm() <= 1e-11 * (1.0 + h.norm()));
    }

    #[test]
    fn frechet_square_on_diagonal_base() {
        let out = frechet_apply(&pf(2.0), &diag(&[1.0, 2.0]), &flip()).unwrap();
        assert_relative_eq!(out[(0, 1)].re, 3.0, epsilon = 1e-13);
        assert_relative_eq!(out[(1, 0)].re, 3.0, epsilon = 1e-13);
    }

    #[test]
    fn frechet_inverse_square_on_diagonal_base() {
        let out = frechet_inverse_apply(&pf(2.0), &diag(&[1.0, 2.0]), &flip()).unwrap();
        assert_relative_eq!(out[(0, 1)].re, 1.0 / 3.0, epsilon = 1e-13);
        assert_relative_eq!(out[(1, 0)].re, 1.0 / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn frechet_inverse_of_identity_function_is_identity() {
        let a = random_pd::<f64>(&PdSamplerSpec::new(3, -1.0, 1.0, 85).unwrap()).unwrap();
        let h = crate::matcore::random_ginibre::<f64>(3, 86).unwrap();
        let out = frechet_inverse_apply(&pf(1.0), &a, &h).unwrap();
        assert!((out - &h).norm() <= 1e-11 * (1.0 + h.norm()));
    }

    #[test]
    fn frechet_round_trip() {
        let a = random_pd::<f64>(&PdSamplerSpec::new(5, -1.0, 1.0, 87).unwrap()).unwrap();
        let h = crate::matcore::random_ginibre::<f64>(5, 88).unwrap();
        let f = pf(1.5);
        let fwd = frechet_apply(&f, &a, &h).unwrap();
        let back = frechet_inverse_apply(&f, &a, &fwd).unwrap();
        assert!((back - &h).norm() <= 1e-9 * (1.0 + h.norm()));
    }

    #[test]
    fn constant_function_makes_differential_singular() {
        let a = diag(&[1.0, 2.0]);
        assert!(matches!(
            frechet_inverse_apply(&pf(0.0), &a, &flip()),
            Err(OpcertError::SingularDifferential { .. })
        ));
    }

    #[test]
    fn trace_form_of_square_at_identity() {
        let h = CMatrix::<f64>::identity(3, 3);
        let out = frechet_trace_form(&pf(2.0), &HermitianMatrix::identity(3), &h).unwrap();
        assert_relative_eq!(out, 6.0, max_relative = 1e-13);
    }

    #[test]
    fn trace_form_of_zero_direction() {
        let a = diag(&[1.0, 2.0]);
        let zero = CMatrix::<f64>::zeros(2, 2);
        assert_eq!(frechet_trace_form(&pf(2.0), &a, &zero).unwrap(), 0.0);
    }

    #[test]
    fn trace_form_closed_form_pair() {
        let out = frechet_trace_form(&pf(1.5), &diag(&[1.0, 4.0]), &flip()).unwrap();
        assert_relative_eq!(out, 14.0 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn hermitian_direction_gives_hermitian_output() {
        let a = random_pd::<f64>(&PdSamplerSpec::new(4, -1.0, 1.0, 89).unwrap()).unwrap();
        let h = random_hermitian::<f64>(4, 90).unwrap();
        let out = frechet_apply(&pf(0.5), &a, h.matrix()).unwrap();
        assert!((&out - out.adjoint()).norm() <= 1e-12 * (1.0 + out.norm()));
    }

    #[test]
    fn finite_difference_consistency() {
        let a = random_pd::<f64>(&PdSamplerSpec::new(3, -1.0, 1.0, 91).unwrap()).unwrap();
        let mut h = random_hermitian::<f64>(3, 92).unwrap();
        h = h.scaled(1.0 / h.frobenius_norm());
        let eps = 1e-5;
        for p in [1.5, 0.5, 2.0] {
            let f = pf(p);
            let plus = matrix_function(
                |t: f64| t.powf(p),
                &HermitianMatrix::lin_comb(1.0, &a, eps, &h).unwrap(),
            )
            .unwrap();
            let minus = matrix_function(
                |t: f64| t.powf(p),
                &HermitianMatrix::lin_comb(1.0, &a, -eps, &h).unwrap(),
            )
            .unwrap();
            let central = (plus.matrix() - minus.matrix()) / Complex::new(2.0 * eps, 0.0);
            let df = frechet_apply(&f, &a, h.matrix()).unwrap();
            let err = (central - &df).norm();
            assert!(err <= 1e-5 * (1.0 + df.norm()), "p={p} err={err:.3e}");
        }
    }

    #[test]
    fn unitary_covariance() {
        let a = random_pd::<f64>(&PdSamplerSpec::new(4, -1.0, 1.0, 93).unwrap()).unwrap();
        let h = random_hermitian::<f64>(4, 94).unwrap();
        let q = random_unitary::<f64>(4, 95).unwrap();
        let f = pf(0.5);
        let a_conj = HermitianMatrix::symmetrized(&q * a.matrix() * q.adjoint()).unwrap();
        let h_conj = &q * h.matrix() * q.adjoint();
        let lhs = frechet_apply(&f, &a_conj, &h_conj).unwrap();
        let rhs = &q * frechet_apply(&f, &a, h.matrix()).unwrap() * q.adjoint();
        assert!((lhs - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
    }
}
