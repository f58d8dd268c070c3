//! Scalar kernel catalog, the kernels' integral representations under
//! fixed-node quadrature, operator perspectives, and the nested two-stage
//! perspective pipeline.
//!
//! The perspective of a positive operator map `F` is
//! `P_F(A_1, ..., A_k, B) = B^{1/2} F(B^{-1/2} A_i B^{-1/2}) B^{1/2}`.

use nalgebra::DVector;
use std::fmt;
use std::str::FromStr;

use crate::error::{OpcertError, Result};
use crate::frechet::{divided_difference, PowerFunction};
use crate::funcalc::ScalarFunction;
use crate::matcore::{spectral_decompose, CMatrix, HermitianMatrix, SpectralDecomposition};
use crate::{real, tol, Real};

pub const DEFAULT_QUADRATURE_NODES: usize = 64;

/// Loewner-order behavior a kernel's operator lift is certified for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Concave,
    Convex,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sense::Concave => write!(f, "concave"),
            Sense::Convex => write!(f, "convex"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelId {
    G21,
    F23,
    H25,
    F33,
    F34,
    F35,
    Lieb,
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            KernelId::G21 => "G21",
            KernelId::F23 => "F23",
            KernelId::H25 => "H25",
            KernelId::F33 => "F33",
            KernelId::F34 => "F34",
            KernelId::F35 => "F35",
            KernelId::Lieb => "LIEB",
        };
        write!(f, "{s}")
    }
}

impl FromStr for KernelId {
    type Err = OpcertError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "G21" => Ok(KernelId::G21),
            "F23" => Ok(KernelId::F23),
            "H25" => Ok(KernelId::H25),
            "F33" => Ok(KernelId::F33),
            "F34" => Ok(KernelId::F34),
            "F35" => Ok(KernelId::F35),
            "LIEB" => Ok(KernelId::Lieb),
            _ => Err(OpcertError::BadParameter {
                what: format!("unknown kernel id: {s}"),
            }),
        }
    }
}

/// A catalog kernel at a fixed admissible parameter.
///
/// Two-variable kernels are divided differences of power functions (or
/// their reciprocals); three-variable kernels append a power of the third
/// argument. Diagonals use the continuous extension of the off-diagonal
/// quotient throughout.
#[derive(Clone, Copy, Debug)]
pub struct ScalarKernel<R: Real> {
    id: KernelId,
    p: R,
}

impl<R: Real> ScalarKernel<R> {
    pub fn new(id: KernelId, p: R) -> Result<Self> {
        if !p.is_finite() {
            return Err(OpcertError::BadParameter {
                what: "kernel parameter p must be finite".into(),
            });
        }
        let zero = R::zero();
        let one = R::one();
        let ok = match id {
            KernelId::G21 | KernelId::F23 | KernelId::F33 | KernelId::F35 | KernelId::Lieb => {
                p > zero && p <= one
            }
            KernelId::H25 => p >= zero && p < one,
            KernelId::F34 => p > zero && p < one,
        };
        if !ok {
            let range = match id {
                KernelId::H25 => "0 <= p < 1",
                KernelId::F34 => "0 < p < 1",
                _ => "0 < p <= 1",
            };
            return Err(OpcertError::BadParameter {
                what: format!(
                    "kernel {id} requires {range}, got p = {}",
                    crate::matcore::as_f64(p)
                ),
            });
        }
        Ok(Self { id, p })
    }

    pub fn id(&self) -> KernelId {
        self.id
    }

    pub fn p(&self) -> R {
        self.p
    }

    pub fn arity(&self) -> usize {
        match self.id {
            KernelId::G21 | KernelId::F23 | KernelId::H25 | KernelId::Lieb => 2,
            KernelId::F33 | KernelId::F34 | KernelId::F35 => 3,
        }
    }

    pub fn sense(&self) -> Sense {
        match self.id {
            KernelId::G21 | KernelId::F33 | KernelId::F35 | KernelId::Lieb => Sense::Concave,
            KernelId::F23 | KernelId::H25 | KernelId::F34 => Sense::Convex,
        }
    }

    fn check_args(&self, args: &[R]) -> Result<()> {
        if args.len() != self.arity() {
            return Err(OpcertError::ArityMismatch {
                expected: self.arity(),
                got: args.len(),
            });
        }
        for &a in args {
            if a <= R::zero() || !a.is_finite() {
                return Err(OpcertError::DomainViolation {
                    what: format!(
                        "kernel {} requires positive arguments, got {:.6e}",
                        self.id,
                        crate::matcore::as_f64(a)
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, args: &[R]) -> Result<R> {
        self.check_args(args)?;
        let one = R::one();
        let p = self.p;
        match self.id {
            KernelId::G21 => divided_difference(&PowerFunction::new(p + one)?, args[0], args[1]),
            KernelId::F23 => {
                let g = divided_difference(&PowerFunction::new(p + one)?, args[0], args[1])?;
                Ok(one / g)
            }
            KernelId::H25 => divided_difference(&PowerFunction::new(one - p)?, args[0], args[1]),
            KernelId::F33 => {
                let g = divided_difference(&PowerFunction::new(p + one)?, args[0], args[1])?;
                Ok(g * args[2].powf(one - p))
            }
            KernelId::F34 => {
                let h = divided_difference(&PowerFunction::new(one - p)?, args[0], args[1])?;
                Ok(h * args[2].powf(one + p))
            }
            KernelId::F35 => {
                let d = divided_difference(&PowerFunction::new(p)?, args[0], args[1])?;
                Ok(args[2].powf(p) / d)
            }
            KernelId::Lieb => Ok(args[0].powf(p) * args[1].powf(one - p)),
        }
    }
}

impl<R: Real> ScalarFunction<R> for ScalarKernel<R> {
    fn arity(&self) -> usize {
        ScalarKernel::arity(self)
    }

    fn eval(&self, args: &[R]) -> Result<R> {
        ScalarKernel::eval(self, args)
    }
}

pub fn kernel_eval<R: Real>(k: &ScalarKernel<R>, args: &[R]) -> Result<R> {
    k.eval(args)
}

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct QuadratureRule<R: Real> {
    pub nodes: DVector<R>,
    pub weights: DVector<R>,
}

impl<R: Real> QuadratureRule<R> {
    /// Nodes by Newton iteration on the Legendre recurrence, computed in
    /// f64 and validated (positive weights summing to one, nodes ascending
    /// strictly inside the interval) before conversion.
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(OpcertError::BadParameter {
                what: "quadrature rule needs at least one node".into(),
            });
        }
        let mut nodes64 = vec![0.0f64; n];
        let mut weights64 = vec![0.0f64; n];
        for i in 0..n {
            // root i of P_n, counted from the right on [-1, 1]
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (pn, dpn) = legendre_with_derivative(n, x);
                let dx = pn / dpn;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dpn) = legendre_with_derivative(n, x);
            let w = 2.0 / ((1.0 - x * x) * dpn * dpn);
            nodes64[n - 1 - i] = 0.5 * (1.0 + x);
            weights64[n - 1 - i] = 0.5 * w;
        }
        let sum: f64 = weights64.iter().sum();
        if (sum - 1.0).abs() > tol::QUAD_WEIGHT_SUM * (n as f64).max(1.0) {
            return Err(OpcertError::NonConvergence {
                what: "gauss-legendre weights",
            });
        }
        for i in 0..n {
            let inside = nodes64[i] > 0.0 && nodes64[i] < 1.0 && weights64[i] > 0.0;
            let ascending = i == 0 || nodes64[i] > nodes64[i - 1];
            if !inside || !ascending {
                return Err(OpcertError::NonConvergence {
                    what: "gauss-legendre nodes",
                });
            }
        }
        Ok(Self {
            nodes: DVector::from_fn(n, |i, _| real::<R>(nodes64[i])),
            weights: DVector::from_fn(n, |i, _| real::<R>(weights64[i])),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 0
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// `int_0^1 (lambda t + (1 - lambda) s)^e dlambda` under the rule, through
/// the substitution `mu = s (t/s)^v`. The direct integrand develops steep
/// boundary layers at large t/s ratios and misses the accuracy budget by
/// orders of magnitude; the substituted integrand is entire, so the same
/// node count reaches full precision.
fn mixed_power_integral<R: Real>(s: R, t: R, e: R, rule: &QuadratureRule<R>) -> R {
    if s == t {
        return s.powf(e);
    }
    let ln_s = s.ln();
    let big_l = ((t - s) / s).ln_1p();
    let q = e + R::one();
    let mut acc = R::zero();
    for i in 0..rule.len() {
        acc += rule.weights[i] * (q * (ln_s + rule.nodes[i] * big_l)).exp();
    }
    acc * big_l / (t - s)
}

/// Quadrature value of a kernel's lambda-integral representation, with its
/// prefactor, targeting the continuous-extension kernel value. Registered
/// for G21, H25, F33, and F34.
pub fn kernel_integral<R: Real>(
    k: &ScalarKernel<R>,
    args: &[R],
    rule: &QuadratureRule<R>,
) -> Result<R> {
    k.check_args(args)?;
    let one = R::one();
    let p = k.p();
    match k.id() {
        KernelId::G21 => Ok((p + one) * mixed_power_integral(args[0], args[1], p, rule)),
        KernelId::H25 => Ok((one - p) * mixed_power_integral(args[0], args[1], -p, rule)),
        KernelId::F33 => {
            Ok((p + one) * mixed_power_integral(args[0], args[1], p, rule) * args[2].powf(one - p))
        }
        KernelId::F34 => Ok((one - p)
            * mixed_power_integral(args[0], args[1], -p, rule)
            * args[2].powf(one + p)),
        other => Err(OpcertError::NoIntegralForm {
            kernel: other.to_string(),
        }),
    }
}

fn decompose_pd<R: Real>(a: &HermitianMatrix<R>) -> Result<SpectralDecomposition<R>> {
    let sd = spectral_decompose(a)?;
    sd.require_pd()?;
    Ok(sd)
}

/// `B^{1/2} F(B^{-1/2} A_1 B^{-1/2}, ..., B^{-1/2} A_k B^{-1/2}) B^{1/2}`.
pub fn perspective_apply<R: Real>(
    f: impl Fn(&[HermitianMatrix<R>]) -> Result<HermitianMatrix<R>>,
    a_list: &[HermitianMatrix<R>],
    b: &HermitianMatrix<R>,
) -> Result<HermitianMatrix<R>> {
    if a_list.is_empty() {
        return Err(OpcertError::BadParameter {
            what: "perspective needs at least one numerator argument".into(),
        });
    }
    for a in a_list {
        if a.dim() != b.dim() {
            return Err(OpcertError::DimensionMismatch {
                left: a.dim(),
                right: b.dim(),
            });
        }
        decompose_pd(a)?;
    }
    let sdb = decompose_pd(b)?;
    let half = real::<R>(0.5);
    let s_plus = sdb.map_eigs(|t| t.powf(half))?;
    let s_minus = sdb.map_eigs(|t| t.powf(-half))?;
    let conjugated = a_list
        .iter()
        .map(|a| HermitianMatrix::symmetrized(&s_minus * a.matrix() * &s_minus))
        .collect::<Result<Vec<_>>>()?;
    let y = f(&conjugated)?;
    if y.dim() != b.dim() {
        return Err(OpcertError::DimensionMismatch {
            left: y.dim(),
            right: b.dim(),
        });
    }
    HermitianMatrix::symmetrized(&s_plus * y.matrix() * &s_plus)
}

/// First pipeline stage `(lambda A^p + (1 - lambda) I)^{1/p}`, a positive
/// definite matrix for positive definite input.
pub fn f1_map<R: Real>(a: &HermitianMatrix<R>, lambda: R, p: R) -> Result<HermitianMatrix<R>> {
    check_unit_interval(lambda, "lambda")?;
    check_p_range(p)?;
    let sd = decompose_pd(a)?;
    let one = R::one();
    let out = sd.map_eigs(|t| (lambda * t.powf(p) + (one - lambda)).powf(one / p))?;
    HermitianMatrix::symmetrized(out)
}

fn check_unit_interval<R: Real>(x: R, name: &str) -> Result<()> {
    if !(x >= R::zero() && x <= R::one()) {
        return Err(OpcertError::BadParameter {
            what: format!(
                "{name} must lie in [0, 1], got {}",
                crate::matcore::as_f64(x)
            ),
        });
    }
    Ok(())
}

fn check_p_range<R: Real>(p: R) -> Result<()> {
    if !(p > R::zero() && p <= R::one()) {
        return Err(OpcertError::BadParameter {
            what: format!("p must lie in (0, 1], got {}", crate::matcore::as_f64(p)),
        });
    }
    Ok(())
}

/// Second pipeline stage
/// `F_2(A, B) = (1/p) int_0^1 [P_{F_1}(A, B)]^{1-p} dlambda`,
/// evaluated nodewise: every node term is `t^{1-p}` composed with the
/// perspective of `F_1`, so the quadrature approximation is itself jointly
/// operator concave at any node count.
pub fn f2_map<R: Real>(
    a: &HermitianMatrix<R>,
    b: &HermitianMatrix<R>,
    p: R,
    rule: &QuadratureRule<R>,
) -> Result<HermitianMatrix<R>> {
    check_p_range(p)?;
    if a.dim() != b.dim() {
        return Err(OpcertError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let n = a.dim();
    let one = R::one();
    let half = real::<R>(0.5);
    let sdb = decompose_pd(b)?;
    let s_plus = sdb.map_eigs(|t| t.powf(half))?;
    let s_minus = sdb.map_eigs(|t| t.powf(-half))?;
    let c = HermitianMatrix::symmetrized(&s_minus * a.matrix() * &s_minus)?;
    let sdc = decompose_pd(&c)?;
    // columns of B^{1/2} W scale the node terms: P_nu = (B^{1/2} W) D (B^{1/2} W)*
    let bw = &s_plus * &sdc.eigenvectors;
    let mut acc = CMatrix::<R>::zeros(n, n);
    for nu in 0..rule.len() {
        let lam = rule.nodes[nu];
        let w = rule.weights[nu];
        let mut scaled = bw.clone();
        for j in 0..n {
            let g = (lam * sdc.eigenvalues[j].powf(p) + (one - lam)).powf(one / p);
            scaled.column_mut(j).scale_mut(g);
        }
        let p_nu = HermitianMatrix::symmetrized(&scaled * bw.adjoint())?;
        let sd_nu = decompose_pd(&p_nu)?;
        let term = sd_nu.map_eigs(|t| t.powf(one - p))?;
        acc += term * nalgebra::Complex::new(w, R::zero());
    }
    Ok(HermitianMatrix::symmetrized(acc)?.scaled(one / p))
}

/// Perspective of the second stage over a third positive definite input:
/// `C^{1/2} F_2(C^{-1/2} A C^{-1/2}, C^{-1/2} B C^{-1/2}) C^{1/2}`. On
/// scalars this collapses to the three-variable F35 kernel.
pub fn pf2_apply<R: Real>(
    a: &HermitianMatrix<R>,
    b: &HermitianMatrix<R>,
    c: &HermitianMatrix<R>,
    p: R,
    rule: &QuadratureRule<R>,
) -> Result<HermitianMatrix<R>> {
    perspective_apply(
        |xs| f2_map(&xs[0], &xs[1], p, rule),
        &[a.clone(), b.clone()],
        c,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{random_pd, random_unitary, PdSamplerSpec};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rule64() -> QuadratureRule<f64> {
        QuadratureRule::gauss_legendre(DEFAULT_QUADRATURE_NODES).unwrap()
    }

    fn scalar(x: f64) -> HermitianMatrix<f64> {
        HermitianMatrix::from_real(DMatrix::from_row_slice(1, 1, &[x])).unwrap()
    }

    #[test]
    fn quadrature_invariants() {
        for n in [1, 2, 5, 16, 64, 128] {
            let r = QuadratureRule::<f64>::gauss_legendre(n).unwrap();
            let sum: f64 = r.weights.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-14 * n as f64);
            for i in 0..n {
                assert!(r.nodes[i] > 0.0 && r.nodes[i] < 1.0);
                assert!(r.weights[i] > 0.0);
                if i > 0 {
                    assert!(r.nodes[i] > r.nodes[i - 1]);
                }
            }
        }
    }

    #[test]
    fn quadrature_integrates_cubic_exactly() {
        let r = QuadratureRule::<f64>::gauss_legendre(2).unwrap();
        let mut acc = 0.0;
        for i in 0..2 {
            acc += r.weights[i] * r.nodes[i].powi(3);
        }
        assert_relative_eq!(acc, 0.25, max_relative = 1e-14);
    }

    #[test]
    fn kernel_ranges_are_enforced() {
        assert!(ScalarKernel::new(KernelId::G21, 1.0f64).is_ok());
        assert!(ScalarKernel::new(KernelId::G21, 0.0f64).is_err());
        assert!(ScalarKernel::new(KernelId::G21, 1.5f64).is_err());
        assert!(ScalarKernel::new(KernelId::H25, 0.0f64).is_ok());
        assert!(ScalarKernel::new(KernelId::H25, 1.0f64).is_err());
        assert!(ScalarKernel::new(KernelId::F34, 0.5f64).is_ok());
        assert!(ScalarKernel::new(KernelId::F34, 1.0f64).is_err());
        assert!(ScalarKernel::new(KernelId::F35, 1.0f64).is_ok());
        assert!(ScalarKernel::new(KernelId::Lieb, 1.0f64).is_ok());
    }

    #[test]
    fn kernel_eval_examples() {
        let g = ScalarKernel::new(KernelId::G21, 1.0).unwrap();
        assert_relative_eq!(g.eval(&[2.0, 3.0]).unwrap(), 5.0, max_relative = 1e-14);

        let f35 = ScalarKernel::new(KernelId::F35, 0.5).unwrap();
        assert_relative_eq!(
            f35.eval(&[4.0, 1.0, 1.0]).unwrap(),
            3.0,
            max_relative = 1e-13
        );

        let lieb = ScalarKernel::new(KernelId::Lieb, 0.5).unwrap();
        assert_relative_eq!(lieb.eval(&[4.0, 9.0]).unwrap(), 6.0, max_relative = 1e-14);

        let h = ScalarKernel::new(KernelId::H25, 0.5).unwrap();
        assert_relative_eq!(h.eval(&[1.0, 1.0]).unwrap(), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn f35_diagonal_rule() {
        let f35 = ScalarKernel::new(KernelId::F35, 0.25).unwrap();
        let t = 3.7f64;
        let expect = 4.0 * t.powf(0.75) * t.powf(0.25);
        assert_relative_eq!(f35.eval(&[t, t, t]).unwrap(), expect, max_relative = 1e-9);
    }

    #[test]
    fn kernels_are_symmetric_in_first_two_arguments() {
        for (id, p) in [
            (KernelId::G21, 0.6),
            (KernelId::F23, 0.6),
            (KernelId::H25, 0.6),
            (KernelId::F33, 0.6),
            (KernelId::F34, 0.6),
            (KernelId::F35, 0.6),
        ] {
            let k = ScalarKernel::new(id, p).unwrap();
            let (a, b) = (0.7, 5.3);
            let args_ab: Vec<f64> = if k.arity() == 2 {
                vec![a, b]
            } else {
                vec![a, b, 2.1]
            };
            let args_ba: Vec<f64> = if k.arity() == 2 {
                vec![b, a]
            } else {
                vec![b, a, 2.1]
            };
            assert_relative_eq!(
                k.eval(&args_ab).unwrap(),
                k.eval(&args_ba).unwrap(),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn f33_diagonal_matches_weighted_lieb_form() {
        let p = 0.6;
        let k = ScalarKernel::new(KernelId::F33, p).unwrap();
        let (t, u) = (2.3f64, 0.9f64);
        let expect = (p + 1.0) * t.powf(p) * u.powf(1.0 - p);
        assert_relative_eq!(k.eval(&[t, t, u]).unwrap(), expect, max_relative = 1e-9);
    }

    #[test]
    fn kernel_rejects_nonpositive_arguments() {
        let g = ScalarKernel::new(KernelId::G21, 0.5).unwrap();
        assert!(matches!(
            g.eval(&[-1.0, 2.0]),
            Err(OpcertError::DomainViolation { .. })
        ));
    }

    #[test]
    fn integral_matches_divided_difference_spot() {
        let g = ScalarKernel::new(KernelId::G21, 0.5).unwrap();
        let v = kernel_integral(&g, &[1.0, 4.0], &rule64()).unwrap();
        assert!((v - 7.0 / 3.0).abs() <= 1e-10);
    }

    #[test]
    fn integral_constant_integrand_cases() {
        let r = rule64();
        for p in [0.25, 0.5, 0.9] {
            let g = ScalarKernel::new(KernelId::G21, p).unwrap();
            let t = 3.3;
            let v = kernel_integral(&g, &[t, t], &r).unwrap();
            assert!((v - (p + 1.0) * t.powf(p)).abs() <= 1e-12 * (1.0 + v.abs()));
        }
        let h = ScalarKernel::new(KernelId::H25, 0.5).unwrap();
        let v = kernel_integral(&h, &[1.0, 1.0], &r).unwrap();
        assert_relative_eq!(v, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn integral_agrees_with_closed_form_over_random_tuples() {
        let r = rule64();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sample = move || 10f64.powf(rng.gen_range(-2.0..2.0));
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let (s, t, u) = (sample(), sample(), sample());
            for p in [0.1, 0.25, 0.5, 0.75, 0.9] {
                for id in [KernelId::G21, KernelId::H25, KernelId::F33, KernelId::F34] {
                    let k = ScalarKernel::new(id, p).unwrap();
                    let args: Vec<f64> = if k.arity() == 2 {
                        vec![s, t]
                    } else {
                        vec![s, t, u]
                    };
                    let exact = k.eval(&args).unwrap();
                    let quad = kernel_integral(&k, &args, &r).unwrap();
                    worst = worst.max((quad - exact).abs() / (1.0 + exact.abs()));
                }
            }
        }
        assert!(worst <= 1e-9, "worst deviation {worst:.3e}");
    }

    #[test]
    fn integral_unregistered_kernels_refuse() {
        let r = rule64();
        for id in [KernelId::F23, KernelId::F35, KernelId::Lieb] {
            let k = ScalarKernel::new(id, 0.5).unwrap();
            let args: Vec<f64> = if k.arity() == 2 {
                vec![1.0, 2.0]
            } else {
                vec![1.0, 2.0, 3.0]
            };
            assert!(matches!(
                kernel_integral(&k, &args, &r),
                Err(OpcertError::NoIntegralForm { .. })
            ));
        }
    }

    #[test]
    fn perspective_of_square_on_scalars() {
        let out = perspective_apply(
            |xs| crate::matcore::matrix_function(|t: f64| t * t, &xs[0]),
            &[scalar(2.0)],
            &scalar(4.0),
        )
        .unwrap();
        assert_relative_eq!(out.matrix()[(0, 0)].re, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn perspective_with_identity_base_is_plain_application() {
        let a = random_pd::<f64>(&PdSamplerSpec::new(3, -1.0, 1.0, 101).unwrap()).unwrap();
        let direct = crate::matcore::matrix_function(|t: f64| t.powf(0.5), &a).unwrap();
        let via = perspective_apply(
            |xs| crate::matcore::matrix_function(|t: f64| t.powf(0.5), &xs[0]),
            &[a],
            &HermitianMatrix::identity(3),
        )
        .unwrap();
        assert!((via.matrix() - direct.matrix()).norm() <= 1e-10 * (1.0 + direct.frobenius_norm()));
    }

    #[test]
    fn perspective_positive_homogeneity() {
        let a = random_pd::<f64>(&PdSamplerSpec::new(3, -1.0, 1.0, 102).unwrap()).unwrap();
        let b = random_pd::<f64>(&PdSamplerSpec::new(3, -1.0, 1.0, 103).unwrap()).unwrap();
        let f = |xs: &[HermitianMatrix<f64>]| {
            crate::matcore::matrix_function(|t: f64| t.powf(0.5), &xs[0])
        };
        let base = perspective_apply(f, std::slice::from_ref(&a), &b).unwrap();
        let scaled = perspective_apply(f, &[a.scaled(3.0)], &b.scaled(3.0)).unwrap();
        let err = (scaled.matrix() - base.scaled(3.0).matrix()).norm();
        assert!(err <= 1e-10 * (1.0 + 3.0 * base.frobenius_norm()));
    }

    #[test]
    fn perspective_rejects_non_pd() {
        let a = HermitianMatrix::from_real(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]))
            .unwrap();
        let b = HermitianMatrix::<f64>::identity(2);
        let out = perspective_apply(|xs| Ok(xs[0].clone()), &[a], &b);
        assert!(matches!(out, Err(OpcertError::DomainViolation { .. })));
    }

    #[test]
    fn f1_endpoints() {
        let a = random_pd::<f64>(&PdSamplerSpec::new(3, -1.0, 1.0, 104).unwrap()).unwrap();
        let at_one = f1_map(&a, 1.0, 0.5).unwrap();
        assert!((at_one.matrix() - a.matrix()).norm() <= 1e-9 * (1.0 + a.frobenius_norm()));
        let at_zero = f1_map(&a, 0.0, 0.5).unwrap();
        assert!((at_zero.matrix() - CMatrix::<f64>::identity(3, 3)).norm() <= 1e-10);
    }

    #[test]
    fn f1_scalar_value() {
        let out = f1_map(&scalar(4.0), 0.5, 0.5).unwrap();
        assert_relative_eq!(out.matrix()[(0, 0)].re, 2.25, max_relative = 1e-12);
    }

    #[test]
    fn f2_scalar_closed_form_at_half() {
        let out = f2_map(&scalar(4.0), &scalar(1.0), 0.5, &rule64()).unwrap();
        assert!((out.matrix()[(0, 0)].re - 3.0).abs() <= 1e-9);
    }

    #[test]
    fn f2_identity_inputs() {
        let id3 = HermitianMatrix::<f64>::identity(3);
        for p in [0.25, 0.5, 1.0] {
            let out = f2_map(&id3, &id3, p, &rule64()).unwrap();
            let expect = CMatrix::<f64>::identity(3, 3) * nalgebra::Complex::new(1.0 / p, 0.0);
            assert!((out.matrix() - expect).norm() <= 1e-10 / p);
        }
    }

    #[test]
    fn f2_equal_scalars() {
        // F2(t, t) = (1/p) t^{1-p}: the node term is t^{1-p} for every lambda
        let t = 2.7f64;
        let p = 0.75;
        let out = f2_map(&scalar(t), &scalar(t), p, &rule64()).unwrap();
        assert_relative_eq!(
            out.matrix()[(0, 0)].re,
            t.powf(1.0 - p) / p,
            max_relative = 1e-10
        );
    }

    #[test]
    fn pf2_scalar_spot_value() {
        let out = pf2_apply(&scalar(4.0), &scalar(1.0), &scalar(1.0), 0.5, &rule64()).unwrap();
        assert!((out.matrix()[(0, 0)].re - 3.0).abs() <= 1e-8);
    }

    #[test]
    fn pf2_equal_diagonal_inputs() {
        let t = 1.9f64;
        let p = 0.5;
        let tid = HermitianMatrix::<f64>::identity(2).scaled(t);
        // base I: value is F2(t, t) = (1/p) t^{1-p}, matching F35(t, t, 1)
        let out = pf2_apply(&tid, &tid, &HermitianMatrix::identity(2), p, &rule64()).unwrap();
        let base_i =
            CMatrix::<f64>::identity(2, 2) * nalgebra::Complex::new(t.powf(1.0 - p) / p, 0.0);
        assert!((out.matrix() - &base_i).norm() <= 1e-9);
        // all three equal: the F35 diagonal t/p
        let all_t = pf2_apply(&tid, &tid, &tid, p, &rule64()).unwrap();
        let diag = CMatrix::<f64>::identity(2, 2) * nalgebra::Complex::new(t / p, 0.0);
        assert!((all_t.matrix() - &diag).norm() <= 1e-9);
    }

    #[test]
    fn pf2_matches_f35_kernel_on_scalars() {
        let r = rule64();
        let grid = [0.1, 0.56234132519, 3.16227766017, 10.0];
        let mut worst: f64 = 0.0;
        for p in [0.25, 0.5, 0.75, 1.0] {
            let k = ScalarKernel::new(KernelId::F35, p).unwrap();
            for &t1 in &grid {
                for &t2 in &grid {
                    for &t3 in &grid {
                        let exact = k.eval(&[t1, t2, t3]).unwrap();
                        let got = pf2_apply(&scalar(t1), &scalar(t2), &scalar(t3), p, &r)
                            .unwrap()
                            .matrix()[(0, 0)]
                            .re;
                        worst = worst.max((got - exact).abs() / (1.0 + exact.abs()));
                    }
                }
            }
        }
        assert!(worst <= 1e-8, "worst deviation {worst:.3e}");
    }

    #[test]
    fn pf2_unitary_covariance() {
        let r = rule64();
        let a = random_pd::<f64>(&PdSamplerSpec::new(3, -1.0, 1.0, 105).unwrap()).unwrap();
        let b = random_pd::<f64>(&PdSamplerSpec::new(3, -1.0, 1.0, 106).unwrap()).unwrap();
        let c = random_pd::<f64>(&PdSamplerSpec::new(3, -1.0, 1.0, 107).unwrap()).unwrap();
        let q = random_unitary::<f64>(3, 108).unwrap();
        let conj = |m: &HermitianMatrix<f64>| {
            HermitianMatrix::symmetrized(&q * m.matrix() * q.adjoint()).unwrap()
        };
        let lhs = pf2_apply(&conj(&a), &conj(&b), &conj(&c), 0.5, &r).unwrap();
        let rhs = &q * pf2_apply(&a, &b, &c, 0.5, &r).unwrap().into_matrix() * q.adjoint();
        assert!((lhs.matrix() - &rhs).norm() <= 1e-8 * (1.0 + rhs.norm()));
    }
}
