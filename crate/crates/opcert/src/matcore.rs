//! Hermitian matrices and the spectral operations everything else builds on:
//! decomposition, one-variable matrix functions, Loewner-order margins,
//! seeded positive definite sampling, and congruence transforms.

use nalgebra::linalg::{SymmetricEigen, QR};
use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{OpcertError, Result};
use crate::{real, tol, Real};

pub type CMatrix<R> = DMatrix<Complex<R>>;

/// A square complex matrix with `A = A*` enforced at construction.
///
/// Inputs whose asymmetry `||A - A*||_F` stays within
/// `tol::HERMITIAN_ASYM * (1 + ||A||_F)` are symmetrized to `(A + A*)/2`;
/// anything worse is rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix<R: Real> {
    data: CMatrix<R>,
}

impl<R: Real> HermitianMatrix<R> {
    pub fn new(data: CMatrix<R>) -> Result<Self> {
        check_square(&data)?;
        let asym = (&data - data.adjoint()).norm();
        let tolerance = real::<R>(tol::HERMITIAN_ASYM) * (R::one() + data.norm());
        if asym > tolerance {
            return Err(OpcertError::NotHermitian {
                deviation: as_f64(asym),
                tolerance: as_f64(tolerance),
            });
        }
        Ok(Self::symmetrize(data))
    }

    /// Wraps a matrix that is Hermitian by construction up to roundoff,
    /// e.g. `U diag U*` or a congruence; symmetrizes without the asymmetry
    /// gate of [`HermitianMatrix::new`].
    pub fn symmetrized(data: CMatrix<R>) -> Result<Self> {
        check_square(&data)?;
        Ok(Self::symmetrize(data))
    }

    fn symmetrize(data: CMatrix<R>) -> Self {
        let half = Complex::new(real::<R>(0.5), R::zero());
        let sym = (&data + data.adjoint()) * half;
        Self { data: sym }
    }

    pub fn from_real(data: DMatrix<R>) -> Result<Self> {
        Self::new(data.map(|x| Complex::new(x, R::zero())))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            data: CMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<R> {
        &self.data
    }

    pub fn into_matrix(self) -> CMatrix<R> {
        self.data
    }

    pub fn frobenius_norm(&self) -> R {
        self.data.norm()
    }

    pub fn scaled(&self, c: R) -> Self {
        Self {
            data: &self.data * Complex::new(c, R::zero()),
        }
    }

    /// `a*x + b*y` with real coefficients; Hermitian exactly, so no gate.
    pub fn lin_comb(a: R, x: &Self, b: R, y: &Self) -> Result<Self> {
        if x.dim() != y.dim() {
            return Err(OpcertError::DimensionMismatch {
                left: x.dim(),
                right: y.dim(),
            });
        }
        let ca = Complex::new(a, R::zero());
        let cb = Complex::new(b, R::zero());
        Ok(Self {
            data: &x.data * ca + &y.data * cb,
        })
    }
}

fn check_square<R: Real>(data: &CMatrix<R>) -> Result<()> {
    if data.nrows() == 0 {
        return Err(OpcertError::EmptyMatrix);
    }
    if data.nrows() != data.ncols() {
        return Err(OpcertError::DimensionMismatch {
            left: data.nrows(),
            right: data.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn as_f64<R: Real>(x: R) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}

/// Eigenvalues ascending with a unitary of matching eigenvector columns.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition<R: Real> {
    pub eigenvalues: DVector<R>,
    pub eigenvectors: CMatrix<R>,
}

impl<R: Real> SpectralDecomposition<R> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(f(lambda_i)) U*` as a raw complex matrix.
    pub fn map_eigs(&self, f: impl Fn(R) -> R) -> Result<CMatrix<R>> {
        let n = self.dim();
        let mut diag = DVector::zeros(n);
        for i in 0..n {
            let v = f(self.eigenvalues[i]);
            if !v.is_finite() {
                return Err(OpcertError::DomainViolation {
                    what: format!(
                        "function value not finite at eigenvalue {:.6e}",
                        as_f64(self.eigenvalues[i])
                    ),
                });
            }
            diag[i] = v;
        }
        let mut scaled = self.eigenvectors.clone();
        for i in 0..n {
            let c = Complex::new(diag[i], R::zero());
            scaled.column_mut(i).scale_mut(c.re);
        }
        Ok(&scaled * self.eigenvectors.adjoint())
    }

    pub fn min_eig(&self) -> R {
        self.eigenvalues[0]
    }

    pub fn max_abs_eig(&self) -> R {
        let n = self.dim();
        let lo = self.eigenvalues[0].abs();
        let hi = self.eigenvalues[n - 1].abs();
        if lo > hi {
            lo
        } else {
            hi
        }
    }

    /// Positive definiteness gate: `lambda_min > tol::PD_MIN * (1 + ||A||_2)`.
    pub fn require_pd(&self) -> Result<()> {
        let threshold = real::<R>(tol::PD_MIN) * (R::one() + self.max_abs_eig());
        if self.min_eig() <= threshold {
            return Err(OpcertError::DomainViolation {
                what: format!(
                    "matrix not positive definite: min eigenvalue {:.6e} at threshold {:.6e}",
                    as_f64(self.min_eig()),
                    as_f64(threshold)
                ),
            });
        }
        Ok(())
    }
}

/// Sweeps of cyclic Jacobi rotations run after the QR eigensolver. The QR
/// pass leaves `off(U* A U)` orders of magnitude above roundoff when two
/// eigenvalues nearly collide, so the polish is what the accuracy budget in
/// [`tol`] actually relies on.
const JACOBI_MAX_SWEEPS: usize = 20;

/// Off-diagonal mass target of the polish, in units of
/// `n * eps * (1 + ||A||_F)`. Cyclic Jacobi stalls near `n * eps` times the
/// scale, so the factor leaves headroom above that floor.
const JACOBI_TARGET_FACTOR: f64 = 8.0;

fn off_diagonal_norm<R: Real>(t: &CMatrix<R>) -> R {
    let n = t.nrows();
    let mut sum = R::zero();
    for p in 0..n {
        for q in 0..n {
            if p != q {
                sum += t[(p, q)].norm_sqr();
            }
        }
    }
    sum.sqrt()
}

/// Drives `t = U* A U` to diagonal by unitary 2x2 rotations, accumulating
/// them into `u`. Each rotation zeroes one off-diagonal entry exactly, so
/// convergence from a nearly diagonal start is quadratic.
fn jacobi_polish<R: Real>(t: &mut CMatrix<R>, u: &mut CMatrix<R>, target: R) -> Result<()> {
    let n = t.nrows();
    let one = R::one();
    let skip = target * real::<R>(0.1) / real::<R>(n as f64 + 1.0);
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(t) <= target {
            return Ok(());
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let b = t[(p, q)];
                let beta = b.norm_sqr().sqrt();
                if beta <= skip {
                    continue;
                }
                let app = t[(p, p)].re;
                let aqq = t[(q, q)].re;
                // tangent of the rotation angle from t^2 + 2 tau t - 1 = 0,
                // smaller root for stability
                let tau = (aqq - app) / (beta + beta);
                let root = (one + tau * tau).sqrt();
                let tan = if tau >= R::zero() {
                    one / (tau + root)
                } else {
                    -one / (root - tau)
                };
                let c = one / (one + tan * tan).sqrt();
                let s = tan * c;
                let phase = b / Complex::new(beta, R::zero());
                let gpq = phase * Complex::new(s, R::zero());
                let gqp = -phase.conj() * Complex::new(s, R::zero());
                let cc = Complex::new(c, R::zero());
                for k in 0..n {
                    let tkp = t[(k, p)];
                    let tkq = t[(k, q)];
                    t[(k, p)] = tkp * cc + tkq * gqp;
                    t[(k, q)] = tkp * gpq + tkq * cc;
                }
                for k in 0..n {
                    let tpk = t[(p, k)];
                    let tqk = t[(q, k)];
                    t[(p, k)] = tpk * cc + tqk * gqp.conj();
                    t[(q, k)] = tpk * gpq.conj() + tqk * cc;
                }
                t[(p, q)] = Complex::new(R::zero(), R::zero());
                t[(q, p)] = Complex::new(R::zero(), R::zero());
                t[(p, p)] = Complex::new(t[(p, p)].re, R::zero());
                t[(q, q)] = Complex::new(t[(q, q)].re, R::zero());
                for k in 0..n {
                    let ukp = u[(k, p)];
                    let ukq = u[(k, q)];
                    u[(k, p)] = ukp * cc + ukq * gqp;
                    u[(k, q)] = ukp * gpq + ukq * cc;
                }
            }
        }
    }
    if off_diagonal_norm(t) <= target {
        Ok(())
    } else {
        Err(OpcertError::NonConvergence {
            what: "hermitian eigensolver polish",
        })
    }
}

/// Full Hermitian eigendecomposition, eigenvalues sorted ascending.
///
/// The dense QR pass is followed by a Jacobi polish of `U* A U` with a
/// validated off-diagonal residual, so callers get backward-stable accuracy
/// even when eigenvalues nearly collide.
pub fn spectral_decompose<R: Real>(a: &HermitianMatrix<R>) -> Result<SpectralDecomposition<R>> {
    let n = a.dim();
    let eigen = SymmetricEigen::try_new(a.data.clone(), R::default_epsilon(), 200 * n * n + 2000)
        .ok_or(OpcertError::NonConvergence {
        what: "hermitian eigensolver",
    })?;
    let mut basis = eigen.eigenvectors;
    let mut t = basis.adjoint() * &a.data * &basis;
    let target = R::default_epsilon()
        * real::<R>(JACOBI_TARGET_FACTOR * n as f64)
        * (R::one() + a.data.norm());
    jacobi_polish(&mut t, &mut basis, target)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| {
        t[(i, i)]
            .re
            .partial_cmp(&t[(j, j)].re)
            .expect("eigenvalues are finite")
    });
    let eigenvalues = DVector::from_fn(n, |i, _| t[(idx[i], idx[i])].re);
    let mut eigenvectors = CMatrix::zeros(n, n);
    for (new, &old) in idx.iter().enumerate() {
        eigenvectors.set_column(new, &basis.column(old));
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// `U diag(f(lambda_i)) U*` for a scalar function `f` applied spectrally.
pub fn matrix_function<R: Real>(
    f: impl Fn(R) -> R,
    a: &HermitianMatrix<R>,
) -> Result<HermitianMatrix<R>> {
    let sd = spectral_decompose(a)?;
    HermitianMatrix::symmetrized(sd.map_eigs(f)?)
}

/// `lambda_min(B - A)`: nonnegative iff `A` precedes `B` in the Loewner
/// order, up to eigensolver accuracy.
pub fn loewner_margin<R: Real>(a: &HermitianMatrix<R>, b: &HermitianMatrix<R>) -> Result<R> {
    let diff = HermitianMatrix::lin_comb(-R::one(), a, R::one(), b)?;
    Ok(spectral_decompose(&diff)?.min_eig())
}

/// Operator norm (largest absolute eigenvalue).
pub fn operator_norm<R: Real>(a: &HermitianMatrix<R>) -> Result<R> {
    Ok(spectral_decompose(a)?.max_abs_eig())
}

/// Deterministic sampler description for positive definite matrices:
/// eigenvalues log-uniform in `[10^log10_eig_min, 10^log10_eig_max]`,
/// eigenbasis Haar-distributed from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdSamplerSpec {
    pub dim: usize,
    pub log10_eig_min: f64,
    pub log10_eig_max: f64,
    pub seed: u64,
}

impl PdSamplerSpec {
    pub fn new(dim: usize, log10_eig_min: f64, log10_eig_max: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            dim,
            log10_eig_min,
            log10_eig_max,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(OpcertError::EmptyMatrix);
        }
        if !(self.log10_eig_min.is_finite() && self.log10_eig_max.is_finite()) {
            return Err(OpcertError::BadParameter {
                what: "eigenvalue range must be finite".into(),
            });
        }
        if self.log10_eig_min > self.log10_eig_max {
            return Err(OpcertError::BadParameter {
                what: format!(
                    "log10 eigenvalue range inverted: {} > {}",
                    self.log10_eig_min, self.log10_eig_max
                ),
            });
        }
        Ok(())
    }
}

fn complex_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex<f64>> {
    let mut entries = Vec::with_capacity(dim * dim);
    for _ in 0..dim * dim {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        entries.push(Complex::new(re, im));
    }
    DMatrix::from_row_slice(dim, dim, &entries)
}

/// QR of a complex Gaussian with the R-diagonal phase correction; without
/// the correction the distribution is not Haar.
fn haar_unitary_f64(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex<f64>> {
    let g = complex_gaussian(dim, rng);
    let qr = QR::new(g);
    let r = qr.r();
    let mut q = qr.q();
    for i in 0..dim {
        let d = r[(i, i)];
        let m = d.norm();
        if m > 0.0 {
            let phase = d.unscale(m);
            for k in 0..dim {
                q[(k, i)] *= phase;
            }
        }
    }
    q
}

fn convert_cmatrix<R: Real>(m: &DMatrix<Complex<f64>>) -> CMatrix<R> {
    m.map(|z| {
        Complex::new(
            R::from_f64(z.re).expect("sample representable"),
            R::from_f64(z.im).expect("sample representable"),
        )
    })
}

/// Seeded positive definite sample per the sampler spec. Identical specs
/// produce identical matrices regardless of platform or thread count.
pub fn random_pd<R: Real>(spec: &PdSamplerSpec) -> Result<HermitianMatrix<R>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let q = haar_unitary_f64(spec.dim, &mut rng);
    let mut lambda = DVector::zeros(spec.dim);
    for k in 0..spec.dim {
        let u: f64 = rng.gen();
        let e = spec.log10_eig_min + u * (spec.log10_eig_max - spec.log10_eig_min);
        lambda[k] = 10f64.powf(e);
    }
    let mut scaled = q.clone();
    for k in 0..spec.dim {
        scaled.column_mut(k).scale_mut(lambda[k]);
    }
    let a = &scaled * q.adjoint();
    HermitianMatrix::new(convert_cmatrix(&a))
}

/// Seeded Haar-distributed unitary (basis generator of [`random_pd`]).
pub fn random_unitary<R: Real>(dim: usize, seed: u64) -> Result<CMatrix<R>> {
    if dim == 0 {
        return Err(OpcertError::EmptyMatrix);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(convert_cmatrix(&haar_unitary_f64(dim, &mut rng)))
}

/// Seeded GUE-style Hermitian matrix `(G + G*)/2`, G complex Gaussian.
pub fn random_hermitian<R: Real>(dim: usize, seed: u64) -> Result<HermitianMatrix<R>> {
    if dim == 0 {
        return Err(OpcertError::EmptyMatrix);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = complex_gaussian(dim, &mut rng);
    let h = (&g + g.adjoint()) * Complex::new(0.5, 0.0);
    HermitianMatrix::new(convert_cmatrix(&h))
}

/// Seeded complex Gaussian matrix without symmetry.
pub fn random_ginibre<R: Real>(dim: usize, seed: u64) -> Result<CMatrix<R>> {
    if dim == 0 {
        return Err(OpcertError::EmptyMatrix);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(convert_cmatrix(&complex_gaussian(dim, &mut rng)))
}

/// Derives a fresh 64-bit sub-seed; used to fan one seed out to multiple
/// deterministic samplers.
pub fn derive_seed(rng: &mut ChaCha8Rng) -> u64 {
    rng.next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    PlusHalf,
    MinusHalf,
}

/// `B^{+1/2} X B^{+1/2}` or `B^{-1/2} X B^{-1/2}`; B must be positive
/// definite.
pub fn congruence_half<R: Real>(
    b: &HermitianMatrix<R>,
    x: &HermitianMatrix<R>,
    direction: Direction,
) -> Result<HermitianMatrix<R>> {
    if b.dim() != x.dim() {
        return Err(OpcertError::DimensionMismatch {
            left: b.dim(),
            right: x.dim(),
        });
    }
    let sd = spectral_decompose(b)?;
    sd.require_pd()?;
    let half = match direction {
        Direction::PlusHalf => real::<R>(0.5),
        Direction::MinusHalf => real::<R>(-0.5),
    };
    let s = sd.map_eigs(|t| t.powf(half))?;
    HermitianMatrix::symmetrized(&s * x.matrix() * &s)
}

impl<R: Real> Serialize for HermitianMatrix<R> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let dim = self.dim();
        let entries: Vec<Vec<[f64; 2]>> = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| {
                        let z = self.data[(i, j)];
                        [as_f64(z.re), as_f64(z.im)]
                    })
                    .collect()
            })
            .collect();
        MatrixDto { dim, entries }.serialize(serializer)
    }
}

impl<'de, R: Real> Deserialize<'de> for HermitianMatrix<R> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let dto = MatrixDto::deserialize(deserializer)?;
        if dto.entries.len() != dto.dim || dto.entries.iter().any(|row| row.len() != dto.dim) {
            return Err(D::Error::custom("entries shape does not match dim"));
        }
        let mut data = CMatrix::<R>::zeros(dto.dim, dto.dim);
        for (i, row) in dto.entries.iter().enumerate() {
            for (j, &[re, im]) in row.iter().enumerate() {
                let re = R::from_f64(re).ok_or_else(|| D::Error::custom("entry out of range"))?;
                let im = R::from_f64(im).ok_or_else(|| D::Error::custom("entry out of range"))?;
                data[(i, j)] = Complex::new(re, im);
            }
        }
        HermitianMatrix::new(data).map_err(D::Error::custom)
    }
}

/// Row-major JSON form: `{"dim": n, "entries": [[[re,im], ...], ...]}`.
#[derive(Serialize, Deserialize)]
struct MatrixDto {
    dim: usize,
    entries: Vec<Vec<[f64; 2]>>,
}
