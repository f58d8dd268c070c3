//! Multivariate functional calculus on commuting tuples, and the left/right
//! multiplication superoperators `f(L_A, R_B)` acting on matrix arguments.

use nalgebra::{Complex, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{OpcertError, Result};
use crate::matcore::{as_f64, spectral_decompose, CMatrix, HermitianMatrix};
use crate::{real, tol, Real};

/// Scalar function of a fixed number of real arguments, evaluated through
/// the functional calculus.
pub trait ScalarFunction<R: Real> {
    fn arity(&self) -> usize;
    fn eval(&self, args: &[R]) -> Result<R>;
}

/// Adapter turning a closure into a [`ScalarFunction`].
pub struct FnScalar<F> {
    arity: usize,
    f: F,
}

impl<F> FnScalar<F> {
    pub fn new(arity: usize, f: F) -> Self {
        Self { arity, f }
    }
}

impl<R: Real, F: Fn(&[R]) -> R> ScalarFunction<R> for FnScalar<F> {
    fn arity(&self) -> usize {
        self.arity
    }

    fn eval(&self, args: &[R]) -> Result<R> {
        if args.len() != self.arity {
            return Err(OpcertError::ArityMismatch {
                expected: self.arity,
                got: args.len(),
            });
        }
        let v = (self.f)(args);
        if !v.is_finite() {
            return Err(OpcertError::DomainViolation {
                what: "scalar function value not finite".into(),
            });
        }
        Ok(v)
    }
}

/// A tuple of equal-dimension Hermitian matrices with pairwise commutators
/// below `tol::COMMUTATOR * (1 + ||X_i||_F ||X_j||_F)`.
#[derive(Clone, Debug)]
pub struct CommutingTuple<R: Real> {
    matrices: Vec<HermitianMatrix<R>>,
}

impl<R: Real> CommutingTuple<R> {
    pub fn new(matrices: Vec<HermitianMatrix<R>>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(OpcertError::BadParameter {
                what: "commuting tuple needs at least one matrix".into(),
            });
        }
        let dim = matrices[0].dim();
        for m in &matrices {
            if m.dim() != dim {
                return Err(OpcertError::DimensionMismatch {
                    left: dim,
                    right: m.dim(),
                });
            }
        }
        for i in 0..matrices.len() {
            for j in i + 1..matrices.len() {
                let a = matrices[i].matrix();
                let b = matrices[j].matrix();
                let residual = (a * b - b * a).norm();
                let tolerance = real::<R>(tol::COMMUTATOR)
                    * (R::one() + matrices[i].frobenius_norm() * matrices[j].frobenius_norm());
                if residual > tolerance {
                    return Err(OpcertError::NotCommuting {
                        residual: as_f64(residual),
                        tolerance: as_f64(tolerance),
                    });
                }
            }
        }
        Ok(Self { matrices })
    }

    /// Builds `(u D_1 u*, ..., u D_k u*)`: the general commuting tuple up to
    /// simultaneous diagonalization.
    pub fn from_shared_basis(u: &CMatrix<R>, diagonals: &[DVector<R>]) -> Result<Self> {
        let mats = diagonals
            .iter()
            .map(|d| {
                if d.len() != u.nrows() {
                    return Err(OpcertError::DimensionMismatch {
                        left: u.nrows(),
                        right: d.len(),
                    });
                }
                HermitianMatrix::symmetrized(conjugate_diag(u, d))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mats)
    }

    pub fn k(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].dim()
    }

    pub fn matrices(&self) -> &[HermitianMatrix<R>] {
        &self.matrices
    }
}

/// `u diag(d) u*`.
fn conjugate_diag<R: Real>(u: &CMatrix<R>, d: &DVector<R>) -> CMatrix<R> {
    let mut scaled = u.clone();
    for k in 0..d.len() {
        scaled.column_mut(k).scale_mut(d[k]);
    }
    &scaled * u.adjoint()
}

/// One unitary diagonalizing every member of a commuting tuple, with the
/// m-th matrix's eigenvalue attached to each joint eigenvector.
#[derive(Clone, Debug)]
pub struct JointEigensystem<R: Real> {
    pub basis: CMatrix<R>,
    pub diag_values: Vec<DVector<R>>,
}

impl<R: Real> JointEigensystem<R> {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn k(&self) -> usize {
        self.diag_values.len()
    }
}

// Coefficient stream for the random combination; fixed so that
// joint_diagonalize is a pure function of its input.
const COMBINATION_SEED: u64 = 0x6f70_6365_7274_6a64;

fn combination_coefficients<R: Real>(k: usize, depth: usize) -> Vec<R> {
    let mut rng = ChaCha8Rng::seed_from_u64(COMBINATION_SEED.wrapping_add(depth as u64));
    (0..k)
        .map(|_| {
            let u: f64 = rng.gen();
            real::<R>(0.25 + 0.75 * u)
        })
        .collect()
}

/// Diagonalizes a random positive combination, then recursively refines the
/// basis inside degenerate eigenvalue clusters against the remaining
/// matrices restricted to the cluster.
fn refine_basis<R: Real>(
    mats: &[CMatrix<R>],
    depth: usize,
    depth_limit: usize,
) -> Result<CMatrix<R>> {
    let n = mats[0].nrows();
    if n == 1 {
        return Ok(CMatrix::identity(1, 1));
    }
    if depth > depth_limit {
        return Err(OpcertError::NonConvergence {
            what: "joint diagonalization cluster refinement",
        });
    }
    let coeffs = combination_coefficients::<R>(mats.len(), depth);
    let mut combo = CMatrix::<R>::zeros(n, n);
    for (c, m) in coeffs.iter().zip(mats) {
        combo += m * Complex::new(*c, R::zero());
    }
    let sd = spectral_decompose(&HermitianMatrix::symmetrized(combo)?)?;
    let scale = R::one() + sd.max_abs_eig();
    let gap = real::<R>(tol::CLUSTER_GAP) * scale;

    let mut basis = sd.eigenvectors;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && sd.eigenvalues[end] - sd.eigenvalues[end - 1] < gap {
            end += 1;
        }
        let size = end - start;
        if size > 1 {
            let v = basis.columns(start, size).into_owned();
            let restricted: Vec<CMatrix<R>> = mats
                .iter()
                .map(|m| hermitian_part(&(v.adjoint() * m * &v)))
                .collect();
            if !all_scalar(&restricted, mats) {
                let w = refine_basis(&restricted, depth + 1, depth_limit)?;
                let refined = &v * w;
                for (offset, col) in (start..end).enumerate() {
                    basis.set_column(col, &refined.column(offset));
                }
            }
        }
        start = end;
    }
    Ok(basis)
}

fn hermitian_part<R: Real>(m: &CMatrix<R>) -> CMatrix<R> {
    let half = Complex::new(real::<R>(0.5), R::zero());
    (m + m.adjoint()) * half
}

/// A cluster needs no refinement when every restricted matrix is already a
/// scalar multiple of the identity to well under the reconstruction budget.
fn all_scalar<R: Real>(restricted: &[CMatrix<R>], full: &[CMatrix<R>]) -> bool {
    let quarter = real::<R>(0.25 * tol::JOINT_RECONSTRUCT);
    restricted.iter().zip(full).all(|(b, x)| {
        let c = b.nrows();
        let mut trace = Complex::new(R::zero(), R::zero());
        for i in 0..c {
            trace += b[(i, i)];
        }
        let mean = trace.unscale(R::from_usize(c).expect("small count"));
        let dev = (b - CMatrix::<R>::identity(c, c) * mean).norm();
        dev <= quarter * (R::one() + x.norm())
    })
}

/// Simultaneous diagonalization of a commuting tuple. Eigenvalue attachment
/// uses Rayleigh quotients `u* X_m u`, not spectrum sorting: sorting would
/// break the pairing between a joint eigenvector and each matrix's value.
pub fn joint_diagonalize<R: Real>(t: &CommutingTuple<R>) -> Result<JointEigensystem<R>> {
    let n = t.dim();
    let raw: Vec<CMatrix<R>> = t.matrices().iter().map(|m| m.matrix().clone()).collect();
    let basis = refine_basis(&raw, 0, 3 * t.k() + 8)?;

    let mut diag_values = Vec::with_capacity(t.k());
    for x in &raw {
        let mut vals = DVector::zeros(n);
        for j in 0..n {
            let col = basis.column(j);
            vals[j] = (col.adjoint() * x * col)[(0, 0)].re;
        }
        diag_values.push(vals);
    }

    for (x, vals) in raw.iter().zip(&diag_values) {
        let rebuilt = conjugate_diag(&basis, vals);
        let residual = (x - rebuilt).norm();
        if residual > real::<R>(tol::JOINT_RECONSTRUCT) * (R::one() + x.norm()) {
            return Err(OpcertError::NonConvergence {
                what: "joint diagonalization reconstruction",
            });
        }
    }

    Ok(JointEigensystem { basis, diag_values })
}

/// `f(X_1, ..., X_k) = U diag(f(lambda(1)_j, ..., lambda(k)_j)) U*` over the
/// joint eigenvectors; equals the double sum over products of spectral
/// projections.
pub fn multivariate_apply<R: Real>(
    f: &dyn ScalarFunction<R>,
    t: &CommutingTuple<R>,
) -> Result<HermitianMatrix<R>> {
    if f.arity() != t.k() {
        return Err(OpcertError::ArityMismatch {
            expected: f.arity(),
            got: t.k(),
        });
    }
    let js = joint_diagonalize(t)?;
    let n = js.dim();
    let mut diag = DVector::zeros(n);
    let mut args = vec![R::zero(); t.k()];
    for j in 0..n {
        for (m, slot) in args.iter_mut().enumerate() {
            *slot = js.diag_values[m][j];
        }
        diag[j] = f.eval(&args)?;
    }
    HermitianMatrix::symmetrized(conjugate_diag(&js.basis, &diag))
}

/// `f(L_A, R_B) H = sum_{i,j} f(alpha_i, beta_j) P_i H Q_j`, evaluated in
/// the two eigenbases as a Hadamard product; never materializes the dim^2
/// superoperator.
pub fn lr_apply<R: Real>(
    f: &dyn ScalarFunction<R>,
    a: &HermitianMatrix<R>,
    b: &HermitianMatrix<R>,
    h: &CMatrix<R>,
) -> Result<CMatrix<R>> {
    if f.arity() != 2 {
        return Err(OpcertError::ArityMismatch {
            expected: 2,
            got: f.arity(),
        });
    }
    let n = a.dim();
    if b.dim() != n || h.nrows() != n || h.ncols() != n {
        return Err(OpcertError::DimensionMismatch {
            left: n,
            right: if b.dim() != n { b.dim() } else { h.nrows() },
        });
    }
    let sda = spectral_decompose(a)?;
    let sdb = spectral_decompose(b)?;
    let mut hadamard = sda.eigenvectors.adjoint() * h * &sdb.eigenvectors;
    for i in 0..n {
        for j in 0..n {
            let k = f.eval(&[sda.eigenvalues[i], sdb.eigenvalues[j]])?;
            hadamard[(i, j)] *= Complex::new(k, R::zero());
        }
    }
    Ok(&sda.eigenvectors * hadamard * sdb.eigenvectors.adjoint())
}

/// `Re Tr(H* f(L_A, R_B) H)`: the quadratic form the certification of the
/// differential maps reduces to.
pub fn trace_form<R: Real>(
    f: &dyn ScalarFunction<R>,
    a: &HermitianMatrix<R>,
    b: &HermitianMatrix<R>,
    h: &CMatrix<R>,
) -> Result<R> {
    let x = lr_apply(f, a, b, h)?;
    let mut s = Complex::new(R::zero(), R::zero());
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            s += h[(i, j)].conj() * x[(i, j)];
        }
    }
    Ok(s.re)
}

/// Dense dim^2 x dim^2 matrix of `f(L_A, R_B)` acting on column-major
/// vectorizations. Cross-validation only; refuses above dim 4.
pub fn lr_dense<R: Real>(
    f: &dyn ScalarFunction<R>,
    a: &HermitianMatrix<R>,
    b: &HermitianMatrix<R>,
) -> Result<CMatrix<R>> {
    let n = a.dim();
    if n > 4 {
        return Err(OpcertError::BadParameter {
            what: format!("dense superoperator export limited to dim <= 4, got {n}"),
        });
    }
    if b.dim() != n {
        return Err(OpcertError::DimensionMismatch {
            left: n,
            right: b.dim(),
        });
    }
    let sda = spectral_decompose(a)?;
    let sdb = spectral_decompose(b)?;
    let mut s = CMatrix::<R>::zeros(n * n, n * n);
    for i in 0..n {
        let ui = sda.eigenvectors.column(i);
        for j in 0..n {
            let vj = sdb.eigenvectors.column(j);
            let k = Complex::new(
                f.eval(&[sda.eigenvalues[i], sdb.eigenvalues[j]])?,
                R::zero(),
            );
            // vec(P_i H Q_j) = (conj(Q_j) kron P_i) vec(H)
            for r in 0..n {
                for c in 0..n {
                    let p = ui[r] * ui[c].conj();
                    for rr in 0..n {
                        for cc in 0..n {
                            let q = vj[rr] * vj[cc].conj();
                            s[(r + n * rr, c + n * cc)] += k * p * q.conj();
                        }
                    }
                }
            }
        }
    }
    Ok(s)
}
