//! Central registry of numerical tolerances.
//!
//! Every threshold in the crate budgets above the eigensolver's relative
//! accuracy and below the certification tolerance, so the constants live in
//! one place where the ordering can be stated and tested.

/// Relative accuracy target of the Hermitian eigensolver. Everything else
/// budgets above this.
pub const EIGEN_REL: f64 = 1e-12;

/// Constructor symmetrization: inputs with `||A - A*||_F` at most this
/// factor times `1 + ||A||_F` are replaced by `(A + A*)/2`; anything worse
/// is rejected. Roundoff from congruences must not poison constructors.
pub const HERMITIAN_ASYM: f64 = 1e-10;

/// Positive definiteness requires `lambda_min > PD_MIN * (1 + ||A||_2)`.
/// Near-singular inputs are rejected rather than regularized.
pub const PD_MIN: f64 = 1e-12;

/// Pairwise commutator residual allowed in a commuting tuple, relative to
/// `1 + ||X_i||_F * ||X_j||_F`.
pub const COMMUTATOR: f64 = 1e-10;

/// Joint eigensystem reconstruction: `||U diag U* - X_m||_F` relative to
/// `1 + ||X_m||_F`.
pub const JOINT_RECONSTRUCT: f64 = 1e-9;

/// Eigenvalues of the diagonalized combination closer than this (relative
/// to the spectral scale) are treated as one degenerate cluster and
/// refined recursively. Above the threshold the polished eigensolver
/// resolves the pair directly with basis error around eps/CLUSTER_GAP,
/// which must stay well under JOINT_RECONSTRUCT; below it the recursion's
/// fresh coefficients break whatever cancellation produced the tight gap.
pub const CLUSTER_GAP: f64 = 1e-3;

/// Divided differences switch from the quotient to the midpoint derivative
/// when `|t - s| <= DIVIDED_DIFF_GAP * max(t, s, 1)`. Caps the cancellation
/// error of the quotient near the diagonal at about 1e-9 while keeping the
/// extension continuous.
pub const DIVIDED_DIFF_GAP: f64 = 1e-7;

/// A Loewner matrix entry smaller than this fraction of the largest entry
/// makes the differential numerically singular; inversion refuses rather
/// than clips.
pub const LOEWNER_SINGULAR: f64 = 1e-14;

/// Quadrature weights must sum to one within this absolute slack.
pub const QUAD_WEIGHT_SUM: f64 = 1e-14;

/// Default relative certification tolerance: a trial violates its theorem
/// only if the normalized margin drops below the negative of this.
pub const CERT_REL: f64 = 1e-8;

/// Relaxed tolerance used with the widened stress eigenvalue range, where
/// congruences square the conditioning.
pub const CERT_REL_STRESS: f64 = 1e-6;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[allow(clippy::assertions_on_constants)]
    fn thresholds_are_ordered() {
        assert!(EIGEN_REL < JOINT_RECONSTRUCT);
        assert!(EIGEN_REL < HERMITIAN_ASYM);
        assert!(HERMITIAN_ASYM < CERT_REL);
        assert!(JOINT_RECONSTRUCT < CLUSTER_GAP);
        // eigenvector conditioning: outside a cluster the basis error is
        // about eps/gap, which must stay far below the reconstruction gate
        assert!(f64::EPSILON / CLUSTER_GAP <= 0.1 * JOINT_RECONSTRUCT);
        assert!(LOEWNER_SINGULAR < EIGEN_REL);
        assert!(CERT_REL < CERT_REL_STRESS);
        assert!(PD_MIN <= EIGEN_REL);
    }
}
