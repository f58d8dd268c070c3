//! Randomized Loewner-order certification.
//!
//! A registry of operator maps, one per certified statement, is driven by
//! seeded trials: sample a pair of admissible input tuples, evaluate the map
//! at both and at their convex mixtures, and record the signed margin of
//! the mixture inequality. Margins are normalized by the output scale, the
//! reduction over trials is order independent, and every random object
//! derives from (seed, trial_index) alone, so reports are reproducible
//! under any worker count.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{OpcertError, Result};
use crate::frechet::{
    frechet_apply, frechet_inverse_trace_form, frechet_trace_form, PowerFunction,
};
use crate::funcalc::{multivariate_apply, trace_form, CommutingTuple};
use crate::matcore::{
    as_f64, derive_seed, loewner_margin, matrix_function, operator_norm, random_ginibre,
    random_hermitian, random_pd, random_unitary, CMatrix, HermitianMatrix, PdSamplerSpec,
};
use crate::perspective::{
    kernel_integral, pf2_apply, KernelId, QuadratureRule, ScalarKernel, Sense,
    DEFAULT_QUADRATURE_NODES,
};
use crate::{real, tol, Real};

pub const DEFAULT_PROBE_COUNT: usize = 8;
pub const DEFAULT_TRIALS: usize = 200;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const SUITE_DIMS: [usize; 3] = [2, 3, 5];
pub const NEG_CONTROL_DIM: usize = 2;
pub const NEG_CONTROL_TRIALS: usize = 500;

/// Certified statements, one id per theorem-level claim, plus the negative
/// control NEG_T4 (t^4 tested for operator convexity, which fails).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MapId {
    Thm21,
    Cor23,
    Thm22,
    Cor24,
    Thm25,
    Thm33,
    Thm34,
    Thm35,
    Lieb,
    NegT4,
}

pub const POSITIVE_MAPS: [MapId; 9] = [
    MapId::Thm21,
    MapId::Cor23,
    MapId::Thm22,
    MapId::Cor24,
    MapId::Thm25,
    MapId::Thm33,
    MapId::Thm34,
    MapId::Thm35,
    MapId::Lieb,
];

impl fmt::Display for MapId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MapId::Thm21 => "THM2.1",
            MapId::Cor23 => "COR2.3",
            MapId::Thm22 => "THM2.2",
            MapId::Cor24 => "COR2.4",
            MapId::Thm25 => "THM2.5",
            MapId::Thm33 => "THM3.3",
            MapId::Thm34 => "THM3.4",
            MapId::Thm35 => "THM3.5",
            MapId::Lieb => "LIEB",
            MapId::NegT4 => "NEG_T4",
        };
        write!(f, "{s}")
    }
}

impl FromStr for MapId {
    type Err = OpcertError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "THM2.1" => Ok(MapId::Thm21),
            "COR2.3" => Ok(MapId::Cor23),
            "THM2.2" => Ok(MapId::Thm22),
            "COR2.4" => Ok(MapId::Cor24),
            "THM2.5" => Ok(MapId::Thm25),
            "THM3.3" => Ok(MapId::Thm33),
            "THM3.4" => Ok(MapId::Thm34),
            "THM3.5" => Ok(MapId::Thm35),
            "LIEB" => Ok(MapId::Lieb),
            "NEG_T4" => Ok(MapId::NegT4),
            _ => Err(OpcertError::UnknownMap { name: s.into() }),
        }
    }
}

/// Parameter values each map is certified over by default: the interior
/// grid plus whichever endpoints its admissible range contains.
pub fn default_p_grid(id: MapId) -> &'static [f64] {
    match id {
        MapId::Thm25 => &[0.0, 0.25, 0.5, 0.75],
        MapId::Thm34 => &[0.25, 0.5, 0.75],
        MapId::NegT4 => &[4.0],
        _ => &[0.25, 0.5, 0.75, 1.0],
    }
}

/// How trial inputs are sampled for a map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    /// Tuple of k matrices sharing one random eigenbasis per trial, with
    /// independent log-uniform diagonals; mixtures stay commuting.
    CommutingShared { k: usize },
    /// Tuple of k independent positive definite matrices.
    IndependentPd { k: usize },
    /// A single positive definite matrix.
    SinglePd,
}

impl InputKind {
    pub fn arity(&self) -> usize {
        match self {
            InputKind::CommutingShared { k } | InputKind::IndependentPd { k } => *k,
            InputKind::SinglePd => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MapSpec {
    pub map_id: MapId,
    pub p: f64,
    pub dim: usize,
    pub probe_count: usize,
}

impl MapSpec {
    pub fn new(map_id: MapId, p: f64, dim: usize) -> Self {
        Self {
            map_id,
            p,
            dim,
            probe_count: DEFAULT_PROBE_COUNT,
        }
    }

    fn uses_probes(&self) -> bool {
        matches!(self.map_id, MapId::Thm22 | MapId::Cor24 | MapId::Thm25)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(OpcertError::BadParameter {
                what: "dim must be at least 1".into(),
            });
        }
        if !self.p.is_finite() {
            return Err(OpcertError::BadParameter {
                what: "p must be finite".into(),
            });
        }
        let ok = match self.map_id {
            MapId::Thm25 => (0.0..1.0).contains(&self.p),
            MapId::Thm34 => self.p > 0.0 && self.p < 1.0,
            MapId::NegT4 => true,
            _ => self.p > 0.0 && self.p <= 1.0,
        };
        if !ok {
            let range = match self.map_id {
                MapId::Thm25 => "0 <= p < 1",
                MapId::Thm34 => "0 < p < 1",
                _ => "0 < p <= 1",
            };
            return Err(OpcertError::BadParameter {
                what: format!("map {} requires {range}, got p = {}", self.map_id, self.p),
            });
        }
        if self.uses_probes() && self.probe_count == 0 {
            return Err(OpcertError::BadParameter {
                what: "trace-form maps need at least one probe".into(),
            });
        }
        Ok(())
    }
}

type EvalFn<R> = Box<dyn Fn(&[HermitianMatrix<R>]) -> Result<HermitianMatrix<R>> + Send + Sync>;

/// A certified statement bound to an executable map: the claimed sense, the
/// input model, and the evaluation itself.
pub struct OperatorMap<R: Real> {
    pub id: MapId,
    pub sense: Sense,
    pub input: InputKind,
    eval_fn: EvalFn<R>,
}

impl<R: Real> OperatorMap<R> {
    pub fn eval(&self, xs: &[HermitianMatrix<R>]) -> Result<HermitianMatrix<R>> {
        if xs.len() != self.input.arity() {
            return Err(OpcertError::ArityMismatch {
                expected: self.input.arity(),
                got: xs.len(),
            });
        }
        (self.eval_fn)(xs)
    }
}

const DEFAULT_PROBE_STREAM: u64 = 0x6f70_6365_7274_7072;

/// Builds the map with probes and contraction matrices drawn from a fixed
/// internal stream. Trial-driven certification draws them per trial through
/// [`build_map_with_rng`] instead; this entry point is for direct
/// evaluation and for replaying serialized worst cases.
pub fn build_map<R: Real>(spec: &MapSpec, quadrature_nodes: usize) -> Result<OperatorMap<R>> {
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_PROBE_STREAM);
    build_map_with_rng(spec, quadrature_nodes, &mut rng)
}

/// Builds the map, drawing any random internals (Hermitian trace probes,
/// the Lieb contraction) from `rng` before anything else touches it. The
/// draw order is part of the determinism contract.
pub fn build_map_with_rng<R: Real>(
    spec: &MapSpec,
    quadrature_nodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<OperatorMap<R>> {
    spec.validate()?;
    let p = real::<R>(spec.p);
    let one = R::one();
    let map = match spec.map_id {
        MapId::Thm21 => kernel_lift(spec, KernelId::G21, InputKind::CommutingShared { k: 2 })?,
        MapId::Cor23 => kernel_lift(spec, KernelId::F23, InputKind::CommutingShared { k: 2 })?,
        MapId::Thm33 => kernel_lift(spec, KernelId::F33, InputKind::CommutingShared { k: 3 })?,
        MapId::Thm34 => kernel_lift(spec, KernelId::F34, InputKind::CommutingShared { k: 3 })?,
        MapId::Thm22 => {
            let probes = draw_probes::<R>(spec.probe_count, spec.dim, rng)?;
            let f = PowerFunction::new(one + p)?;
            OperatorMap {
                id: spec.map_id,
                sense: Sense::Concave,
                input: InputKind::SinglePd,
                eval_fn: Box::new(move |xs| {
                    probe_diagonal(&probes, |h| frechet_trace_form(&f, &xs[0], h))
                }),
            }
        }
        MapId::Cor24 => {
            let probes = draw_probes::<R>(spec.probe_count, spec.dim, rng)?;
            let f = PowerFunction::new(one + p)?;
            OperatorMap {
                id: spec.map_id,
                sense: Sense::Convex,
                input: InputKind::SinglePd,
                eval_fn: Box::new(move |xs| {
                    probe_diagonal(&probes, |h| frechet_inverse_trace_form(&f, &xs[0], h))
                }),
            }
        }
        MapId::Thm25 => {
            let probes = draw_probes::<R>(spec.probe_count, spec.dim, rng)?;
            let f = PowerFunction::new(one - p)?;
            OperatorMap {
                id: spec.map_id,
                sense: Sense::Convex,
                input: InputKind::SinglePd,
                eval_fn: Box::new(move |xs| {
                    probe_diagonal(&probes, |h| frechet_trace_form(&f, &xs[0], h))
                }),
            }
        }
        MapId::Thm35 => {
            let rule = QuadratureRule::<R>::gauss_legendre(quadrature_nodes)?;
            OperatorMap {
                id: spec.map_id,
                sense: Sense::Concave,
                input: InputKind::IndependentPd { k: 3 },
                eval_fn: Box::new(move |xs| pf2_apply(&xs[0], &xs[1], &xs[2], p, &rule)),
            }
        }
        MapId::Lieb => {
            let k = random_ginibre::<R>(spec.dim, derive_seed(rng))?;
            let k = k.unscale(k.norm());
            let kernel = ScalarKernel::new(KernelId::Lieb, p)?;
            OperatorMap {
                id: spec.map_id,
                sense: Sense::Concave,
                input: InputKind::IndependentPd { k: 2 },
                eval_fn: Box::new(move |xs| {
                    let v = trace_form(&kernel, &xs[0], &xs[1], &k)?;
                    HermitianMatrix::from_real(DMatrix::from_element(1, 1, v))
                }),
            }
        }
        MapId::NegT4 => OperatorMap {
            id: spec.map_id,
            sense: Sense::Convex,
            input: InputKind::SinglePd,
            eval_fn: Box::new(move |xs| matrix_function(|t: R| t.powi(4), &xs[0])),
        },
    };
    Ok(map)
}

fn kernel_lift<R: Real>(spec: &MapSpec, kid: KernelId, input: InputKind) -> Result<OperatorMap<R>> {
    let kernel = ScalarKernel::new(kid, real::<R>(spec.p))?;
    Ok(OperatorMap {
        id: spec.map_id,
        sense: kernel.sense(),
        input,
        eval_fn: Box::new(move |xs| {
            let t = CommutingTuple::new(xs.to_vec())?;
            multivariate_apply(&kernel, &t)
        }),
    })
}

fn draw_probes<R: Real>(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CMatrix<R>>> {
    (0..count)
        .map(|_| {
            let h = random_hermitian::<R>(dim, derive_seed(rng))?;
            let nrm = h.frobenius_norm();
            Ok(h.scaled(R::one() / nrm).into_matrix())
        })
        .collect()
}

/// Diagonal matrix of quadratic forms, one slot per probe. The superoperator
/// order coincides with the scalar order of these forms over all Hermitian
/// probes, so certifying the diagonal certifies the reduction.
fn probe_diagonal<R: Real>(
    probes: &[CMatrix<R>],
    form: impl Fn(&CMatrix<R>) -> Result<R>,
) -> Result<HermitianMatrix<R>> {
    let m = probes.len();
    let mut d = CMatrix::<R>::zeros(m, m);
    for (i, h) in probes.iter().enumerate() {
        d[(i, i)] = Complex::new(form(h)?, R::zero());
    }
    HermitianMatrix::new(d)
}

/// Per-trial generator: every trial is an independent function of
/// (seed, trial_index), so trials can run on any worker in any order.
fn trial_rng(seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"opcert-trial");
    h.update(seed.to_le_bytes());
    h.update(trial_index.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn check_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"opcert-check");
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn log_uniform_diag<R: Real>(dim: usize, lo: f64, hi: f64, seed: u64) -> DVector<R> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(dim, |_, _| real::<R>(10f64.powf(rng.gen_range(lo..hi))))
}

type InputPair<R> = (Vec<HermitianMatrix<R>>, Vec<HermitianMatrix<R>>);

/// Draws the X tuple, then the Y tuple. For the shared-basis model the
/// order is basis, X diagonals, Y diagonals.
fn sample_inputs<R: Real>(
    kind: &InputKind,
    dim: usize,
    lo: f64,
    hi: f64,
    rng: &mut ChaCha8Rng,
) -> Result<InputPair<R>> {
    match kind {
        InputKind::CommutingShared { k } => {
            let u = random_unitary::<R>(dim, derive_seed(rng))?;
            let dx: Vec<DVector<R>> = (0..*k)
                .map(|_| log_uniform_diag(dim, lo, hi, derive_seed(rng)))
                .collect();
            let dy: Vec<DVector<R>> = (0..*k)
                .map(|_| log_uniform_diag(dim, lo, hi, derive_seed(rng)))
                .collect();
            let x = CommutingTuple::from_shared_basis(&u, &dx)?
                .matrices()
                .to_vec();
            let y = CommutingTuple::from_shared_basis(&u, &dy)?
                .matrices()
                .to_vec();
            Ok((x, y))
        }
        InputKind::IndependentPd { k } => {
            let draw = |rng: &mut ChaCha8Rng| -> Result<Vec<HermitianMatrix<R>>> {
                (0..*k)
                    .map(|_| random_pd(&PdSamplerSpec::new(dim, lo, hi, derive_seed(rng))?))
                    .collect()
            };
            let x = draw(rng)?;
            let y = draw(rng)?;
            Ok((x, y))
        }
        InputKind::SinglePd => {
            let x = random_pd(&PdSamplerSpec::new(dim, lo, hi, derive_seed(rng))?)?;
            let y = random_pd(&PdSamplerSpec::new(dim, lo, hi, derive_seed(rng))?)?;
            Ok((vec![x], vec![y]))
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: usize,
    pub lambda: f64,
    pub margin: f64,
    pub input_digest: String,
}

fn input_digest<R: Real>(x: &[HermitianMatrix<R>], y: &[HermitianMatrix<R>]) -> String {
    let blob = serde_json::to_vec(&(x, y)).expect("matrix serialization cannot fail");
    let mut h = Sha256::new();
    h.update(&blob);
    let bytes = h.finalize();
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Signed, scale-normalized margin of the mixture inequality at one lambda.
/// Positive means satisfied strictly; the normalization is
/// 1 + max operator norm of the three evaluated map values.
fn mixture_margin<R: Real>(
    map: &OperatorMap<R>,
    sense: Sense,
    x: &[HermitianMatrix<R>],
    y: &[HermitianMatrix<R>],
    fx: &HermitianMatrix<R>,
    fy: &HermitianMatrix<R>,
    lambda: f64,
) -> Result<f64> {
    let lam = real::<R>(lambda);
    let mu = R::one() - lam;
    let mix = x
        .iter()
        .zip(y.iter())
        .map(|(a, b)| HermitianMatrix::lin_comb(lam, a, mu, b))
        .collect::<Result<Vec<_>>>()?;
    let fm = map.eval(&mix)?;
    let combo = HermitianMatrix::lin_comb(lam, fx, mu, fy)?;
    let raw = match sense {
        Sense::Concave => loewner_margin(&combo, &fm)?,
        Sense::Convex => loewner_margin(&fm, &combo)?,
    };
    let scale = R::one()
        + operator_norm(fx)?
            .max(operator_norm(fy)?)
            .max(operator_norm(&fm)?);
    Ok(as_f64(raw / scale))
}

/// One mixture check at a caller-chosen lambda. `trial_index` is zero; the
/// trial driver stamps its own indices.
pub fn concavity_trial<R: Real>(
    map: &OperatorMap<R>,
    sense: Sense,
    x: &[HermitianMatrix<R>],
    y: &[HermitianMatrix<R>],
    lambda: f64,
) -> Result<TrialResult> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(OpcertError::BadParameter {
            what: format!("lambda must lie in [0, 1], got {lambda}"),
        });
    }
    let fx = map.eval(x)?;
    let fy = map.eval(y)?;
    let margin = mixture_margin(map, sense, x, y, &fx, &fy, lambda)?;
    Ok(TrialResult {
        trial_index: 0,
        lambda,
        margin,
        input_digest: input_digest(x, y),
    })
}

#[derive(Clone, Debug)]
pub struct CertifyOptions {
    pub trials: usize,
    pub seed: u64,
    pub tolerance_rel: f64,
    pub lambda_grid: Vec<f64>,
    pub log10_eig_min: f64,
    pub log10_eig_max: f64,
    pub quadrature_nodes: usize,
    pub emit_worst: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
            tolerance_rel: tol::CERT_REL,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            log10_eig_min: -2.0,
            log10_eig_max: 2.0,
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
            emit_worst: false,
        }
    }
}

impl CertifyOptions {
    /// Widens the eigenvalue range to [1e-4, 1e4] and relaxes the relative
    /// tolerance; congruence by B^{-1/2} squares the conditioning.
    pub fn stressed(mut self) -> Self {
        self.log10_eig_min = -4.0;
        self.log10_eig_max = 4.0;
        self.tolerance_rel = tol::CERT_REL_STRESS;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(OpcertError::BadParameter {
                what: "trials must be at least 1".into(),
            });
        }
        if !self.tolerance_rel.is_finite() || self.tolerance_rel <= 0.0 {
            return Err(OpcertError::BadParameter {
                what: "tolerance must be positive".into(),
            });
        }
        if self.lambda_grid.is_empty() {
            return Err(OpcertError::BadParameter {
                what: "lambda grid must be non-empty".into(),
            });
        }
        for &l in &self.lambda_grid {
            if !(0.0..=1.0).contains(&l) {
                return Err(OpcertError::BadParameter {
                    what: format!("lambda grid entry {l} outside [0, 1]"),
                });
            }
        }
        if self.quadrature_nodes == 0 {
            return Err(OpcertError::BadParameter {
                what: "quadrature rule needs at least one node".into(),
            });
        }
        if !(self.log10_eig_min.is_finite()
            && self.log10_eig_max.is_finite()
            && self.log10_eig_min < self.log10_eig_max)
        {
            return Err(OpcertError::BadParameter {
                what: "eigenvalue exponent range must be finite and increasing".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorstCase {
    #[serde(rename = "X")]
    pub x: Vec<HermitianMatrix<f64>>,
    #[serde(rename = "Y")]
    pub y: Vec<HermitianMatrix<f64>>,
    pub lambda: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificationReport {
    pub map_id: String,
    pub p: f64,
    pub dim: usize,
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub lambda_grid: Vec<f64>,
    pub worst_margin: f64,
    pub violation: bool,
    pub worst_case: Option<WorstCase>,
    pub wall_time_ms: u64,
}

fn to_f64_matrix<R: Real>(h: &HermitianMatrix<R>) -> HermitianMatrix<f64> {
    let src = h.matrix();
    let data = CMatrix::<f64>::from_fn(h.dim(), h.dim(), |i, j| {
        Complex::new(as_f64(src[(i, j)].re), as_f64(src[(i, j)].im))
    });
    HermitianMatrix::new(data).expect("conversion preserves the Hermitian gate")
}

fn run_trial<R: Real>(spec: &MapSpec, opts: &CertifyOptions, trial: u64) -> Result<Vec<f64>> {
    let mut rng = trial_rng(opts.seed, trial);
    let map = build_map_with_rng::<R>(spec, opts.quadrature_nodes, &mut rng)?;
    let (x, y) = sample_inputs::<R>(
        &map.input,
        spec.dim,
        opts.log10_eig_min,
        opts.log10_eig_max,
        &mut rng,
    )?;
    let fx = map.eval(&x)?;
    let fy = map.eval(&y)?;
    opts.lambda_grid
        .iter()
        .map(|&l| mixture_margin(&map, map.sense, &x, &y, &fx, &fy, l))
        .collect()
}

fn rebuild_inputs<R: Real>(
    spec: &MapSpec,
    opts: &CertifyOptions,
    trial: u64,
) -> Result<InputPair<R>> {
    let mut rng = trial_rng(opts.seed, trial);
    // rebuilding the map replays the probe draws, keeping the input stream
    // aligned with the original trial
    let map = build_map_with_rng::<R>(spec, opts.quadrature_nodes, &mut rng)?;
    sample_inputs::<R>(
        &map.input,
        spec.dim,
        opts.log10_eig_min,
        opts.log10_eig_max,
        &mut rng,
    )
}

/// Runs `opts.trials` independent trials of the mixture inequality over the
/// lambda grid and reports the worst normalized margin. The worst location
/// is the lexicographic minimum over (margin, trial_index, lambda position),
/// so concurrent execution cannot change the report.
pub fn certify<R: Real>(spec: &MapSpec, opts: &CertifyOptions) -> Result<CertificationReport> {
    spec.validate()?;
    opts.validate()?;
    let start = Instant::now();
    let per_trial: Vec<Vec<f64>> = (0..opts.trials)
        .into_par_iter()
        .map(|t| run_trial::<R>(spec, opts, t as u64))
        .collect::<Result<_>>()?;
    let mut worst = f64::INFINITY;
    let mut at = (0usize, 0usize);
    for (ti, margins) in per_trial.iter().enumerate() {
        for (li, &m) in margins.iter().enumerate() {
            if m < worst {
                worst = m;
                at = (ti, li);
            }
        }
    }
    let violation = worst < -opts.tolerance_rel;
    let worst_case = if violation || opts.emit_worst {
        let (x, y) = rebuild_inputs::<R>(spec, opts, at.0 as u64)?;
        Some(WorstCase {
            x: x.iter().map(to_f64_matrix).collect(),
            y: y.iter().map(to_f64_matrix).collect(),
            lambda: opts.lambda_grid[at.1],
        })
    } else {
        None
    };
    Ok(CertificationReport {
        map_id: spec.map_id.to_string(),
        p: spec.p,
        dim: spec.dim,
        trials: opts.trials,
        seed: opts.seed,
        tolerance: opts.tolerance_rel,
        lambda_grid: opts.lambda_grid.clone(),
        worst_margin: worst,
        violation,
        worst_case,
        wall_time_ms: start.elapsed().as_millis() as u64,
    })
}

/// Re-evaluates a serialized worst case and returns its normalized margin.
/// Maps with internal probe draws replay under the default probe stream;
/// the probe-free maps replay the recorded trial bit-for-bit.
pub fn replay_case(spec: &MapSpec, quadrature_nodes: usize, case: &WorstCase) -> Result<f64> {
    let map = build_map::<f64>(spec, quadrature_nodes)?;
    let r = concavity_trial(&map, map.sense, &case.x, &case.y, case.lambda)?;
    Ok(r.margin)
}

/// Identity crosschecks between independent evaluation paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckId {
    Quad,
    Pf2F35,
    FdFrechet,
    TraceIdent,
}

pub const ALL_CHECKS: [CheckId; 4] = [
    CheckId::Quad,
    CheckId::Pf2F35,
    CheckId::FdFrechet,
    CheckId::TraceIdent,
];

impl fmt::Display for CheckId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CheckId::Quad => "QUAD",
            CheckId::Pf2F35 => "PF2-F35",
            CheckId::FdFrechet => "FD-FRECHET",
            CheckId::TraceIdent => "TRACE-IDENT",
        };
        write!(f, "{s}")
    }
}

impl FromStr for CheckId {
    type Err = OpcertError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "QUAD" => Ok(CheckId::Quad),
            "PF2-F35" => Ok(CheckId::Pf2F35),
            "FD-FRECHET" => Ok(CheckId::FdFrechet),
            "TRACE-IDENT" => Ok(CheckId::TraceIdent),
            _ => Err(OpcertError::UnknownCheck { name: s.into() }),
        }
    }
}

const QUAD_CHECK_TOL: f64 = 1e-9;
const PF2_CHECK_TOL: f64 = 1e-8;
const FD_CHECK_TOL: f64 = 1e-5;
const FD_CHECK_EPS: f64 = 1e-5;
const TRACE_CHECK_TOL: f64 = 1e-10;

struct WorstDev {
    dev: f64,
    p: f64,
    dim: usize,
    count: usize,
}

impl WorstDev {
    fn new() -> Self {
        Self {
            dev: 0.0,
            p: f64::NAN,
            dim: 1,
            count: 0,
        }
    }

    fn update(&mut self, dev: f64, p: f64, dim: usize) {
        self.count += 1;
        if dev > self.dev || self.count == 1 {
            self.dev = dev;
            self.p = p;
            self.dim = dim;
        }
    }

    fn into_report(
        self,
        id: CheckId,
        seed: u64,
        tolerance: f64,
        start: Instant,
    ) -> CertificationReport {
        CertificationReport {
            map_id: id.to_string(),
            p: self.p,
            dim: self.dim,
            trials: self.count,
            seed,
            tolerance,
            lambda_grid: vec![],
            worst_margin: -self.dev,
            violation: self.dev > tolerance,
            worst_case: None,
            wall_time_ms: start.elapsed().as_millis() as u64,
        }
    }
}

/// Deviation-style report: the margin is minus the worst normalized
/// deviation, so `violation = worst_margin < -tolerance` reads the same as
/// for trial reports. `p` and `dim` locate the worst comparison.
pub fn crosscheck(id: CheckId, opts: &CertifyOptions) -> Result<CertificationReport> {
    let start = Instant::now();
    let mut worst = WorstDev::new();
    match id {
        CheckId::Quad => {
            let rule = QuadratureRule::<f64>::gauss_legendre(opts.quadrature_nodes)?;
            let mut rng = check_rng(opts.seed, "QUAD");
            let grids: [(KernelId, &[f64]); 4] = [
                (KernelId::G21, &[0.25, 0.5, 0.75, 1.0]),
                (KernelId::H25, &[0.0, 0.25, 0.5, 0.75]),
                (KernelId::F33, &[0.25, 0.5, 0.75, 1.0]),
                (KernelId::F34, &[0.25, 0.5, 0.75]),
            ];
            for _ in 0..200 {
                let s = 10f64.powf(rng.gen_range(-2.0..2.0));
                let t = 10f64.powf(rng.gen_range(-2.0..2.0));
                let u = 10f64.powf(rng.gen_range(-2.0..2.0));
                for (kid, ps) in grids {
                    for &p in ps {
                        let k = ScalarKernel::new(kid, p)?;
                        let args: Vec<f64> = if k.arity() == 2 {
                            vec![s, t]
                        } else {
                            vec![s, t, u]
                        };
                        let exact = k.eval(&args)?;
                        let quad = kernel_integral(&k, &args, &rule)?;
                        worst.update((quad - exact).abs() / (1.0 + exact.abs()), p, 1);
                    }
                }
            }
            // frozen spot value: G21 at p = 1/2 on (1, 4) is (8 - 1)/3
            let k = ScalarKernel::new(KernelId::G21, 0.5)?;
            let quad = kernel_integral(&k, &[1.0, 4.0], &rule)?;
            worst.update((quad - 7.0 / 3.0).abs() / (1.0 + 7.0 / 3.0), 0.5, 1);
            Ok(worst.into_report(id, opts.seed, QUAD_CHECK_TOL, start))
        }
        CheckId::Pf2F35 => {
            let rule = QuadratureRule::<f64>::gauss_legendre(opts.quadrature_nodes)?;
            let scalar = |v: f64| {
                HermitianMatrix::from_real(DMatrix::from_element(1, 1, v))
                    .expect("1x1 positive scalar")
            };
            let grid: Vec<f64> = (0..5).map(|k| 10f64.powf(-1.0 + 0.5 * k as f64)).collect();
            for &p in &[0.25, 0.5, 0.75, 1.0] {
                let k = ScalarKernel::new(KernelId::F35, p)?;
                for &t1 in &grid {
                    for &t2 in &grid {
                        for &t3 in &grid {
                            let exact = k.eval(&[t1, t2, t3])?;
                            let got = pf2_apply(&scalar(t1), &scalar(t2), &scalar(t3), p, &rule)?
                                .matrix()[(0, 0)]
                                .re;
                            worst.update((got - exact).abs() / (1.0 + exact.abs()), p, 1);
                        }
                    }
                }
            }
            // frozen spot value: sqrt(4) + sqrt(1) at p = 1/2
            let got = pf2_apply(&scalar(4.0), &scalar(1.0), &scalar(1.0), 0.5, &rule)?.matrix()
                [(0, 0)]
                .re;
            worst.update((got - 3.0).abs() / 4.0, 0.5, 1);
            Ok(worst.into_report(id, opts.seed, PF2_CHECK_TOL, start))
        }
        CheckId::FdFrechet => {
            let mut rng = check_rng(opts.seed, "FD-FRECHET");
            for &e in &[1.5, 0.5, 2.0] {
                let f = PowerFunction::new(e)?;
                for &dim in &SUITE_DIMS {
                    for _ in 0..50 {
                        let a = random_pd::<f64>(&PdSamplerSpec::new(
                            dim,
                            opts.log10_eig_min,
                            opts.log10_eig_max,
                            derive_seed(&mut rng),
                        )?)?;
                        let h = random_hermitian::<f64>(dim, derive_seed(&mut rng))?;
                        let h = h.scaled(1.0 / h.frobenius_norm());
                        let df = frechet_apply(&f, &a, h.matrix())?;
                        let plus = matrix_function(
                            |t: f64| t.powf(e),
                            &HermitianMatrix::lin_comb(1.0, &a, FD_CHECK_EPS, &h)?,
                        )?;
                        let minus = matrix_function(
                            |t: f64| t.powf(e),
                            &HermitianMatrix::lin_comb(1.0, &a, -FD_CHECK_EPS, &h)?,
                        )?;
                        let fd = (plus.matrix() - minus.matrix()).unscale(2.0 * FD_CHECK_EPS);
                        let dev = (&df - &fd).norm() / (1.0 + df.norm());
                        worst.update(dev, e, dim);
                    }
                }
            }
            Ok(worst.into_report(id, opts.seed, FD_CHECK_TOL, start))
        }
        CheckId::TraceIdent => {
            let mut rng = check_rng(opts.seed, "TRACE-IDENT");
            for &p in &[0.25, 0.5, 0.75, 1.0] {
                let f = PowerFunction::new(1.0 + p)?;
                let kernel = ScalarKernel::new(KernelId::G21, p)?;
                for i in 0..25 {
                    let dim = SUITE_DIMS[i % SUITE_DIMS.len()];
                    let a = random_pd::<f64>(&PdSamplerSpec::new(
                        dim,
                        opts.log10_eig_min,
                        opts.log10_eig_max,
                        derive_seed(&mut rng),
                    )?)?;
                    let h = random_hermitian::<f64>(dim, derive_seed(&mut rng))?;
                    let h = h.scaled(1.0 / h.frobenius_norm());
                    let lhs = frechet_trace_form(&f, &a, h.matrix())?;
                    let rhs = trace_form(&kernel, &a, &a, h.matrix())?;
                    worst.update((lhs - rhs).abs() / (1.0 + lhs.abs()), p, dim);
                }
            }
            Ok(worst.into_report(id, opts.seed, TRACE_CHECK_TOL, start))
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub passed: bool,
    pub reports: Vec<CertificationReport>,
    pub wall_time_ms: u64,
}

/// The full default matrix: every positive map over its p grid and dims
/// {2, 3, 5}, the negative control at dim 2, and all four crosschecks.
/// Passes iff every positive report and crosscheck is violation-free AND
/// the negative control fires.
pub fn run_suite(opts: &CertifyOptions, neg_trials: usize) -> Result<SuiteReport> {
    run_suite_with(opts, neg_trials, None, &SUITE_DIMS)
}

/// [`run_suite`] with the positive matrix narrowed to one parameter value
/// and an explicit dimension list. A `p_override` outside some map's
/// admissible range is an error, not a skip; the negative control keeps its
/// fixed exponent either way.
pub fn run_suite_with(
    opts: &CertifyOptions,
    neg_trials: usize,
    p_override: Option<f64>,
    dims: &[usize],
) -> Result<SuiteReport> {
    opts.validate()?;
    if neg_trials == 0 {
        return Err(OpcertError::BadParameter {
            what: "negative control needs at least one trial".into(),
        });
    }
    if dims.is_empty() {
        return Err(OpcertError::BadParameter {
            what: "suite needs at least one dimension".into(),
        });
    }
    let start = Instant::now();
    let mut reports = Vec::new();
    let mut positives_pass = true;
    for id in POSITIVE_MAPS {
        let grid: Vec<f64> = match p_override {
            Some(p) => vec![p],
            None => default_p_grid(id).to_vec(),
        };
        for &p in &grid {
            for &dim in dims {
                let r = certify::<f64>(&MapSpec::new(id, p, dim), opts)?;
                positives_pass &= !r.violation;
                reports.push(r);
            }
        }
    }
    let neg_opts = CertifyOptions {
        trials: neg_trials,
        ..opts.clone()
    };
    let neg = certify::<f64>(&MapSpec::new(MapId::NegT4, 4.0, NEG_CONTROL_DIM), &neg_opts)?;
    let negative_fired = neg.violation;
    reports.push(neg);
    let mut checks_pass = true;
    for c in ALL_CHECKS {
        let r = crosscheck(c, opts)?;
        checks_pass &= !r.violation;
        reports.push(r);
    }
    Ok(SuiteReport {
        seed: opts.seed,
        passed: positives_pass && negative_fired && checks_pass,
        reports,
        wall_time_ms: start.elapsed().as_millis() as u64,
    })
}

impl Serialize for MapId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MapId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
