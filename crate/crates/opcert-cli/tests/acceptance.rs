//! Acceptance gate: every release-blocking check in one target, each test
//! printing a single PASS line (a failed assertion is the FAIL line).
//!
//! Run with `cargo test -p opcert-cli --test acceptance`.

use std::process::Command;
use std::time::Instant;

use opcert::certify::{
    certify, crosscheck, default_p_grid, replay_case, CertificationReport, CertifyOptions, CheckId,
    MapId, MapSpec, NEG_CONTROL_DIM, NEG_CONTROL_TRIALS, SUITE_DIMS,
};
use opcert::perspective::{
    kernel_integral, pf2_apply, KernelId, QuadratureRule, ScalarKernel, DEFAULT_QUADRATURE_NODES,
};
use opcert::Hermitian64;

const MARGIN_FLOOR: f64 = -1e-8;

fn default_opts() -> CertifyOptions {
    CertifyOptions::default()
}

fn scalar(v: f64) -> Hermitian64 {
    serde_json::from_value(serde_json::json!({"dim": 1, "entries": [[[v, 0.0]]]})).unwrap()
}

fn run_grid(maps: &[MapId]) -> Vec<CertificationReport> {
    let opts = default_opts();
    let mut reports = Vec::new();
    for &id in maps {
        for &p in default_p_grid(id) {
            for &dim in &SUITE_DIMS {
                let r = certify::<f64>(&MapSpec::new(id, p, dim), &opts).unwrap();
                reports.push(r);
            }
        }
    }
    reports
}

fn assert_all_within_floor(reports: &[CertificationReport]) {
    for r in reports {
        assert!(
            !r.violation && r.worst_margin >= MARGIN_FLOOR,
            "{} p={} dim={} worst_margin={:e}",
            r.map_id,
            r.p,
            r.dim,
            r.worst_margin
        );
    }
}

#[test]
fn acceptance_1_theorem_suite() {
    let start = Instant::now();
    let maps = [
        MapId::Thm21,
        MapId::Cor23,
        MapId::Thm25,
        MapId::Thm33,
        MapId::Thm34,
        MapId::Thm35,
        MapId::Lieb,
    ];
    let reports = run_grid(&maps);
    assert_all_within_floor(&reports);
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "theorem suite took {elapsed:?}, budget is two minutes"
    );
    println!(
        "acceptance 1 (theorem suite, {} reports, {:.1?}): PASS",
        reports.len(),
        elapsed
    );
}

#[test]
fn acceptance_2_frechet_trace_suite() {
    let reports = run_grid(&[MapId::Thm22, MapId::Cor24]);
    assert_all_within_floor(&reports);
    println!(
        "acceptance 2 (trace-form differential suite, {} reports): PASS",
        reports.len()
    );
}

#[test]
fn acceptance_3_negative_control_fires_and_replays() {
    let opts = CertifyOptions {
        trials: NEG_CONTROL_TRIALS,
        ..default_opts()
    };
    let spec = MapSpec::new(MapId::NegT4, 4.0, NEG_CONTROL_DIM);
    let report = certify::<f64>(&spec, &opts).unwrap();
    assert!(report.violation, "t^4 control failed to produce a witness");
    assert!(report.worst_margin < 0.0);
    // replay from the emitted JSON, not the in-memory struct
    let text = serde_json::to_string(&report).unwrap();
    let parsed: CertificationReport = serde_json::from_str(&text).unwrap();
    let case = parsed
        .worst_case
        .as_ref()
        .expect("violation carries its witness");
    let replayed = replay_case(&spec, DEFAULT_QUADRATURE_NODES, case).unwrap();
    assert!(replayed < 0.0, "replayed margin {replayed:e} not negative");
    assert!(
        (replayed - report.worst_margin).abs() <= 1e-12 * (1.0 + report.worst_margin.abs()),
        "replay drifted: {replayed:e} vs {:e}",
        report.worst_margin
    );
    println!(
        "acceptance 3 (negative control margin {:.3e}, replay match): PASS",
        report.worst_margin
    );
}

#[test]
fn acceptance_4_quadrature_matches_closed_forms() {
    let report = crosscheck(CheckId::Quad, &default_opts()).unwrap();
    assert!(
        !report.violation,
        "worst quadrature deviation {:e} above 1e-9",
        -report.worst_margin
    );
    let rule = QuadratureRule::<f64>::gauss_legendre(DEFAULT_QUADRATURE_NODES).unwrap();
    let k = ScalarKernel::<f64>::new(KernelId::G21, 0.5).unwrap();
    let spot = kernel_integral(&k, &[1.0, 4.0], &rule).unwrap();
    assert!(
        (spot - 7.0 / 3.0).abs() <= 1e-10,
        "spot value {spot} should be 7/3"
    );
    println!(
        "acceptance 4 (quadrature vs closed forms, worst {:.2e}; spot 7/3 off by {:.2e}): PASS",
        -report.worst_margin,
        (spot - 7.0 / 3.0).abs()
    );
}

#[test]
fn acceptance_5_pipeline_matches_f35_kernel() {
    let report = crosscheck(CheckId::Pf2F35, &default_opts()).unwrap();
    assert!(
        !report.violation,
        "worst pipeline deviation {:e} above 1e-8",
        -report.worst_margin
    );
    let rule = QuadratureRule::<f64>::gauss_legendre(DEFAULT_QUADRATURE_NODES).unwrap();
    let spot = pf2_apply(&scalar(4.0), &scalar(1.0), &scalar(1.0), 0.5, &rule).unwrap();
    let v = spot.matrix()[(0, 0)].re;
    assert!((v - 3.0).abs() <= 1e-8, "spot value {v} should be 3");
    println!(
        "acceptance 5 (two-stage perspective vs kernel, worst {:.2e}; spot 3 off by {:.2e}): PASS",
        -report.worst_margin,
        (v - 3.0).abs()
    );
}

#[test]
fn acceptance_6_frechet_matches_finite_differences() {
    let report = crosscheck(CheckId::FdFrechet, &default_opts()).unwrap();
    assert!(
        !report.violation,
        "worst differential deviation {:e} above 1e-5",
        -report.worst_margin
    );
    println!(
        "acceptance 6 (differential vs central differences, worst {:.2e}): PASS",
        -report.worst_margin
    );
}

#[test]
fn acceptance_7_trace_identity_holds() {
    let report = crosscheck(CheckId::TraceIdent, &default_opts()).unwrap();
    assert!(
        !report.violation,
        "worst trace identity deviation {:e} above 1e-10",
        -report.worst_margin
    );
    println!(
        "acceptance 7 (trace form identity, worst {:.2e}): PASS",
        -report.worst_margin
    );
}

fn strip_wall_time(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("wall_time_ms");
            for (_, c) in m.iter_mut() {
                strip_wall_time(c);
            }
        }
        serde_json::Value::Array(a) => {
            for c in a {
                strip_wall_time(c);
            }
        }
        _ => {}
    }
}

#[test]
fn acceptance_8_suite_reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut stripped = Vec::new();
    for name in ["first.json", "second.json"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_opcert"))
            .args(["suite", "--seed", "42", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "suite run exited with {status}");
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        strip_wall_time(&mut v);
        stripped.push(serde_json::to_string_pretty(&v).unwrap());
    }
    assert_eq!(
        stripped[0].as_bytes(),
        stripped[1].as_bytes(),
        "suite reports differ beyond wall time"
    );
    println!(
        "acceptance 8 (deterministic suite, {} bytes compared): PASS",
        stripped[0].len()
    );
}
