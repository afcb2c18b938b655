use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use plumeseg::config::KvConfig;
use plumeseg::pipeline::{run_pipeline, PipelineConfig};
use plumeseg::Error;

fn config(out: &Path, pairs: &[(&str, &str)]) -> plumeseg::Result<PipelineConfig> {
    let mut kv = KvConfig::parse("")?;
    kv.set("output_dir", out.to_string_lossy());
    for (k, v) in pairs {
        kv.set(*k, *v);
    }
    PipelineConfig::from_kv(kv)
}

fn small_run(out: &Path) -> plumeseg::Result<PipelineConfig> {
    config(
        out,
        &[
            ("seed", "3"),
            ("synth.frames", "10"),
            ("synth.plume.release_frame", "4"),
            ("kmeans.k", "3"),
            ("kmeans.frames", "8..10"),
            ("kmeans.restarts", "2"),
            ("spectral.k", "3"),
            ("spectral.frames", "9"),
            ("spectral.nystrom", "150"),
            ("mbo.frames", "6..10"),
            ("mbo.nystrom", "150"),
            ("mbo.eigs", "40"),
        ],
    )
}

fn file_names(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect()
}

#[test]
fn synth_and_convert_only_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &[("stages", "synth,convert"), ("synth.frames", "6")],
    )
    .unwrap();
    let report = run_pipeline(&cfg).unwrap();
    let names = file_names(dir.path());
    assert!(names.contains("radiance.hsc") && names.contains("emissivity.hsc"));
    assert!(names.contains("signature.csv") && names.contains("truth_0005.pgm"));
    assert!(!names.contains("scores.hsc"));
    assert!(names
        .iter()
        .all(|n| !n.starts_with("kmeans") && !n.starts_with("mbo") && !n.starts_with("amsd")));
    let stages: Vec<&str> = report.timings.iter().map(|(s, _)| s.as_str()).collect();
    assert_eq!(stages, ["synth", "convert"]);

    let csv = fs::read_to_string(dir.path().join("timings.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("stage,seconds"));
    let rows: Vec<(String, f64)> = lines
        .map(|l| {
            let (s, t) = l.split_once(',').unwrap();
            (s.to_string(), t.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|(_, t)| *t >= 0.0));
}

#[test]
fn reruns_are_byte_identical_apart_from_timings() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&small_run(a.path()).unwrap()).unwrap();
    run_pipeline(&small_run(b.path()).unwrap()).unwrap();
    let names = file_names(a.path());
    assert_eq!(names, file_names(b.path()));
    for expected in [
        "scores.hsc",
        "eq_0000.ppm",
        "amsd_detections.csv",
        "kmeans_0009.csv",
        "spectral_0009.csv",
        "mbo_0009.pgm",
        "gl_trace.csv",
    ] {
        assert!(names.contains(expected), "missing {expected}");
    }
    for name in names.iter().filter(|n| *n != "timings.csv") {
        let (x, y) = (
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
        );
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_signature.csv");
    let cfg = config(
        dir.path(),
        &[
            ("stages", "synth,convert,amsd"),
            ("synth.frames", "6"),
            ("amsd.target", missing.to_str().unwrap()),
        ],
    )
    .unwrap();
    let err = run_pipeline(&cfg).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(stage, "amsd"),
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().contains("amsd"));
    let csv = fs::read_to_string(dir.path().join("timings.csv")).unwrap();
    let stages: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(stages, ["synth", "convert", "amsd"]);
}

#[test]
fn bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let needs_k = config(dir.path(), &[]).unwrap_err().to_string();
    assert!(needs_k.contains("kmeans.k"), "{needs_k}");
    let unknown = config(dir.path(), &[("stages", "synth"), ("kmeans.kk", "3")])
        .unwrap_err()
        .to_string();
    assert!(unknown.contains("kmeans.kk"), "{unknown}");
    let synth_unknown = config(dir.path(), &[("stages", "synth"), ("synth.framez", "3")])
        .unwrap_err()
        .to_string();
    assert!(synth_unknown.contains("synth.framez"), "{synth_unknown}");
    assert!(config(dir.path(), &[("stages", "synth,convert,kmeans")]).is_err());
    assert!(config(dir.path(), &[("stages", "synth,midway")])
        .and_then(|c| c.validate())
        .is_err());
    assert!(config(dir.path(), &[("stages", "convert")])
        .and_then(|c| c.validate())
        .is_err());
    assert!(config(dir.path(), &[("stages", "synth,bogus")]).is_err());
}
