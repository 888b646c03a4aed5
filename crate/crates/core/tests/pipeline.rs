//! Pipeline artifacts and the run manifest.

use std::path::Path;

use bunchlab::config::ScenarioConfig;
use bunchlab::pipeline::{run_pipeline, run_single_stage, sha256_hex, Manifest, ARTIFACTS, MANIFEST_JSON, STAGES};
use bunchlab::Error;

fn small_config() -> ScenarioConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/lorentzian_2ghz.toml");
    let mut cfg = ScenarioConfig::load(&path).unwrap();
    cfg.synthesis.duration_s = 2e-6;
    cfg
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_JSON)).unwrap()).unwrap()
}

#[test]
fn manifest_hashes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    run_pipeline(&cfg, dir.path()).unwrap();
    let m = manifest(dir.path());
    assert!(!m.partial);
    assert_eq!(m.stages.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(), STAGES);
    assert!(m.stages.iter().all(|s| s.status == "ok"));
    assert_eq!(m.artifacts.len(), ARTIFACTS.len());
    for name in ARTIFACTS {
        let bytes = std::fs::read(dir.path().join(name)).unwrap();
        assert_eq!(m.artifacts[name], sha256_hex(&bytes), "{name}");
    }
    assert_eq!(m.seeds["master"], cfg.synthesis.seed);
    assert_eq!(m.config_sha256, sha256_hex(cfg.source_text.as_bytes()));
}

#[test]
fn failing_stage_is_named_and_later_stages_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    // Above the 0.1 field-sample occupancy limit: synthesis refuses.
    cfg.synthesis.mean_rate_hz *= 10.0;
    let e = run_pipeline(&cfg, dir.path()).unwrap_err();
    assert!(matches!(e, Error::Stage { stage: "synth", .. }), "{e}");
    assert_eq!(e.exit_code(), 4);
    let m = manifest(dir.path());
    assert!(m.partial);
    let status: Vec<_> = m.stages.iter().map(|s| s.status.as_str()).collect();
    assert_eq!(status, ["ok", "ok", "failed", "skipped", "skipped"]);
    assert!(m.stages[2].error.as_deref().unwrap().contains("occupancy"));
    assert!(m.artifacts.contains_key("spectrum.csv") && !m.artifacts.contains_key("fit.json"));
}

#[test]
fn stage_without_its_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let e = run_single_stage(&small_config(), dir.path(), "correlate").unwrap_err();
    assert!(e.to_string().contains("correlate"), "{e}");
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn stages_in_sequence_equal_the_pipeline() {
    let staged = tempfile::tempdir().unwrap();
    let whole = tempfile::tempdir().unwrap();
    let cfg = small_config();
    for stage in STAGES {
        run_single_stage(&cfg, staged.path(), stage).unwrap();
    }
    run_pipeline(&cfg, whole.path()).unwrap();
    for name in ARTIFACTS {
        assert_eq!(
            std::fs::read(staged.path().join(name)).unwrap(),
            std::fs::read(whole.path().join(name)).unwrap(),
            "{name}"
        );
    }
}
