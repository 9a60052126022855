//! End-to-end runs against the synthetic fixture: completion with all
//! artifacts, byte-identical reruns, and pre-compute input validation.

use carforge::pipeline::{fixture, load_config, run_pipeline};

#[test]
fn fixture_run_completes_and_emits_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture::write_fixture(dir.path()).unwrap();
    let config = load_config(&fx.config_path).unwrap();
    let manifest = run_pipeline(&config).unwrap();

    assert_eq!(manifest.chosen_asset.as_deref(), Some("car"));
    // the single-material distractor is filtered out before retrieval
    assert_eq!(manifest.retrieval.len(), 1);
    assert_eq!(manifest.frames.len(), 1);
    assert_eq!(manifest.envmaps.len(), 1);
    assert!(manifest.losses.is_some());
    let out = &config.output_dir;
    assert!(out.join("manifest.json").is_file());
    assert!(out.join("composite_0.png").is_file());
    assert!(out.join("envmap_0.pfm").is_file());
    assert!(out.join("graph_windows.json").is_file());

    // window prior must pass through optimization untouched
    let prior = carforge::retrieval::retrieve_material_prior("windows", true).unwrap();
    let optimized = carforge::matgraph::read_graph(&out.join("graph_windows.json")).unwrap();
    assert_eq!(prior.get_theta(), optimized.get_theta());
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture::write_fixture(dir.path()).unwrap();
    let mut config_a = load_config(&fx.config_path).unwrap();
    let mut config_b = config_a.clone();
    config_a.output_dir = dir.path().join("out_a");
    config_b.output_dir = dir.path().join("out_b");
    run_pipeline(&config_a).unwrap();
    run_pipeline(&config_b).unwrap();
    for name in ["manifest.json", "composite_0.png", "envmap_0.pfm"] {
        let a = std::fs::read(config_a.output_dir.join(name)).unwrap();
        let b = std::fs::read(config_b.output_dir.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}

#[test]
fn missing_mask_fails_validation_before_any_compute() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture::write_fixture(dir.path()).unwrap();
    let mut config = load_config(&fx.config_path).unwrap();
    config.masks.push(dir.path().join("inputs/mask_gone.png"));
    config.output_dir = dir.path().join("out_invalid");
    let err = run_pipeline(&config).unwrap_err();
    assert!(err.to_string().contains("does not exist"), "{err}");
    // validation failed before stages ran: no output directory, no manifest
    assert!(!config.output_dir.exists());
}
