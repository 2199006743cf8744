//! The shipped scenario files parse, and bad input names the offending key.

use std::path::PathBuf;

use ghostdiff::scenario::ScenarioConfig;
use ghostdiff::Error;

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str, overrides: &[(&str, &str)]) -> ghostdiff::Result<ScenarioConfig> {
    let o: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    ScenarioConfig::from_file(&dir().join(name), &o)
}

fn config_key(e: Error) -> String {
    match e {
        Error::Config { key, .. } => key,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn every_scenario_parses() {
    let mut seen = 0;
    for entry in std::fs::read_dir(dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ScenarioConfig::from_file(&path, &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(format!("{}.toml", cfg.name), path.file_name().unwrap().to_string_lossy());
            seen += 1;
        }
    }
    assert!(seen >= 8);
}

#[test]
fn oracle_file_matches_builtin() {
    let file = load("oracle_small.toml", &[]).unwrap();
    let builtin = ScenarioConfig::oracle_default();
    assert_eq!(file.grid, builtin.grid);
    assert_eq!(file.source, builtin.source);
    assert_eq!(file.frames, builtin.frames);
    assert_eq!(file.seed, builtin.seed);
    assert_eq!(file.analysis, builtin.analysis);
}

#[test]
fn overrides_take_units() {
    let cfg = load("ghost_phase_1d.toml", &[("source.D0", "1mm"), ("frames", "50")]).unwrap();
    assert!((cfg.source.d0 - 1e-3).abs() < 1e-15);
    assert_eq!(cfg.frames, 50);
    let cfg = load("transition_2d.toml", &[("analysis.d0_list", r#"["2mm", "0.2mm"]"#)]).unwrap();
    assert_eq!(cfg.analysis.d0_list.len(), 2);
    assert!((cfg.analysis.d0_list[1] - 2e-4).abs() < 1e-15);
}

#[test]
fn bad_values_name_their_key() {
    let key = config_key(load("ghost_phase_1d.toml", &[("grid.dx", "five")]).unwrap_err());
    assert!(key.contains("dx"), "{key}");
    let key = config_key(load("ghost_phase_1d.toml", &[("source.colour", "red")]).unwrap_err());
    assert!(key.contains("colour"), "{key}");
    let key = config_key(load("ghost_phase_1d.toml", &[("experiment", "holography")]).unwrap_err());
    assert!(key.contains("experiment"), "{key}");
}
