//! Output directory handling: artifacts, report and manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ghostdiff::experiments::{ArtifactData, ScenarioReport};
use ghostdiff::io::{scale_sidecar, write_pgm, Table};
use ghostdiff::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";
pub const CONFIG: &str = "config.toml";

/// One record per run, written last.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub scenario: String,
    pub experiment: String,
    pub config_sha256: String,
    pub seed: u64,
    pub frames: u64,
    pub workers: usize,
    pub version: &'static str,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub passed: bool,
    pub failed_assertions: Vec<String>,
}

pub fn config_hash(effective_toml: &str) -> String {
    Sha256::digest(effective_toml.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Create `dir`, refusing to reuse a non-empty directory unless `force`.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(Error::Config {
                key: "--out".into(),
                message: format!("{} exists and is not empty (use --force to overwrite)", dir.display()),
            });
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes files into a directory and remembers their names.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.root.join(name)
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(p, contents)?;
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
        self.text(name, &(text + "\n"))
    }

    pub fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        let p = self.path(&format!("{name}.csv"));
        table.write(&p)
    }

    pub fn report(&mut self, report: &ScenarioReport) -> Result<()> {
        for a in &report.artifacts {
            match &a.data {
                ArtifactData::Table(t) => self.table(&a.name, t)?,
                ArtifactData::Image { values, width, height } => {
                    let p = self.path(&format!("{}.pgm", a.name));
                    write_pgm(&p, values, *width, *height)?;
                    let side = scale_sidecar(&p);
                    self.files
                        .push(side.file_name().unwrap_or_default().to_string_lossy().into_owned());
                }
            }
        }
        self.table("assertions", &assertion_table(report))?;
        self.json(REPORT, report)
    }

    /// Record a file written into a subdirectory by someone else.
    pub fn adopt(&mut self, name: String) {
        self.files.push(name);
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn manifest(
        &mut self,
        report: &ScenarioReport,
        effective_toml: &str,
        workers: usize,
        elapsed: Duration,
    ) -> Result<()> {
        let mut outputs = self.files.clone();
        outputs.push(MANIFEST.to_string());
        let m = RunManifest {
            scenario: report.name.clone(),
            experiment: report.experiment.clone(),
            config_sha256: config_hash(effective_toml),
            seed: report.seed,
            frames: report.frames,
            workers,
            version: env!("CARGO_PKG_VERSION"),
            wall_time_s: elapsed.as_secs_f64(),
            outputs,
            passed: report.passed(),
            failed_assertions: report
                .assertions
                .iter()
                .filter(|a| !a.passed)
                .map(|a| a.name.clone())
                .collect(),
        };
        self.json(MANIFEST, &m)
    }
}

/// Assertion margins: value, bound(s) and pass flag per row.
pub fn assertion_table(report: &ScenarioReport) -> Table {
    let mut t = Table::new(&["index", "value", "threshold", "upper", "passed"]).with_meta("scenario", &report.name);
    for (i, a) in report.assertions.iter().enumerate() {
        t = t.with_meta(&format!("assertion{i}"), format!("{} {}", a.name, a.op));
        t.push(vec![
            i as f64,
            a.value,
            a.threshold,
            a.upper.unwrap_or(f64::NAN),
            if a.passed { 1.0 } else { 0.0 },
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_hex() {
        let h = config_hash("seed = 1\n");
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash("seed = 1\n"));
        assert_ne!(h, config_hash("seed = 2\n"));
    }

    #[test]
    fn refuses_non_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        prepare_dir(dir.path(), false).unwrap();
        fs::write(dir.path().join("x"), "1").unwrap();
        assert!(matches!(prepare_dir(dir.path(), false), Err(Error::Config { .. })));
        prepare_dir(dir.path(), true).unwrap();
    }
}
