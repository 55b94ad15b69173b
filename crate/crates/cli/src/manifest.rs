//! Run manifest and output directory bookkeeping.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mfsg_core::format::fmt_f64;
use mfsg_core::{AssumptionReport, RunConfig, TimeGrid};
use serde::Serialize;

/// A named pass/fail check with its measured value and tolerance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value ≤ tolerance`.
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} (tolerance {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            fmt_f64(self.value),
            fmt_f64(self.tolerance)
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridSummary {
    pub t_end: f64,
    pub dt: f64,
    pub num_nodes: usize,
}

impl From<&TimeGrid> for GridSummary {
    fn from(g: &TimeGrid) -> Self {
        Self {
            t_end: g.t_end(),
            dt: g.dt(),
            num_nodes: g.num_nodes(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionEntry {
    pub name: String,
    /// `null` when undecidable from the data alone.
    pub holds: Option<bool>,
    /// `null` when not applicable.
    pub witness: Option<f64>,
    pub detail: String,
}

pub fn assumption_entries(report: &AssumptionReport) -> Vec<AssumptionEntry> {
    report
        .entries()
        .iter()
        .map(|(name, c)| AssumptionEntry {
            name: (*name).into(),
            holds: c.holds,
            witness: c.witness.is_finite().then_some(c.witness),
            detail: c.detail.clone(),
        })
        .collect()
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CacheStats {
    pub solves: usize,
    pub hits: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub mode: Option<String>,
    pub seed: u64,
    /// The resolved configuration in scenario-file syntax.
    pub config: String,
    pub grid: GridSummary,
    pub assumptions: Vec<AssumptionEntry>,
    pub checks: Vec<Check>,
    /// Names of failed checks and failed sweep points.
    pub failures: Vec<String>,
    /// Every emitted file, relative to the output directory, including
    /// the manifest itself.
    pub files: Vec<String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub cache: CacheStats,
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(subcommand: &str, cfg: &RunConfig, grid: &TimeGrid) -> Self {
        Self {
            subcommand: subcommand.into(),
            mode: None,
            seed: cfg.seed,
            config: mfsg_core::to_config_string(cfg),
            grid: grid.into(),
            assumptions: Vec::new(),
            checks: Vec::new(),
            failures: Vec::new(),
            files: Vec::new(),
            timings: BTreeMap::new(),
            cache: CacheStats::default(),
            summary: BTreeMap::new(),
        }
    }

    /// Records a check, listing it as a failure when it does not pass.
    pub fn check(&mut self, c: Check) {
        if !c.passed {
            self.failures.push(c.name.clone());
        }
        self.checks.push(c);
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Output directory that remembers every file written into it.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)
            .with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push(name.into());
        Ok(())
    }

    /// Writes the manifest with the file list completed by the manifest
    /// itself and returns its path.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<PathBuf> {
        self.files.push(MANIFEST_FILE.into());
        manifest.files = self.files.clone();
        let text = serde_json::to_string_pretty(&manifest)?;
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, text + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
