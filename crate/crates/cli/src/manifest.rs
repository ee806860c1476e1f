use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

/// Everything needed to rerun a command: the argument vector, the resolved
/// configuration, and where the outputs went.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    /// Extra results worth keeping next to the outputs (status, sizes).
    pub summary: serde_json::Value,
    pub timings: Vec<PhaseTiming>,
}

impl RunManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Wall-clock time per named phase.
#[derive(Debug, Default)]
pub struct Timer {
    phases: Vec<PhaseTiming>,
}

impl Timer {
    pub fn time<R>(&mut self, phase: &str, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        self.phases.push(PhaseTiming { phase: phase.to_string(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    pub fn into_phases(self) -> Vec<PhaseTiming> {
        self.phases
    }
}

/// Default manifest location: next to the first output.
pub fn default_manifest_path(first_output: &Path) -> PathBuf {
    let mut name = first_output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
