//! Config files and their merge with command-line flags.

use std::path::Path;

use objsplat::segsel::SelectParams;
use objsplat::styler::StyleParams;
use objsplat::synth::SynthSpec;
use objsplat::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

/// Everything a run can be configured with. Config files use the same
/// layout; command-line flags override whatever the file sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub select: SelectParams,
    pub style: StyleParams,
}

pub fn load(path: &Path) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// What a subcommand actually runs with, printed before it starts.
#[derive(Debug, Serialize)]
pub struct Resolved<'a, T: Serialize> {
    pub command: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub settings: &'a T,
}

pub fn render<T: Serialize>(r: &Resolved<'_, T>) -> String {
    toml::to_string(r).unwrap_or_else(|e| format!("<unprintable config: {e}>\n"))
}

pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
