//! Content-hash run manifest and staleness checks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vectorize::sha256_hex;

pub const RUN_MANIFEST_FORMAT: &str = "scenefactor-run";
pub const RUN_MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Synth,
    Extract,
    Vectorize,
    Autoencode,
    Cluster,
    Difficulty,
    Split,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Synth,
        Stage::Extract,
        Stage::Vectorize,
        Stage::Autoencode,
        Stage::Cluster,
        Stage::Difficulty,
        Stage::Split,
        Stage::Train,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Extract => "extract",
            Stage::Vectorize => "vectorize",
            Stage::Autoencode => "autoencode",
            Stage::Cluster => "cluster",
            Stage::Difficulty => "difficulty",
            Stage::Split => "split",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Synth => &[],
            Stage::Extract => &[Stage::Synth],
            Stage::Vectorize => &[Stage::Extract],
            Stage::Autoencode => &[Stage::Vectorize],
            Stage::Cluster => &[Stage::Autoencode],
            Stage::Difficulty => &[Stage::Synth, Stage::Extract],
            Stage::Split => &[Stage::Cluster, Stage::Difficulty],
            Stage::Train => &[Stage::Synth, Stage::Vectorize, Stage::Difficulty, Stage::Split],
            Stage::Eval => &[Stage::Synth, Stage::Difficulty, Stage::Split, Stage::Train],
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    pub config_hash: String,
    pub seed: u64,
    /// Relative path to content hash, for every file read.
    pub inputs: BTreeMap<String, String>,
    /// Relative path to content hash, for every file written.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub root_seed: u64,
    pub stages: BTreeMap<Stage, StageEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageStatus {
    UpToDate,
    /// Never run in this directory.
    Missing,
    Stale(String),
}

impl RunManifest {
    pub fn new(root_seed: u64) -> Self {
        RunManifest {
            format: RUN_MANIFEST_FORMAT.into(),
            version: RUN_MANIFEST_VERSION,
            root_seed,
            stages: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<RunManifest> {
        let m: RunManifest = serde_json::from_str(text)?;
        if m.format != RUN_MANIFEST_FORMAT || m.version != RUN_MANIFEST_VERSION {
            return Err(Error::Validation(format!("unsupported run manifest `{}` v{}", m.format, m.version)));
        }
        let bad_path = |p: &String| p.is_empty() || p.starts_with('/') || p.split('/').any(|c| c == "..");
        for (stage, e) in &m.stages {
            if let Some(p) = e.inputs.keys().chain(e.outputs.keys()).find(|p| bad_path(p)) {
                return Err(Error::Validation(format!("stage `{stage}` lists unsafe path `{p}`")));
            }
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Option<RunManifest>> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        RunManifest::from_json(&text).map(Some)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))
    }
}

/// Hash of a file's bytes, `None` if it is missing.
pub fn file_hash(path: &Path) -> Result<Option<String>> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(Some(sha256_hex(&bytes))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Named substream of the root seed.
pub fn substream_seed(root: u64, name: &str) -> u64 {
    let h = sha256_hex(format!("{root}/{name}").as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

/// Status of `stage` given its expected config hash, checking recorded files on disk.
pub fn stage_status(manifest: &RunManifest, dir: &Path, stage: Stage, config_hash: &str) -> Result<StageStatus> {
    let Some(e) = manifest.stages.get(&stage) else {
        return Ok(StageStatus::Missing);
    };
    if e.config_hash != config_hash {
        return Ok(StageStatus::Stale("configuration changed".into()));
    }
    for (p, h) in &e.inputs {
        if file_hash(&dir.join(p))?.as_deref() != Some(h.as_str()) {
            return Ok(StageStatus::Stale(format!("input `{p}` changed")));
        }
    }
    for (p, h) in &e.outputs {
        if file_hash(&dir.join(p))?.as_deref() != Some(h.as_str()) {
            return Ok(StageStatus::Stale(format!("output `{p}` changed or missing")));
        }
    }
    for up in stage.upstream() {
        let Some(u) = manifest.stages.get(up) else {
            return Ok(StageStatus::Stale(format!("upstream `{up}` has not run")));
        };
        if let Some((p, _)) = u.outputs.iter().find(|(p, h)| e.inputs.get(*p).is_some_and(|ih| ih != *h)) {
            return Ok(StageStatus::Stale(format!("upstream `{up}` rewrote `{p}`")));
        }
    }
    Ok(StageStatus::UpToDate)
}
