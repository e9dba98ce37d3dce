//! Staged, content-addressed pipeline over a run directory.
//!
//! Every stage records the hash of each file it read and wrote. A stage is up to
//! date only when its configuration slice, its inputs, and its outputs still match.

pub mod config;
pub mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::PipelineConfig;
pub use manifest::{file_hash, stage_status, substream_seed, RunManifest, Stage, StageEntry, StageStatus};

use crate::clustering::{assign_contexts, kmeans, silhouette, write_labels, read_labels, ContextModel, ContextRegistry, LatentRow};
use crate::difficulty::{context_difficulty, kalman_difficulty, read_difficulties, write_difficulties, DifficultyRecord};
use crate::error::{Error, Result};
use crate::evaluation::{gap_report, relative_change, stratified_report, GapReport, Metric, Metrics, Stratified};
use crate::features::{extract_agent, EgoFeatureSet, InteractionFeatureSet};
use crate::nn::{train_autoencoder, Autoencoder, AutoencoderConfig};
use crate::predictor::{
    build_sample, check_no_leakage, train_predictor, write_predictions, LatentProvenance, Method, PredictorCheckpoint,
    PredictorSample,
};
use crate::scenario::{parse_corpus, serialize_scenario, synthesize_corpus, AgentKey, AgentType, Scenario};
use crate::splits::{construct_split, verify_split, Assignment, SplitConfig, SplitManifest, SplitReport};
use crate::vectorize::{build_vector, sha256_hex, vector_schema, Axis, FeatureRow, FeatureTable, Features};

pub const CORPUS: &str = "corpus.jsonl";
pub const FEATURES: &str = "features.jsonl";
pub const LATENTS: &str = "latents.csv";
pub const CONTEXTS: &str = "contexts.json";
pub const LABELS: &str = "labels.csv";
pub const CLUSTER_REPORT: &str = "cluster_report.json";
pub const DIFFICULTY: &str = "difficulty.csv";
pub const CONTEXT_DIFFICULTY: &str = "context_difficulty.json";
pub const SPLIT: &str = "split.json";
pub const SPLIT_REPORT: &str = "split_report.json";
pub const PROVENANCE: &str = "train/provenance.json";
pub const METRICS: &str = "eval/metrics.csv";
pub const GAP_CSV: &str = "eval/gap_report.csv";
pub const GAP_TEXT: &str = "eval/gap_report.txt";
pub const SUMMARY: &str = "eval/summary.json";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

pub fn vectors_file(axis: Axis) -> String {
    format!("vectors_{}.csv", axis.name())
}

fn ae_file(prefix: &str, axis: Axis, t: AgentType) -> String {
    format!("{prefix}/ae_{}_{}.json", axis.name(), t.name())
}

pub fn predictor_file(m: Method) -> String {
    format!("train/predictor_{}.json", m.name())
}

const AXES: [Axis; 2] = [Axis::Ego, Axis::Social];

/// Extracted features of one focal agent, one JSON line each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub key: AgentKey,
    pub agent_type: AgentType,
    pub ego: EgoFeatureSet,
    pub social: InteractionFeatureSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractSkip {
    pub key: AgentKey,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStat {
    pub axis: Axis,
    pub agent_type: AgentType,
    pub fit_points: usize,
    pub holdout_points: usize,
    pub inertia: f64,
    pub iterations: usize,
    /// Silhouette of the holdout points under the fitted centroids; `None` if undefined.
    pub holdout_silhouette: Option<f64>,
    pub cluster_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationReport {
    pub seen: Stratified,
    pub unseen: Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub split: SplitConfig,
    pub manifest_hash: String,
    pub methods: BTreeMap<Method, PopulationReport>,
    pub gap: GapReport,
}

/// File reads and writes of one stage, relative to the run directory.
struct StageIo<'a> {
    dir: &'a Path,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> StageIo<'a> {
    fn new(dir: &'a Path) -> Self {
        StageIo {
            dir,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn read(&mut self, rel: &str) -> Result<Vec<u8>> {
        let path = self.dir.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.inputs.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn read_text(&mut self, rel: &str) -> Result<String> {
        String::from_utf8(self.read(rel)?).map_err(|e| Error::Serde(format!("{rel}: {e}")))
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))? + "\n";
        self.write(rel, text.as_bytes())
    }
}

/// A run directory together with its resolved configuration.
pub struct Run {
    pub dir: PathBuf,
    pub config: PipelineConfig,
    pub manifest: RunManifest,
}

impl Run {
    /// Opens `dir`, creating it if needed; an existing manifest is kept.
    pub fn open(dir: impl Into<PathBuf>, config: PipelineConfig) -> Result<Run> {
        let dir = dir.into();
        config.validate()?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let manifest = match RunManifest::load(&dir)? {
            Some(m) if m.root_seed == config.seed => m,
            _ => RunManifest::new(config.seed),
        };
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, config.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(Run { dir, config, manifest })
    }

    pub fn seed(&self, stage: Stage) -> u64 {
        substream_seed(self.config.seed, stage.name())
    }

    /// Hash of the configuration slice `stage` depends on.
    pub fn config_hash(&self, stage: Stage) -> String {
        let c = &self.config;
        let slice = match stage {
            Stage::Synth => serde_json::json!({ "synth": c.synth, "timing": c.timing }),
            Stage::Extract => serde_json::json!({ "timing": c.timing, "features": c.features }),
            Stage::Vectorize => serde_json::json!({ "dt": c.timing.dt }),
            Stage::Autoencode => serde_json::json!({ "autoencoder": c.autoencoder }),
            Stage::Cluster => serde_json::json!({ "cluster": c.cluster }),
            Stage::Difficulty => serde_json::json!({ "timing": c.timing, "kalman": c.kalman }),
            Stage::Split => serde_json::json!({ "split": c.split, "k": c.cluster.k }),
            Stage::Train => serde_json::json!({
                "train": c.train, "timing": c.timing, "features": c.features, "bins": c.eval.bins,
            }),
            Stage::Eval => serde_json::json!({ "eval": c.eval }),
        };
        let seed = self.seed(stage);
        sha256_hex(format!("{seed}:{slice}").as_bytes())
    }

    pub fn status(&self, stage: Stage) -> Result<StageStatus> {
        stage_status(&self.manifest, &self.dir, stage, &self.config_hash(stage))
    }

    pub fn status_all(&self) -> Result<Vec<(Stage, StageStatus)>> {
        Stage::ALL.iter().map(|&s| Ok((s, self.status(s)?))).collect()
    }

    /// Runs one stage; every upstream stage must be up to date.
    pub fn run_stage(&mut self, stage: Stage) -> Result<()> {
        for &up in stage.upstream() {
            match self.status(up)? {
                StageStatus::UpToDate => {}
                StageStatus::Missing => {
                    return Err(Error::Stale {
                        stage: up.name().into(),
                        reason: "it has not run in this directory".into(),
                    })
                }
                StageStatus::Stale(reason) => return Err(Error::Stale { stage: up.name().into(), reason }),
            }
        }
        let mut io = StageIo::new(&self.dir);
        let seed = self.seed(stage);
        match stage {
            Stage::Synth => stage_synth(&self.config, seed, &mut io)?,
            Stage::Extract => stage_extract(&self.config, &mut io)?,
            Stage::Vectorize => stage_vectorize(&self.config, &mut io)?,
            Stage::Autoencode => stage_autoencode(&self.config, seed, &mut io)?,
            Stage::Cluster => stage_cluster(&self.config, seed, &mut io)?,
            Stage::Difficulty => stage_difficulty(&self.config, &mut io)?,
            Stage::Split => stage_split(&self.config, seed, &mut io)?,
            Stage::Train => stage_train(&self.config, seed, &mut io)?,
            Stage::Eval => stage_eval(&self.config, &mut io)?,
        }
        let entry = StageEntry {
            config_hash: self.config_hash(stage),
            seed,
            inputs: io.inputs,
            outputs: io.outputs,
        };
        self.manifest.stages.insert(stage, entry);
        self.manifest.save(&self.dir)
    }

    /// Runs every stage that is missing or stale, in order; returns the stages that ran.
    pub fn run_all(&mut self) -> Result<Vec<Stage>> {
        let mut ran = Vec::new();
        for stage in Stage::ALL {
            if self.status(stage)? != StageStatus::UpToDate {
                self.run_stage(stage)?;
                ran.push(stage);
            }
        }
        Ok(ran)
    }
}

fn load_corpus(io: &mut StageIo<'_>) -> Result<Vec<Scenario>> {
    parse_corpus(&io.read_text(CORPUS)?)
}

fn scenario_index(corpus: &[Scenario]) -> Result<BTreeMap<&str, &Scenario>> {
    let idx: BTreeMap<&str, &Scenario> = corpus.iter().map(|s| (s.scenario_id.as_str(), s)).collect();
    if idx.len() != corpus.len() {
        return Err(Error::Validation("duplicate scenario id in corpus".into()));
    }
    Ok(idx)
}

fn load_features(io: &mut StageIo<'_>) -> Result<Vec<FeatureRecord>> {
    io.read_text(FEATURES)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                field: "record".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

fn load_table(io: &mut StageIo<'_>, axis: Axis, dt: f64) -> Result<FeatureTable> {
    let names = vector_schema(axis, dt).dim_names();
    FeatureTable::read_csv(axis, io.read(&vectors_file(axis))?.as_slice(), Some(&names))
}

fn load_difficulty(io: &mut StageIo<'_>) -> Result<Vec<DifficultyRecord>> {
    Ok(read_difficulties(io.read(DIFFICULTY)?.as_slice())?.1)
}

fn load_split(io: &mut StageIo<'_>) -> Result<SplitManifest> {
    SplitManifest::from_json(&io.read_text(SPLIT)?)
}

fn stage_synth(c: &PipelineConfig, seed: u64, io: &mut StageIo<'_>) -> Result<()> {
    let corpus = match &c.synth.corpus {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_corpus(&text)?
        }
        None => synthesize_corpus(&c.synth_config(), seed)?,
    };
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    scenario_index(&corpus)?;
    let mut buf = String::new();
    for s in &corpus {
        s.check_timing(&c.timing)?;
        buf.push_str(&serialize_scenario(s));
        buf.push('\n');
    }
    io.write(CORPUS, buf.as_bytes())
}

fn stage_extract(c: &PipelineConfig, io: &mut StageIo<'_>) -> Result<()> {
    let corpus = load_corpus(io)?;
    let mut lines = String::new();
    let mut skipped = Vec::new();
    for s in &corpus {
        for t in s.focal_tracks() {
            let key = AgentKey::new(&s.scenario_id, &t.id);
            match extract_agent(s, &t.id, &c.timing, &c.features) {
                Ok((ego, social)) => {
                    let rec = FeatureRecord {
                        key,
                        agent_type: t.agent_type,
                        ego,
                        social,
                    };
                    lines.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Serde(e.to_string()))?);
                    lines.push('\n');
                }
                Err(e @ (Error::MissingPose(_) | Error::InsufficientHistory { .. })) => skipped.push(ExtractSkip {
                    key,
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    if lines.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    io.write(FEATURES, lines.as_bytes())?;
    io.write_json("extract_skipped.json", &skipped)
}

fn stage_vectorize(c: &PipelineConfig, io: &mut StageIo<'_>) -> Result<()> {
    let records = load_features(io)?;
    for axis in AXES {
        let schema = vector_schema(axis, c.timing.dt);
        let rows = records
            .iter()
            .map(|r| {
                let f = match axis {
                    Axis::Ego => Features::Ego(&r.ego),
                    Axis::Social => Features::Social(&r.social),
                };
                Ok(FeatureRow {
                    key: r.key.clone(),
                    agent_type: r.agent_type,
                    values: build_vector(f, &schema)?.values,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let table = FeatureTable {
            axis,
            names: schema.dim_names(),
            rows,
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf)?;
        io.write(&vectors_file(axis), &buf)?;
    }
    Ok(())
}

/// Trains one autoencoder per (axis, type) on the given rows and writes them under `prefix`.
fn train_registry(
    tables: &[FeatureTable; 2],
    keep: impl Fn(&AgentKey) -> bool,
    cfg: &AutoencoderConfig,
    dt: f64,
    seed: u64,
    prefix: &str,
    io: &mut StageIo<'_>,
) -> Result<BTreeMap<(Axis, AgentType), Autoencoder>> {
    let mut out = BTreeMap::new();
    for (ai, table) in tables.iter().enumerate() {
        let schema = vector_schema(table.axis, dt);
        for t in AgentType::ALL {
            let raw: Vec<Vec<f64>> = table
                .rows
                .iter()
                .filter(|r| r.agent_type == t && keep(&r.key))
                .map(|r| r.values.clone())
                .collect();
            if raw.is_empty() {
                continue;
            }
            let s = substream_seed(seed, &format!("{}/{}", table.axis.name(), t.name()));
            let trained = train_autoencoder(&raw, &schema, t, cfg, s)?;
            io.write(&ae_file(prefix, table.axis, t), trained.model.to_json(s).as_bytes())?;
            out.insert((AXES[ai], t), trained.model);
        }
    }
    Ok(out)
}

fn latent_rows(
    tables: &[FeatureTable; 2],
    models: &BTreeMap<(Axis, AgentType), Autoencoder>,
) -> Result<Vec<LatentRow>> {
    let mut enc: [BTreeMap<AgentKey, Vec<f64>>; 2] = [BTreeMap::new(), BTreeMap::new()];
    let mut types = BTreeMap::new();
    for (ai, table) in tables.iter().enumerate() {
        for t in AgentType::ALL {
            let rows: Vec<&FeatureRow> = table.rows.iter().filter(|r| r.agent_type == t).collect();
            if rows.is_empty() {
                continue;
            }
            let m = models.get(&(table.axis, t)).ok_or_else(|| {
                Error::Registry(format!("no {} autoencoder for {}", table.axis.name(), t.name()))
            })?;
            let raw: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
            let z = m.encode(&raw)?;
            for (r, zr) in rows.iter().zip(z.rows()) {
                enc[ai].insert(r.key.clone(), zr.to_vec());
                types.insert(r.key.clone(), r.agent_type);
            }
        }
    }
    types
        .into_iter()
        .map(|(key, agent_type)| {
            let ego = enc[0].remove(&key);
            let social = enc[1].remove(&key);
            match (ego, social) {
                (Some(ego), Some(social)) => Ok(LatentRow {
                    key,
                    agent_type,
                    ego,
                    social,
                }),
                _ => Err(Error::Join(format!("{key} lacks a vector on one axis"))),
            }
        })
        .collect()
}

fn write_latents(rows: &[LatentRow]) -> Result<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    let width = rows.first().map_or(0, |r| r.ego.len());
    let mut header: Vec<String> = ["scenario_id", "agent_id", "agent_type", "axis"].map(String::from).to_vec();
    header.extend((0..width).map(|i| format!("z{i}")));
    wr.write_record(&header)?;
    for r in rows {
        for (axis, z) in [(Axis::Ego, &r.ego), (Axis::Social, &r.social)] {
            let mut rec = vec![
                r.key.scenario_id.clone(),
                r.key.agent_id.clone(),
                r.agent_type.name().to_string(),
                axis.name().to_string(),
            ];
            rec.extend(z.iter().map(|v| format!("{v:?}")));
            wr.write_record(&rec)?;
        }
    }
    wr.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

/// Parses a latent dump written by the autoencode stage.
pub fn read_latents<R: std::io::Read>(r: R) -> Result<Vec<LatentRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    if header.len() < 5 || header.iter().take(4).ne(["scenario_id", "agent_id", "agent_type", "axis"]) {
        return Err(Error::Layout("latent table must start with scenario_id,agent_id,agent_type,axis".into()));
    }
    let mut partial: BTreeMap<AgentKey, (AgentType, Option<Vec<f64>>, Option<Vec<f64>>)> = BTreeMap::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let err = |field: &str, message: String| Error::Parse {
            line,
            field: field.into(),
            message,
        };
        if rec.len() != header.len() {
            return Err(err("row", format!("{} columns, header has {}", rec.len(), header.len())));
        }
        let key = AgentKey::new(&rec[0], &rec[1]);
        let t: AgentType = rec[2].parse().map_err(|e: Error| err("agent_type", e.to_string()))?;
        let z = rec
            .iter()
            .skip(4)
            .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| err("z", "non-finite or malformed latent value".into()))?;
        let slot = partial.entry(key).or_insert((t, None, None));
        if slot.0 != t {
            return Err(err("agent_type", "agent type differs between axes".into()));
        }
        let target = match &rec[3] {
            "ego" => &mut slot.1,
            "social" => &mut slot.2,
            other => return Err(err("axis", format!("unknown axis `{other}`"))),
        };
        if target.replace(z).is_some() {
            return Err(err("axis", "duplicate latent row".into()));
        }
    }
    partial
        .into_iter()
        .map(|(key, (agent_type, ego, social))| match (ego, social) {
            (Some(ego), Some(social)) => Ok(LatentRow {
                key,
                agent_type,
                ego,
                social,
            }),
            _ => Err(Error::Join(format!("{key} lacks a latent on one axis"))),
        })
        .collect()
}

fn stage_autoencode(c: &PipelineConfig, seed: u64, io: &mut StageIo<'_>) -> Result<()> {
    let tables = [load_table(io, Axis::Ego, c.timing.dt)?, load_table(io, Axis::Social, c.timing.dt)?];
    let models = train_registry(&tables, |_| true, &c.autoencoder, c.timing.dt, seed, "models", io)?;
    let rows = latent_rows(&tables, &models)?;
    io.write(LATENTS, &write_latents(&rows)?)
}

fn stage_cluster(c: &PipelineConfig, seed: u64, io: &mut StageIo<'_>) -> Result<()> {
    let rows = read_latents(io.read(LATENTS)?.as_slice())?;
    let k = c.cluster.k;
    let mut registry = ContextRegistry::new(k);
    let mut stats = Vec::new();
    for axis in AXES {
        for t in AgentType::ALL {
            let pts: Vec<&Vec<f64>> = rows
                .iter()
                .filter(|r| r.agent_type == t)
                .map(|r| match axis {
                    Axis::Ego => &r.ego,
                    Axis::Social => &r.social,
                })
                .collect();
            if pts.is_empty() {
                continue;
            }
            let s = substream_seed(seed, &format!("{}/{}", axis.name(), t.name()));
            let mut order: Vec<usize> = (0..pts.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
            let n_hold = ((pts.len() as f64) * c.cluster.holdout_fraction).floor() as usize;
            let (hold, fit) = order.split_at(n_hold);
            let to_matrix = |idx: &[usize]| {
                let w = pts[0].len();
                Array2::from_shape_fn((idx.len(), w), |(i, d)| pts[idx[i]][d])
            };
            let fit_m = to_matrix(fit);
            let km = kmeans(&fit_m, k, s)?;
            let model = ContextModel {
                axis,
                agent_type: t,
                centroids: km.centroids.clone(),
            };
            let hold_m = to_matrix(hold);
            let hold_labels: Vec<usize> = hold_m.rows().into_iter().map(|r| model.assign(r)).collect();
            let distinct: BTreeSet<usize> = hold_labels.iter().copied().collect();
            let holdout_silhouette = if distinct.len() >= 2 {
                Some(silhouette(&hold_m, &hold_labels)?)
            } else {
                None
            };
            let mut cluster_sizes = vec![0; k];
            for &a in &km.assignments {
                cluster_sizes[a] += 1;
            }
            stats.push(ClusterStat {
                axis,
                agent_type: t,
                fit_points: fit.len(),
                holdout_points: hold.len(),
                inertia: km.inertia(),
                iterations: km.iterations,
                holdout_silhouette,
                cluster_sizes,
            });
            registry.insert(model)?;
        }
    }
    let labels = assign_contexts(&rows, &registry)?;
    let mut buf = Vec::new();
    write_labels(&labels, &mut buf)?;
    io.write_json(CONTEXTS, &registry)?;
    io.write(LABELS, &buf)?;
    io.write_json(CLUSTER_REPORT, &stats)
}

fn stage_difficulty(c: &PipelineConfig, io: &mut StageIo<'_>) -> Result<()> {
    let corpus = load_corpus(io)?;
    let idx = scenario_index(&corpus)?;
    let features = load_features(io)?;
    let records = features
        .iter()
        .map(|f| {
            let s = idx
                .get(f.key.scenario_id.as_str())
                .ok_or_else(|| Error::Join(format!("{} has no scenario in the corpus", f.key)))?;
            let track = s
                .agent(&f.key.agent_id)
                .ok_or_else(|| Error::Join(format!("{} has no track in the corpus", f.key)))?;
            match kalman_difficulty(f.key.clone(), track, &c.timing, &c.kalman) {
                Err(Error::InsufficientHistory { .. }) => Ok(DifficultyRecord {
                    key: f.key.clone(),
                    fde: vec![None; c.kalman.horizons.len()],
                    difficulty: None,
                }),
                other => other,
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_difficulties(&records, &c.kalman.horizons, &mut buf)?;
    io.write(DIFFICULTY, &buf)
}

pub fn split_config(c: &PipelineConfig, seed: u64) -> SplitConfig {
    SplitConfig {
        setting: c.split.setting,
        test_fraction: c.split.test_fraction,
        val_fraction: c.split.val_fraction,
        seed,
    }
}

fn stage_split(c: &PipelineConfig, seed: u64, io: &mut StageIo<'_>) -> Result<()> {
    let labels = read_labels(io.read(LABELS)?.as_slice())?;
    let records = load_difficulty(io)?;
    let scored: BTreeSet<&AgentKey> = records.iter().filter(|r| r.difficulty.is_some()).map(|r| &r.key).collect();
    let labels: Vec<_> = labels.into_iter().filter(|l| scored.contains(&l.key)).collect();
    let records: Vec<DifficultyRecord> = records.into_iter().filter(|r| r.difficulty.is_some()).collect();
    let contexts = AgentType::ALL.len() * c.cluster.k;
    let ctx = context_difficulty(&labels, &records, contexts)?;
    let manifest = construct_split(&labels, &ctx, &split_config(c, seed))?;
    let report = verify_split(&manifest, &records);
    io.write_json(CONTEXT_DIFFICULTY, &ctx)?;
    io.write(SPLIT, manifest.to_json().as_bytes())?;
    io.write_json(SPLIT_REPORT, &report)?;
    report.into_result().map(|_| ())
}

fn difficulty_map(records: &[DifficultyRecord]) -> BTreeMap<AgentKey, f64> {
    records.iter().filter_map(|r| r.difficulty.map(|d| (r.key.clone(), d))).collect()
}

/// Predictor samples of every assigned agent, in manifest order.
fn build_samples(
    c: &PipelineConfig,
    corpus: &[Scenario],
    records: &[DifficultyRecord],
    manifest: &SplitManifest,
) -> Result<Vec<(Assignment, PredictorSample)>> {
    let idx = scenario_index(corpus)?;
    let kalman: BTreeMap<&AgentKey, &Vec<Option<f64>>> = records.iter().map(|r| (&r.key, &r.fde)).collect();
    manifest
        .assignments
        .iter()
        .map(|a| {
            let s = idx
                .get(a.key.scenario_id.as_str())
                .ok_or_else(|| Error::Join(format!("{} has no scenario in the corpus", a.key)))?;
            let k = kalman
                .get(&a.key)
                .ok_or_else(|| Error::Join(format!("{} has no difficulty record", a.key)))?;
            let sample = build_sample(s, &a.key.agent_id, &c.timing, &c.features, c.train.predictor.neighbors, (*k).clone())?;
            Ok((a.split, sample))
        })
        .collect()
}

fn attach_latents(samples: &mut [(Assignment, PredictorSample)], rows: &[LatentRow]) -> Result<()> {
    let by_key: BTreeMap<&AgentKey, &LatentRow> = rows.iter().map(|r| (&r.key, r)).collect();
    for (_, s) in samples.iter_mut() {
        let r = by_key
            .get(&s.key)
            .ok_or_else(|| Error::Join(format!("{} has no gating latent", s.key)))?;
        s.latent = r.ego.iter().chain(&r.social).copied().collect();
    }
    Ok(())
}

fn load_gating_latents(c: &PipelineConfig, io: &mut StageIo<'_>) -> Result<Vec<LatentRow>> {
    let tables = [load_table(io, Axis::Ego, c.timing.dt)?, load_table(io, Axis::Social, c.timing.dt)?];
    let mut models = BTreeMap::new();
    for axis in AXES {
        for t in AgentType::ALL {
            if !tables.iter().any(|tb| tb.rows.iter().any(|r| r.agent_type == t)) {
                continue;
            }
            let (m, _) = Autoencoder::from_json(&io.read_text(&ae_file("train", axis, t))?)?;
            models.insert((axis, t), m);
        }
    }
    latent_rows(&tables, &models)
}

fn stage_train(c: &PipelineConfig, seed: u64, io: &mut StageIo<'_>) -> Result<()> {
    let corpus = load_corpus(io)?;
    let records = load_difficulty(io)?;
    let manifest = load_split(io)?;
    let train_keys: BTreeSet<AgentKey> = manifest.keys(Assignment::Train).into_iter().collect();
    let mut samples = build_samples(c, &corpus, &records, &manifest)?;

    let gated = c.train.methods.iter().any(|m| m.flags().0);
    let fingerprint = if gated {
        let tables = [load_table(io, Axis::Ego, c.timing.dt)?, load_table(io, Axis::Social, c.timing.dt)?];
        let used: BTreeSet<AgentKey> = tables[0].rows.iter().filter(|r| train_keys.contains(&r.key)).map(|r| r.key.clone()).collect();
        let ae_seed = substream_seed(seed, "latent_autoencoder");
        let models = train_registry(
            &tables,
            |k| train_keys.contains(k),
            &c.train.latent_autoencoder,
            c.timing.dt,
            ae_seed,
            "train",
            io,
        )?;
        let provenance = LatentProvenance::new(&manifest, &used);
        let fp = check_no_leakage(&provenance, &manifest)?;
        io.write_json(PROVENANCE, &provenance)?;
        attach_latents(&mut samples, &latent_rows(&tables, &models)?)?;
        Some(fp)
    } else {
        None
    };

    let dmap = difficulty_map(&records);
    let train: Vec<&PredictorSample> = samples.iter().filter(|(a, _)| *a == Assignment::Train).map(|(_, s)| s).collect();
    let val: Vec<&PredictorSample> = samples.iter().filter(|(a, _)| *a == Assignment::Val).map(|(_, s)| s).collect();
    for &m in &c.train.methods {
        let cfg = c.train.predictor.for_method(m);
        let s = substream_seed(seed, m.name());
        let trained = train_predictor(&train, &val, &dmap, &c.eval.bins, &cfg, s)?;
        let ckpt = PredictorCheckpoint {
            format: crate::predictor::CHECKPOINT_FORMAT.into(),
            version: crate::predictor::CHECKPOINT_VERSION,
            method: m,
            seed: s,
            manifest_hash: manifest.hash(),
            latent_fingerprint: if m.flags().0 { fingerprint.clone() } else { None },
            config: cfg,
            selected_epoch: trained.selected_epoch,
            log: trained.log,
            model: trained.model,
        };
        io.write(&predictor_file(m), ckpt.to_json().as_bytes())?;
    }
    Ok(())
}

/// Loads a checkpoint and rejects it unless it was trained against `manifest`.
pub fn load_checkpoint(text: &str, manifest: &SplitManifest, provenance: Option<&LatentProvenance>) -> Result<PredictorCheckpoint> {
    let ckpt = PredictorCheckpoint::from_json(text)?;
    if ckpt.manifest_hash != manifest.hash() {
        return Err(Error::Contract(format!("{} checkpoint was trained on a different split", ckpt.method)));
    }
    if let Some(fp) = &ckpt.latent_fingerprint {
        let prov = provenance.ok_or_else(|| Error::Contract("gated checkpoint needs latent provenance".into()))?;
        if check_no_leakage(prov, manifest)? != *fp {
            return Err(Error::Contract("checkpoint latent fingerprint does not match the provenance".into()));
        }
    }
    Ok(ckpt)
}

fn metrics_csv(setting: &str, reports: &BTreeMap<Method, PopulationReport>) -> Result<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(["setting", "method", "population", "bin", "count", "ade", "fde", "brier_fde"])?;
    let fmt = |m: Option<Metrics>| match m {
        Some(m) => [format!("{:?}", m.ade), format!("{:?}", m.fde), format!("{:?}", m.brier_fde)],
        None => [String::new(), String::new(), String::new()],
    };
    for (method, r) in reports {
        for (pop, s) in [("seen", &r.seen), ("unseen", &r.unseen)] {
            for b in &s.bins {
                let [a, f, bf] = fmt(b.metrics);
                wr.write_record([setting, method.name(), pop, &b.label, &b.count.to_string(), &a, &f, &bf])?;
            }
            let [a, f, bf] = fmt(s.balanced);
            wr.write_record([setting, method.name(), pop, "balanced", &s.count.to_string(), &a, &f, &bf])?;
        }
    }
    wr.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

fn stage_eval(c: &PipelineConfig, io: &mut StageIo<'_>) -> Result<()> {
    let corpus = load_corpus(io)?;
    let records = load_difficulty(io)?;
    let manifest = load_split(io)?;
    let dmap = difficulty_map(&records);
    let ckpts = c
        .train
        .methods
        .iter()
        .map(|&m| Ok(PredictorCheckpoint::from_json(&io.read_text(&predictor_file(m))?)?))
        .collect::<Result<Vec<_>>>()?;
    let provenance: Option<LatentProvenance> = if ckpts.iter().any(|k| k.latent_fingerprint.is_some()) {
        Some(serde_json::from_str(&io.read_text(PROVENANCE)?)?)
    } else {
        None
    };
    let mut samples = build_samples(c, &corpus, &records, &manifest)?;
    if provenance.is_some() {
        attach_latents(&mut samples, &load_gating_latents(c, io)?)?;
    }
    let val: Vec<&PredictorSample> = samples.iter().filter(|(a, _)| *a == Assignment::Val).map(|(_, s)| s).collect();
    let test: Vec<&PredictorSample> = samples.iter().filter(|(a, _)| *a == Assignment::Test).map(|(_, s)| s).collect();

    let mut reports = BTreeMap::new();
    for ckpt in ckpts {
        let text = ckpt.to_json();
        let ckpt = load_checkpoint(&text, &manifest, provenance.as_ref())?;
        let model = &ckpt.model;
        let crit = ckpt.config.best_mode;
        let seen = stratified_report(&model.evaluate(&val, crit)?, &dmap, &c.eval.bins)?;
        let unseen = stratified_report(&model.evaluate(&test, crit)?, &dmap, &c.eval.bins)?;
        if c.eval.write_predictions {
            let all: Vec<&PredictorSample> = val.iter().chain(&test).copied().collect();
            let mut buf = Vec::new();
            write_predictions(&all, &model.predict(&all)?, &mut buf)?;
            io.write(&format!("eval/predictions_{}.csv", ckpt.method.name()), &buf)?;
        }
        reports.insert(ckpt.method, PopulationReport { seen, unseen });
    }
    let rows = reports
        .iter()
        .map(|(m, r)| {
            let seen = r.seen.balanced.ok_or_else(|| Error::Undefined(format!("{m}: empty seen population")))?;
            let unseen = r.unseen.balanced.ok_or_else(|| Error::Undefined(format!("{m}: empty unseen population")))?;
            Ok((m.label().to_string(), seen, unseen))
        })
        .collect::<Result<Vec<_>>>()?;
    let setting = c.split.setting.name();
    let gap = gap_report(setting, &rows, c.eval.reference.label())?;
    let mut buf = Vec::new();
    gap.write_csv(&mut buf)?;
    io.write(METRICS, &metrics_csv(setting, &reports)?)?;
    io.write(GAP_CSV, &buf)?;
    io.write(GAP_TEXT, gap.to_text().as_bytes())?;
    io.write_json(
        SUMMARY,
        &EvalSummary {
            split: manifest.config.clone(),
            manifest_hash: manifest.hash(),
            methods: reports,
            gap,
        },
    )
}

/// Loads an evaluation summary from a run directory.
pub fn load_summary(dir: &Path) -> Result<EvalSummary> {
    let path = dir.join(SUMMARY);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub population: String,
    pub a: Metrics,
    pub b: Metrics,
    /// Percent change from `a` to `b`, in [`Metric::ALL`] order.
    pub change: [Option<f64>; 3],
}

/// Side-by-side balanced metrics of two evaluated runs; their split settings must match.
pub fn compare_runs(a: &EvalSummary, b: &EvalSummary) -> Result<Vec<ComparisonRow>> {
    let (sa, sb) = (&a.split, &b.split);
    if sa.setting != sb.setting || sa.test_fraction != sb.test_fraction || sa.val_fraction != sb.val_fraction {
        return Err(Error::Comparability(format!(
            "split settings differ: {} test {} val {} vs {} test {} val {}",
            sa.setting.name(),
            sa.test_fraction,
            sa.val_fraction,
            sb.setting.name(),
            sb.test_fraction,
            sb.val_fraction
        )));
    }
    let mut out = Vec::new();
    for (m, ra) in &a.methods {
        let Some(rb) = b.methods.get(m) else { continue };
        for (pop, x, y) in [("seen", &ra.seen, &rb.seen), ("unseen", &ra.unseen, &rb.unseen)] {
            let (Some(x), Some(y)) = (x.balanced, y.balanced) else { continue };
            out.push(ComparisonRow {
                method: *m,
                population: pop.into(),
                a: x,
                b: y,
                change: Metric::ALL.map(|k| relative_change(y.get(k), x.get(k))),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Comparability("the runs share no evaluated method".into()));
    }
    Ok(out)
}

pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let mut s = format!("{:<10} {:<7} {:>24} {:>24} {:>24}\n", "method", "pop", "ADE a/b", "FDE a/b", "Brier-FDE a/b");
    for r in rows {
        s.push_str(&format!("{:<10} {:<7}", r.method.name(), r.population));
        for (i, k) in Metric::ALL.iter().enumerate() {
            let ch = r.change[i].map_or("n/a".to_string(), |c| format!("{c:+.1}%"));
            s.push_str(&format!(" {:>24}", format!("{:.3}/{:.3} ({ch})", r.a.get(*k), r.b.get(*k))));
        }
        s.push('\n');
    }
    s
}

/// Evaluates one checkpoint against a split manifest without touching the run manifest.
pub fn evaluate_checkpoint(
    dir: &Path,
    config: &PipelineConfig,
    manifest_path: &Path,
    checkpoint_path: &Path,
    bins: &crate::evaluation::DifficultyBins,
) -> Result<PopulationReport> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let manifest = SplitManifest::from_json(&read(manifest_path)?)?;
    let mut io = StageIo::new(dir);
    let provenance: Option<LatentProvenance> = match dir.join(PROVENANCE).exists() {
        true => Some(serde_json::from_str(&io.read_text(PROVENANCE)?)?),
        false => None,
    };
    let ckpt = load_checkpoint(&read(checkpoint_path)?, &manifest, provenance.as_ref())?;
    let corpus = load_corpus(&mut io)?;
    let records = load_difficulty(&mut io)?;
    let mut samples = build_samples(config, &corpus, &records, &manifest)?;
    if ckpt.latent_fingerprint.is_some() {
        attach_latents(&mut samples, &load_gating_latents(config, &mut io)?)?;
    }
    let dmap = difficulty_map(&records);
    let pick = |want: Assignment| -> Vec<&PredictorSample> {
        samples.iter().filter(|(a, _)| *a == want).map(|(_, s)| s).collect()
    };
    let crit = ckpt.config.best_mode;
    Ok(PopulationReport {
        seen: stratified_report(&ckpt.model.evaluate(&pick(Assignment::Val), crit)?, &dmap, bins)?,
        unseen: stratified_report(&ckpt.model.evaluate(&pick(Assignment::Test), crit)?, &dmap, bins)?,
    })
}

/// Verification report of the split stored in a run directory.
pub fn split_report(dir: &Path) -> Result<SplitReport> {
    let path = dir.join(SPLIT_REPORT);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
