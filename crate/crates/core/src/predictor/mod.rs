//! Multi-modal trajectory predictor with a latent-gated module bank and an auxiliary difficulty head.

pub mod inputs;
pub mod loss;
pub mod model;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{agent_metrics, stratified_report, AgentMetrics, BestMode, DifficultyBins};
use crate::geometry::Vec2;
use crate::nn::optim::{step_decay, Adam};
use crate::scenario::AgentKey;
use crate::splits::{Assignment, SplitManifest};
use crate::vectorize::sha256_hex;

pub use inputs::{build_sample, input_width, scene_inputs, PredictorSample};
pub use loss::{predictor_loss, LossBreakdown, LossWeights, Target};
pub use model::{gate_softmax, Architecture, Network, Outputs};

pub const CHECKPOINT_FORMAT: &str = "scenefactor-predictor";
pub const CHECKPOINT_VERSION: u32 = 1;

/// The four compared configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Tmn,
    Aux,
    Both,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::Tmn, Method::Aux, Method::Both];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Tmn => "tmn",
            Method::Aux => "aux",
            Method::Both => "both",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Baseline => "Baseline",
            Method::Tmn => "+ TMN-Inspired",
            Method::Aux => "+ Auxiliary",
            Method::Both => "+ Both",
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            Method::Baseline => (false, false),
            Method::Tmn => (true, false),
            Method::Aux => (false, true),
            Method::Both => (true, true),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub arch: Architecture,
    pub neighbors: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub lambda_cls: f64,
    pub lambda_aux: f64,
    /// Aux targets are Kalman errors divided by this many meters.
    pub aux_scale: f64,
    /// Global gradient-norm clip; zero disables clipping.
    pub grad_clip: f64,
    pub best_mode: BestMode,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            arch: Architecture::default(),
            neighbors: 8,
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            lr_decay: 0.5,
            decay_every: 10,
            lambda_cls: 0.5,
            lambda_aux: 0.1,
            aux_scale: 10.0,
            grad_clip: 10.0,
            best_mode: BestMode::Fde,
        }
    }
}

impl PredictorConfig {
    pub fn for_method(&self, m: Method) -> PredictorConfig {
        let (tmn, aux) = m.flags();
        let mut c = self.clone();
        c.arch.use_tmn = tmn;
        c.arch.use_aux = aux;
        c
    }

    pub fn method(&self) -> Method {
        match (self.arch.use_tmn, self.arch.use_aux) {
            (false, false) => Method::Baseline,
            (true, false) => Method::Tmn,
            (false, true) => Method::Aux,
            (true, true) => Method::Both,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) || !(self.aux_scale > 0.0) {
            return Err(Error::Validation("predictor epochs, batch_size, lr, aux_scale must be positive".into()));
        }
        if self.lambda_cls < 0.0 || self.lambda_aux < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::Validation("predictor loss weights and clip must be non-negative".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_cls: self.lambda_cls,
            lambda_aux: if self.arch.use_aux { self.lambda_aux } else { 0.0 },
        }
    }
}

/// Per-dimension z-scoring of scene inputs, fitted on training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputScaler {
    pub fn fit(rows: &[&[f64]]) -> Result<InputScaler> {
        let w = rows.first().map(|r| r.len()).ok_or_else(|| Error::Training("no rows to fit a scaler".into()))?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; w];
        for r in rows {
            if r.len() != w {
                return Err(Error::Layout(format!("input width {} != {w}", r.len())));
            }
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; w];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| if v.sqrt() > 1e-9 { v.sqrt() } else { 1.0 }).collect();
        Ok(InputScaler { mean, std })
    }

    pub fn transform<'a>(&'a self, row: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        row.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s)
    }
}

/// Network plus the input scaling it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub scaler: InputScaler,
    pub net: Network,
    pub aux_scale: f64,
}

/// Decoded predictions in the focal final-pose frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutput {
    pub modes: Vec<Vec<Vec2>>,
    pub confidences: Vec<f64>,
    /// Anticipated Kalman error per horizon, meters.
    pub aux: Vec<f64>,
}

impl PredictionOutput {
    pub fn to_world(&self, pose: &crate::geometry::Pose) -> Vec<Vec<Vec2>> {
        self.modes
            .iter()
            .map(|m| m.iter().map(|p| pose.to_world(*p)).collect())
            .collect()
    }
}

impl Predictor {
    pub fn check(&self) -> Result<()> {
        self.net.check()?;
        if self.scaler.mean.len() != self.net.inputs || self.scaler.std.len() != self.net.inputs {
            return Err(Error::Contract("scaler width does not match the network".into()));
        }
        if !(self.aux_scale > 0.0) {
            return Err(Error::Contract("aux scale must be positive".into()));
        }
        Ok(())
    }

    fn batch(&self, samples: &[&PredictorSample]) -> Result<(Array2<f64>, Array2<f64>)> {
        let w = self.net.inputs;
        let zw = self.net.arch.latent_dim;
        let mut x = Array2::zeros((samples.len(), w));
        let mut z = Array2::zeros((samples.len(), zw));
        for (i, s) in samples.iter().enumerate() {
            if s.inputs.len() != w {
                return Err(Error::Contract(format!("{} has {} inputs, model expects {w}", s.key, s.inputs.len())));
            }
            for (d, v) in self.scaler.transform(&s.inputs).enumerate() {
                x[[i, d]] = v;
            }
            if self.net.arch.use_tmn {
                if s.latent.len() != zw {
                    return Err(Error::Contract(format!(
                        "{} has {} latent values; the gating network needs {zw}",
                        s.key,
                        s.latent.len()
                    )));
                }
                for (d, v) in s.latent.iter().enumerate() {
                    z[[i, d]] = *v;
                }
            }
        }
        Ok((x, z))
    }

    pub fn forward(&self, samples: &[&PredictorSample]) -> Result<Outputs> {
        let (x, z) = self.batch(samples)?;
        Ok(self.net.forward(&x, &z)?.0)
    }

    pub fn decode(&self, out: &Outputs, i: usize) -> PredictionOutput {
        let a = &self.net.arch;
        let row = out.positions.row(i);
        PredictionOutput {
            modes: (0..a.modes)
                .map(|k| {
                    (0..a.t_fut)
                        .map(|t| {
                            let j = (k * a.t_fut + t) * 2;
                            Vec2::new(row[j], row[j + 1])
                        })
                        .collect()
                })
                .collect(),
            confidences: out.confidences.row(i).to_vec(),
            aux: out.aux.row(i).iter().map(|v| v * self.aux_scale).collect(),
        }
    }

    pub fn predict(&self, samples: &[&PredictorSample]) -> Result<Vec<PredictionOutput>> {
        let mut preds = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(256) {
            let out = self.forward(chunk)?;
            preds.extend((0..chunk.len()).map(|i| self.decode(&out, i)));
        }
        Ok(preds)
    }

    /// Metrics of every sample with a valid future.
    pub fn evaluate(&self, samples: &[&PredictorSample], criterion: BestMode) -> Result<Vec<AgentMetrics>> {
        let preds = self.predict(samples)?;
        let mut out = Vec::new();
        for (s, p) in samples.iter().zip(&preds) {
            if let Some(m) = agent_metrics(s.key.clone(), &p.modes, &p.confidences, &s.future, criterion)? {
                out.push(m);
            }
        }
        Ok(out)
    }
}

fn targets<'a>(samples: &[&'a PredictorSample], aux: &'a [Vec<Option<f64>>]) -> Vec<Target<'a>> {
    samples
        .iter()
        .zip(aux)
        .map(|(s, a)| Target {
            future: &s.future,
            aux: a,
        })
        .collect()
}

fn scaled_aux(samples: &[&PredictorSample], scale: f64, width: usize) -> Result<Vec<Vec<Option<f64>>>> {
    samples
        .iter()
        .map(|s| {
            if s.kalman.len() != width {
                return Err(Error::Contract(format!("{} has {} Kalman targets, expected {width}", s.key, s.kalman.len())));
            }
            Ok(s.kalman.iter().map(|k| k.map(|v| v / scale)).collect())
        })
        .collect()
}

/// Loss and gradients of a batch; exposed for gradient checks.
pub fn batch_loss(
    model: &Predictor,
    samples: &[&PredictorSample],
    weights: &LossWeights,
) -> Result<(LossBreakdown, model::NetworkGrads)> {
    let (x, z) = model.batch(samples)?;
    let (out, cache) = model.net.forward(&x, &z)?;
    let aux = scaled_aux(samples, model.aux_scale, model.net.arch.aux_outputs)?;
    let (b, g) = predictor_loss(&out, &targets(samples, &aux), weights)?;
    let grads = model.net.backward(&cache, &g.positions, &g.conf_logits, &g.aux)?;
    Ok((b, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_brier_fde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPredictor {
    pub model: Predictor,
    pub log: Vec<EpochLog>,
    /// Zero-based epoch whose parameters were kept.
    pub selected_epoch: usize,
}

/// Difficulty-balanced Brier-FDE of `samples`.
pub fn balanced_brier(
    model: &Predictor,
    samples: &[&PredictorSample],
    difficulty: &BTreeMap<AgentKey, f64>,
    bins: &DifficultyBins,
    criterion: BestMode,
) -> Result<Option<f64>> {
    let m = model.evaluate(samples, criterion)?;
    Ok(stratified_report(&m, difficulty, bins)?.balanced.map(|b| b.brier_fde))
}

/// Adam training on `train`; keeps the epoch with the lowest balanced val Brier-FDE.
pub fn train_predictor(
    train: &[&PredictorSample],
    val: &[&PredictorSample],
    difficulty: &BTreeMap<AgentKey, f64>,
    bins: &DifficultyBins,
    config: &PredictorConfig,
    seed: u64,
) -> Result<TrainedPredictor> {
    config.validate()?;
    let train: Vec<&PredictorSample> = train.iter().copied().filter(|s| s.future.iter().any(Option::is_some)).collect();
    if train.is_empty() {
        return Err(Error::Training("empty train split".into()));
    }
    if val.is_empty() {
        return Err(Error::Training("empty validation split".into()));
    }
    let rows: Vec<&[f64]> = train.iter().map(|s| s.inputs.as_slice()).collect();
    let scaler = InputScaler::fit(&rows)?;
    let mut arch = config.arch.clone();
    arch.aux_outputs = train[0].kalman.len().max(1);
    let net = Network::new(&arch, scaler.mean.len(), seed)?;
    let mut model = Predictor {
        scaler,
        net,
        aux_scale: config.aux_scale,
    };
    let weights = config.loss_weights();
    let mut opt = Adam::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Predictor)> = None;
    for epoch in 0..config.epochs {
        opt.lr = step_decay(config.lr, config.lr_decay, config.decay_every, epoch);
        order.shuffle(&mut rng);
        let (mut sum, mut used) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PredictorSample> = chunk.iter().map(|&i| train[i]).collect();
            let (b, mut g) = batch_loss(&model, &batch, &weights)?;
            if !b.total.is_finite() {
                return Err(Error::Training(format!("predictor loss diverged at epoch {epoch}")));
            }
            let norm = g.global_norm(arch.use_tmn);
            if config.grad_clip > 0.0 && norm > config.grad_clip {
                g.scale(config.grad_clip / norm);
            }
            opt.step(model.net.params_mut(), g.slices(arch.use_tmn));
            sum += b.total * b.used as f64;
            used += b.used;
        }
        let val_brier = balanced_brier(&model, val, difficulty, bins, config.best_mode)?
            .ok_or_else(|| Error::Training("validation split has no agent with a valid future".into()))?;
        log.push(EpochLog {
            epoch,
            lr: opt.lr,
            train_loss: sum / used.max(1) as f64,
            val_brier_fde: val_brier,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_brier < *b) {
            best = Some((val_brier, epoch, model.clone()));
        }
    }
    let (_, selected_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainedPredictor {
        model,
        log,
        selected_epoch,
    })
}

/// Ties the gating latents to the split they were trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentProvenance {
    pub manifest_hash: String,
    /// Hash of the sorted agent keys the latent autoencoders were trained on.
    pub trained_on: String,
}

pub fn key_set_hash<'a>(keys: impl IntoIterator<Item = &'a AgentKey>) -> String {
    let set: BTreeSet<&AgentKey> = keys.into_iter().collect();
    let joined: Vec<String> = set.iter().map(|k| k.to_string()).collect();
    sha256_hex(joined.join("\n").as_bytes())
}

impl LatentProvenance {
    pub fn new<'a>(manifest: &SplitManifest, trained_on: impl IntoIterator<Item = &'a AgentKey>) -> Self {
        LatentProvenance {
            manifest_hash: manifest.hash(),
            trained_on: key_set_hash(trained_on),
        }
    }

    /// Fingerprint recorded in predictor checkpoints.
    pub fn fingerprint(&self) -> String {
        sha256_hex(format!("{}:{}", self.manifest_hash, self.trained_on).as_bytes())
    }
}

/// Accepts provenance only when its autoencoders saw exactly the manifest's train agents.
pub fn check_no_leakage(provenance: &LatentProvenance, manifest: &SplitManifest) -> Result<String> {
    if provenance.manifest_hash != manifest.hash() {
        return Err(Error::Contract("gating latents come from a different split manifest".into()));
    }
    let train = manifest.keys(Assignment::Train);
    if provenance.trained_on != key_set_hash(&train) {
        return Err(Error::Contract(
            "gating autoencoders were not trained on exactly the train split".into(),
        ));
    }
    Ok(provenance.fingerprint())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorCheckpoint {
    pub format: String,
    pub version: u32,
    pub method: Method,
    pub seed: u64,
    pub manifest_hash: String,
    pub latent_fingerprint: Option<String>,
    pub config: PredictorConfig,
    pub selected_epoch: usize,
    pub log: Vec<EpochLog>,
    pub model: Predictor,
}

impl PredictorCheckpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<PredictorCheckpoint> {
        let c: PredictorCheckpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!("unsupported checkpoint `{}` v{}", c.format, c.version)));
        }
        c.model.check()?;
        if c.model.net.arch.use_tmn != c.method.flags().0 || c.model.net.arch.use_aux != c.method.flags().1 {
            return Err(Error::Validation("checkpoint method does not match its architecture flags".into()));
        }
        if c.model.net.arch.use_tmn && c.latent_fingerprint.is_none() {
            return Err(Error::Validation("gated checkpoint lacks a latent fingerprint".into()));
        }
        Ok(c)
    }
}

/// Writes world-frame predictions: one row per agent, mode, and step.
pub fn write_predictions<W: Write>(samples: &[&PredictorSample], preds: &[PredictionOutput], w: W) -> Result<()> {
    if samples.len() != preds.len() {
        return Err(Error::Contract("sample and prediction counts differ".into()));
    }
    let mut wr = csv::Writer::from_writer(w);
    let aux_n = preds.first().map_or(0, |p| p.aux.len());
    let mut header: Vec<String> = ["scenario_id", "agent_id", "mode", "step", "x", "y", "confidence"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..aux_n).map(|i| format!("aux_{i}")));
    wr.write_record(&header)?;
    for (s, p) in samples.iter().zip(preds) {
        for (k, mode) in p.to_world(&s.pose).iter().enumerate() {
            for (t, pt) in mode.iter().enumerate() {
                let mut row = vec![
                    s.key.scenario_id.clone(),
                    s.key.agent_id.clone(),
                    k.to_string(),
                    (t + 1).to_string(),
                    format!("{:?}", pt.x),
                    format!("{:?}", pt.y),
                    format!("{:?}", p.confidences[k]),
                ];
                row.extend(p.aux.iter().map(|a| format!("{a:?}")));
                wr.write_record(&row)?;
            }
        }
    }
    wr.flush().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(())
}
