//! Per-(axis, agent type) autoencoders trained with reconstruction MSE plus DEC.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis as NdAxis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dec::{dec_loss_grad, dec_soft_assignment, dec_target, DecState};
use super::dense::{mse, DenseNet, Mode};
use super::optim::{step_decay, Momentum};
use crate::clustering::kmeans;
use crate::error::{Error, Result};
use crate::scenario::AgentType;
use crate::vectorize::{Axis, Standardizer};

pub const CHECKPOINT_FORMAT: &str = "scenefactor-autoencoder";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub hidden: Vec<usize>,
    pub latent: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub lambda_dec: f64,
    /// Fraction of epochs trained on reconstruction alone before DEC starts.
    pub warmup_frac: f64,
    /// Epochs between target-distribution refreshes.
    pub refresh_every: usize,
    pub clusters: usize,
    pub min_samples: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            hidden: vec![128, 64],
            latent: 16,
            dropout: 0.1,
            epochs: 30,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            lr_decay: 0.5,
            decay_every: 10,
            lambda_dec: 0.1,
            warmup_frac: 0.3,
            refresh_every: 5,
            clusters: 11,
            min_samples: 50,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("autoencoder config: {m}")));
        if self.latent == 0 || self.epochs == 0 || self.batch_size == 0 || self.clusters < 2 {
            return bad("latent, epochs, batch_size must be positive and clusters >= 2");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.dropout) {
            return bad("lr > 0, momentum and dropout in [0, 1) required");
        }
        if !(0.0..1.0).contains(&self.warmup_frac) || self.lambda_dec < 0.0 || self.refresh_every == 0 {
            return bad("warmup_frac in [0, 1), lambda_dec >= 0, refresh_every > 0 required");
        }
        if self.min_samples < self.clusters {
            return bad("min_samples must be at least clusters");
        }
        Ok(())
    }

    pub fn warmup_epochs(&self) -> usize {
        (self.warmup_frac * self.epochs as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub axis: Axis,
    pub agent_type: AgentType,
    pub schema_hash: String,
    pub standardizer: Standardizer,
    pub encoder: DenseNet,
    pub decoder: DenseNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mse: f64,
    pub kl: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedAutoencoder {
    pub model: Autoencoder,
    pub dec: Option<DecState>,
    pub log: Vec<EpochLog>,
    /// Eval-mode reconstruction MSE on the standardized inputs before any update.
    pub initial_mse: f64,
    pub final_mse: f64,
}

impl Autoencoder {
    pub fn input_width(&self) -> usize {
        self.encoder.inputs()
    }

    pub fn check(&self) -> Result<()> {
        self.encoder.check()?;
        self.decoder.check()?;
        let w = self.encoder.inputs();
        if self.decoder.inputs() != self.encoder.outputs() || self.decoder.outputs() != w {
            return Err(Error::Contract("decoder does not mirror encoder widths".into()));
        }
        if self.standardizer.mean.len() != w || self.standardizer.std.len() != w || self.standardizer.owner.len() != w {
            return Err(Error::Contract("standardizer width does not match encoder".into()));
        }
        if let Some(bad) = self.standardizer.owner.iter().flatten().find(|o| **o >= w) {
            return Err(Error::Contract(format!("standardizer owner index {bad} out of range")));
        }
        Ok(())
    }

    fn standardize(&self, raw: &[Vec<f64>]) -> Result<Array2<f64>> {
        let w = self.input_width();
        let mut x = Array2::zeros((raw.len(), w));
        for (i, r) in raw.iter().enumerate() {
            if r.len() != w {
                return Err(Error::Contract(format!("vector width {} != model width {w}", r.len())));
            }
            for (d, v) in self.standardizer.transform(r).into_iter().enumerate() {
                x[[i, d]] = v;
            }
        }
        Ok(x)
    }

    /// Latents of raw (unstandardized) vectors.
    pub fn encode(&self, raw: &[Vec<f64>]) -> Result<Array2<f64>> {
        if raw.is_empty() {
            return Ok(Array2::zeros((0, self.encoder.outputs())));
        }
        self.encoder.predict(&self.standardize(raw)?)
    }

    pub fn to_json(&self, seed: u64) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            format: &'a str,
            version: u32,
            seed: u64,
            model: &'a Autoencoder,
        }
        serde_json::to_string(&Out {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            seed,
            model: self,
        })
        .expect("autoencoder serializes")
    }

    /// Parses and validates a checkpoint; returns the model and its recorded seed.
    pub fn from_json(text: &str) -> Result<(Autoencoder, u64)> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct In {
            format: String,
            version: u32,
            seed: u64,
            model: Autoencoder,
        }
        let c: In = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint `{}` v{}",
                c.format, c.version
            )));
        }
        c.model.check()?;
        Ok((c.model, c.seed))
    }
}

fn rows_of(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(NdAxis(0), idx)
}

/// Trains one autoencoder on raw vectors of a single (axis, agent type).
pub fn train_autoencoder(
    raw: &[Vec<f64>],
    schema: &crate::vectorize::GroupSchema,
    agent_type: AgentType,
    config: &AutoencoderConfig,
    seed: u64,
) -> Result<TrainedAutoencoder> {
    config.validate()?;
    if raw.len() < config.min_samples {
        return Err(Error::Training(format!(
            "{} {} autoencoder needs at least {} vectors, got {}",
            schema.axis.name(),
            agent_type.name(),
            config.min_samples,
            raw.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let standardizer = Standardizer::fit(raw, schema)?;
    let width = schema.width();
    let mut enc_sizes = vec![width];
    enc_sizes.extend(&config.hidden);
    enc_sizes.push(config.latent);
    let dec_sizes: Vec<usize> = enc_sizes.iter().rev().copied().collect();
    let mut model = Autoencoder {
        axis: schema.axis,
        agent_type,
        schema_hash: schema.hash(),
        standardizer,
        encoder: DenseNet::mlp(&enc_sizes, true, config.dropout, &mut rng),
        decoder: DenseNet::mlp(&dec_sizes, true, config.dropout, &mut rng),
    };
    let x = model.standardize(raw)?;
    let n = x.nrows();
    let recon = |m: &Autoencoder| -> Result<f64> {
        let z = m.encoder.predict(&x)?;
        Ok(mse(&m.decoder.predict(&z)?, &x).0)
    };
    let initial_mse = recon(&model)?;

    let mut opt_enc = Momentum::new(config.lr, config.momentum);
    let mut opt_dec = Momentum::new(config.lr, config.momentum);
    let mut opt_mu = Momentum::new(config.lr, config.momentum);
    let use_dec = config.lambda_dec > 0.0;
    let warmup = config.warmup_epochs();
    let mut centroids: Option<Array2<f64>> = None;
    let mut target: Option<Array2<f64>> = None;
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = step_decay(config.lr, config.lr_decay, config.decay_every, epoch);
        opt_enc.lr = lr;
        opt_dec.lr = lr;
        opt_mu.lr = lr;
        if use_dec && epoch >= warmup {
            if centroids.is_none() {
                let z = model.encoder.predict(&x)?;
                centroids = Some(kmeans(&z, config.clusters, seed ^ 0x5eed)?.centroids);
            }
            if (epoch - warmup) % config.refresh_every == 0 {
                let z = model.encoder.predict(&x)?;
                target = Some(dec_target(&dec_soft_assignment(&z, centroids.as_ref().unwrap())));
            }
        }
        order.shuffle(&mut rng);
        let (mut sum_mse, mut sum_kl, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let xb = rows_of(&x, chunk);
            let (z, enc_cache) = model.encoder.forward(&xb, &mut Mode::Train(&mut rng))?;
            let (out, dec_cache) = model.decoder.forward(&z, &mut Mode::Train(&mut rng))?;
            let (loss, g_out) = mse(&out, &xb);
            let (g_dec, mut g_z) = model.decoder.backward(&dec_cache, &g_out)?;
            let mut g_mu = None;
            if let (Some(mu), Some(p)) = (&centroids, &target) {
                let pb = rows_of(p, chunk);
                let (kl, dz, dmu) = dec_loss_grad(&z, mu, &pb);
                g_z = g_z + dz * config.lambda_dec;
                g_mu = Some(dmu * config.lambda_dec);
                sum_kl += kl;
            }
            let (g_enc, _) = model.encoder.backward(&enc_cache, &g_z)?;
            opt_dec.step(model.decoder.params_mut(), g_dec.slices());
            opt_enc.step(model.encoder.params_mut(), g_enc.slices());
            if let (Some(mu), Some(g)) = (centroids.as_mut(), g_mu) {
                opt_mu.step(vec![mu.as_slice_mut().unwrap()], vec![g.as_slice().unwrap()]);
            }
            sum_mse += loss;
            batches += 1;
        }
        if !sum_mse.is_finite() {
            return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
        }
        log.push(EpochLog {
            epoch,
            mse: sum_mse / batches as f64,
            kl: sum_kl / batches as f64,
            lr,
        });
    }
    let final_mse = recon(&model)?;
    let dec = match centroids {
        Some(mu) => {
            let z = model.encoder.predict(&x)?;
            let q = dec_soft_assignment(&z, &mu);
            let p = dec_target(&q);
            Some(DecState { centroids: mu, q, p })
        }
        None => None,
    };
    Ok(TrainedAutoencoder {
        model,
        dec,
        log,
        initial_mse,
        final_mse,
    })
}

/// Exactly one autoencoder per (axis, agent type).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistry {
    models: BTreeMap<String, Autoencoder>,
}

fn key(axis: Axis, t: AgentType) -> String {
    format!("{}/{}", axis.name(), t.name())
}

impl ModelRegistry {
    pub fn insert(&mut self, model: Autoencoder) -> Result<()> {
        let k = key(model.axis, model.agent_type);
        if self.models.contains_key(&k) {
            return Err(Error::Registry(format!("duplicate autoencoder for {k}")));
        }
        self.models.insert(k, model);
        Ok(())
    }

    pub fn get(&self, axis: Axis, t: AgentType) -> Result<&Autoencoder> {
        self.models
            .get(&key(axis, t))
            .ok_or_else(|| Error::Registry(format!("no autoencoder for {}", key(axis, t))))
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Autoencoder> {
        self.models.values()
    }
}
