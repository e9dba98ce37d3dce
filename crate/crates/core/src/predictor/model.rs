//! Encoder, gated module bank, and decoding heads with hand-written backward passes.

use ndarray::{s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::dense::{Cache, DenseCache, DenseGrad, Grads};
use crate::nn::{Activation, Dense, DenseNet, Mode};

/// Architecture and objective switches of the predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub d_h: usize,
    pub d_mod: usize,
    pub tmn_layers: usize,
    pub tmn_modules: usize,
    pub gating_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub modes: usize,
    pub t_fut: usize,
    /// Width of the concatenated ego and social latents fed to the gating network.
    pub latent_dim: usize,
    pub aux_outputs: usize,
    pub use_tmn: bool,
    pub use_aux: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            d_h: 128,
            d_mod: 64,
            tmn_layers: 3,
            tmn_modules: 12,
            gating_hidden: vec![64],
            encoder_hidden: vec![128],
            decoder_hidden: vec![128],
            modes: 6,
            t_fut: 80,
            latent_dim: 32,
            aux_outputs: 3,
            use_tmn: true,
            use_aux: true,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("d_h", self.d_h),
            ("d_mod", self.d_mod),
            ("tmn_layers", self.tmn_layers),
            ("tmn_modules", self.tmn_modules),
            ("modes", self.modes),
            ("t_fut", self.t_fut),
            ("latent_dim", self.latent_dim),
            ("aux_outputs", self.aux_outputs),
        ];
        if let Some((name, _)) = pos.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("predictor {name} must be positive")));
        }
        Ok(())
    }

    pub fn gating_outputs(&self) -> usize {
        (self.tmn_layers - 1) * self.tmn_modules * self.tmn_modules
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: Architecture,
    pub inputs: usize,
    pub encoder: DenseNet,
    /// `tmn_layers x tmn_modules` single-layer ReLU modules.
    pub bank: Vec<Vec<Dense>>,
    pub gating: DenseNet,
    pub projection: Dense,
    pub trunk: DenseNet,
    pub confidence: Dense,
    pub aux: Dense,
}

/// Raw network outputs for a batch.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub h: Array2<f64>,
    pub h_refined: Array2<f64>,
    /// `batch x (modes * t_fut * 2)`, positions after the cumulative sum, mode-major.
    pub positions: Array2<f64>,
    pub conf_logits: Array2<f64>,
    pub confidences: Array2<f64>,
    pub aux: Array2<f64>,
    /// Gating weights, `batch x ((layers - 1) * modules * modules)` laid out `[layer][target][source]`.
    pub gate_weights: Option<Array2<f64>>,
}

pub struct ForwardCache {
    enc: Cache,
    tmn: Option<TmnCache>,
    trunk: Cache,
    conf: DenseCache,
    aux: DenseCache,
}

struct TmnCache {
    gating: Cache,
    weights: Array2<f64>,
    /// Module outputs per layer and module.
    outs: Vec<Vec<Array2<f64>>>,
    caches: Vec<Vec<DenseCache>>,
    proj: DenseCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads {
    pub encoder: Grads,
    pub bank: Vec<Vec<DenseGrad>>,
    pub gating: Grads,
    pub projection: DenseGrad,
    pub trunk: Grads,
    pub confidence: DenseGrad,
    pub aux: DenseGrad,
}

impl NetworkGrads {
    /// Gradient slices in [`Network::params_mut`] order.
    pub fn slices(&self, use_tmn: bool) -> Vec<&[f64]> {
        let mut out = self.encoder.slices();
        if use_tmn {
            for layer in &self.bank {
                for g in layer {
                    out.extend(g.slices());
                }
            }
            out.extend(self.gating.slices());
            out.extend(self.projection.slices());
        }
        out.extend(self.trunk.slices());
        out.extend(self.confidence.slices());
        out.extend(self.aux.slices());
        out
    }

    pub fn global_norm(&self, use_tmn: bool) -> f64 {
        self.slices(use_tmn)
            .iter()
            .flat_map(|s| s.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.encoder.scale(s);
        self.bank.iter_mut().flatten().for_each(|g| g.scale(s));
        self.gating.scale(s);
        self.projection.scale(s);
        self.trunk.scale(s);
        self.confidence.scale(s);
        self.aux.scale(s);
    }
}

fn softmax_rows(logits: &Array2<f64>, group: usize) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        for chunk in row.as_slice_mut().unwrap().chunks_mut(group) {
            let m = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in chunk.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in chunk.iter_mut() {
                *v /= z;
            }
        }
    }
    out
}

/// Weights of the gating groups; each `[layer][target]` group sums to one over sources.
pub fn gate_softmax(logits: &Array2<f64>, modules: usize) -> Array2<f64> {
    softmax_rows(logits, modules)
}

fn column(a: &Array2<f64>, c: usize) -> Array2<f64> {
    a.slice(s![.., c..c + 1]).to_owned()
}

impl Network {
    /// Deterministic initialization; each part draws from its own stream so switching the
    /// module bank on or off leaves every other parameter unchanged.
    pub fn new(arch: &Architecture, inputs: usize, seed: u64) -> Result<Network> {
        arch.validate()?;
        let stream = |i: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i);
            r
        };
        let mut enc_sizes = vec![inputs];
        enc_sizes.extend(&arch.encoder_hidden);
        enc_sizes.push(arch.d_h);
        let encoder = DenseNet::mlp(&enc_sizes, true, 0.0, &mut stream(1));

        let mut rb = stream(2);
        let bank = (0..arch.tmn_layers)
            .map(|l| {
                let input = if l == 0 { arch.d_h } else { arch.d_mod };
                (0..arch.tmn_modules)
                    .map(|_| Dense::new(input, arch.d_mod, Activation::Relu, false, 0.0, &mut rb))
                    .collect()
            })
            .collect();
        let mut gate_sizes = vec![arch.latent_dim];
        gate_sizes.extend(&arch.gating_hidden);
        gate_sizes.push(arch.gating_outputs().max(1));
        let gating = DenseNet::mlp(&gate_sizes, false, 0.0, &mut stream(3));
        let projection = Dense::zeros(arch.tmn_modules * arch.d_mod, arch.d_h, Activation::Identity);

        let mut dec_sizes = vec![arch.d_h];
        dec_sizes.extend(&arch.decoder_hidden);
        dec_sizes.push(arch.modes * arch.t_fut * 2);
        let mut rh = stream(4);
        let mut trunk = DenseNet::mlp(&dec_sizes, false, 0.0, &mut rh);
        // small per-step displacements keep the cumulative sum tame at init
        if let Some(last) = trunk.layers.last_mut() {
            last.w *= 0.1;
        }
        let confidence = Dense::new(arch.d_h, arch.modes, Activation::Identity, false, 0.0, &mut rh);
        let aux = Dense::new(arch.d_h, arch.aux_outputs, Activation::Identity, false, 0.0, &mut rh);
        Ok(Network {
            arch: arch.clone(),
            inputs,
            encoder,
            bank,
            gating,
            projection,
            trunk,
            confidence,
            aux,
        })
    }

    pub fn check(&self) -> Result<()> {
        let a = &self.arch;
        a.validate()?;
        self.encoder.check()?;
        self.gating.check()?;
        self.trunk.check()?;
        let bad = |m: String| Err(Error::Contract(format!("predictor shape mismatch: {m}")));
        if self.encoder.inputs() != self.inputs || self.encoder.outputs() != a.d_h {
            return bad("encoder".into());
        }
        if self.bank.len() != a.tmn_layers || self.bank.iter().any(|l| l.len() != a.tmn_modules) {
            return bad("module bank layout".into());
        }
        for (l, layer) in self.bank.iter().enumerate() {
            let input = if l == 0 { a.d_h } else { a.d_mod };
            for m in layer {
                m.check()?;
                if m.inputs() != input || m.outputs() != a.d_mod {
                    return bad(format!("module in layer {l}"));
                }
            }
        }
        if self.gating.inputs() != a.latent_dim || self.gating.outputs() != a.gating_outputs().max(1) {
            return bad("gating network".into());
        }
        for (name, d, i, o) in [
            ("projection", &self.projection, a.tmn_modules * a.d_mod, a.d_h),
            ("confidence", &self.confidence, a.d_h, a.modes),
            ("aux", &self.aux, a.d_h, a.aux_outputs),
        ] {
            d.check()?;
            if d.inputs() != i || d.outputs() != o {
                return bad(name.into());
            }
        }
        if self.trunk.inputs() != a.d_h || self.trunk.outputs() != a.modes * a.t_fut * 2 {
            return bad("trajectory trunk".into());
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
            + self.bank.iter().flatten().map(Dense::param_count).sum::<usize>()
            + self.gating.param_count()
            + self.projection.param_count()
            + self.trunk.param_count()
            + self.confidence.param_count()
            + self.aux.param_count()
    }

    /// Parameter slices in a fixed order; the module bank and gating are included only when enabled.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let use_tmn = self.arch.use_tmn;
        let mut out = self.encoder.params_mut();
        if use_tmn {
            for layer in &mut self.bank {
                for d in layer {
                    out.extend(d.params_mut());
                }
            }
            out.extend(self.gating.params_mut());
            out.extend(self.projection.params_mut());
        }
        out.extend(self.trunk.params_mut());
        out.extend(self.confidence.params_mut());
        out.extend(self.aux.params_mut());
        out
    }

    fn tmn_forward(&self, h: &Array2<f64>, z: &Array2<f64>) -> Result<(Array2<f64>, TmnCache)> {
        let a = &self.arch;
        if z.ncols() != a.latent_dim || z.nrows() != h.nrows() {
            return Err(Error::Contract(format!(
                "gating needs {} x {} latents, got {} x {}",
                h.nrows(),
                a.latent_dim,
                z.nrows(),
                z.ncols()
            )));
        }
        let (logits, gating) = self.gating.forward(z, &mut Mode::Eval)?;
        let weights = gate_softmax(&logits, a.tmn_modules);
        let mm = a.tmn_modules * a.tmn_modules;
        let mut outs: Vec<Vec<Array2<f64>>> = Vec::with_capacity(a.tmn_layers);
        let mut caches = Vec::with_capacity(a.tmn_layers);
        for (l, layer) in self.bank.iter().enumerate() {
            let mut lo = Vec::with_capacity(a.tmn_modules);
            let mut lc = Vec::with_capacity(a.tmn_modules);
            for (m, module) in layer.iter().enumerate() {
                let x = if l == 0 {
                    h.clone()
                } else {
                    let mut x = Array2::zeros((h.nrows(), a.d_mod));
                    for (j, prev) in outs[l - 1].iter().enumerate() {
                        x += &(prev * &column(&weights, (l - 1) * mm + m * a.tmn_modules + j));
                    }
                    x
                };
                let (o, c) = module.forward(&x, &mut Mode::Eval)?;
                lo.push(o);
                lc.push(c);
            }
            outs.push(lo);
            caches.push(lc);
        }
        let last: Vec<_> = outs[a.tmn_layers - 1].iter().map(|o| o.view()).collect();
        let concat = ndarray::concatenate(Axis(1), &last).expect("module outputs share a batch size");
        let (p, proj) = self.projection.forward(&concat, &mut Mode::Eval)?;
        Ok((
            h + &p,
            TmnCache {
                gating,
                weights,
                outs,
                caches,
                proj,
            },
        ))
    }

    /// Forward pass over a scaled input batch and the matching latent batch.
    pub fn forward(&self, x: &Array2<f64>, z: &Array2<f64>) -> Result<(Outputs, ForwardCache)> {
        let a = &self.arch;
        let (h, enc) = self.encoder.forward(x, &mut Mode::Eval)?;
        let (h_refined, tmn) = if a.use_tmn {
            let (hr, c) = self.tmn_forward(&h, z)?;
            (hr, Some(c))
        } else {
            (h.clone(), None)
        };
        let (disp, trunk) = self.trunk.forward(&h_refined, &mut Mode::Eval)?;
        let mut positions = disp;
        let t = a.t_fut;
        for mut row in positions.rows_mut() {
            let r = row.as_slice_mut().unwrap();
            for k in 0..a.modes {
                let base = k * t * 2;
                for step in 1..t {
                    for d in 0..2 {
                        r[base + step * 2 + d] += r[base + (step - 1) * 2 + d];
                    }
                }
            }
        }
        let (conf_logits, conf) = self.confidence.forward(&h_refined, &mut Mode::Eval)?;
        let confidences = softmax_rows(&conf_logits, a.modes);
        let (aux, aux_cache) = self.aux.forward(&h_refined, &mut Mode::Eval)?;
        let gate_weights = tmn.as_ref().map(|c| c.weights.clone());
        Ok((
            Outputs {
                h,
                h_refined,
                positions,
                conf_logits,
                confidences,
                aux,
                gate_weights,
            },
            ForwardCache {
                enc,
                tmn,
                trunk,
                conf,
                aux: aux_cache,
            },
        ))
    }

    /// Backward pass from gradients w.r.t. positions, confidence logits, and aux outputs.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_positions: &Array2<f64>,
        d_conf_logits: &Array2<f64>,
        d_aux: &Array2<f64>,
    ) -> Result<NetworkGrads> {
        let a = &self.arch;
        let t = a.t_fut;
        let mut d_disp = d_positions.clone();
        for mut row in d_disp.rows_mut() {
            let r = row.as_slice_mut().unwrap();
            for k in 0..a.modes {
                let base = k * t * 2;
                for step in (0..t - 1).rev() {
                    for d in 0..2 {
                        r[base + step * 2 + d] += r[base + (step + 1) * 2 + d];
                    }
                }
            }
        }
        let (trunk, mut dh) = self.trunk.backward(&cache.trunk, &d_disp)?;
        let (confidence, dh2) = self.confidence.backward(&cache.conf, d_conf_logits)?;
        let (aux, dh3) = self.aux.backward(&cache.aux, d_aux)?;
        dh += &dh2;
        dh += &dh3;

        let (bank, gating, projection) = match &cache.tmn {
            Some(c) => {
                let (projection, d_concat) = self.projection.backward(&c.proj, &dh)?;
                let mm = a.tmn_modules * a.tmn_modules;
                let n = dh.nrows();
                let mut d_out: Vec<Array2<f64>> = (0..a.tmn_modules)
                    .map(|m| d_concat.slice(s![.., m * a.d_mod..(m + 1) * a.d_mod]).to_owned())
                    .collect();
                let mut d_weights = Array2::<f64>::zeros(c.weights.raw_dim());
                let mut bank: Vec<Vec<DenseGrad>> = vec![Vec::new(); a.tmn_layers];
                for l in (0..a.tmn_layers).rev() {
                    let mut d_prev: Vec<Array2<f64>> = (0..a.tmn_modules).map(|_| Array2::zeros((n, a.d_mod))).collect();
                    let mut grads = Vec::with_capacity(a.tmn_modules);
                    for m in 0..a.tmn_modules {
                        let (g, dx) = self.bank[l][m].backward(&c.caches[l][m], &d_out[m])?;
                        grads.push(g);
                        if l == 0 {
                            dh += &dx;
                            continue;
                        }
                        for j in 0..a.tmn_modules {
                            let col = (l - 1) * mm + m * a.tmn_modules + j;
                            d_prev[j] += &(&dx * &column(&c.weights, col));
                            let prev = &c.outs[l - 1][j];
                            for b in 0..n {
                                d_weights[[b, col]] = dx.row(b).dot(&prev.row(b));
                            }
                        }
                    }
                    bank[l] = grads;
                    d_out = d_prev;
                }
                // softmax Jacobian per [layer][target] group
                let mut d_logits = d_weights;
                for (mut gr, wr) in d_logits.rows_mut().into_iter().zip(c.weights.rows()) {
                    let g = gr.as_slice_mut().unwrap();
                    let w = wr.as_slice().unwrap();
                    for (gc, wc) in g.chunks_mut(a.tmn_modules).zip(w.chunks(a.tmn_modules)) {
                        let dot: f64 = gc.iter().zip(wc).map(|(x, y)| x * y).sum();
                        for (x, y) in gc.iter_mut().zip(wc) {
                            *x = y * (*x - dot);
                        }
                    }
                }
                let (gating, _) = self.gating.backward(&c.gating, &d_logits)?;
                (bank, gating, projection)
            }
            None => (
                self.bank.iter().map(|l| l.iter().map(Dense::zero_grad).collect()).collect(),
                self.gating.zero_grads(),
                self.projection.zero_grad(),
            ),
        };
        let (encoder, _) = self.encoder.backward(&cache.enc, &dh)?;
        Ok(NetworkGrads {
            encoder,
            bank,
            gating,
            projection,
            trunk,
            confidence,
            aux,
        })
    }
}
