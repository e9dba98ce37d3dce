//! Dense layers with optional layer normalization, ReLU, and inverted dropout.
//!
//! Batches are row-major: `batch x features`. Weights are `in x out`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

/// Forward-pass mode; training mode owns the dropout stream.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub norm: Option<LayerNorm>,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    x: Array2<f64>,
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    /// Pre-activation (after normalization).
    y: Array2<f64>,
    mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

impl DenseGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()];
        if let (Some(g), Some(b)) = (&self.gamma, &self.beta) {
            out.push(g.as_slice().unwrap());
            out.push(b.as_slice().unwrap());
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.w *= s;
        self.b *= s;
        if let Some(g) = &mut self.gamma {
            *g *= s;
        }
        if let Some(b) = &mut self.beta {
            *b *= s;
        }
    }

    pub fn add_assign(&mut self, o: &DenseGrad) {
        self.w += &o.w;
        self.b += &o.b;
        if let (Some(g), Some(og)) = (&mut self.gamma, &o.gamma) {
            *g += og;
        }
        if let (Some(b), Some(ob)) = (&mut self.beta, &o.beta) {
            *b += ob;
        }
    }
}

impl Dense {
    /// He-uniform weights for ReLU layers, Glorot-uniform otherwise; zero biases.
    pub fn new(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        norm: bool,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / inputs as f64).sqrt(),
            Activation::Identity => (6.0 / (inputs + outputs) as f64).sqrt(),
        };
        let w = Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-limit..limit));
        Dense {
            w,
            b: Array1::zeros(outputs),
            norm: norm.then(|| LayerNorm {
                gamma: Array1::ones(outputs),
                beta: Array1::zeros(outputs),
            }),
            activation,
            dropout,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
            norm: None,
            activation,
            dropout: 0.0,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len() + self.norm.as_ref().map_or(0, |n| n.gamma.len() + n.beta.len())
    }

    pub fn check(&self) -> Result<()> {
        let out = self.outputs();
        if self.b.len() != out {
            return Err(Error::Contract(format!("bias width {} != {out}", self.b.len())));
        }
        if let Some(n) = &self.norm {
            if n.gamma.len() != out || n.beta.len() != out {
                return Err(Error::Contract("layer-norm width mismatch".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Contract(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let finite = self.w.iter().chain(self.b.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Contract("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>, mode: &mut Mode<'_>) -> Result<(Array2<f64>, DenseCache)> {
        if x.ncols() != self.inputs() {
            return Err(Error::Contract(format!(
                "input width {} != layer width {}",
                x.ncols(),
                self.inputs()
            )));
        }
        let z = x.dot(&self.w) + &self.b;
        let (y, xhat, inv_std) = match &self.norm {
            None => (z, None, None),
            Some(ln) => {
                let n = z.ncols() as f64;
                let mean = z.sum_axis(Axis(1)) / n;
                let centered = &z - &mean.view().insert_axis(Axis(1));
                let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / n;
                let inv = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
                let xhat = &centered * &inv.view().insert_axis(Axis(1));
                let y = &xhat * &ln.gamma + &ln.beta;
                (y, Some(xhat), Some(inv))
            }
        };
        let mut a = match self.activation {
            Activation::Identity => y.clone(),
            Activation::Relu => y.mapv(|v| v.max(0.0)),
        };
        let mask = match mode {
            Mode::Train(rng) if self.dropout > 0.0 => {
                let keep = 1.0 - self.dropout;
                let m = Array2::from_shape_fn(a.raw_dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                a *= &m;
                Some(m)
            }
            _ => None,
        };
        Ok((
            a,
            DenseCache {
                x: x.clone(),
                xhat,
                inv_std,
                y,
                mask,
            },
        ))
    }

    pub fn backward(&self, cache: &DenseCache, g_out: &Array2<f64>) -> Result<(DenseGrad, Array2<f64>)> {
        if g_out.raw_dim() != cache.y.raw_dim() {
            return Err(Error::Contract("output gradient shape does not match cache".into()));
        }
        let mut g = g_out.clone();
        if let Some(m) = &cache.mask {
            g *= m;
        }
        if self.activation == Activation::Relu {
            g.zip_mut_with(&cache.y, |gv, &y| {
                if y <= 0.0 {
                    *gv = 0.0
                }
            });
        }
        let (g_z, gamma, beta) = match (&self.norm, &cache.xhat, &cache.inv_std) {
            (Some(ln), Some(xhat), Some(inv)) => {
                let dgamma = (&g * xhat).sum_axis(Axis(0));
                let dbeta = g.sum_axis(Axis(0));
                let gx = &g * &ln.gamma;
                let n = gx.ncols() as f64;
                let s1 = gx.sum_axis(Axis(1)).insert_axis(Axis(1));
                let s2 = (&gx * xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
                let gz = (&gx * n - &s1 - &(xhat * &s2)) * &(inv / n).insert_axis(Axis(1));
                (gz, Some(dgamma), Some(dbeta))
            }
            (None, _, _) => (g, None, None),
            _ => return Err(Error::Contract("layer-norm cache missing".into())),
        };
        let grad = DenseGrad {
            w: cache.x.t().dot(&g_z),
            b: g_z.sum_axis(Axis(0)),
            gamma,
            beta,
        };
        let g_in = g_z.dot(&self.w.t());
        Ok((grad, g_in))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()];
        if let Some(n) = &mut self.norm {
            out.push(n.gamma.as_slice_mut().unwrap());
            out.push(n.beta.as_slice_mut().unwrap());
        }
        out
    }

    pub fn zero_grad(&self) -> DenseGrad {
        DenseGrad {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.len()),
            gamma: self.norm.as_ref().map(|n| Array1::zeros(n.gamma.len())),
            beta: self.norm.as_ref().map(|n| Array1::zeros(n.beta.len())),
        }
    }
}

/// Chain of dense layers. `version` changes whenever parameters are handed out mutably.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Dense>,
    #[serde(skip)]
    version: u64,
}

#[derive(Debug, Clone)]
pub struct Cache {
    version: u64,
    layers: Vec<DenseCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<DenseGrad>,
}

impl Grads {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(DenseGrad::slices).collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.layers.iter_mut().for_each(|l| l.scale(s));
    }

    pub fn add_assign(&mut self, o: &Grads) {
        for (a, b) in self.layers.iter_mut().zip(&o.layers) {
            a.add_assign(b);
        }
    }
}

/// Equality compares parameters only.
impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        let net = DenseNet { layers, version: 0 };
        net.check()?;
        Ok(net)
    }

    /// `sizes[0] -> ... -> sizes[last]`; hidden layers get ReLU, optional layer norm, and dropout;
    /// the output layer is linear.
    pub fn mlp(sizes: &[usize], hidden_norm: bool, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if i == last {
                    Dense::new(w[0], w[1], Activation::Identity, false, 0.0, rng)
                } else {
                    Dense::new(w[0], w[1], Activation::Relu, hidden_norm, dropout, rng)
                }
            })
            .collect();
        DenseNet { layers, version: 0 }
    }

    pub fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Contract("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.check()?;
            if i > 0 && self.layers[i - 1].outputs() != l.inputs() {
                return Err(Error::Contract(format!("layer {i} input width does not chain")));
            }
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn forward(&self, x: &Array2<f64>, mode: &mut Mode<'_>) -> Result<(Array2<f64>, Cache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let (out, c) = l.forward(&h, mode)?;
            caches.push(c);
            h = out;
        }
        Ok((
            h,
            Cache {
                version: self.version,
                layers: caches,
            },
        ))
    }

    /// Eval-mode forward without a cache.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, &mut Mode::Eval)?.0)
    }

    pub fn backward(&self, cache: &Cache, g_out: &Array2<f64>) -> Result<(Grads, Array2<f64>)> {
        if cache.version != self.version || cache.layers.len() != self.layers.len() {
            return Err(Error::Contract("stale cache: parameters changed since forward".into()));
        }
        let mut g = g_out.clone();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, c) in self.layers.iter().zip(&cache.layers).rev() {
            let (lg, gi) = l.backward(c, &g)?;
            grads.push(lg);
            g = gi;
        }
        grads.reverse();
        Ok((Grads { layers: grads }, g))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        self.layers.iter_mut().flat_map(Dense::params_mut).collect()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            layers: self.layers.iter().map(Dense::zero_grad).collect(),
        }
    }
}

/// Mean squared error over all entries and its gradient.
pub fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let diff = pred - target;
    let n = diff.len().max(1) as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}
