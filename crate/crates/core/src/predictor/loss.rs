//! Winner-takes-all regression with confidence cross-entropy and the auxiliary difficulty term.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::Outputs;
use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_aux: f64,
}

/// Supervision for one sample in the focal final-pose frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Target<'a> {
    pub future: &'a [Option<Vec2>],
    /// Aux regression targets; `None` where the horizon has no ground truth.
    pub aux: &'a [Option<f64>],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub wta: f64,
    pub cls: f64,
    pub aux: f64,
    /// Samples with at least one valid future step.
    pub used: usize,
}

pub struct LossGrads {
    pub positions: Array2<f64>,
    pub conf_logits: Array2<f64>,
    pub aux: Array2<f64>,
}

/// Index of the mode with the smallest mean L2 over valid steps, and that mean; ties go low.
pub fn best_mode(positions: &[f64], modes: usize, future: &[Option<Vec2>]) -> Option<(usize, f64)> {
    let t = future.len();
    let valid: Vec<usize> = (0..t).filter(|&s| future[s].is_some()).collect();
    if valid.is_empty() {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for k in 0..modes {
        let err = valid
            .iter()
            .map(|&s| {
                let g = future[s].unwrap();
                let i = (k * t + s) * 2;
                Vec2::new(positions[i] - g.x, positions[i + 1] - g.y).norm()
            })
            .sum::<f64>()
            / valid.len() as f64;
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((k, err));
        }
    }
    best
}

/// Mean loss over samples with a valid future; samples without one contribute nothing.
pub fn predictor_loss(out: &Outputs, targets: &[Target<'_>], w: &LossWeights) -> Result<(LossBreakdown, LossGrads)> {
    let n = out.positions.nrows();
    if targets.len() != n {
        return Err(Error::Contract(format!("{} targets for a batch of {n}", targets.len())));
    }
    let modes = out.confidences.ncols();
    let t = out.positions.ncols() / (2 * modes.max(1));
    let mut g = LossGrads {
        positions: Array2::zeros(out.positions.raw_dim()),
        conf_logits: Array2::zeros(out.conf_logits.raw_dim()),
        aux: Array2::zeros(out.aux.raw_dim()),
    };
    let mut b = LossBreakdown::default();
    let best: Vec<Option<(usize, f64)>> = targets
        .iter()
        .enumerate()
        .map(|(i, tg)| {
            if tg.future.len() != t {
                return Err(Error::Contract(format!("target has {} steps, model predicts {t}", tg.future.len())));
            }
            if tg.aux.len() != out.aux.ncols() {
                return Err(Error::Contract(format!("{} aux targets for {} outputs", tg.aux.len(), out.aux.ncols())));
            }
            Ok(best_mode(out.positions.row(i).as_slice().unwrap(), modes, tg.future))
        })
        .collect::<Result<_>>()?;
    b.used = best.iter().flatten().count();
    if b.used == 0 {
        return Ok((b, g));
    }
    let scale = 1.0 / b.used as f64;
    for (i, tg) in targets.iter().enumerate() {
        let Some((k, err)) = best[i] else { continue };
        b.wta += err * scale;
        let valid = tg.future.iter().filter(|f| f.is_some()).count() as f64;
        let pos = out.positions.row(i);
        for (s, gt) in tg.future.iter().enumerate() {
            let Some(gt) = gt else { continue };
            let j = (k * t + s) * 2;
            let d = Vec2::new(pos[j] - gt.x, pos[j + 1] - gt.y);
            let norm = d.norm();
            if norm > 0.0 {
                g.positions[[i, j]] = d.x / norm / valid * scale;
                g.positions[[i, j + 1]] = d.y / norm / valid * scale;
            }
        }
        if w.lambda_cls != 0.0 {
            let p = out.confidences.row(i);
            b.cls -= p[k].max(f64::MIN_POSITIVE).ln() * w.lambda_cls * scale;
            for c in 0..modes {
                let onehot = if c == k { 1.0 } else { 0.0 };
                g.conf_logits[[i, c]] = (p[c] - onehot) * w.lambda_cls * scale;
            }
        }
        if w.lambda_aux != 0.0 {
            let avail = tg.aux.iter().flatten().count();
            for (h, target) in tg.aux.iter().enumerate() {
                let Some(y) = target else { continue };
                let r = out.aux[[i, h]] - y;
                b.aux += r * r / avail as f64 * w.lambda_aux * scale;
                g.aux[[i, h]] = 2.0 * r / avail as f64 * w.lambda_aux * scale;
            }
        }
    }
    b.total = b.wta + b.cls + b.aux;
    Ok((b, g))
}
