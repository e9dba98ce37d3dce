//! Finite-difference checks returning the max relative error of each component.

use ndarray::Array2;
use scenefactor::geometry::Vec2;
use scenefactor::nn::dec::{dec_loss_grad, dec_soft_assignment, dec_target, kl_divergence};
use scenefactor::nn::{Activation, Dense, DenseNet, Mode};
use scenefactor::predictor::{batch_loss, gate_softmax, predictor_loss, LossWeights, Outputs, Predictor, Target};

use super::*;

fn weighted_sum(y: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (y * r).sum()
}

fn flat(a: &Array2<f64>) -> Vec<Vec<f64>> {
    vec![a.iter().copied().collect()]
}

fn dense_params(d: &mut Dense) -> Vec<&mut [f64]> {
    d.params_mut()
}

fn net_params(n: &mut DenseNet) -> Vec<&mut [f64]> {
    n.params_mut()
}

fn pred_params(p: &mut Predictor) -> Vec<&mut [f64]> {
    p.net.params_mut()
}

/// One layer, parameters and input.
pub fn dense(act: Activation, norm: bool, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut layer = Dense::new(5, 4, act, norm, 0.0, &mut r);
    randomize(layer.params_mut(), 0.8, &mut r);
    let mut x = random_matrix(6, 5, 1.0, &mut r);
    let probe = random_matrix(6, 4, 1.0, &mut r);
    let (_, cache) = layer.forward(&x, &mut Mode::Eval).unwrap();
    let (g, gx) = layer.backward(&cache, &probe).unwrap();
    let analytic: Vec<Vec<f64>> = g.slices().iter().map(|s| s.to_vec()).collect();
    let n = analytic.len();
    let x0 = x.clone();
    let numeric = numeric_grad(
        &mut layer,
        dense_params,
        |l| weighted_sum(&l.forward(&x0, &mut Mode::Eval).unwrap().0, &probe),
        0..n,
    );
    let ngx = numeric_grad_matrix(&mut x, |xx| weighted_sum(&layer.forward(xx, &mut Mode::Eval).unwrap().0, &probe));
    max_rel_err(&analytic, &numeric).max(max_rel_err(&flat(&gx), &flat(&ngx)))
}

pub fn stacked(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut net = DenseNet::mlp(&[4, 6, 5, 3], true, 0.0, &mut r);
    randomize(net.params_mut(), 0.7, &mut r);
    let x = random_matrix(5, 4, 1.0, &mut r);
    let probe = random_matrix(5, 3, 1.0, &mut r);
    let (_, cache) = net.forward(&x, &mut Mode::Eval).unwrap();
    let (g, _) = net.backward(&cache, &probe).unwrap();
    let analytic: Vec<Vec<f64>> = g.slices().iter().map(|s| s.to_vec()).collect();
    let n = analytic.len();
    let numeric = numeric_grad(&mut net, net_params, |m| weighted_sum(&m.predict(&x).unwrap(), &probe), 0..n);
    max_rel_err(&analytic, &numeric)
}

/// KL(P || Q) with fixed target, w.r.t. latents and centroids.
pub fn dec(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut z = random_matrix(7, 3, 2.0, &mut r);
    let mut mu = random_matrix(4, 3, 2.0, &mut r);
    let p = dec_target(&dec_soft_assignment(&z, &mu));
    let (_, dz, dmu) = dec_loss_grad(&z, &mu, &p);
    let mu0 = mu.clone();
    let nz = numeric_grad_matrix(&mut z, |zz| kl_divergence(&p, &dec_soft_assignment(zz, &mu0)));
    let z0 = z.clone();
    let nmu = numeric_grad_matrix(&mut mu, |mm| kl_divergence(&p, &dec_soft_assignment(&z0, mm)));
    max_rel_err(&flat(&dz), &flat(&nz)).max(max_rel_err(&flat(&dmu), &flat(&nmu)))
}

fn outputs(positions: Array2<f64>, logits: Array2<f64>, aux: Array2<f64>) -> Outputs {
    let modes = logits.ncols();
    let n = positions.nrows();
    Outputs {
        h: Array2::zeros((n, 1)),
        h_refined: Array2::zeros((n, 1)),
        confidences: gate_softmax(&logits, modes),
        positions,
        conf_logits: logits,
        aux,
        gate_weights: None,
    }
}

/// `(wta, confidence, aux)` errors of the loss w.r.t. its three inputs.
pub fn loss_terms(seed: u64) -> (f64, f64, f64) {
    let mut r = rng(seed);
    let (n, modes, t) = (5, 3, 4);
    let mut pos = random_matrix(n, modes * t * 2, 4.0, &mut r);
    let mut logits = random_matrix(n, modes, 1.0, &mut r);
    let mut aux = random_matrix(n, 3, 1.0, &mut r);
    let futures: Vec<Vec<Option<Vec2>>> = (0..n)
        .map(|i| (0..t).map(|s| (i != 2 || s % 2 == 0).then(|| Vec2::new(s as f64 + i as f64, 0.5 * s as f64))).collect())
        .collect();
    let aux_t: Vec<Vec<Option<f64>>> = (0..n).map(|i| vec![Some(0.3 * i as f64), None, Some(1.0)]).collect();
    let targets: Vec<Target<'_>> = futures.iter().zip(&aux_t).map(|(f, a)| Target { future: f, aux: a }).collect();
    let w = LossWeights {
        lambda_cls: 0.7,
        lambda_aux: 0.4,
    };
    let loss = |p: &Array2<f64>, l: &Array2<f64>, a: &Array2<f64>| {
        predictor_loss(&outputs(p.clone(), l.clone(), a.clone()), &targets, &w).unwrap().0.total
    };
    let (_, g) = predictor_loss(&outputs(pos.clone(), logits.clone(), aux.clone()), &targets, &w).unwrap();
    let (l0, a0) = (logits.clone(), aux.clone());
    let np = numeric_grad_matrix(&mut pos, |p| loss(p, &l0, &a0));
    let p0 = pos.clone();
    let nl = numeric_grad_matrix(&mut logits, |l| loss(&p0, l, &a0));
    let l0 = logits.clone();
    let na = numeric_grad_matrix(&mut aux, |a| loss(&p0, &l0, a));
    (
        max_rel_err(&flat(&g.positions), &flat(&np)),
        max_rel_err(&flat(&g.conf_logits), &flat(&nl)),
        max_rel_err(&flat(&g.aux), &flat(&na)),
    )
}

/// Whole miniature predictor, every parameter slice.
pub fn end_to_end(use_tmn: bool, use_aux: bool, seed: u64) -> f64 {
    let arch = mini_arch(use_tmn, use_aux);
    let inputs = 6;
    let mut model = mini_predictor(&arch, inputs, seed);
    let mut r = rng(seed + 100);
    // a nonzero projection makes the gating path and module bank carry gradient
    randomize(model.net.projection.params_mut(), 0.5, &mut r);
    let samples = mini_samples(&arch, inputs, 6, seed);
    let refs: Vec<_> = samples.iter().collect();
    let w = LossWeights {
        lambda_cls: 0.5,
        lambda_aux: if use_aux { 0.3 } else { 0.0 },
    };
    let (_, g) = batch_loss(&model, &refs, &w).unwrap();
    let analytic: Vec<Vec<f64>> = g.slices(use_tmn).iter().map(|s| s.to_vec()).collect();
    let n = analytic.len();
    let numeric = numeric_grad(&mut model, pred_params, |m| batch_loss(m, &refs, &w).unwrap().0.total, 0..n);
    max_rel_err(&analytic, &numeric)
}
