//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod fd;

use std::ops::Range;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenefactor::clustering::{flat_context, kmeans, LabelRow};
use scenefactor::difficulty::{kalman_difficulty, DifficultyRecord, KalmanConfig};
use scenefactor::features::{extract_agent, FeatureConfig};
use scenefactor::geometry::{Pose, Vec2};
use scenefactor::predictor::{Architecture, InputScaler, Network, Predictor, PredictorSample};
use scenefactor::scenario::{synthesize_corpus, AgentKey, AgentType, SynthConfig, TimeConfig};
use scenefactor::vectorize::{build_vector, vector_schema, Axis, Features, Standardizer};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error; below it errors are effectively absolute.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

pub fn max_rel_err(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| {
            assert_eq!(a.len(), n.len());
            a.iter().zip(n).map(|(x, y)| rel_err(*x, *y))
        })
        .fold(0.0, f64::max)
}

/// Central differences of `loss` over parameter slices `range` of `params(model)`.
pub fn numeric_grad<M>(
    model: &mut M,
    params: fn(&mut M) -> Vec<&mut [f64]>,
    loss: impl Fn(&M) -> f64,
    range: Range<usize>,
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for si in range {
        let len = params(model)[si].len();
        let mut g = Vec::with_capacity(len);
        for j in 0..len {
            let old = params(model)[si][j];
            params(model)[si][j] = old + FD_STEP;
            let up = loss(model);
            params(model)[si][j] = old - FD_STEP;
            let down = loss(model);
            params(model)[si][j] = old;
            g.push((up - down) / (2.0 * FD_STEP));
        }
        out.push(g);
    }
    out
}

pub fn numeric_grad_matrix(x: &mut Array2<f64>, loss: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let old = x[[i, j]];
        x[[i, j]] = old + FD_STEP;
        let up = loss(x);
        x[[i, j]] = old - FD_STEP;
        let down = loss(x);
        x[[i, j]] = old;
        g[[i, j]] = (up - down) / (2.0 * FD_STEP);
    }
    g
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, r: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-scale..scale))
}

pub fn randomize(slices: Vec<&mut [f64]>, scale: f64, r: &mut ChaCha8Rng) {
    for s in slices {
        for v in s.iter_mut() {
            *v = r.random_range(-scale..scale);
        }
    }
}

/// Miniature predictor architecture for gradient checks.
pub fn mini_arch(use_tmn: bool, use_aux: bool) -> Architecture {
    Architecture {
        d_h: 8,
        d_mod: 6,
        tmn_layers: 2,
        tmn_modules: 3,
        gating_hidden: vec![5],
        encoder_hidden: vec![7],
        decoder_hidden: vec![7],
        modes: 3,
        t_fut: 4,
        latent_dim: 4,
        aux_outputs: 3,
        use_tmn,
        use_aux,
    }
}

pub fn mini_predictor(arch: &Architecture, inputs: usize, seed: u64) -> Predictor {
    Predictor {
        scaler: InputScaler {
            mean: vec![0.0; inputs],
            std: vec![1.0; inputs],
        },
        net: Network::new(arch, inputs, seed).unwrap(),
        aux_scale: 10.0,
    }
}

pub fn mini_samples(arch: &Architecture, inputs: usize, n: usize, seed: u64) -> Vec<PredictorSample> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| PredictorSample {
            key: AgentKey::new(format!("s{i}"), "a"),
            agent_type: AgentType::Vehicle,
            inputs: (0..inputs).map(|_| r.random_range(-1.0..1.0)).collect(),
            latent: (0..arch.latent_dim).map(|_| r.random_range(-1.0..1.0)).collect(),
            future: (0..arch.t_fut)
                .map(|t| {
                    (i % 3 != 0 || t < arch.t_fut - 1)
                        .then(|| Vec2::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)))
                })
                .collect(),
            kalman: (0..arch.aux_outputs)
                .map(|h| (i % 4 != 1 || h == 0).then(|| r.random_range(0.0..30.0)))
                .collect(),
            pose: Pose::new(Vec2::new(0.0, 0.0), 0.0),
        })
        .collect()
}

/// Labels from k-means on standardized raw vectors and real Kalman difficulties of one
/// small synthetic corpus. Returns `(labels, records, contexts)`.
pub fn small_split_inputs(per_archetype: usize, k: usize, seed: u64) -> (Vec<LabelRow>, Vec<DifficultyRecord>, usize) {
    let timing = TimeConfig::default();
    let fc = FeatureConfig::default();
    let kc = KalmanConfig::default();
    let mut sc = SynthConfig::uniform(per_archetype);
    sc.timing = timing;
    let corpus = synthesize_corpus(&sc, seed).unwrap();
    let mut rows: Vec<(AgentKey, AgentType, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut records = Vec::new();
    let ego_schema = vector_schema(Axis::Ego, timing.dt);
    let soc_schema = vector_schema(Axis::Social, timing.dt);
    for s in &corpus {
        for t in s.focal_tracks() {
            let Ok((ego, social)) = extract_agent(s, &t.id, &timing, &fc) else { continue };
            let key = AgentKey::new(&s.scenario_id, &t.id);
            let rec = kalman_difficulty(key.clone(), t, &timing, &kc).unwrap();
            if rec.difficulty.is_none() {
                continue;
            }
            records.push(rec);
            rows.push((
                key,
                t.agent_type,
                build_vector(Features::Ego(&ego), &ego_schema).unwrap().values,
                build_vector(Features::Social(&social), &soc_schema).unwrap().values,
            ));
        }
    }
    let mut labels: Vec<LabelRow> = rows
        .iter()
        .map(|(key, t, _, _)| LabelRow {
            key: key.clone(),
            agent_type: *t,
            c_e: 0,
            c_s: 0,
        })
        .collect();
    for (axis, schema) in [(Axis::Ego, &ego_schema), (Axis::Social, &soc_schema)] {
        for t in AgentType::ALL {
            let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].1 == t).collect();
            if idx.is_empty() {
                continue;
            }
            let raw: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| if axis == Axis::Ego { rows[i].2.clone() } else { rows[i].3.clone() })
                .collect();
            let st = Standardizer::fit(&raw, schema).unwrap();
            let kk = k.min(idx.len());
            let z: Vec<Vec<f64>> = raw.iter().map(|r| st.transform(r)).collect();
            let x = Array2::from_shape_fn((idx.len(), schema.width()), |(i, d)| z[i][d]);
            let fit = kmeans(&x, kk, seed ^ (t.index() as u64 + 1)).unwrap();
            for (j, &i) in idx.iter().enumerate() {
                let c = flat_context(t, fit.assignments[j], k);
                match axis {
                    Axis::Ego => labels[i].c_e = c,
                    Axis::Social => labels[i].c_s = c,
                }
            }
        }
    }
    (labels, records, AgentType::ALL.len() * k)
}
