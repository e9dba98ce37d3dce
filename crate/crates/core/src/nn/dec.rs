//! Deep embedding clustering objective with a Student-t kernel (one degree of freedom).

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecState {
    /// `k x latent`.
    pub centroids: Array2<f64>,
    /// Soft assignments of the training latents, `n x k`.
    pub q: Array2<f64>,
    /// Sharpened targets, `n x k`.
    pub p: Array2<f64>,
}

fn kernel(latents: &Array2<f64>, centroids: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((latents.nrows(), centroids.nrows()), |(i, j)| {
        let d: f64 = latents
            .row(i)
            .iter()
            .zip(centroids.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        1.0 / (1.0 + d)
    })
}

fn normalize_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

/// `q_ij ∝ (1 + |z_i - mu_j|^2)^-1`, rows summing to one.
pub fn dec_soft_assignment(latents: &Array2<f64>, centroids: &Array2<f64>) -> Array2<f64> {
    normalize_rows(kernel(latents, centroids))
}

/// `p_ij ∝ q_ij^2 / f_j` with cluster frequencies `f_j = sum_i q_ij`.
pub fn dec_target(q: &Array2<f64>) -> Array2<f64> {
    let f = q.sum_axis(Axis(0));
    let mut p = q.mapv(|v| v * v);
    for mut row in p.rows_mut() {
        for (v, fj) in row.iter_mut().zip(f.iter()) {
            *v = if *fj > 0.0 { *v / fj } else { 0.0 };
        }
    }
    normalize_rows(p)
}

/// Mean over rows of `KL(P_i || Q_i)`; `0 log 0 = 0`.
pub fn kl_divergence(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    let n = p.nrows().max(1) as f64;
    p.iter()
        .zip(q.iter())
        .map(|(&pv, &qv)| if pv > 0.0 { pv * (pv / qv).ln() } else { 0.0 })
        .sum::<f64>()
        / n
}

/// Mean KL loss with fixed `p` and its gradients w.r.t. latents and centroids.
pub fn dec_loss_grad(
    latents: &Array2<f64>,
    centroids: &Array2<f64>,
    p: &Array2<f64>,
) -> (f64, Array2<f64>, Array2<f64>) {
    let w = kernel(latents, centroids);
    let q = normalize_rows(w.clone());
    let loss = kl_divergence(p, &q);
    let n = latents.nrows().max(1) as f64;
    let mut dz = Array2::zeros(latents.raw_dim());
    let mut dmu = Array2::zeros(centroids.raw_dim());
    for i in 0..latents.nrows() {
        for j in 0..centroids.nrows() {
            let c = 2.0 * w[[i, j]] * (p[[i, j]] - q[[i, j]]) / n;
            for d in 0..latents.ncols() {
                let diff = latents[[i, d]] - centroids[[j, d]];
                dz[[i, d]] += c * diff;
                dmu[[j, d]] -= c * diff;
            }
        }
    }
    (loss, dz, dmu)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn equidistant_is_uniform() {
        let q = dec_soft_assignment(&array![[0.0, 0.0]], &array![[1.0, 0.0], [-1.0, 0.0]]);
        assert_eq!(q, array![[0.5, 0.5]]);
    }

    #[test]
    fn coincident_point_dominates_and_decays_with_distance() {
        let mu = array![[0.0], [50.0]];
        let near = dec_soft_assignment(&array![[0.0]], &mu);
        assert!(near[[0, 0]] > 0.999);
        let mid = dec_soft_assignment(&array![[5.0]], &mu);
        assert!(mid[[0, 0]] < near[[0, 0]]);
    }

    #[test]
    fn target_fixed_points() {
        assert_eq!(dec_target(&array![[0.5, 0.5]]), array![[0.5, 0.5]]);
        let p = dec_target(&array![[0.9, 0.1]]);
        assert!((p[[0, 0]] - 0.9).abs() < 1e-15 && (p[[0, 1]] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn kl_zero_iff_equal() {
        let q = array![[0.3, 0.7], [0.5, 0.5]];
        assert_eq!(kl_divergence(&q, &q), 0.0);
        assert!(kl_divergence(&array![[0.4, 0.6], [0.5, 0.5]], &q) > 0.0);
    }
}
