//! K-means context discretization and silhouette validation.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{AgentKey, AgentType};
use crate::vectorize::Axis;

pub const DEFAULT_K: usize = 11;
pub const MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextModel {
    pub axis: Axis,
    pub agent_type: AgentType,
    /// `k x latent`, ordered by descending training cluster size.
    pub centroids: Array2<f64>,
}

impl ContextModel {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn assign(&self, latent: ArrayView1<'_, f64>) -> usize {
        nearest(&self.centroids, latent).0
    }
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lower id.
fn nearest(centroids: &Array2<f64>, x: ArrayView1<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().unwrap_or(&0.0)
    }
}

fn plus_plus(x: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(x.row(i), x.row(next)));
        }
    }
    Array2::from_shape_fn((k, x.ncols()), |(j, d)| x[[chosen[j], d]])
}

/// Seeded k-means++ followed by Lloyd iterations; cluster ids ordered by descending size.
pub fn kmeans(x: &Array2<f64>, k: usize, seed: u64) -> Result<KMeansFit> {
    let n = x.nrows();
    if k == 0 || n < k {
        return Err(Error::Contract(format!("k-means needs at least k={k} points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(x, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (j, d) = nearest(&centroids, x.row(i));
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
            dist[i] = d;
            inertia += d;
        }
        trace.push(inertia);
        if !changed || iterations >= MAX_ITER {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let j = assignments[i];
            counts[j] += 1;
            let mut row = sums.row_mut(j);
            row += &x.row(i);
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let mut c = centroids.row_mut(j);
                c.assign(&(&sums.row(j) / counts[j] as f64));
            } else {
                // reseed at the point farthest from its centroid
                let far = (0..n)
                    .filter(|i| !taken[*i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dist[b] >= dist[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("n >= k leaves a candidate");
                taken[far] = true;
                dist[far] = 0.0;
                centroids.row_mut(j).assign(&x.row(far));
            }
        }
    }
    let (centroids, assignments) = canonicalize(x, &centroids, &assignments, k);
    Ok(KMeansFit {
        centroids,
        assignments,
        inertia_trace: trace,
        iterations,
    })
}

fn canonicalize(x: &Array2<f64>, centroids: &Array2<f64>, assignments: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut counts = vec![0usize; k];
    for &a in assignments {
        counts[a] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| counts[*b].cmp(&counts[*a]).then(a.cmp(b)));
    let sorted = Array2::from_shape_fn(centroids.raw_dim(), |(j, d)| centroids[[order[j], d]]);
    let relabeled = (0..x.nrows()).map(|i| nearest(&sorted, x.row(i)).0).collect();
    (sorted, relabeled)
}

/// Mean silhouette with Euclidean distance; singleton members score 0 and `0/0 := 0`.
pub fn silhouette(x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::Contract("one label per point required".into()));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let present = sizes.iter().filter(|s| **s > 0).count();
    if present < 2 {
        return Err(Error::Undefined(format!("silhouette needs two non-empty clusters, found {present}")));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += sq_dist(x.row(i), x.row(j)).sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|c| *c != own && sizes[*c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Flattened context id of a per-type cluster.
pub fn flat_context(agent_type: AgentType, cluster: usize, k: usize) -> usize {
    agent_type.index() * k + cluster
}

/// Exactly one context model per (axis, agent type).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextRegistry {
    pub k: usize,
    models: BTreeMap<String, ContextModel>,
}

fn reg_key(axis: Axis, t: AgentType) -> String {
    format!("{}/{}", axis.name(), t.name())
}

impl ContextRegistry {
    pub fn new(k: usize) -> Self {
        ContextRegistry {
            k,
            models: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, model: ContextModel) -> Result<()> {
        if model.k() != self.k {
            return Err(Error::Registry(format!("model has k={} but registry uses k={}", model.k(), self.k)));
        }
        let key = reg_key(model.axis, model.agent_type);
        if self.models.contains_key(&key) {
            return Err(Error::Registry(format!("duplicate context model for {key}")));
        }
        self.models.insert(key, model);
        Ok(())
    }

    pub fn get(&self, axis: Axis, t: AgentType) -> Result<&ContextModel> {
        self.models
            .get(&reg_key(axis, t))
            .ok_or_else(|| Error::Registry(format!("no context model for {}", reg_key(axis, t))))
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Number of flattened contexts per axis.
    pub fn contexts(&self) -> usize {
        AgentType::ALL.len() * self.k
    }
}

/// Flattened ego and social context of one focal agent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelRow {
    pub key: AgentKey,
    pub agent_type: AgentType,
    pub c_e: usize,
    pub c_s: usize,
}

/// Latents of one focal agent on both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub key: AgentKey,
    pub agent_type: AgentType,
    pub ego: Vec<f64>,
    pub social: Vec<f64>,
}

pub fn assign_contexts(rows: &[LatentRow], registry: &ContextRegistry) -> Result<Vec<LabelRow>> {
    rows.iter()
        .map(|r| {
            let e = registry.get(Axis::Ego, r.agent_type)?;
            let s = registry.get(Axis::Social, r.agent_type)?;
            Ok(LabelRow {
                key: r.key.clone(),
                agent_type: r.agent_type,
                c_e: flat_context(r.agent_type, e.assign(ArrayView1::from(&r.ego)), registry.k),
                c_s: flat_context(r.agent_type, s.assign(ArrayView1::from(&r.social)), registry.k),
            })
        })
        .collect()
}

pub fn write_labels<W: Write>(rows: &[LabelRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["scenario_id", "agent_id", "agent_type", "c_e", "c_s"])?;
    for r in rows {
        wr.write_record([
            r.key.scenario_id.as_str(),
            r.key.agent_id.as_str(),
            r.agent_type.name(),
            &r.c_e.to_string(),
            &r.c_s.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(())
}

pub fn read_labels<R: Read>(r: R) -> Result<Vec<LabelRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    if header.iter().ne(["scenario_id", "agent_id", "agent_type", "c_e", "c_s"]) {
        return Err(Error::Layout("label table header must be scenario_id,agent_id,agent_type,c_e,c_s".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |name: &str, msg: String| Error::Parse {
            line,
            field: name.into(),
            message: msg,
        };
        if rec.len() != 5 {
            return Err(field("row", format!("{} columns, expected 5", rec.len())));
        }
        let agent_type = rec[2].parse::<AgentType>().map_err(|e| field("agent_type", e.to_string()))?;
        let c_e = rec[3].parse().map_err(|_| field("c_e", format!("not an id: `{}`", &rec[3])))?;
        let c_s = rec[4].parse().map_err(|_| field("c_s", format!("not an id: `{}`", &rec[4])))?;
        out.push(LabelRow {
            key: AgentKey::new(&rec[0], &rec[1]),
            agent_type,
            c_e,
            c_s,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn separated_pairs() {
        let x = array![[0.0], [0.1], [10.0], [10.1]];
        let fit = kmeans(&x, 2, 3).unwrap();
        let mut c: Vec<f64> = fit.centroids.column(0).to_vec();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((c[0] - 0.05).abs() < 1e-12 && (c[1] - 10.05).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let x = array![[0.0, 1.0], [2.0, 3.0], [5.0, -1.0]];
        assert_eq!(kmeans(&x, 3, 0).unwrap().inertia(), 0.0);
        assert!(matches!(kmeans(&x, 4, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn ids_sorted_by_size() {
        let x = array![[0.0], [0.1], [0.2], [10.0]];
        let fit = kmeans(&x, 2, 9).unwrap();
        assert_eq!(fit.assignments, vec![0, 0, 0, 1]);
    }

    #[test]
    fn silhouette_cases() {
        let x = array![[0.0], [1e-6], [10.0], [10.0 + 1e-6]];
        assert!(silhouette(&x, &[0, 0, 1, 1]).unwrap() > 0.99);
        let same = array![[1.0], [1.0], [1.0], [1.0]];
        assert_eq!(silhouette(&same, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(matches!(silhouette(&x, &[0, 0, 0, 0]), Err(Error::Undefined(_))));
    }

    #[test]
    fn assignment_ties_and_registry() {
        let m = ContextModel {
            axis: Axis::Ego,
            agent_type: AgentType::Vehicle,
            centroids: array![[0.0], [1.0], [-1.0], [3.0]],
        };
        assert_eq!(m.assign(ArrayView1::from(&[3.0])), 3);
        assert_eq!(m.assign(ArrayView1::from(&[0.5])), 0);
        let mut reg = ContextRegistry::new(4);
        reg.insert(m.clone()).unwrap();
        assert!(matches!(reg.insert(m), Err(Error::Registry(_))));
        assert!(matches!(reg.get(Axis::Social, AgentType::Vehicle), Err(Error::Registry(_))));
    }

    #[test]
    fn label_csv_round_trip() {
        let rows = vec![LabelRow {
            key: AgentKey::new("s,1", "a"),
            agent_type: AgentType::Cyclist,
            c_e: 23,
            c_s: 30,
        }];
        let mut buf = Vec::new();
        write_labels(&rows, &mut buf).unwrap();
        assert_eq!(read_labels(buf.as_slice()).unwrap(), rows);
    }
}
