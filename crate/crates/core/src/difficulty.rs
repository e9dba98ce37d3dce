//! Constant-velocity Kalman forecasting and the Kalman difficulty of agents and contexts.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::clustering::LabelRow;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scenario::{AgentKey, AgentState, AgentTrack, TimeConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KalmanConfig {
    /// White-acceleration standard deviation, m/s^2.
    pub process_noise: f64,
    /// Position measurement standard deviation, m.
    pub measurement_noise: f64,
    /// Forecast horizons in seconds.
    pub horizons: Vec<f64>,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            process_noise: 1.0,
            measurement_noise: 0.1,
            horizons: vec![2.0, 4.0, 6.0],
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self, timing: &TimeConfig) -> Result<()> {
        if !(self.process_noise > 0.0) || !(self.measurement_noise > 0.0) {
            return Err(Error::Validation("kalman noise scales must be positive".into()));
        }
        if self.horizons.is_empty() {
            return Err(Error::Validation("at least one kalman horizon is required".into()));
        }
        let steps = self.horizon_steps(timing);
        for (h, s) in self.horizons.iter().zip(&steps) {
            if *s == 0 || *s > timing.t_fut {
                return Err(Error::Validation(format!(
                    "horizon {h} s is outside the {} step future",
                    timing.t_fut
                )));
            }
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("kalman horizons must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Future step counts of the horizons (1-based after the last history state).
    pub fn horizon_steps(&self, timing: &TimeConfig) -> Vec<usize> {
        self.horizons
            .iter()
            .map(|h| (h / timing.dt).round().max(0.0) as usize)
            .collect()
    }
}

/// Posterior of a per-axis constant-velocity filter at the last history step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub position: Vec2,
    pub velocity: Vec2,
    /// 2x2 covariance `[pos, vel]` shared by both axes.
    pub cov: [[f64; 2]; 2],
}

/// Covariance propagation of the constant-velocity model under white acceleration `q`.
fn propagate(p: &[[f64; 2]; 2], dt: f64, q: f64) -> [[f64; 2]; 2] {
    let q2 = q * q;
    let p00 = p[0][0] + 2.0 * dt * p[0][1] + dt * dt * p[1][1] + q2 * dt.powi(4) / 4.0;
    let p01 = p[0][1] + dt * p[1][1] + q2 * dt.powi(3) / 2.0;
    let p11 = p[1][1] + q2 * dt * dt;
    [[p00, p01], [p01, p11]]
}

/// Runs the filter over the valid positions of `history`; the state is reported at its last index.
pub fn kalman_filter(history: &[AgentState], dt: f64, config: &KalmanConfig) -> Result<FilterState> {
    let valid: Vec<usize> = (0..history.len()).filter(|&i| history[i].valid).collect();
    if valid.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            found: valid.len(),
        });
    }
    let (i0, i1) = (valid[0], valid[1]);
    let gap = (i1 - i0) as f64 * dt;
    let p0 = history[i0].position;
    let v0 = (history[i1].position - p0) * (1.0 / gap);
    let r2 = config.measurement_noise.powi(2);
    let mut xs = [[p0.x, v0.x], [p0.y, v0.y]];
    let mut p = [[r2, r2 / gap], [r2 / gap, 2.0 * r2 / (gap * gap)]];
    for i in i0 + 1..history.len() {
        for x in &mut xs {
            x[0] += dt * x[1];
        }
        p = propagate(&p, dt, config.process_noise);
        if history[i].valid {
            let s = p[0][0] + r2;
            let k = [p[0][0] / s, p[1][0] / s];
            let z = [history[i].position.x, history[i].position.y];
            for (x, zi) in xs.iter_mut().zip(z) {
                let innov = zi - x[0];
                x[0] += k[0] * innov;
                x[1] += k[1] * innov;
            }
            let p01 = (1.0 - k[0]) * p[0][1];
            p = [[(1.0 - k[0]) * p[0][0], p01], [p01, p[1][1] - k[1] * p[0][1]]];
        }
    }
    Ok(FilterState {
        position: Vec2::new(xs[0][0], xs[1][0]),
        velocity: Vec2::new(xs[0][1], xs[1][1]),
        cov: p,
    })
}

/// Pure constant-velocity prediction for `steps` future steps after the history.
pub fn kalman_forecast(history: &[AgentState], steps: usize, dt: f64, config: &KalmanConfig) -> Result<Vec<Vec2>> {
    let st = kalman_filter(history, dt, config)?;
    Ok((1..=steps)
        .map(|k| st.position + st.velocity * (k as f64 * dt))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRecord {
    pub key: AgentKey,
    /// FDE per horizon; `None` where no ground truth is available for that horizon.
    pub fde: Vec<Option<f64>>,
    /// Mean of the available horizon FDEs; `None` marks an excluded agent.
    pub difficulty: Option<f64>,
}

/// Ground-truth future step used for a horizon: the horizon step, else the
/// nearest earlier valid step after the previous horizon.
fn horizon_target(future: &[AgentState], steps: &[usize], h: usize) -> Option<usize> {
    let lo = if h == 0 { 1 } else { steps[h - 1] + 1 };
    (lo..=steps[h].min(future.len())).rev().find(|&s| future[s - 1].valid)
}

pub fn kalman_difficulty(
    key: AgentKey,
    track: &AgentTrack,
    timing: &TimeConfig,
    config: &KalmanConfig,
) -> Result<DifficultyRecord> {
    config.validate(timing)?;
    let history = track.history(timing);
    let future = track.future(timing);
    let steps = config.horizon_steps(timing);
    let forecast = kalman_forecast(history, timing.t_fut, timing.dt, config)?;
    let fde: Vec<Option<f64>> = (0..steps.len())
        .map(|h| horizon_target(future, &steps, h).map(|s| (forecast[s - 1] - future[s - 1].position).norm()))
        .collect();
    let avail: Vec<f64> = fde.iter().flatten().copied().collect();
    let difficulty = (!avail.is_empty()).then(|| avail.iter().sum::<f64>() / avail.len() as f64);
    Ok(DifficultyRecord { key, fde, difficulty })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextStat {
    pub mean: f64,
    pub count: usize,
}

/// Mean difficulty per flattened context; `None` marks an empty context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDifficulty {
    pub ego: Vec<Option<ContextStat>>,
    pub social: Vec<Option<ContextStat>>,
}

/// Group-by mean over agents with a difficulty; keys of both tables must match exactly.
pub fn context_difficulty(
    labels: &[LabelRow],
    records: &[DifficultyRecord],
    contexts: usize,
) -> Result<ContextDifficulty> {
    let by_key: BTreeMap<&AgentKey, &DifficultyRecord> = records.iter().map(|r| (&r.key, r)).collect();
    if by_key.len() != records.len() {
        return Err(Error::Join("duplicate key in difficulty table".into()));
    }
    let label_keys: BTreeMap<&AgentKey, ()> = labels.iter().map(|l| (&l.key, ())).collect();
    if label_keys.len() != labels.len() {
        return Err(Error::Join("duplicate key in label table".into()));
    }
    if let Some(k) = records.iter().find(|r| !label_keys.contains_key(&r.key)) {
        return Err(Error::Join(format!("difficulty for {} has no label", k.key)));
    }
    let mut acc = [vec![(0.0, 0usize); contexts], vec![(0.0, 0usize); contexts]];
    for l in labels {
        let r = by_key
            .get(&l.key)
            .ok_or_else(|| Error::Join(format!("label for {} has no difficulty", l.key)))?;
        let Some(d) = r.difficulty else { continue };
        for (axis, c) in [(0, l.c_e), (1, l.c_s)] {
            let slot = acc[axis]
                .get_mut(c)
                .ok_or_else(|| Error::Join(format!("context {c} of {} out of range", l.key)))?;
            slot.0 += d;
            slot.1 += 1;
        }
    }
    let finish = |v: &[(f64, usize)]| {
        v.iter()
            .map(|&(s, n)| (n > 0).then(|| ContextStat { mean: s / n as f64, count: n }))
            .collect()
    };
    Ok(ContextDifficulty {
        ego: finish(&acc[0]),
        social: finish(&acc[1]),
    })
}

const HEADER_PREFIX: [&str; 2] = ["scenario_id", "agent_id"];

fn horizon_label(h: f64) -> String {
    format!("fde_{h}s")
}

pub fn write_difficulties<W: Write>(records: &[DifficultyRecord], horizons: &[f64], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = HEADER_PREFIX.iter().map(|s| s.to_string()).collect();
    header.extend(horizons.iter().map(|&h| horizon_label(h)));
    header.push("difficulty".into());
    wr.write_record(&header)?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for r in records {
        if r.fde.len() != horizons.len() {
            return Err(Error::Layout(format!("{} has {} horizons, expected {}", r.key, r.fde.len(), horizons.len())));
        }
        let mut row = vec![r.key.scenario_id.clone(), r.key.agent_id.clone()];
        row.extend(r.fde.iter().map(|&v| cell(v)));
        row.push(cell(r.difficulty));
        wr.write_record(&row)?;
    }
    wr.flush().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(())
}

/// Parses a difficulty table; returns the horizon labels found in the header and the records.
pub fn read_difficulties<R: Read>(r: R) -> Result<(Vec<String>, Vec<DifficultyRecord>)> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    let n = header.len();
    if n < 4 || header.iter().take(2).ne(HEADER_PREFIX) || &header[n - 1] != "difficulty" {
        return Err(Error::Layout(
            "difficulty table header must be scenario_id,agent_id,fde_*...,difficulty".into(),
        ));
    }
    let labels: Vec<String> = header.iter().skip(2).take(n - 3).map(String::from).collect();
    if let Some(bad) = labels.iter().find(|l| !l.starts_with("fde_")) {
        return Err(Error::Layout(format!("unexpected difficulty column `{bad}`")));
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != n {
            return Err(Error::Parse {
                line,
                field: "row".into(),
                message: format!("{} columns, expected {n}", rec.len()),
            });
        }
        let num = |c: usize| -> Result<Option<f64>> {
            let s = &rec[c];
            if s.is_empty() {
                return Ok(None);
            }
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(Some(v)),
                _ => Err(Error::Parse {
                    line,
                    field: header[c].to_string(),
                    message: format!("not a non-negative number: `{s}`"),
                }),
            }
        };
        let fde = (2..n - 1).map(num).collect::<Result<Vec<_>>>()?;
        let difficulty = num(n - 1)?;
        if difficulty.is_some() == fde.iter().all(Option::is_none) {
            return Err(Error::Parse {
                line,
                field: "difficulty".into(),
                message: "difficulty must be present exactly when some horizon is".into(),
            });
        }
        out.push(DifficultyRecord {
            key: AgentKey::new(&rec[0], &rec[1]),
            fde,
            difficulty,
        });
    }
    Ok((labels, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::AgentType;

    fn state(p: Vec2) -> AgentState {
        AgentState {
            position: p,
            valid: true,
            ..AgentState::INVALID
        }
    }

    fn track(f: impl Fn(usize) -> Option<Vec2>, timing: &TimeConfig) -> AgentTrack {
        AgentTrack {
            id: "0".into(),
            agent_type: AgentType::Vehicle,
            states: (0..timing.total())
                .map(|i| f(i).map(state).unwrap_or(AgentState::INVALID))
                .collect(),
        }
    }

    #[test]
    fn constant_velocity_is_exact() {
        let t = TimeConfig::default();
        let v = Vec2::new(3.0, -1.5);
        let tr = track(|i| Some(Vec2::new(5.0, 2.0) + v * (i as f64 * t.dt)), &t);
        let fc = kalman_forecast(tr.history(&t), t.t_fut, t.dt, &KalmanConfig::default()).unwrap();
        for (k, p) in fc.iter().enumerate() {
            assert!((*p - tr.states[t.t_hist + k].position).norm() < 1e-6);
        }
        let r = kalman_difficulty(AgentKey::new("s", "0"), &tr, &t, &KalmanConfig::default()).unwrap();
        assert!(r.difficulty.unwrap() < 1e-6);
    }

    #[test]
    fn stationary_stays_put() {
        let t = TimeConfig::default();
        let tr = track(|_| Some(Vec2::new(1.0, 1.0)), &t);
        let fc = kalman_forecast(tr.history(&t), 60, t.dt, &KalmanConfig::default()).unwrap();
        assert!((fc[59] - Vec2::new(1.0, 1.0)).norm() < 1e-9);
    }

    #[test]
    fn abrupt_stop_matches_extrapolation() {
        let t = TimeConfig::default();
        let speed = 8.0;
        let stop = Vec2::new(speed * t.last_hist() as f64 * t.dt, 0.0);
        let tr = track(
            |i| Some(if i < t.t_hist { Vec2::new(speed * i as f64 * t.dt, 0.0) } else { stop }),
            &t,
        );
        let r = kalman_difficulty(AgentKey::new("s", "0"), &tr, &t, &KalmanConfig::default()).unwrap();
        let expected = (2.0 + 4.0 + 6.0) / 3.0 * speed;
        assert!((r.difficulty.unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn truncated_future_averages_available_horizons() {
        let t = TimeConfig::default();
        let tr = track(|i| (i <= t.last_hist() + 40).then(|| Vec2::new(i as f64, 0.0)), &t);
        let mut tr2 = tr.clone();
        tr2.states[t.last_hist() + 40].valid = false;
        let r = kalman_difficulty(AgentKey::new("s", "0"), &tr2, &t, &KalmanConfig::default()).unwrap();
        assert!(r.fde[0].is_some() && r.fde[1].is_some() && r.fde[2].is_none());
        // constant velocity, so the earlier fallback step still has zero error
        assert!(r.difficulty.unwrap() < 1e-6);
    }

    #[test]
    fn too_little_history_or_future() {
        let t = TimeConfig::default();
        let tr = track(|i| (i == 3).then_some(Vec2::ZERO), &t);
        assert!(matches!(
            kalman_difficulty(AgentKey::new("s", "0"), &tr, &t, &KalmanConfig::default()),
            Err(Error::InsufficientHistory { needed: 2, found: 1 })
        ));
        let tr = track(|i| (i < t.t_hist).then_some(Vec2::ZERO), &t);
        let r = kalman_difficulty(AgentKey::new("s", "0"), &tr, &t, &KalmanConfig::default()).unwrap();
        assert_eq!(r.difficulty, None);
    }

    fn label(s: &str, c_e: usize, c_s: usize) -> LabelRow {
        LabelRow {
            key: AgentKey::new(s, "0"),
            agent_type: AgentType::Vehicle,
            c_e,
            c_s,
        }
    }

    fn rec(s: &str, d: f64) -> DifficultyRecord {
        DifficultyRecord {
            key: AgentKey::new(s, "0"),
            fde: vec![Some(d)],
            difficulty: Some(d),
        }
    }

    #[test]
    fn context_means() {
        let c = context_difficulty(&[label("a", 0, 1), label("b", 0, 2)], &[rec("a", 2.0), rec("b", 4.0)], 3).unwrap();
        assert_eq!(c.ego[0], Some(ContextStat { mean: 3.0, count: 2 }));
        assert_eq!(c.ego[1], None);
        assert_eq!(c.social[1].unwrap().mean, 2.0);
        assert_eq!(c.social[2].unwrap().mean, 4.0);
        assert!(matches!(
            context_difficulty(&[label("a", 0, 1)], &[rec("b", 1.0)], 3),
            Err(Error::Join(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            rec("a", 0.1),
            DifficultyRecord {
                key: AgentKey::new("b", "7"),
                fde: vec![None],
                difficulty: None,
            },
        ];
        let mut buf = Vec::new();
        write_difficulties(&recs, &[2.0], &mut buf).unwrap();
        let (labels, back) = read_difficulties(buf.as_slice()).unwrap();
        assert_eq!(labels, vec!["fde_2s".to_string()]);
        assert_eq!(back, recs);
        assert!(read_difficulties("scenario_id,agent_id,fde_2s,difficulty\na,0,-1,1\n".as_bytes()).is_err());
    }
}
