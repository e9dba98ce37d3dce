//! Scene inputs for the predictor, all expressed in the focal final-pose frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ego::{assign_lane, tcd_proximity};
use crate::features::{FeatureConfig, FocalContext};
use crate::geometry::{frenet_to_world, normalize_angle, project_onto_polyline, Pose, Vec2};
use crate::scenario::{AgentKey, AgentType, Scenario, TimeConfig};

pub const HISTORY_FEATURES: usize = 7;
pub const NEIGHBOR_FEATURES: usize = 10;
pub const LANE_POINTS: usize = 6;
pub const LANE_SPACING: f64 = 10.0;
pub const TCD_FEATURES: usize = 4;

/// Input width for `t_hist` history steps.
pub fn input_width(t_hist: usize) -> usize {
    t_hist * HISTORY_FEATURES + 2 * NEIGHBOR_FEATURES + 1 + 2 * LANE_POINTS + 1 + 4 * TCD_FEATURES
}

fn type_onehot(t: AgentType) -> [f64; 3] {
    let mut o = [0.0; 3];
    o[t.index()] = 1.0;
    o
}

/// Flattened scene input and the focal final pose that defines its frame.
///
/// Layout: focal history `(x, y, vx, vy, cos dh, sin dh, valid)` per step; mean then max
/// pool over up to `neighbors` nearest agents `(x, y, vx, vy, cos dh, sin dh, type[3], dist)`
/// and the neighbor fill ratio; lane centerline points ahead and a lane flag; per device
/// kind `(present, distance, cos bearing, sin bearing)` of the closest forward device.
pub fn scene_inputs(
    scenario: &Scenario,
    focal_id: &str,
    timing: &TimeConfig,
    features: &FeatureConfig,
    neighbors: usize,
) -> Result<(Vec<f64>, Pose)> {
    let ctx = FocalContext::new(scenario, focal_id, timing)?;
    let pose = ctx.pose;
    let mut out = Vec::with_capacity(input_width(timing.t_hist));
    for s in ctx.track.history(timing) {
        if s.valid {
            let p = pose.to_local(s.position);
            let v = pose.dir_to_local(s.velocity);
            let dh = normalize_angle(s.heading - pose.heading);
            out.extend([p.x, p.y, v.x, v.y, dh.cos(), dh.sin(), 1.0]);
        } else {
            out.extend([0.0; HISTORY_FEATURES]);
        }
    }

    let last = timing.last_hist();
    let mut near: Vec<(f64, usize)> = scenario
        .agents
        .iter()
        .enumerate()
        .filter(|&(i, a)| i != ctx.focal_index && a.states.get(last).is_some_and(|s| s.valid))
        .map(|(i, a)| (a.states[last].position.distance(pose.position), i))
        .filter(|&(d, _)| d <= features.interaction_radius)
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    near.truncate(neighbors);
    let mut mean = [0.0; NEIGHBOR_FEATURES];
    let mut max = [0.0; NEIGHBOR_FEATURES];
    for (rank, &(d, i)) in near.iter().enumerate() {
        let a = &scenario.agents[i];
        let s = &a.states[last];
        let p = pose.to_local(s.position);
        let v = pose.dir_to_local(s.velocity);
        let dh = normalize_angle(s.heading - pose.heading);
        let t = type_onehot(a.agent_type);
        let f = [p.x, p.y, v.x, v.y, dh.cos(), dh.sin(), t[0], t[1], t[2], d];
        for c in 0..NEIGHBOR_FEATURES {
            mean[c] += f[c] / near.len() as f64;
            max[c] = if rank == 0 { f[c] } else { max[c].max(f[c]) };
        }
    }
    out.extend(mean);
    out.extend(max);
    out.push(if neighbors == 0 { 0.0 } else { near.len() as f64 / neighbors as f64 });

    let lane = assign_lane(
        &ctx.track,
        &scenario.map,
        timing.t_hist,
        features.lane_heading_thresh_deg.to_radians(),
        features.lane_lateral_thresh,
    );
    let lane_pts = lane.and_then(|l| {
        let poly = &scenario.map[l.lane_ref];
        let proj = project_onto_polyline(&poly.points, &poly.arc, pose.position)?;
        let end = *poly.arc.last()?;
        (0..LANE_POINTS)
            .map(|j| {
                let s = (proj.s + j as f64 * LANE_SPACING).min(end);
                frenet_to_world(&poly.points, &poly.arc, s, 0.0).map(|w| pose.to_local(w))
            })
            .collect::<Option<Vec<Vec2>>>()
    });
    match lane_pts {
        Some(pts) => {
            for p in pts {
                out.extend([p.x, p.y]);
            }
            out.push(1.0);
        }
        None => out.extend([0.0; 2 * LANE_POINTS + 1]),
    }

    let (_, forward) = tcd_proximity(&pose, &scenario.map);
    for f in forward {
        match f {
            Some(t) => out.extend([1.0, t.distance, t.relative_heading.cos(), t.relative_heading.sin()]),
            None => out.extend([0.0; TCD_FEATURES]),
        }
    }
    debug_assert_eq!(out.len(), input_width(timing.t_hist));
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite predictor input for {}/{focal_id}", scenario.scenario_id)));
    }
    Ok((out, pose))
}

/// Ground-truth future of the raw focal track in the focal final-pose frame.
pub fn local_future(scenario: &Scenario, focal_id: &str, timing: &TimeConfig, pose: &Pose) -> Result<Vec<Option<Vec2>>> {
    let a = scenario
        .agent(focal_id)
        .ok_or_else(|| Error::Validation(format!("unknown agent `{focal_id}` in `{}`", scenario.scenario_id)))?;
    Ok(a.future(timing)
        .iter()
        .map(|s| s.valid.then(|| pose.to_local(s.position)))
        .chain(std::iter::repeat(None))
        .take(timing.t_fut)
        .collect())
}

/// Everything the predictor consumes for one focal agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSample {
    pub key: AgentKey,
    pub agent_type: AgentType,
    pub inputs: Vec<f64>,
    /// Ego then social latent from the train-split autoencoders; empty when unavailable.
    pub latent: Vec<f64>,
    pub future: Vec<Option<Vec2>>,
    /// Kalman FDE per horizon, meters.
    pub kalman: Vec<Option<f64>>,
    pub pose: Pose,
}

pub fn build_sample(
    scenario: &Scenario,
    focal_id: &str,
    timing: &TimeConfig,
    features: &FeatureConfig,
    neighbors: usize,
    kalman: Vec<Option<f64>>,
) -> Result<PredictorSample> {
    let (inputs, pose) = scene_inputs(scenario, focal_id, timing, features, neighbors)?;
    let agent_type = scenario
        .agent(focal_id)
        .map(|a| a.agent_type)
        .ok_or_else(|| Error::Validation(format!("unknown agent `{focal_id}`")))?;
    Ok(PredictorSample {
        key: AgentKey::new(&scenario.scenario_id, focal_id),
        agent_type,
        inputs,
        latent: Vec::new(),
        future: local_future(scenario, focal_id, timing, &pose)?,
        kalman,
        pose,
    })
}
