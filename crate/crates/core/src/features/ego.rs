//! Focal-agent kinematics, lane relation, and traffic-control proximity.

use serde::{Deserialize, Serialize};

use super::{FeatureConfig, FocalContext};
use crate::geometry::{closest_point_on_polyline, normalize_angle, project_onto_polyline, Pose, Vec2};
use crate::scenario::{AgentTrack, LaneType, MapKind, MapPolyline, TCD_KINDS};

/// History expressed in the final-pose frame, restricted to the valid span.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RelKinematics {
    /// First history index of the span.
    pub start: usize,
    pub position: Vec<Vec2>,
    pub velocity: Vec<Vec2>,
    pub acceleration: Vec<Vec2>,
    pub speed: Vec<f64>,
    /// 1/m, signed positive for left turns.
    pub curvature: Vec<f64>,
}

impl RelKinematics {
    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneAssignment {
    /// Index into the scenario map.
    pub lane_ref: usize,
    pub lane_type: LaneType,
    pub speed_limit: Option<f64>,
    /// Arc length minus its final-step value, so the last entry is zero.
    pub frenet_s: Vec<f64>,
    pub frenet_d: Vec<f64>,
    /// `(speed - limit) / limit`; empty without a limit.
    pub compliance: Vec<f64>,
    /// Heading difference at the final pose.
    pub heading_diff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TcdProximity {
    pub kind: MapKind,
    pub map_ref: usize,
    pub distance: f64,
    pub relative_heading: f64,
    pub is_forward: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoFeatureSet {
    pub kinematics: RelKinematics,
    pub lane: Option<LaneAssignment>,
    /// Indexed like [`TCD_KINDS`].
    pub tcd_closest: [Option<TcdProximity>; 4],
    pub tcd_forward: [Option<TcdProximity>; 4],
}

/// Signed curvature of planar motion; zero below `speed_floor`.
pub fn curvature(v: Vec2, a: Vec2, speed_floor: f64) -> f64 {
    let speed = v.norm();
    if speed < speed_floor {
        0.0
    } else {
        v.cross(a) / (speed * speed * speed)
    }
}

/// History states of `track` in the frame of `pose`, over the valid history span.
pub fn relative_kinematics(track: &AgentTrack, pose: &Pose, t_hist: usize, speed_floor: f64) -> RelKinematics {
    let Some((lo, hi)) = track.valid_bounds(t_hist) else {
        return RelKinematics::default();
    };
    let mut out = RelKinematics {
        start: lo,
        ..Default::default()
    };
    for s in &track.states[lo..=hi] {
        let v = pose.dir_to_local(s.velocity);
        let a = pose.dir_to_local(s.acceleration);
        out.position.push(pose.to_local(s.position));
        out.velocity.push(v);
        out.acceleration.push(a);
        out.speed.push(v.norm());
        out.curvature.push(curvature(v, a, speed_floor));
    }
    out
}

/// Lane whose centerline matches the final pose within both thresholds.
///
/// Preference order: smallest `|d|`, then smallest heading difference, then lowest index.
pub fn assign_lane(
    track: &AgentTrack,
    map: &[MapPolyline],
    t_hist: usize,
    heading_thresh: f64,
    lateral_thresh: f64,
) -> Option<LaneAssignment> {
    let (lo, hi) = track.valid_bounds(t_hist)?;
    if hi != t_hist - 1 {
        return None;
    }
    let last = &track.states[hi];
    let mut best: Option<(f64, f64, usize)> = None;
    for (i, lane) in map.iter().enumerate() {
        if lane.kind != MapKind::Lane {
            continue;
        }
        let Some(p) = project_onto_polyline(&lane.points, &lane.arc, last.position) else {
            continue;
        };
        let dh = normalize_angle(last.heading - p.heading).abs();
        let d = p.d.abs();
        if dh > heading_thresh || d > lateral_thresh {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bh, _)) => d < bd || (d == bd && dh < bh),
        };
        if better {
            best = Some((d, dh, i));
        }
    }
    let (_, heading_diff, lane_ref) = best?;
    let lane = &map[lane_ref];
    let mut frenet_s = Vec::with_capacity(hi - lo + 1);
    let mut frenet_d = Vec::with_capacity(hi - lo + 1);
    let mut compliance = Vec::new();
    for s in &track.states[lo..=hi] {
        let p = project_onto_polyline(&lane.points, &lane.arc, s.position).expect("lane has two points");
        frenet_s.push(p.s);
        frenet_d.push(p.d);
        if let Some(limit) = lane.speed_limit {
            compliance.push((s.speed() - limit) / limit);
        }
    }
    let s_final = *frenet_s.last().unwrap();
    for s in &mut frenet_s {
        *s -= s_final;
    }
    Some(LaneAssignment {
        lane_ref,
        lane_type: lane.lane_type.unwrap_or_default(),
        speed_limit: lane.speed_limit,
        frenet_s,
        frenet_d,
        compliance,
        heading_diff,
    })
}

/// Closest device of each kind, and closest device of each kind with positive forward coordinate.
pub fn tcd_proximity(pose: &Pose, map: &[MapPolyline]) -> ([Option<TcdProximity>; 4], [Option<TcdProximity>; 4]) {
    let mut closest = [None; 4];
    let mut forward = [None; 4];
    for (i, m) in map.iter().enumerate() {
        let Some(k) = m.kind.tcd_index() else { continue };
        let Some(near) = closest_point_on_polyline(&m.points, pose.position) else {
            continue;
        };
        let local = pose.to_local(near);
        let distance = local.norm();
        let prox = TcdProximity {
            kind: m.kind,
            map_ref: i,
            distance,
            relative_heading: if distance > 0.0 { normalize_angle(local.angle()) } else { 0.0 },
            is_forward: local.x > 0.0,
        };
        let closer = |slot: &Option<TcdProximity>| slot.is_none_or(|c| distance < c.distance);
        if closer(&closest[k]) {
            closest[k] = Some(prox);
        }
        if prox.is_forward && closer(&forward[k]) {
            forward[k] = Some(prox);
        }
    }
    debug_assert_eq!(TCD_KINDS.len(), 4);
    (closest, forward)
}

pub fn extract_ego(ctx: &FocalContext<'_>, config: &FeatureConfig) -> EgoFeatureSet {
    let t_hist = ctx.timing.t_hist;
    let kinematics = relative_kinematics(&ctx.track, &ctx.pose, t_hist, config.speed_floor);
    let lane = assign_lane(
        &ctx.track,
        &ctx.scenario.map,
        t_hist,
        config.lane_heading_thresh_deg.to_radians(),
        config.lane_lateral_thresh,
    );
    let (tcd_closest, tcd_forward) = tcd_proximity(&ctx.pose, &ctx.scenario.map);
    EgoFeatureSet {
        kinematics,
        lane,
        tcd_closest,
        tcd_forward,
    }
}
