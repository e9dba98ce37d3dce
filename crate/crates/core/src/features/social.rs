//! Pairwise interaction features between the focal agent and its neighbours.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{FeatureConfig, FocalContext};
use crate::geometry::{normalize_angle, Pose, Vec2};
use crate::scenario::{AgentState, AgentTrack, AgentType};

/// Slack so that boundary angles computed through trigonometry stay inclusive.
pub const ANGLE_EPS: f64 = 1e-9;
pub const LATERAL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryBase {
    Collinear,
    Parallel,
    Opposite,
    Crossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryVariant {
    Leading,
    Trailing,
    HeadOn,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GeometryType {
    pub base: GeometryBase,
    pub variant: GeometryVariant,
}

impl GeometryType {
    /// The nine leaf labels in slot order.
    pub const ALL: [GeometryType; 9] = {
        use GeometryBase::*;
        use GeometryVariant::*;
        [
            GeometryType { base: Collinear, variant: Leading },
            GeometryType { base: Collinear, variant: Trailing },
            GeometryType { base: Collinear, variant: HeadOn },
            GeometryType { base: Parallel, variant: Left },
            GeometryType { base: Parallel, variant: Right },
            GeometryType { base: Opposite, variant: Left },
            GeometryType { base: Opposite, variant: Right },
            GeometryType { base: Crossing, variant: Left },
            GeometryType { base: Crossing, variant: Right },
        ]
    };

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|g| *g == self).expect("only leaf labels are constructed")
    }

    pub fn name(self) -> String {
        let b = match self.base {
            GeometryBase::Collinear => "collinear",
            GeometryBase::Parallel => "parallel",
            GeometryBase::Opposite => "opposite",
            GeometryBase::Crossing => "crossing",
        };
        let v = match self.variant {
            GeometryVariant::Leading => "leading",
            GeometryVariant::Trailing => "trailing",
            GeometryVariant::HeadOn => "head_on",
            GeometryVariant::Left => "left",
            GeometryVariant::Right => "right",
        };
        format!("{b}_{v}")
    }
}

impl fmt::Display for GeometryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Relation of `other` to `focal`; thresholds are inclusive toward collinear and same-direction.
pub fn classify_geometry(focal: &Pose, other: &Pose, heading_thresh: f64, collinear_lateral: f64) -> GeometryType {
    use GeometryBase::*;
    use GeometryVariant::*;
    let dtheta = normalize_angle(other.heading - focal.heading).abs();
    let local = focal.to_local(other.position);
    let (lon, lat) = (local.x, local.y);
    let side = if lat >= 0.0 { Left } else { Right };
    let near = lat.abs() <= collinear_lateral + LATERAL_EPS;
    let (base, variant) = if dtheta <= heading_thresh + ANGLE_EPS {
        if near {
            (Collinear, if lon >= 0.0 { Leading } else { Trailing })
        } else {
            (Parallel, side)
        }
    } else if (PI - dtheta).abs() <= heading_thresh + ANGLE_EPS {
        if near {
            (Collinear, HeadOn)
        } else {
            (Opposite, side)
        }
    } else {
        (Crossing, side)
    };
    GeometryType { base, variant }
}

/// `-d/dt |p_o - p_f|` per timestep; positive while approaching.
pub fn closing_speed(focal: &[AgentState], other: &[AgentState]) -> Vec<f64> {
    focal
        .iter()
        .zip(other)
        .filter(|(f, o)| f.valid && o.valid)
        .map(|(f, o)| closing_speed_at(f, o))
        .collect()
}

fn closing_speed_at(f: &AgentState, o: &AgentState) -> f64 {
    let dp = o.position - f.position;
    let dist = dp.norm();
    if dist < 1e-6 {
        0.0
    } else {
        -dp.dot(o.velocity - f.velocity) / dist
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConflictPoint {
    pub exists: bool,
    /// World coordinates.
    pub location: Vec2,
    /// From the focal position.
    pub distance: f64,
    /// Location in the focal frame.
    pub relative_position: Vec2,
    /// Bearing of the location in the focal frame.
    pub bearing: f64,
    pub ttcp_focal: f64,
    pub ttcp_other: f64,
    pub delta_ttcp: f64,
    /// Time of closest approach under constant velocity, clamped to the horizon.
    pub t_star: f64,
    pub min_separation: f64,
}

/// Closed-form time of closest approach on `[0, horizon]`.
pub fn closest_approach(dp: Vec2, dv: Vec2, horizon: f64) -> f64 {
    let vv = dv.norm_sq();
    if vv == 0.0 {
        0.0
    } else {
        (-dp.dot(dv) / vv).clamp(0.0, horizon)
    }
}

/// Projected conflict point of two constant-velocity agents.
///
/// When both rays cross within the horizon the crossing point is the conflict
/// location and each agent's time parameter is its time to it. Otherwise a
/// conflict exists only if the closest-approach separation is within
/// `conflict_radius`, located at the midpoint of the closest-approach
/// positions, with along-ray arrival times. Any agent slower than
/// `speed_floor` has no arrival time, so no conflict.
pub fn project_conflict_point(
    focal: &AgentState,
    other: &AgentState,
    horizon: f64,
    conflict_radius: f64,
    speed_floor: f64,
) -> ConflictPoint {
    let (pf, vf, po, vo) = (focal.position, focal.velocity, other.position, other.velocity);
    let dp = po - pf;
    let dv = vo - vf;
    let t_star = closest_approach(dp, dv, horizon);
    let min_separation = (dp + dv * t_star).norm();
    let base = ConflictPoint {
        t_star,
        min_separation,
        ..Default::default()
    };
    if vf.norm() < speed_floor || vo.norm() < speed_floor {
        return base;
    }

    let denom = vf.cross(vo);
    let crossing = if denom.abs() > 1e-12 * vf.norm() * vo.norm() {
        let a = dp.cross(vo) / denom;
        let b = dp.cross(vf) / denom;
        (a >= 0.0 && a <= horizon && b >= 0.0 && b <= horizon).then_some((pf + vf * a, a, b))
    } else {
        None
    };

    let (location, ttcp_focal, ttcp_other) = match crossing {
        Some(c) => c,
        None if min_separation <= conflict_radius => {
            let loc = (pf + vf * t_star).lerp(po + vo * t_star, 0.5);
            let along = |p: Vec2, v: Vec2| ((loc - p).dot(v) / v.norm_sq()).max(0.0);
            (loc, along(pf, vf), along(po, vo))
        }
        None => return base,
    };
    let rel = focal.pose().to_local(location);
    ConflictPoint {
        exists: true,
        location,
        distance: rel.norm(),
        relative_position: rel,
        bearing: if rel.norm() > 0.0 { rel.angle() } else { 0.0 },
        ttcp_focal,
        ttcp_other,
        delta_ttcp: (ttcp_focal - ttcp_other).abs(),
        t_star,
        min_separation,
    }
}

/// One neighbour occupying a geometry slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSlot {
    pub agent_index: usize,
    pub agent_id: String,
    pub other_type: AgentType,
    pub geometry: GeometryType,
    /// Final-pose separation.
    pub distance: f64,
    /// Neighbour states in the focal final-pose frame over the shared valid span.
    pub rel_position: Vec<Vec2>,
    pub rel_velocity: Vec<Vec2>,
    pub rel_acceleration: Vec<Vec2>,
    /// Neighbour relative to the focal pose at the same timestep.
    pub step_position: Vec<Vec2>,
    pub step_velocity: Vec<Vec2>,
    pub closing_speed: Vec<f64>,
    /// Conflict projected from the final history states.
    pub conflict: ConflictPoint,
    /// ΔTTCP at every shared step with an existing conflict.
    pub delta_ttcp_series: Vec<f64>,
}

impl InteractionSlot {
    /// Minimum ΔTTCP over the history, if any step had a conflict.
    pub fn mttcp(&self) -> Option<f64> {
        self.delta_ttcp_series.iter().copied().reduce(f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionFeatureSet {
    /// Non-stationary neighbours within the interaction radius.
    pub density: usize,
    /// All valid neighbours within the radius, moving or not.
    pub nearby: usize,
    /// Indexed like [`GeometryType::ALL`].
    pub slots: [Option<InteractionSlot>; 9],
}

impl InteractionFeatureSet {
    pub fn empty() -> Self {
        InteractionFeatureSet {
            density: 0,
            nearby: 0,
            slots: Default::default(),
        }
    }
}

fn max_speed(track: &AgentTrack, t_hist: usize) -> f64 {
    track.states[..t_hist]
        .iter()
        .filter(|s| s.valid)
        .map(AgentState::speed)
        .fold(0.0, f64::max)
}

fn build_slot(
    ctx: &FocalContext<'_>,
    index: usize,
    other: &AgentTrack,
    geometry: GeometryType,
    distance: f64,
    config: &FeatureConfig,
) -> InteractionSlot {
    let t_hist = ctx.timing.t_hist;
    let pose = ctx.pose;
    let mut slot = InteractionSlot {
        agent_index: index,
        agent_id: other.id.clone(),
        other_type: other.agent_type,
        geometry,
        distance,
        rel_position: Vec::new(),
        rel_velocity: Vec::new(),
        rel_acceleration: Vec::new(),
        step_position: Vec::new(),
        step_velocity: Vec::new(),
        closing_speed: Vec::new(),
        conflict: project_conflict_point(
            &ctx.track.states[t_hist - 1],
            &other.states[t_hist - 1],
            config.conflict_horizon,
            config.conflict_radius,
            config.speed_floor,
        ),
        delta_ttcp_series: Vec::new(),
    };
    for t in 0..t_hist {
        let (f, o) = (&ctx.track.states[t], &other.states[t]);
        if !(f.valid && o.valid) {
            continue;
        }
        slot.rel_position.push(pose.to_local(o.position));
        slot.rel_velocity.push(pose.dir_to_local(o.velocity));
        slot.rel_acceleration.push(pose.dir_to_local(o.acceleration));
        let fp = f.pose();
        slot.step_position.push(fp.to_local(o.position));
        slot.step_velocity.push(fp.dir_to_local(o.velocity - f.velocity));
        slot.closing_speed.push(closing_speed_at(f, o));
        let c = project_conflict_point(f, o, config.conflict_horizon, config.conflict_radius, config.speed_floor);
        if c.exists {
            slot.delta_ttcp_series.push(c.delta_ttcp);
        }
    }
    slot
}

/// Closest non-stationary neighbour of each geometry type within the radius.
pub fn select_interactions(ctx: &FocalContext<'_>, config: &FeatureConfig) -> InteractionFeatureSet {
    let t_hist = ctx.timing.t_hist;
    let heading_thresh = config.geometry_heading_thresh_deg.to_radians();
    let mut out = InteractionFeatureSet::empty();
    let mut best: [Option<(f64, usize, AgentTrack, GeometryType)>; 9] = Default::default();
    for index in 0..ctx.scenario.agents.len() {
        if index == ctx.focal_index {
            continue;
        }
        let other = ctx.aligned(index);
        let last = &other.states[t_hist - 1];
        if !last.valid {
            continue;
        }
        let distance = last.position.distance(ctx.pose.position);
        if distance > config.interaction_radius {
            continue;
        }
        out.nearby += 1;
        if max_speed(&other, t_hist) < config.stationary_speed {
            continue;
        }
        out.density += 1;
        let g = classify_geometry(&ctx.pose, &last.pose(), heading_thresh, config.collinear_lateral);
        let slot = &mut best[g.index()];
        if slot.as_ref().is_none_or(|(d, ..)| distance < *d) {
            *slot = Some((distance, index, other, g));
        }
    }
    for (k, b) in best.into_iter().enumerate() {
        if let Some((distance, index, other, g)) = b {
            out.slots[k] = Some(build_slot(ctx, index, &other, g, distance, config));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::scenario::{MapPolyline, Scenario, TimeConfig};

    fn st(x: f64, y: f64, vx: f64, vy: f64) -> AgentState {
        AgentState {
            position: Vec2::new(x, y),
            velocity: Vec2::new(vx, vy),
            acceleration: Vec2::ZERO,
            heading: vy.atan2(vx),
            valid: true,
        }
    }

    const TH: f64 = 0.523_598_775_598_298_9;

    fn g(dtheta: f64, lon: f64, lat: f64) -> String {
        classify_geometry(&Pose::new(Vec2::ZERO, 0.0), &Pose::new(Vec2::new(lon, lat), dtheta), TH, 3.25).name()
    }

    #[test]
    fn basic_geometries() {
        assert_eq!(g(0.0, 10.0, 0.0), "collinear_leading");
        assert_eq!(g(0.0, -10.0, 0.0), "collinear_trailing");
        assert_eq!(g(PI, 20.0, 0.0), "collinear_head_on");
        assert_eq!(g(FRAC_PI_2, 5.0, -4.0), "crossing_right");
        assert_eq!(g(0.0, 1.0, 5.0), "parallel_left");
        assert_eq!(g(PI, 1.0, -5.0), "opposite_right");
    }

    #[test]
    fn boundaries_are_inclusive() {
        assert_eq!(g(TH, 5.0, 3.25), "collinear_leading");
        assert_eq!(g(-TH, 5.0, -3.25), "collinear_leading");
        assert_eq!(g(PI - TH, 5.0, 3.25), "collinear_head_on");
        assert_eq!(g(TH + 1e-6, 5.0, 0.0), "crossing_left");
    }

    #[test]
    fn head_on_closing_speed() {
        let f: Vec<AgentState> = (0..5).map(|i| st(i as f64 * 0.5, 0.0, 5.0, 0.0)).collect();
        let o: Vec<AgentState> = (0..5).map(|i| st(50.0 - i as f64 * 0.5, 0.0, -5.0, 0.0)).collect();
        assert!(closing_speed(&f, &o).iter().all(|c| (c - 10.0).abs() < 1e-12));
        assert_eq!(closing_speed(&o, &f), closing_speed(&f, &o));
        let same: Vec<AgentState> = (0..5).map(|i| st(i as f64 * 0.5, 3.0, 5.0, 0.0)).collect();
        assert!(closing_speed(&f, &same).iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn perpendicular_conflict() {
        let f = st(-10.0, 0.0, 5.0, 0.0);
        let o = st(0.0, -20.0, 0.0, 5.0);
        let c = project_conflict_point(&f, &o, 10.0, 2.0, 0.1);
        assert!(c.exists);
        assert_eq!(c.ttcp_focal, 2.0);
        assert_eq!(c.ttcp_other, 4.0);
        assert_eq!(c.delta_ttcp, 2.0);
        assert!(c.location.norm() < 1e-12);
        let swapped = project_conflict_point(&o, &f, 10.0, 2.0, 0.1);
        assert_eq!(swapped.delta_ttcp, c.delta_ttcp);
        assert!(swapped.location.distance(c.location) < 1e-12);
    }

    #[test]
    fn parallel_same_velocity_has_no_conflict() {
        let f = st(0.0, 0.0, 5.0, 0.0);
        let o = st(0.0, 3.0, 5.0, 0.0);
        let c = project_conflict_point(&f, &o, 10.0, 2.0, 0.1);
        assert!(!c.exists);
        assert_eq!(c.min_separation, 3.0);
        assert_eq!(c.delta_ttcp, 0.0);
    }

    #[test]
    fn following_conflict_uses_closest_approach() {
        let f = st(0.0, 0.0, 10.0, 0.0);
        let o = st(20.0, 0.0, 5.0, 0.0);
        let c = project_conflict_point(&f, &o, 10.0, 2.0, 0.1);
        assert!(c.exists);
        assert_eq!(c.t_star, 4.0);
        assert!((c.location.x - 40.0).abs() < 1e-12);
        assert!((c.delta_ttcp - 0.0).abs() < 1e-12);
    }

    fn scenario_with(others: Vec<(f64, f64, f64, f64)>) -> Scenario {
        let timing = TimeConfig { t_hist: 3, t_fut: 1, dt: 0.1 };
        let mk = |id: &str, x: f64, y: f64, vx: f64, vy: f64| AgentTrack {
            id: id.into(),
            agent_type: AgentType::Vehicle,
            states: (0..timing.total())
                .map(|i| st(x + vx * 0.1 * (i as f64 - 2.0), y + vy * 0.1 * (i as f64 - 2.0), vx, vy))
                .collect(),
        };
        let mut agents = vec![mk("f", 0.0, 0.0, 5.0, 0.0)];
        for (i, (x, y, vx, vy)) in others.into_iter().enumerate() {
            agents.push(mk(&format!("o{i}"), x, y, vx, vy));
        }
        Scenario {
            scenario_id: "s".into(),
            agents,
            map: Vec::<MapPolyline>::new(),
            focal_ids: vec!["f".into()],
            archetype: None,
        }
    }

    fn select(s: &Scenario) -> InteractionFeatureSet {
        let timing = TimeConfig { t_hist: 3, t_fut: 1, dt: 0.1 };
        let ctx = FocalContext::new(s, "f", &timing).unwrap();
        select_interactions(&ctx, &FeatureConfig::default())
    }

    #[test]
    fn lone_focal_is_empty() {
        let f = select(&scenario_with(vec![]));
        assert_eq!(f.density, 0);
        assert!(f.slots.iter().all(Option::is_none));
    }

    #[test]
    fn nearest_leader_wins_and_far_agent_excluded() {
        let f = select(&scenario_with(vec![(20.0, 0.0, 5.0, 0.0), (10.0, 0.0, 5.0, 0.0), (60.0, 0.0, 5.0, 0.0)]));
        assert_eq!(f.density, 2);
        let lead = f.slots[0].as_ref().unwrap();
        assert_eq!(lead.agent_id, "o1");
        assert_eq!(lead.distance, 10.0);
        assert_eq!(f.slots.iter().filter(|s| s.is_some()).count(), 1);
    }

    #[test]
    fn stationary_agents_count_only_as_nearby() {
        let f = select(&scenario_with(vec![(10.0, 0.0, 0.2, 0.0)]));
        assert_eq!(f.density, 0);
        assert_eq!(f.nearby, 1);
    }
}
