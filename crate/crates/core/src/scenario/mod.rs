//! Scenario, agent, and map data model.
//!
//! Tracks index timesteps from zero; the final history step is `t_hist - 1`.

mod record;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{arc_lengths, normalize_angle, Pose, Vec2};

pub use record::{parse_corpus, parse_scenario, read_corpus, serialize_scenario, write_corpus};
pub use synth::{synthesize_corpus, SynthConfig};

/// Sampling layout shared by every track in a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_hist: usize,
    pub t_fut: usize,
    /// Seconds per step.
    pub dt: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            t_hist: 11,
            t_fut: 80,
            dt: 0.1,
        }
    }
}

impl TimeConfig {
    pub fn total(&self) -> usize {
        self.t_hist + self.t_fut
    }

    /// Index of the last history state.
    pub fn last_hist(&self) -> usize {
        self.t_hist - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentType {
    pub const ALL: [AgentType; 3] = [AgentType::Vehicle, AgentType::Pedestrian, AgentType::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentType::Vehicle => "vehicle",
            AgentType::Pedestrian => "pedestrian",
            AgentType::Cyclist => "cyclist",
        }
    }
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AgentType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown agent type `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub acceleration: Vec2,
    /// Radians in `(-pi, pi]`.
    pub heading: f64,
    pub valid: bool,
}

impl AgentState {
    pub const INVALID: AgentState = AgentState {
        position: Vec2::ZERO,
        velocity: Vec2::ZERO,
        acceleration: Vec2::ZERO,
        heading: 0.0,
        valid: false,
    };

    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.heading)
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// Zeroes invalid states and wraps the heading.
    pub fn canonical(self) -> AgentState {
        if self.valid {
            AgentState {
                heading: normalize_angle(self.heading),
                ..self
            }
        } else {
            AgentState::INVALID
        }
    }

    fn lerp(a: &AgentState, b: &AgentState, u: f64) -> AgentState {
        AgentState {
            position: a.position.lerp(b.position, u),
            velocity: a.velocity.lerp(b.velocity, u),
            acceleration: a.acceleration.lerp(b.acceleration, u),
            heading: normalize_angle(a.heading + normalize_angle(b.heading - a.heading) * u),
            valid: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: String,
    pub agent_type: AgentType,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    pub fn history<'a>(&'a self, timing: &TimeConfig) -> &'a [AgentState] {
        &self.states[..timing.t_hist.min(self.states.len())]
    }

    pub fn future<'a>(&'a self, timing: &TimeConfig) -> &'a [AgentState] {
        &self.states[timing.t_hist.min(self.states.len())..]
    }

    /// First and last valid index within `[0, end)`.
    pub fn valid_bounds(&self, end: usize) -> Option<(usize, usize)> {
        let end = end.min(self.states.len());
        let lo = self.states[..end].iter().position(|s| s.valid)?;
        let hi = self.states[..end].iter().rposition(|s| s.valid)?;
        Some((lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Lane,
    Crosswalk,
    StopSign,
    TrafficLight,
    SpeedBump,
}

/// Traffic-control device kinds in feature order.
pub const TCD_KINDS: [MapKind; 4] = [
    MapKind::StopSign,
    MapKind::Crosswalk,
    MapKind::TrafficLight,
    MapKind::SpeedBump,
];

impl MapKind {
    pub fn tcd_index(self) -> Option<usize> {
        TCD_KINDS.iter().position(|k| *k == self)
    }

    pub fn name(self) -> &'static str {
        match self {
            MapKind::Lane => "lane",
            MapKind::Crosswalk => "crosswalk",
            MapKind::StopSign => "stop_sign",
            MapKind::TrafficLight => "traffic_light",
            MapKind::SpeedBump => "speed_bump",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LaneType {
    Freeway,
    #[default]
    SurfaceStreet,
    BikeLane,
}

impl LaneType {
    pub const ALL: [LaneType; 3] = [LaneType::Freeway, LaneType::SurfaceStreet, LaneType::BikeLane];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPolyline {
    pub kind: MapKind,
    pub points: Vec<Vec2>,
    /// m/s; lanes only.
    pub speed_limit: Option<f64>,
    /// Lanes only; defaults to surface street.
    pub lane_type: Option<LaneType>,
    /// Heading of the outgoing segment at each vertex; empty for non-lanes.
    pub heading_per_point: Vec<f64>,
    /// Cumulative arc length at each vertex.
    pub arc: Vec<f64>,
}

impl MapPolyline {
    pub fn new(
        kind: MapKind,
        points: Vec<Vec2>,
        speed_limit: Option<f64>,
        lane_type: Option<LaneType>,
    ) -> Self {
        let heading_per_point = if kind == MapKind::Lane {
            lane_headings(&points)
        } else {
            Vec::new()
        };
        let arc = arc_lengths(&points);
        let lane_type = if kind == MapKind::Lane {
            Some(lane_type.unwrap_or_default())
        } else {
            None
        };
        MapPolyline {
            kind,
            points,
            speed_limit,
            lane_type,
            heading_per_point,
            arc,
        }
    }
}

fn lane_headings(points: &[Vec2]) -> Vec<f64> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let (a, b) = if i + 1 < n {
                (points[i], points[i + 1])
            } else if n >= 2 {
                (points[n - 2], points[n - 1])
            } else {
                return 0.0;
            };
            (b - a).angle()
        })
        .collect()
}

/// Behaviour archetype planted by the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Cruise,
    Turn,
    StopAtSign,
    CrossingConflict,
    Following,
    HeadOn,
    Dense,
    Sparse,
}

impl Archetype {
    pub const ALL: [Archetype; 8] = [
        Archetype::Cruise,
        Archetype::Turn,
        Archetype::StopAtSign,
        Archetype::CrossingConflict,
        Archetype::Following,
        Archetype::HeadOn,
        Archetype::Dense,
        Archetype::Sparse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Cruise => "cruise",
            Archetype::Turn => "turn",
            Archetype::StopAtSign => "stop_at_sign",
            Archetype::CrossingConflict => "crossing_conflict",
            Archetype::Following => "following",
            Archetype::HeadOn => "head_on",
            Archetype::Dense => "dense",
            Archetype::Sparse => "sparse",
        }
    }
}

/// Identifies one focal agent across artifact tables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentKey {
    pub scenario_id: String,
    pub agent_id: String,
}

impl AgentKey {
    pub fn new(scenario_id: impl Into<String>, agent_id: impl Into<String>) -> Self {
        AgentKey {
            scenario_id: scenario_id.into(),
            agent_id: agent_id.into(),
        }
    }
}

impl fmt::Display for AgentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.scenario_id, self.agent_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub scenario_id: String,
    pub agents: Vec<AgentTrack>,
    pub map: Vec<MapPolyline>,
    pub focal_ids: Vec<String>,
    /// Ground-truth tag from the generator, absent for external data.
    pub archetype: Option<Archetype>,
}

impl Scenario {
    pub fn agent(&self, id: &str) -> Option<&AgentTrack> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn agent_index(&self, id: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.id == id)
    }

    pub fn num_steps(&self) -> usize {
        self.agents.first().map_or(0, |a| a.states.len())
    }

    pub fn focal_tracks(&self) -> impl Iterator<Item = &AgentTrack> {
        self.focal_ids.iter().filter_map(|id| self.agent(id))
    }

    /// Checks track lengths and focal-history validity against `timing`.
    pub fn check_timing(&self, timing: &TimeConfig) -> Result<()> {
        let t = timing.total();
        for a in &self.agents {
            if a.states.len() != t {
                return Err(Error::Validation(format!(
                    "scenario `{}` agent `{}` has {} states, expected {t}",
                    self.scenario_id,
                    a.id,
                    a.states.len()
                )));
            }
        }
        for f in self.focal_tracks() {
            if f.valid_bounds(timing.t_hist).is_none() {
                return Err(Error::Validation(format!(
                    "scenario `{}` focal agent `{}` has no valid history state",
                    self.scenario_id, f.id
                )));
            }
        }
        Ok(())
    }

    /// Applies a rigid transform (rotation about the origin, then translation).
    pub fn transformed(&self, rotation: f64, translation: Vec2) -> Scenario {
        let tp = |p: Vec2| p.rotate(rotation) + translation;
        let agents = self
            .agents
            .iter()
            .map(|a| AgentTrack {
                states: a
                    .states
                    .iter()
                    .map(|s| {
                        if !s.valid {
                            return *s;
                        }
                        AgentState {
                            position: tp(s.position),
                            velocity: s.velocity.rotate(rotation),
                            acceleration: s.acceleration.rotate(rotation),
                            heading: normalize_angle(s.heading + rotation),
                            valid: true,
                        }
                    })
                    .collect(),
                ..a.clone()
            })
            .collect();
        let map = self
            .map
            .iter()
            .map(|m| {
                MapPolyline::new(
                    m.kind,
                    m.points.iter().map(|p| tp(*p)).collect(),
                    m.speed_limit,
                    m.lane_type,
                )
            })
            .collect();
        Scenario {
            agents,
            map,
            ..self.clone()
        }
    }
}

/// Linearly fills gaps in `track`'s history over `reference`'s valid bounds.
///
/// The output history mask is the interval hull of the track's own valid
/// history intersected with the reference bounds; nothing is extrapolated.
pub fn interpolate_history(track: &AgentTrack, reference: &AgentTrack, timing: &TimeConfig) -> AgentTrack {
    let t_hist = timing.t_hist.min(track.states.len());
    let mut out = track.clone();
    let bounds = reference
        .valid_bounds(t_hist)
        .zip(track.valid_bounds(t_hist))
        .map(|((rlo, rhi), (olo, ohi))| (rlo.max(olo), rhi.min(ohi)))
        .filter(|(lo, hi)| lo <= hi);

    let Some((lo, hi)) = bounds else {
        for s in &mut out.states[..t_hist] {
            *s = AgentState::INVALID;
        }
        return out;
    };

    let mut prev = None;
    for t in 0..t_hist {
        if track.states[t].valid {
            prev = Some(t);
        }
        if t < lo || t > hi {
            out.states[t] = AgentState::INVALID;
            continue;
        }
        if track.states[t].valid {
            continue;
        }
        let a = prev.expect("lower bound is a valid state");
        let b = (t + 1..t_hist)
            .find(|&j| track.states[j].valid)
            .expect("upper bound is a valid state");
        let u = (t - a) as f64 / (b - a) as f64;
        out.states[t] = AgentState::lerp(&track.states[a], &track.states[b], u);
    }
    out
}

/// Position and heading at the final history step.
pub fn final_pose(track: &AgentTrack, timing: &TimeConfig) -> Result<Pose> {
    track
        .states
        .get(timing.last_hist())
        .filter(|s| s.valid)
        .map(AgentState::pose)
        .ok_or_else(|| Error::MissingPose(track.id.clone()))
}
