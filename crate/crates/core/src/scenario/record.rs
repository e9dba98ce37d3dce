//! Line-delimited JSON scenario records.
//!
//! One scenario per line:
//!
//! ```text
//! {"scenario_id": "...", "archetype": "cruise",
//!  "agents": [{"id": "...", "type": "vehicle",
//!              "states": [[x, y, vx, vy, ax, ay, heading, valid], ...]}],
//!  "map": [{"kind": "lane", "points": [[x, y], ...], "speed_limit": 13.4,
//!           "lane_type": "surface_street"}],
//!  "focal_ids": ["..."]}
//! ```
//!
//! `archetype`, `speed_limit`, and `lane_type` are optional. `valid` is 0 or 1.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentState, AgentTrack, AgentType, Archetype, LaneType, MapKind, MapPolyline, Scenario};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    scenario_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    archetype: Option<Archetype>,
    agents: Vec<RawAgent>,
    map: Vec<RawPolyline>,
    #[serde(default)]
    focal_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    id: String,
    #[serde(rename = "type")]
    agent_type: AgentType,
    states: Vec<[f64; 8]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolyline {
    kind: MapKind,
    points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    speed_limit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lane_type: Option<LaneType>,
}

fn parse_err(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn invalid(line: usize, scenario: &str, message: String) -> Error {
    Error::Validation(format!("line {line}, scenario `{scenario}`: {message}"))
}

/// Parses one record. `line` is 1-based and only used for error messages.
pub fn parse_scenario(record: &str, line: usize) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(record);
    let raw: RawScenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        parse_err(line, path, inner.to_string())
    })?;
    from_raw(raw, line)
}

fn from_raw(raw: RawScenario, line: usize) -> Result<Scenario> {
    let sid = raw.scenario_id;
    if sid.is_empty() {
        return Err(parse_err(line, "scenario_id", "empty identifier"));
    }

    let mut agents = Vec::with_capacity(raw.agents.len());
    let mut ids = BTreeSet::new();
    let mut steps = None;
    for (ai, a) in raw.agents.into_iter().enumerate() {
        if a.id.is_empty() {
            return Err(parse_err(line, format!("agents[{ai}].id"), "empty identifier"));
        }
        if !ids.insert(a.id.clone()) {
            return Err(invalid(line, &sid, format!("duplicate agent id `{}`", a.id)));
        }
        if a.states.is_empty() {
            return Err(parse_err(line, format!("agents[{ai}].states"), "no states"));
        }
        match steps {
            None => steps = Some(a.states.len()),
            Some(n) if n != a.states.len() => {
                return Err(invalid(
                    line,
                    &sid,
                    format!("agent `{}` has {} states, others have {n}", a.id, a.states.len()),
                ))
            }
            _ => {}
        }
        let mut states = Vec::with_capacity(a.states.len());
        for (t, s) in a.states.iter().enumerate() {
            if let Some(k) = s.iter().position(|v| !v.is_finite()) {
                return Err(parse_err(line, format!("agents[{ai}].states[{t}][{k}]"), "non-finite value"));
            }
            let valid = match s[7] {
                v if v == 1.0 => true,
                v if v == 0.0 => false,
                v => {
                    return Err(parse_err(
                        line,
                        format!("agents[{ai}].states[{t}][7]"),
                        format!("valid flag must be 0 or 1, got {v}"),
                    ))
                }
            };
            states.push(
                AgentState {
                    position: Vec2::new(s[0], s[1]),
                    velocity: Vec2::new(s[2], s[3]),
                    acceleration: Vec2::new(s[4], s[5]),
                    heading: s[6],
                    valid,
                }
                .canonical(),
            );
        }
        agents.push(AgentTrack {
            id: a.id,
            agent_type: a.agent_type,
            states,
        });
    }

    let mut map = Vec::with_capacity(raw.map.len());
    for (mi, m) in raw.map.into_iter().enumerate() {
        let min_points = if m.kind == MapKind::Lane { 2 } else { 1 };
        if m.points.len() < min_points {
            return Err(parse_err(
                line,
                format!("map[{mi}].points"),
                format!("{} needs at least {min_points} points", m.kind.name()),
            ));
        }
        if let Some(k) = m.points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(parse_err(line, format!("map[{mi}].points[{k}]"), "non-finite value"));
        }
        if m.kind != MapKind::Lane && (m.speed_limit.is_some() || m.lane_type.is_some()) {
            return Err(parse_err(
                line,
                format!("map[{mi}]"),
                "speed_limit and lane_type are only allowed on lanes",
            ));
        }
        if let Some(v) = m.speed_limit {
            if !(v.is_finite() && v > 0.0) {
                return Err(parse_err(line, format!("map[{mi}].speed_limit"), "must be positive"));
            }
        }
        let points = m.points.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        map.push(MapPolyline::new(m.kind, points, m.speed_limit, m.lane_type));
    }

    if raw.focal_ids.is_empty() {
        return Err(invalid(line, &sid, "focal_ids is missing or empty".into()));
    }
    let mut seen = BTreeSet::new();
    for f in &raw.focal_ids {
        if !ids.contains(f) {
            return Err(invalid(line, &sid, format!("focal id `{f}` is not an agent")));
        }
        if !seen.insert(f) {
            return Err(invalid(line, &sid, format!("focal id `{f}` listed twice")));
        }
    }

    Ok(Scenario {
        scenario_id: sid,
        agents,
        map,
        focal_ids: raw.focal_ids,
        archetype: raw.archetype,
    })
}

fn to_raw(s: &Scenario) -> RawScenario {
    RawScenario {
        scenario_id: s.scenario_id.clone(),
        archetype: s.archetype,
        agents: s
            .agents
            .iter()
            .map(|a| RawAgent {
                id: a.id.clone(),
                agent_type: a.agent_type,
                states: a
                    .states
                    .iter()
                    .map(|st| {
                        let st = st.canonical();
                        [
                            st.position.x,
                            st.position.y,
                            st.velocity.x,
                            st.velocity.y,
                            st.acceleration.x,
                            st.acceleration.y,
                            st.heading,
                            if st.valid { 1.0 } else { 0.0 },
                        ]
                    })
                    .collect(),
            })
            .collect(),
        map: s
            .map
            .iter()
            .map(|m| RawPolyline {
                kind: m.kind,
                points: m.points.iter().map(|p| [p.x, p.y]).collect(),
                speed_limit: m.speed_limit,
                lane_type: m.lane_type,
            })
            .collect(),
        focal_ids: s.focal_ids.clone(),
    }
}

/// Canonical single-line encoding (no trailing newline).
pub fn serialize_scenario(s: &Scenario) -> String {
    serde_json::to_string(&to_raw(s)).expect("scenario records always serialize")
}

/// Parses a whole corpus; blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<Scenario>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_scenario(l, i + 1))
        .collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<Scenario>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

pub fn write_corpus(path: &Path, corpus: &[Scenario]) -> Result<()> {
    let mut buf = Vec::new();
    for s in corpus {
        buf.extend_from_slice(serialize_scenario(s).as_bytes());
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
