//! Per-agent ego and social feature extraction from history only.

pub mod ego;
pub mod social;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::scenario::{final_pose, interpolate_history, AgentTrack, Scenario, TimeConfig};

pub use ego::{
    assign_lane, curvature, extract_ego, relative_kinematics, tcd_proximity, EgoFeatureSet, LaneAssignment,
    RelKinematics, TcdProximity,
};
pub use social::{
    classify_geometry, closing_speed, project_conflict_point, select_interactions, ConflictPoint, GeometryBase,
    GeometryType, GeometryVariant, InteractionFeatureSet, InteractionSlot,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Degrees.
    pub lane_heading_thresh_deg: f64,
    pub lane_lateral_thresh: f64,
    pub interaction_radius: f64,
    /// Degrees.
    pub geometry_heading_thresh_deg: f64,
    pub collinear_lateral: f64,
    /// Seconds.
    pub conflict_horizon: f64,
    pub conflict_radius: f64,
    /// Agents whose maximum history speed stays below this are stationary.
    pub stationary_speed: f64,
    /// Below this speed curvature and ray-time quantities are zero or absent.
    pub speed_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            lane_heading_thresh_deg: 30.0,
            lane_lateral_thresh: 6.5,
            interaction_radius: 50.0,
            geometry_heading_thresh_deg: 30.0,
            collinear_lateral: 3.25,
            conflict_horizon: 10.0,
            conflict_radius: 2.0,
            stationary_speed: 0.5,
            speed_floor: 0.1,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            ("lane_heading_thresh_deg", self.lane_heading_thresh_deg),
            ("lane_lateral_thresh", self.lane_lateral_thresh),
            ("interaction_radius", self.interaction_radius),
            ("geometry_heading_thresh_deg", self.geometry_heading_thresh_deg),
            ("collinear_lateral", self.collinear_lateral),
            ("conflict_horizon", self.conflict_horizon),
            ("conflict_radius", self.conflict_radius),
            ("stationary_speed", self.stationary_speed),
            ("speed_floor", self.speed_floor),
        ];
        for (name, v) in vals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("feature threshold `{name}` must be positive, got {v}")));
            }
        }
        if self.geometry_heading_thresh_deg >= 90.0 {
            return Err(Error::Validation("geometry heading threshold must be below 90 degrees".into()));
        }
        Ok(())
    }
}

/// Focal track interpolated over its own bounds, plus its final pose.
#[derive(Debug, Clone)]
pub struct FocalContext<'a> {
    pub scenario: &'a Scenario,
    pub focal_index: usize,
    pub track: AgentTrack,
    pub pose: Pose,
    pub timing: TimeConfig,
}

impl<'a> FocalContext<'a> {
    pub fn new(scenario: &'a Scenario, focal_id: &str, timing: &TimeConfig) -> Result<Self> {
        let focal_index = scenario
            .agent_index(focal_id)
            .ok_or_else(|| Error::Validation(format!("unknown agent `{focal_id}` in `{}`", scenario.scenario_id)))?;
        let raw = &scenario.agents[focal_index];
        let track = interpolate_history(raw, raw, timing);
        let pose = final_pose(&track, timing)?;
        Ok(FocalContext {
            scenario,
            focal_index,
            track,
            pose,
            timing: *timing,
        })
    }

    /// Another agent's history interpolated over the focal bounds.
    pub fn aligned(&self, index: usize) -> AgentTrack {
        interpolate_history(&self.scenario.agents[index], &self.scenario.agents[self.focal_index], &self.timing)
    }
}

/// Both feature sets for one focal agent.
pub fn extract_agent(
    scenario: &Scenario,
    focal_id: &str,
    timing: &TimeConfig,
    config: &FeatureConfig,
) -> Result<(EgoFeatureSet, InteractionFeatureSet)> {
    let ctx = FocalContext::new(scenario, focal_id, timing)?;
    Ok((extract_ego(&ctx, config), select_interactions(&ctx, config)))
}
