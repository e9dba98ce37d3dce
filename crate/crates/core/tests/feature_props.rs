//! Properties of scenario records, geometry helpers, and the ego/social extractors.

mod common;

use std::f64::consts::PI;

use proptest::prelude::*;

use scenefactor::features::ego::{assign_lane, relative_kinematics};
use scenefactor::features::social::{classify_geometry, closing_speed, project_conflict_point, GeometryType};
use scenefactor::features::{extract_agent, FeatureConfig};
use scenefactor::geometry::{arc_lengths, frenet_to_world, normalize_angle, project_onto_polyline, Pose, Vec2};
use scenefactor::scenario::{
    interpolate_history, parse_scenario, serialize_scenario, synthesize_corpus, AgentState, AgentTrack, AgentType,
    MapKind, SynthConfig, TimeConfig,
};

fn vec2(range: f64) -> impl Strategy<Value = Vec2> {
    (-range..range, -range..range).prop_map(|(x, y)| Vec2::new(x, y))
}

fn moving_state() -> impl Strategy<Value = AgentState> {
    (vec2(80.0), vec2(20.0)).prop_map(|(p, v)| AgentState {
        position: p,
        velocity: v,
        acceleration: Vec2::ZERO,
        heading: v.angle(),
        valid: true,
    })
}

fn track_with_mask(mask: Vec<bool>, origin: Vec2, v: Vec2) -> AgentTrack {
    AgentTrack {
        id: "a".into(),
        agent_type: AgentType::Vehicle,
        states: mask
            .into_iter()
            .enumerate()
            .map(|(i, valid)| {
                let s = AgentState {
                    position: origin + v * (i as f64 * 0.1),
                    velocity: v,
                    acceleration: Vec2::ZERO,
                    heading: v.angle(),
                    valid,
                };
                s.canonical()
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn parse_of_serialize_is_identity(seed in 0u64..1_000) {
        let corpus = synthesize_corpus(&SynthConfig::uniform(1), seed).unwrap();
        for (i, s) in corpus.iter().enumerate() {
            let text = serialize_scenario(s);
            let back = parse_scenario(&text, i + 1).unwrap();
            prop_assert_eq!(serialize_scenario(&back), text);
        }
    }

    #[test]
    fn synthesis_is_bitwise_deterministic(seed in 0u64..1_000) {
        let cfg = SynthConfig::uniform(1);
        let a: Vec<String> = synthesize_corpus(&cfg, seed).unwrap().iter().map(serialize_scenario).collect();
        let b: Vec<String> = synthesize_corpus(&cfg, seed).unwrap().iter().map(serialize_scenario).collect();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #[test]
    fn interpolation_mask_is_the_hull_within_reference(
        own in prop::collection::vec(any::<bool>(), 11),
        reference in prop::collection::vec(any::<bool>(), 11),
    ) {
        let timing = TimeConfig { t_hist: 11, t_fut: 0, dt: 0.1 };
        let track = track_with_mask(own.clone(), Vec2::new(3.0, -1.0), Vec2::new(2.0, 1.0));
        let refr = track_with_mask(reference, Vec2::ZERO, Vec2::new(1.0, 0.0));
        let out = interpolate_history(&track, &refr, &timing);
        let hull = track.valid_bounds(11).zip(refr.valid_bounds(11)).map(|((a, b), (c, d))| (a.max(c), b.min(d)));
        for t in 0..11 {
            let expect = hull.is_some_and(|(lo, hi)| lo <= t && t <= hi);
            prop_assert_eq!(out.states[t].valid, expect, "t={}", t);
            if expect && !own[t] {
                // Constant-velocity input: linear interpolation is exact.
                prop_assert!((out.states[t].position - Vec2::new(3.0, -1.0) - Vec2::new(2.0, 1.0) * (t as f64 * 0.1)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn relative_kinematics_is_an_isometry(
        pts in prop::collection::vec(vec2(200.0), 11),
        anchor in vec2(200.0),
        heading in -PI..PI,
    ) {
        let track = AgentTrack {
            id: "a".into(),
            agent_type: AgentType::Cyclist,
            states: pts.iter().map(|p| AgentState { position: *p, valid: true, ..AgentState::INVALID }).collect(),
        };
        let rel = relative_kinematics(&track, &Pose::new(anchor, heading), 11, 0.1);
        for i in 0..11 {
            for j in 0..11 {
                let d0 = pts[i].distance(pts[j]);
                let d1 = rel.position[i].distance(rel.position[j]);
                prop_assert!((d0 - d1).abs() <= 1e-9, "{} vs {}", d0, d1);
            }
        }
    }

    #[test]
    fn straight_track_has_zero_curvature(origin in vec2(100.0), v in vec2(15.0), a in -3.0f64..3.0) {
        let dir = if v.norm() > 0.0 { v * (1.0 / v.norm()) } else { Vec2::new(1.0, 0.0) };
        let track = AgentTrack {
            id: "a".into(),
            agent_type: AgentType::Vehicle,
            states: (0..11)
                .map(|_| AgentState { position: origin, velocity: v, acceleration: dir * a, heading: dir.angle(), valid: true })
                .collect(),
        };
        let rel = relative_kinematics(&track, &Pose::new(origin, 0.3), 11, 0.1);
        prop_assert!(rel.curvature.iter().all(|k| k.abs() < 1e-12));
    }

    #[test]
    fn frenet_round_trip(
        pts in prop::collection::vec(vec2(100.0), 2..6),
        p in vec2(120.0),
    ) {
        let arc = arc_lengths(&pts);
        let Some(proj) = project_onto_polyline(&pts, &arc, p) else { return Ok(()) };
        if proj.interior {
            let back = frenet_to_world(&pts, &arc, proj.s, proj.d).unwrap();
            // Only unambiguous when the foot segment is the first one whose arc covers `s`.
            if arc[proj.segment] < proj.s {
                prop_assert!(back.distance(p) <= 1e-6, "{:?} vs {:?}", back, p);
            }
        }
    }

    #[test]
    fn lane_assignment_meets_both_thresholds(
        seed in 0u64..500,
    ) {
        let cfg = FeatureConfig::default();
        let timing = TimeConfig::default();
        let corpus = synthesize_corpus(&SynthConfig::uniform(1), seed).unwrap();
        for s in &corpus {
            for t in s.focal_tracks() {
                let Some(lane) = assign_lane(t, &s.map, timing.t_hist, cfg.lane_heading_thresh_deg.to_radians(), cfg.lane_lateral_thresh) else {
                    continue;
                };
                prop_assert_eq!(s.map[lane.lane_ref].kind, MapKind::Lane);
                prop_assert!(lane.heading_diff.abs() <= cfg.lane_heading_thresh_deg.to_radians() + 1e-12);
                prop_assert!(lane.frenet_d.last().unwrap().abs() <= cfg.lane_lateral_thresh + 1e-12);
            }
        }
    }

    #[test]
    fn geometry_is_total_and_deterministic(
        p in vec2(60.0), h in -4.0f64..4.0, q in vec2(60.0), g in -4.0f64..4.0,
    ) {
        let (a, b) = (Pose::new(p, h), Pose::new(q, g));
        let thresh = 30f64.to_radians();
        let l = classify_geometry(&a, &b, thresh, 3.25);
        prop_assert!(GeometryType::ALL.contains(&l));
        prop_assert_eq!(l, classify_geometry(&a, &b, thresh, 3.25));
        // Wrapping the other heading by a full turn changes nothing.
        prop_assert_eq!(l, classify_geometry(&a, &Pose::new(q, g + 2.0 * PI), thresh, 3.25));
    }

    #[test]
    fn conflict_point_is_symmetric(f in moving_state(), o in moving_state()) {
        let a = project_conflict_point(&f, &o, 10.0, 2.0, 0.1);
        let b = project_conflict_point(&o, &f, 10.0, 2.0, 0.1);
        prop_assert!(a.delta_ttcp >= 0.0);
        prop_assert_eq!(a.exists, b.exists);
        if a.exists {
            prop_assert!(a.location.distance(b.location) <= 1e-6 * (1.0 + a.location.norm()));
            prop_assert!((a.delta_ttcp - b.delta_ttcp).abs() <= 1e-9 * (1.0 + a.delta_ttcp));
        }
    }

    #[test]
    fn closing_speed_is_symmetric(
        fs in prop::collection::vec(moving_state(), 1..12),
        os in prop::collection::vec(moving_state(), 1..12),
    ) {
        let n = fs.len().min(os.len());
        let a = closing_speed(&fs[..n], &os[..n]);
        let b = closing_speed(&os[..n], &fs[..n]);
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// mTTCP is a minimum over a series that includes the final-step conflict.
    #[test]
    fn mttcp_bounds_final_conflict(seed in 0u64..500) {
        let timing = TimeConfig::default();
        let cfg = FeatureConfig::default();
        let corpus = synthesize_corpus(&SynthConfig::uniform(1), seed).unwrap();
        for s in &corpus {
            for t in s.focal_tracks() {
                let Ok((_, social)) = extract_agent(s, &t.id, &timing, &cfg) else { continue };
                for slot in social.slots.iter().flatten() {
                    prop_assert!(slot.delta_ttcp_series.iter().all(|v| *v >= 0.0));
                    if slot.conflict.exists {
                        let m = slot.mttcp().expect("final step has a conflict");
                        prop_assert!(m <= slot.conflict.delta_ttcp + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn normalize_angle_range(theta in -1e4f64..1e4) {
        let n = normalize_angle(theta);
        prop_assert!(n > -PI - 1e-12 && n <= PI + 1e-12);
        prop_assert!(((theta - n) / (2.0 * PI) - ((theta - n) / (2.0 * PI)).round()).abs() < 1e-9);
    }
}
