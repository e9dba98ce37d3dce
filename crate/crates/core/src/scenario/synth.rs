//! Seeded synthetic corpus generator.
//!
//! Every scenario is built in a local frame from one behaviour archetype,
//! simulated with an intelligent-driver longitudinal model along fixed
//! paths, then rigidly moved to a random place and orientation. Values are
//! rounded to millimetres so that the in-memory corpus equals its parsed
//! record form exactly.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    AgentState, AgentTrack, AgentType, Archetype, LaneType, MapKind, MapPolyline, Scenario, TimeConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Scenarios per archetype.
    pub counts: BTreeMap<Archetype, usize>,
    #[serde(default)]
    pub timing: TimeConfig,
    /// Probability that a planted focal agent is a pedestrian.
    #[serde(default = "default_share")]
    pub pedestrian_share: f64,
    #[serde(default = "default_share")]
    pub cyclist_share: f64,
}

fn default_share() -> f64 {
    0.15
}

impl SynthConfig {
    pub fn uniform(per_archetype: usize) -> Self {
        SynthConfig {
            counts: Archetype::ALL.iter().map(|a| (*a, per_archetype)).collect(),
            timing: TimeConfig::default(),
            pedestrian_share: default_share(),
            cyclist_share: default_share(),
        }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Generates the corpus; identical `(config, seed)` give identical output.
pub fn synthesize_corpus(config: &SynthConfig, seed: u64) -> Result<Vec<Scenario>> {
    if config.total() == 0 {
        return Err(Error::EmptyCorpus);
    }
    if config.timing.t_hist < 2 || config.timing.t_fut < 1 || config.timing.dt <= 0.0 {
        return Err(Error::Validation("synthesis needs t_hist >= 2, t_fut >= 1, dt > 0".into()));
    }
    let mut out = Vec::with_capacity(config.total());
    let mut index = 0u64;
    for arch in Archetype::ALL {
        let n = config.counts.get(&arch).copied().unwrap_or(0);
        for _ in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index);
            out.push(build_scenario(arch, index, config, &mut rng));
            index += 1;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Paths

const PATH_STEP: f64 = 0.5;
const MAP_STEP: f64 = 1.0;

#[derive(Debug, Clone)]
struct Path {
    pts: Vec<Vec2>,
    heading: Vec<f64>,
    kappa: Vec<f64>,
    arc: Vec<f64>,
}

struct PathBuilder {
    pts: Vec<Vec2>,
    heading: Vec<f64>,
    kappa: Vec<f64>,
}

impl PathBuilder {
    fn new(start: Vec2, heading: f64) -> Self {
        PathBuilder {
            pts: vec![start],
            heading: vec![heading],
            kappa: vec![0.0],
        }
    }

    fn last(&self) -> (Vec2, f64) {
        (*self.pts.last().unwrap(), *self.heading.last().unwrap())
    }

    fn line(mut self, len: f64) -> Self {
        let n = (len / PATH_STEP).ceil().max(1.0) as usize;
        let ds = len / n as f64;
        let (mut p, h) = self.last();
        for _ in 0..n {
            p = p + Vec2::from_angle(h) * ds;
            self.pts.push(p);
            self.heading.push(h);
            self.kappa.push(0.0);
        }
        self
    }

    /// Circular arc; positive `angle` turns left.
    fn arc(mut self, radius: f64, angle: f64) -> Self {
        let len = radius * angle.abs();
        let n = (len / PATH_STEP).ceil().max(1.0) as usize;
        let dth = angle / n as f64;
        let chord = 2.0 * radius * (dth.abs() / 2.0).sin();
        let k = angle.signum() / radius;
        let (mut p, mut h) = self.last();
        for _ in 0..n {
            p = p + Vec2::from_angle(h + dth / 2.0) * chord;
            h += dth;
            self.pts.push(p);
            self.heading.push(h);
            self.kappa.push(k);
        }
        self
    }

    fn build(self) -> Path {
        let arc = crate::geometry::arc_lengths(&self.pts);
        Path {
            pts: self.pts,
            heading: self.heading,
            kappa: self.kappa,
            arc,
        }
    }
}

impl Path {
    fn straight(start: Vec2, heading: f64, len: f64) -> Path {
        PathBuilder::new(start, heading).line(len).build()
    }

    fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    /// Position, heading, curvature at arc length `s`; straight extrapolation past the ends.
    fn sample(&self, s: f64) -> (Vec2, f64, f64) {
        let n = self.pts.len();
        if s <= 0.0 {
            let h = self.heading[0];
            return (self.pts[0] + Vec2::from_angle(h) * s, h, 0.0);
        }
        if s >= self.length() {
            let h = self.heading[n - 1];
            return (self.pts[n - 1] + Vec2::from_angle(h) * (s - self.length()), h, 0.0);
        }
        let i = match self.arc.binary_search_by(|a| a.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        };
        let seg = self.arc[i + 1] - self.arc[i];
        let u = if seg > 0.0 { (s - self.arc[i]) / seg } else { 0.0 };
        let p = self.pts[i].lerp(self.pts[i + 1], u);
        let h = self.heading[i] + normalize_angle(self.heading[i + 1] - self.heading[i]) * u;
        (p, h, self.kappa[i + 1])
    }

    fn resample(&self, step: f64) -> Vec<Vec2> {
        let len = self.length();
        let n = (len / step).floor() as usize;
        let mut pts: Vec<Vec2> = (0..=n).map(|i| self.sample(i as f64 * step).0).collect();
        if len - n as f64 * step > 1e-6 {
            pts.push(*self.pts.last().unwrap());
        }
        pts
    }
}

// ---------------------------------------------------------------------------
// Longitudinal simulation

#[derive(Debug, Clone, Copy)]
struct Dynamics {
    a_max: f64,
    b_comf: f64,
    s_min: f64,
    headway: f64,
    length: f64,
}

impl Dynamics {
    fn for_type(t: AgentType) -> Self {
        match t {
            AgentType::Vehicle => Dynamics {
                a_max: 1.5,
                b_comf: 2.5,
                s_min: 2.0,
                headway: 1.4,
                length: 4.5,
            },
            AgentType::Cyclist => Dynamics {
                a_max: 1.0,
                b_comf: 1.5,
                s_min: 1.0,
                headway: 1.0,
                length: 1.8,
            },
            AgentType::Pedestrian => Dynamics {
                a_max: 0.6,
                b_comf: 1.0,
                s_min: 0.5,
                headway: 0.8,
                length: 0.5,
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Yield {
    my_conflict_s: f64,
    other: usize,
    other_clear_s: f64,
}

#[derive(Debug, Clone)]
struct Mover {
    agent_type: AgentType,
    path: Path,
    s0: f64,
    v0: f64,
    desired: f64,
    dyn_: Dynamics,
    leader: Option<usize>,
    stop_line: Option<(f64, usize)>,
    yield_to: Option<Yield>,
    slow_zone: Option<(f64, f64, f64)>,
    speed_event: Option<(usize, f64)>,
    noise_std: f64,
    appear: usize,
    vanish: Option<usize>,
    gap: Option<usize>,
}

impl Mover {
    fn new(agent_type: AgentType, path: Path, s0: f64, speed: f64) -> Self {
        Mover {
            agent_type,
            path,
            s0,
            v0: speed,
            desired: speed,
            dyn_: Dynamics::for_type(agent_type),
            leader: None,
            stop_line: None,
            yield_to: None,
            slow_zone: None,
            speed_event: None,
            noise_std: 0.05,
            appear: 0,
            vanish: None,
            gap: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Kin {
    s: f64,
    v: f64,
    a: f64,
}

fn simulate(movers: &[Mover], steps: usize, dt: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<Kin>> {
    let n = movers.len();
    let mut cur: Vec<Kin> = movers.iter().map(|m| Kin { s: m.s0, v: m.v0, a: 0.0 }).collect();
    let mut noise = vec![0.0; n];
    let mut dwell = vec![0usize; n];
    let mut cleared = vec![false; n];
    let mut out = vec![Vec::with_capacity(steps); n];

    for k in 0..steps {
        let mut acc = vec![0.0; n];
        for (i, m) in movers.iter().enumerate() {
            let me = cur[i];
            let mut desired = m.desired;
            if let Some((step, speed)) = m.speed_event {
                if k >= step {
                    desired = speed;
                }
            }
            if let Some((start, end, speed)) = m.slow_zone {
                if me.s > start - 15.0 && me.s < end {
                    desired = desired.min(speed);
                }
            }
            let desired = desired.max(0.1);
            let d = m.dyn_;
            let mut interaction: f64 = 0.0;
            let mut obstacle = |gap: f64, dv: f64| {
                let s_star = d.s_min + (me.v * d.headway + me.v * dv / (2.0 * (d.a_max * d.b_comf).sqrt())).max(0.0);
                let r = s_star / gap.max(0.1);
                interaction = interaction.max(r * r);
            };
            if let Some(j) = m.leader {
                let lead = cur[j];
                obstacle(lead.s - me.s - movers[j].dyn_.length, me.v - lead.v);
            }
            if let Some((line, wait)) = m.stop_line {
                if !cleared[i] {
                    let gap = line - me.s;
                    if gap < d.s_min + 1.5 && me.v < 0.3 {
                        dwell[i] += 1;
                        if dwell[i] >= wait {
                            cleared[i] = true;
                        }
                    }
                    if !cleared[i] {
                        obstacle(gap + d.s_min, me.v);
                    }
                }
            }
            if let Some(y) = m.yield_to {
                let other_passed = cur[y.other].s > y.other_clear_s;
                let approach = y.my_conflict_s - me.s;
                if !other_passed && approach > 1.0 {
                    obstacle(approach - 2.0 + d.s_min, me.v);
                }
            }
            noise[i] = 0.8 * noise[i] + m.noise_std * rng.sample::<f64, _>(StandardNormal);
            let a = d.a_max * (1.0 - (me.v / desired).powi(4) - interaction) + noise[i];
            acc[i] = a.clamp(-8.0, d.a_max * 1.5);
        }
        for i in 0..n {
            cur[i].a = acc[i];
            out[i].push(cur[i]);
        }
        for (i, c) in cur.iter_mut().enumerate() {
            let v_next = (c.v + acc[i] * dt).max(0.0);
            c.s += 0.5 * (c.v + v_next) * dt;
            c.v = v_next;
        }
    }
    out
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0 + 0.0
}

fn to_states(m: &Mover, kin: &[Kin], t_hist: usize) -> Vec<AgentState> {
    kin.iter()
        .enumerate()
        .map(|(k, q)| {
            let hidden = k < m.appear
                || m.vanish.is_some_and(|v| k >= v)
                || m.gap.is_some_and(|g| g == k && k < t_hist);
            if hidden {
                return AgentState::INVALID;
            }
            let (p, h, kappa) = m.path.sample(q.s);
            let tangent = Vec2::from_angle(h);
            let normal = Vec2::from_angle(h + FRAC_PI_2);
            let vel = tangent * q.v;
            let acc = tangent * q.a + normal * (q.v * q.v * kappa);
            AgentState {
                position: Vec2::new(round3(p.x), round3(p.y)),
                velocity: Vec2::new(round3(vel.x), round3(vel.y)),
                acceleration: Vec2::new(round3(acc.x), round3(acc.y)),
                heading: normalize_angle(round3(normalize_angle(h))),
                valid: true,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Archetypes

struct Draft {
    map: Vec<MapPolyline>,
    movers: Vec<Mover>,
    focal: Vec<usize>,
}

impl Draft {
    fn new() -> Self {
        Draft {
            map: Vec::new(),
            movers: Vec::new(),
            focal: Vec::new(),
        }
    }

    fn lane(&mut self, path: &Path, limit: Option<f64>, lane_type: LaneType) {
        self.map
            .push(MapPolyline::new(MapKind::Lane, path.resample(MAP_STEP), limit, Some(lane_type)));
    }

    fn device(&mut self, kind: MapKind, pts: Vec<Vec2>) {
        self.map.push(MapPolyline::new(kind, pts, None, None));
    }

    fn add(&mut self, m: Mover) -> usize {
        self.movers.push(m);
        self.movers.len() - 1
    }
}

struct Ctx<'a> {
    rng: &'a mut ChaCha8Rng,
    timing: TimeConfig,
    ped_share: f64,
    cyc_share: f64,
}

impl Ctx<'_> {
    fn u(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p.clamp(0.0, 1.0))
    }

    fn focal_type(&mut self) -> AgentType {
        let u: f64 = self.rng.random();
        if u < self.ped_share {
            AgentType::Pedestrian
        } else if u < self.ped_share + self.cyc_share {
            AgentType::Cyclist
        } else {
            AgentType::Vehicle
        }
    }

    fn cruise_speed(&mut self, t: AgentType) -> f64 {
        match t {
            AgentType::Vehicle => self.u(7.0, 15.0),
            AgentType::Cyclist => self.u(3.0, 7.0),
            AgentType::Pedestrian => self.u(0.8, 1.8),
        }
    }

    fn limit(&mut self, t: AgentType) -> Option<f64> {
        match t {
            AgentType::Vehicle => {
                let opts = [11.2, 13.4, 15.6];
                if self.chance(0.15) {
                    None
                } else {
                    Some(opts[self.rng.random_range(0..opts.len())])
                }
            }
            AgentType::Cyclist => self.chance(0.5).then_some(6.7),
            AgentType::Pedestrian => None,
        }
    }

    /// Distance covered during the history window at `speed`.
    fn hist_dist(&self, speed: f64) -> f64 {
        speed * self.timing.last_hist() as f64 * self.timing.dt
    }

    fn future_step(&mut self, lo_frac: f64, hi_frac: f64) -> usize {
        let t0 = self.timing.t_hist as f64;
        let tf = self.timing.t_fut as f64;
        (t0 + self.u(lo_frac, hi_frac) * tf) as usize
    }
}

fn lane_type_for(t: AgentType) -> LaneType {
    match t {
        AgentType::Cyclist => LaneType::BikeLane,
        _ => LaneType::SurfaceStreet,
    }
}

/// Lateral offset of the path an agent type travels on, relative to the road centerline.
fn side_offset(t: AgentType) -> f64 {
    match t {
        AgentType::Pedestrian => -8.0,
        _ => 0.0,
    }
}

fn crosswalk_across(x: f64, half_width: f64) -> Vec<Vec2> {
    vec![
        Vec2::new(x, -half_width),
        Vec2::new(x, 0.0),
        Vec2::new(x, half_width),
    ]
}

fn cruise(c: &mut Ctx) -> Draft {
    let mut d = Draft::new();
    let ft = c.focal_type();
    let y0 = side_offset(ft);
    let road = Path::straight(Vec2::new(-60.0, 0.0), 0.0, 360.0);
    let limit = c.limit(AgentType::Vehicle);
    d.lane(&road, limit, LaneType::SurfaceStreet);
    let adjacent = Path::straight(Vec2::new(-60.0, 3.7), 0.0, 360.0);
    d.lane(&adjacent, limit, LaneType::SurfaceStreet);
    if ft == AgentType::Cyclist {
        let bike = Path::straight(Vec2::new(-60.0, 0.0), 0.0, 360.0);
        d.lane(&bike, c.limit(ft), LaneType::BikeLane);
    }
    let path = Path::straight(Vec2::new(-60.0, y0), 0.0, 360.0);
    let speed = match (ft, limit) {
        (AgentType::Vehicle, Some(l)) => l * c.u(0.8, 1.25),
        _ => c.cruise_speed(ft),
    };
    let mut m = Mover::new(ft, path, 60.0 + c.u(0.0, 20.0), speed);
    if c.chance(0.35) {
        let step = c.future_step(0.05, 0.6);
        m.speed_event = Some((step, speed * c.u(0.5, 1.2)));
    }
    let f = d.add(m);
    d.focal.push(f);

    if c.chance(0.6) {
        let ahead = c.u(-25.0, 30.0);
        let s0 = d.movers[f].s0 + ahead;
        let v = c.cruise_speed(AgentType::Vehicle);
        let mut other = Mover::new(AgentType::Vehicle, adjacent.clone(), s0, v);
        other.appear = if c.chance(0.2) { c.rng.random_range(1..5) } else { 0 };
        d.add(other);
    }
    if c.chance(0.3) {
        let s0 = d.movers[f].s0 + c.u(60.0, 90.0);
        let v = c.cruise_speed(AgentType::Vehicle);
        d.add(Mover::new(AgentType::Vehicle, road.clone(), s0, v));
    }
    if c.chance(0.3) {
        let x = 60.0 + c.u(120.0, 200.0);
        d.device(MapKind::TrafficLight, vec![Vec2::new(x, -2.5)]);
    }
    d
}

fn turn(c: &mut Ctx) -> Draft {
    let mut d = Draft::new();
    let ft = c.focal_type();
    let left = c.chance(0.5);
    let angle = if left { FRAC_PI_2 } else { -FRAC_PI_2 };
    let radius = match ft {
        AgentType::Vehicle => c.u(10.0, 25.0),
        AgentType::Cyclist => c.u(6.0, 15.0),
        AgentType::Pedestrian => c.u(1.0, 3.0),
    };
    let approach = c.cruise_speed(ft);
    let lead_in = c.u(3.0, 20.0) + c.hist_dist(approach) + 20.0;
    let path = PathBuilder::new(Vec2::new(-lead_in, side_offset(ft)), 0.0)
        .line(lead_in)
        .arc(radius, angle)
        .line(120.0)
        .build();
    if ft != AgentType::Pedestrian {
        d.lane(&path, c.limit(ft), lane_type_for(ft));
    } else {
        let road = Path::straight(Vec2::new(-lead_in, 0.0), 0.0, lead_in + 100.0);
        d.lane(&road, c.limit(AgentType::Vehicle), LaneType::SurfaceStreet);
    }
    let cross = Path::straight(Vec2::new(radius + 8.0, -100.0), FRAC_PI_2, 200.0);
    d.lane(&cross, c.limit(AgentType::Vehicle), LaneType::SurfaceStreet);
    if c.chance(0.5) {
        d.device(MapKind::TrafficLight, vec![Vec2::new(-2.0, -3.0)]);
    } else {
        d.device(MapKind::Crosswalk, crosswalk_across(-4.0, 6.0));
    }

    let turn_speed = match ft {
        AgentType::Pedestrian => approach * c.u(0.6, 1.0),
        _ => (2.5 * radius).sqrt().min(approach),
    };
    let mut m = Mover::new(ft, path, 20.0, approach);
    let arc_end = lead_in + radius * FRAC_PI_2;
    m.slow_zone = Some((lead_in, arc_end, turn_speed));
    let f = d.add(m);
    d.focal.push(f);

    if c.chance(0.5) {
        let opp = Path::straight(Vec2::new(80.0, 3.5), PI, 200.0);
        d.lane(&opp, None, LaneType::SurfaceStreet);
        let v = c.cruise_speed(AgentType::Vehicle);
        d.add(Mover::new(AgentType::Vehicle, opp, c.u(40.0, 70.0), v));
    }
    d
}

fn stop_at_sign(c: &mut Ctx) -> Draft {
    let mut d = Draft::new();
    let ft = c.focal_type();
    let speed = c.cruise_speed(ft);
    let s_start = 60.0;
    let s_hist = s_start + c.hist_dist(speed);
    let dist = match ft {
        AgentType::Pedestrian => c.u(2.0, 10.0),
        _ => c.u(8.0, 40.0),
    }
    .max(speed * speed / (2.0 * 2.0) * 0.6);
    let line = s_hist + dist;
    let path = Path::straight(Vec2::new(-60.0, side_offset(ft)), 0.0, 400.0);
    let road = Path::straight(Vec2::new(-60.0, 0.0), 0.0, 400.0);
    let x_line = line - 60.0;
    d.lane(&road, c.limit(AgentType::Vehicle), LaneType::SurfaceStreet);
    if ft == AgentType::Cyclist {
        d.lane(&path, c.limit(ft), LaneType::BikeLane);
    }
    let cross_road = Path::straight(Vec2::new(x_line + 8.0, -120.0), FRAC_PI_2, 240.0);
    d.lane(&cross_road, c.limit(AgentType::Vehicle), LaneType::SurfaceStreet);
    d.device(MapKind::StopSign, vec![Vec2::new(x_line, -4.0)]);
    d.device(MapKind::Crosswalk, crosswalk_across(x_line + 3.0, 9.0));

    let mut m = Mover::new(ft, path, s_start, speed);
    let wait = c.rng.random_range(8..35);
    let stop_at = if ft == AgentType::Pedestrian { line } else { line + 0.5 };
    m.stop_line = Some((stop_at, wait));
    m.noise_std = 0.03;
    let f = d.add(m);
    d.focal.push(f);

    if ft == AgentType::Vehicle && c.chance(0.5) {
        let mut back = Mover::new(AgentType::Vehicle, road.clone(), s_start - c.u(12.0, 25.0), speed);
        back.leader = Some(f);
        d.add(back);
    }
    d
}

fn crossing_conflict(c: &mut Ctx) -> Draft {
    let mut d = Draft::new();
    let ft = c.focal_type();
    let a_path = Path::straight(Vec2::new(-150.0, 0.0), 0.0, 300.0);
    d.lane(&a_path, c.limit(AgentType::Vehicle), LaneType::SurfaceStreet);
    d.device(MapKind::TrafficLight, vec![Vec2::new(-6.0, -6.0)]);

    if ft == AgentType::Pedestrian {
        // pedestrian crosses road A on a crosswalk ahead of an approaching vehicle
        let cx = c.u(5.0, 15.0);
        d.device(MapKind::Crosswalk, crosswalk_across(cx, 8.0));
        let ped_path = Path::straight(Vec2::new(cx, -30.0), FRAC_PI_2, 60.0);
        let pv = c.cruise_speed(AgentType::Pedestrian);
        let ped_s = 30.0 - 8.0 - c.hist_dist(pv) - c.u(0.0, 2.0);
        let mut ped = Mover::new(AgentType::Pedestrian, ped_path, ped_s, pv);
        ped.noise_std = 0.02;
        let p = d.add(ped);
        let vv = c.cruise_speed(AgentType::Vehicle);
        let dist = c.u(20.0, 45.0);
        let s0 = 150.0 + cx - dist - c.hist_dist(vv);
        let mut car = Mover::new(AgentType::Vehicle, a_path, s0, vv);
        car.yield_to = Some(Yield {
            my_conflict_s: 150.0 + cx - 3.0,
            other: p,
            other_clear_s: 30.0 + 4.0,
        });
        let v = d.add(car);
        d.focal.extend([p, v]);
        return d;
    }

    let b_type = if c.chance(0.8) { AgentType::Vehicle } else { AgentType::Cyclist };
    let b_path = Path::straight(Vec2::new(0.0, -150.0), FRAC_PI_2, 300.0);
    d.lane(&b_path, c.limit(b_type), lane_type_for(b_type));
    d.device(MapKind::Crosswalk, crosswalk_across(-9.0, 8.0));

    let va = c.cruise_speed(ft);
    let vb = c.cruise_speed(b_type);
    let da = c.u(12.0, 40.0);
    let db = c.u(12.0, 40.0);
    let sa = 150.0 - da - c.hist_dist(va);
    let sb = 150.0 - db - c.hist_dist(vb);
    let a_first = da / va.max(0.1) <= db / vb.max(0.1);
    let mut ma = Mover::new(ft, a_path, sa, va);
    let mut mb = Mover::new(b_type, b_path, sb, vb);
    if a_first {
        mb.yield_to = Some(Yield {
            my_conflict_s: 150.0 - 4.0,
            other: 0,
            other_clear_s: 150.0 + 5.0,
        });
    } else {
        ma.yield_to = Some(Yield {
            my_conflict_s: 150.0 - 4.0,
            other: 1,
            other_clear_s: 150.0 + 5.0,
        });
    }
    let a = d.add(ma);
    let b = d.add(mb);
    debug_assert_eq!((a, b), (0, 1));
    d.focal.extend([a, b]);
    d
}

fn following(c: &mut Ctx) -> Draft {
    let mut d = Draft::new();
    let ft = c.focal_type();
    let path = Path::straight(Vec2::new(-60.0, side_offset(ft)), 0.0, 400.0);
    if ft == AgentType::Pedestrian {
        let road = Path::straight(Vec2::new(-60.0, 0.0), 0.0, 400.0);
        d.lane(&road, c.limit(AgentType::Vehicle), LaneType::SurfaceStreet);
    } else {
        d.lane(&path, c.limit(ft), lane_type_for(ft));
    }
    let v_lead = c.cruise_speed(ft);
    let gap = match ft {
        AgentType::Pedestrian => c.u(2.0, 6.0),
        _ => c.u(8.0, 30.0),
    };
    let mut lead = Mover::new(ft, path.clone(), 60.0 + gap, v_lead);
    if c.chance(0.6) {
        let step = c.future_step(0.0, 0.4);
        lead.speed_event = Some((step, v_lead * c.u(0.0, 0.5)));
        lead.dyn_.a_max *= 2.0;
    }
    let l = d.add(lead);
    let mut follow = Mover::new(ft, path, 60.0, v_lead * c.u(0.9, 1.2));
    follow.leader = Some(l);
    let f = d.add(follow);
    d.focal.extend([f, l]);
    if c.chance(0.3) {
        d.device(MapKind::SpeedBump, crosswalk_across(60.0 + c.u(60.0, 140.0), 2.0));
    }
    d
}

fn head_on(c: &mut Ctx) -> Draft {
    let mut d = Draft::new();
    let ft = c.focal_type();
    let y = side_offset(ft);
    let offset = match ft {
        AgentType::Pedestrian => c.u(0.5, 2.0),
        _ => c.u(2.6, 3.2),
    };
    let a_path = Path::straight(Vec2::new(-150.0, y), 0.0, 300.0);
    let b_path = Path::straight(Vec2::new(150.0, y + offset), PI, 300.0);
    if ft != AgentType::Pedestrian {
        d.lane(&a_path, c.limit(ft), lane_type_for(ft));
        d.lane(&b_path, c.limit(ft), lane_type_for(ft));
    } else {
        let road = Path::straight(Vec2::new(-150.0, 0.0), 0.0, 300.0);
        d.lane(&road, c.limit(AgentType::Vehicle), LaneType::SurfaceStreet);
    }
    let va = c.cruise_speed(ft);
    let vb = c.cruise_speed(ft);
    let sep = match ft {
        AgentType::Pedestrian => c.u(6.0, 25.0),
        _ => c.u(20.0, 48.0),
    };
    let sa = 150.0 - sep / 2.0 - c.hist_dist(va);
    let sb = 150.0 - sep / 2.0 - c.hist_dist(vb);
    let mut ma = Mover::new(ft, a_path, sa, va);
    if c.chance(0.4) {
        let step = c.future_step(0.0, 0.3);
        ma.speed_event = Some((step, va * c.u(0.3, 0.7)));
    }
    let a = d.add(ma);
    let b = d.add(Mover::new(ft, b_path, sb, vb));
    d.focal.extend([a, b]);
    if c.chance(0.5) {
        d.device(MapKind::SpeedBump, crosswalk_across(c.u(-40.0, 40.0), 4.0));
    }
    d
}

fn dense(c: &mut Ctx) -> Draft {
    let mut d = Draft::new();
    let ft = c.focal_type();
    let lanes_y: Vec<f64> = match ft {
        AgentType::Pedestrian => vec![-8.0, -9.5],
        _ => vec![0.0, 3.7, 7.4],
    };
    let mut chains = Vec::new();
    for &y in &lanes_y {
        let path = Path::straight(Vec2::new(-80.0, y), 0.0, 400.0);
        if ft == AgentType::Pedestrian {
            chains.push(path);
        } else {
            d.lane(&path, c.limit(ft), lane_type_for(ft));
            chains.push(path);
        }
    }
    if ft == AgentType::Pedestrian {
        let road = Path::straight(Vec2::new(-80.0, 0.0), 0.0, 400.0);
        d.lane(&road, c.limit(AgentType::Vehicle), LaneType::SurfaceStreet);
    }
    let opp = Path::straight(Vec2::new(320.0, -3.7), PI, 400.0);
    d.lane(&opp, c.limit(AgentType::Vehicle), LaneType::SurfaceStreet);

    let base = match ft {
        AgentType::Vehicle => c.u(3.0, 9.0),
        AgentType::Cyclist => c.u(2.0, 5.0),
        AgentType::Pedestrian => c.u(0.7, 1.4),
    };
    let spacing = match ft {
        AgentType::Vehicle => (8.0, 18.0),
        AgentType::Cyclist => (4.0, 9.0),
        AgentType::Pedestrian => (1.5, 4.0),
    };
    let mut candidates = Vec::new();
    for path in &chains {
        let count = c.rng.random_range(2..5);
        let mut s = 80.0 + c.u(-10.0, 10.0);
        let mut prev: Option<usize> = None;
        for j in 0..count {
            let mut m = Mover::new(ft, path.clone(), s, base * c.u(0.8, 1.2));
            m.leader = prev;
            if j + 1 == count && c.chance(0.5) {
                let step = c.future_step(0.0, 0.5);
                m.speed_event = Some((step, base * c.u(0.0, 0.6)));
            }
            if prev.is_some() && c.chance(0.15) {
                m.gap = Some(c.rng.random_range(1..c.timing.last_hist()));
            }
            let id = d.add(m);
            candidates.push(id);
            prev = Some(id);
            s += c.u(spacing.0, spacing.1);
        }
    }
    for _ in 0..c.rng.random_range(1..3) {
        let v = c.cruise_speed(AgentType::Vehicle);
        let mut m = Mover::new(AgentType::Vehicle, opp.clone(), c.u(180.0, 280.0), v);
        if c.chance(0.3) {
            m.vanish = Some(c.future_step(0.2, 0.9));
        }
        d.add(m);
    }
    let a = candidates[c.rng.random_range(0..candidates.len())];
    let mut b = candidates[c.rng.random_range(0..candidates.len())];
    if b == a {
        b = candidates[(candidates.iter().position(|x| *x == a).unwrap() + 1) % candidates.len()];
    }
    d.focal.push(a);
    if b != a {
        d.focal.push(b);
    }
    for &f in &d.focal {
        d.movers[f].gap = None;
    }
    d
}

fn sparse(c: &mut Ctx) -> Draft {
    let mut d = Draft::new();
    let ft = c.focal_type();
    let path = Path::straight(Vec2::new(-60.0, side_offset(ft)), 0.0, 400.0);
    let road = Path::straight(Vec2::new(-60.0, 0.0), 0.0, 400.0);
    d.lane(&road, c.limit(AgentType::Vehicle), LaneType::SurfaceStreet);
    let speed = c.cruise_speed(ft);
    let s_hist = 60.0 + c.hist_dist(speed);
    let mut m = Mover::new(ft, path, 60.0, speed);
    if ft != AgentType::Pedestrian && c.chance(0.75) {
        let bump = s_hist + c.u(8.0, 50.0);
        let slow = match ft {
            AgentType::Vehicle => c.u(2.0, 4.0),
            _ => c.u(1.5, 3.0),
        };
        m.slow_zone = Some((bump - 2.0, bump + 2.0, slow));
        d.device(MapKind::SpeedBump, crosswalk_across(bump - 60.0, 3.0));
    } else if c.chance(0.5) {
        let step = c.future_step(0.0, 0.5);
        m.speed_event = Some((step, speed * c.u(0.0, 1.5)));
    }
    if c.chance(0.3) {
        m.vanish = Some(c.future_step(0.3, 0.9));
    }
    let f = d.add(m);
    d.focal.push(f);
    d
}

fn build_scenario(arch: Archetype, index: u64, config: &SynthConfig, rng: &mut ChaCha8Rng) -> Scenario {
    let timing = config.timing;
    let mut ctx = Ctx {
        rng,
        timing,
        ped_share: config.pedestrian_share,
        cyc_share: config.cyclist_share,
    };
    let mut draft = match arch {
        Archetype::Cruise => cruise(&mut ctx),
        Archetype::Turn => turn(&mut ctx),
        Archetype::StopAtSign => stop_at_sign(&mut ctx),
        Archetype::CrossingConflict => crossing_conflict(&mut ctx),
        Archetype::Following => following(&mut ctx),
        Archetype::HeadOn => head_on(&mut ctx),
        Archetype::Dense => dense(&mut ctx),
        Archetype::Sparse => sparse(&mut ctx),
    };

    // planted gaps on focal history to exercise interpolation
    for &f in &draft.focal.clone() {
        if ctx.chance(0.1) {
            draft.movers[f].gap = Some(ctx.rng.random_range(1..timing.last_hist()));
        }
        draft.movers[f].appear = 0;
        if let Some(v) = draft.movers[f].vanish {
            draft.movers[f].vanish = Some(v.max(timing.t_hist + 20.min(timing.t_fut)));
        }
    }

    let rotation = ctx.u(-PI, PI);
    let translation = Vec2::new(ctx.u(-1000.0, 1000.0), ctx.u(-1000.0, 1000.0));
    let kin = simulate(&draft.movers, timing.total(), timing.dt, ctx.rng);

    let agents: Vec<AgentTrack> = draft
        .movers
        .iter()
        .zip(&kin)
        .enumerate()
        .map(|(i, (m, k))| AgentTrack {
            id: format!("{i}"),
            agent_type: m.agent_type,
            states: to_states(m, k, timing.t_hist),
        })
        .collect();
    let local = Scenario {
        scenario_id: format!("{}-{index:05}", arch.name()),
        agents,
        map: draft.map,
        focal_ids: draft.focal.iter().map(|f| format!("{f}")).collect(),
        archetype: Some(arch),
    };
    quantize(local.transformed(rotation, translation))
}

fn quantize(mut s: Scenario) -> Scenario {
    for a in &mut s.agents {
        for st in &mut a.states {
            if st.valid {
                st.position = Vec2::new(round3(st.position.x), round3(st.position.y));
                st.velocity = Vec2::new(round3(st.velocity.x), round3(st.velocity.y));
                st.acceleration = Vec2::new(round3(st.acceleration.x), round3(st.acceleration.y));
                st.heading = normalize_angle(round3(st.heading));
            }
        }
    }
    s.map = s
        .map
        .iter()
        .map(|m| {
            MapPolyline::new(
                m.kind,
                m.points.iter().map(|p| Vec2::new(round3(p.x), round3(p.y))).collect(),
                m.speed_limit,
                m.lane_type,
            )
        })
        .collect();
    s
}
