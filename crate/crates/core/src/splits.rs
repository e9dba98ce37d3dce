//! Seen/unseen composition splits built by greedy context holdout, plus train/val partitioning.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::LabelRow;
use crate::difficulty::{ContextDifficulty, DifficultyRecord};
use crate::error::{Error, Result};
use crate::scenario::{AgentKey, AgentType};
use crate::vectorize::{sha256_hex, Axis};

pub const MANIFEST_FORMAT: &str = "scenefactor-split";
pub const MANIFEST_VERSION: u32 = 1;

/// `(c_e, c_s)`.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    ClosedWorld,
    OpenWorld,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::ClosedWorld => "closed_world",
            Setting::OpenWorld => "open_world",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed" | "closed_world" => Ok(Setting::ClosedWorld),
            "open" | "open_world" => Ok(Setting::OpenWorld),
            _ => Err(Error::Validation(format!("unknown split setting `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub setting: Setting,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction <= 1.0) {
            return Err(Error::Validation(format!("test fraction {} not in (0, 1]", self.test_fraction)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Validation(format!("val fraction {} not in (0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentAssignment {
    pub key: AgentKey,
    pub agent_type: AgentType,
    pub c_e: usize,
    pub c_s: usize,
    pub split: Assignment,
}

impl AgentAssignment {
    pub fn pair(&self) -> Pair {
        (self.c_e, self.c_s)
    }
}

/// One greedy holdout step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutStep {
    pub axis: Axis,
    pub context: usize,
    pub mean_difficulty: f64,
    /// Pairs moved from seen to unseen, before add-back.
    pub held_pairs: Vec<Pair>,
    pub added_back: Vec<Pair>,
    pub test_agents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub format: String,
    pub version: u32,
    pub config: SplitConfig,
    pub target_test_agents: usize,
    pub seen_pairs: Vec<Pair>,
    pub unseen_pairs: Vec<Pair>,
    /// Sorted by key.
    pub assignments: Vec<AgentAssignment>,
    pub trace: Vec<HoldoutStep>,
    /// Unseen pairs returned to seen because a marginal was missing from seen.
    pub repaired: Vec<Pair>,
}

fn mean_of(ctx: &ContextDifficulty, axis: Axis, c: usize) -> Option<f64> {
    let v = match axis {
        Axis::Ego => &ctx.ego,
        Axis::Social => &ctx.social,
    };
    v.get(c).copied().flatten().map(|s| s.mean)
}

fn on_axis(p: Pair, axis: Axis) -> usize {
    match axis {
        Axis::Ego => p.0,
        Axis::Social => p.1,
    }
}

fn other(axis: Axis) -> Axis {
    match axis {
        Axis::Ego => Axis::Social,
        Axis::Social => Axis::Ego,
    }
}

fn marginals(pairs: &BTreeSet<Pair>) -> (BTreeSet<usize>, BTreeSet<usize>) {
    (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
}

/// Greedy alternating holdout, ego axis first. Test agents are marked `Test`, all others `Train`.
pub fn build_split(
    labels: &[LabelRow],
    ctx: &ContextDifficulty,
    setting: Setting,
    test_fraction: f64,
) -> Result<SplitManifest> {
    if labels.is_empty() {
        return Err(Error::Construction("empty label table".into()));
    }
    if !(test_fraction > 0.0 && test_fraction <= 1.0) {
        return Err(Error::Validation(format!("test fraction {test_fraction} not in (0, 1]")));
    }
    let n = labels.len();
    let target = ((test_fraction * n as f64).ceil() as usize).max(1);
    let mut count: BTreeMap<Pair, usize> = BTreeMap::new();
    for l in labels {
        *count.entry((l.c_e, l.c_s)).or_default() += 1;
    }
    let mut seen: BTreeSet<Pair> = count.keys().copied().collect();
    let mut unseen: BTreeSet<Pair> = BTreeSet::new();
    let mut test_agents = 0usize;
    let mut processed: [BTreeSet<usize>; 2] = Default::default();
    let mut trace = Vec::new();
    let mut axis = Axis::Ego;
    let axis_slot = |a: Axis| a as usize;

    while test_agents < target {
        let pick = |a: Axis, seen: &BTreeSet<Pair>, processed: &[BTreeSet<usize>; 2]| {
            let live: BTreeSet<usize> = seen.iter().map(|&p| on_axis(p, a)).collect();
            live.into_iter()
                .filter(|c| !processed[axis_slot(a)].contains(c))
                .filter_map(|c| mean_of(ctx, a, c).map(|m| (c, m)))
                .fold(None, |best: Option<(usize, f64)>, (c, m)| match best {
                    Some((_, bm)) if bm >= m => best,
                    _ => Some((c, m)),
                })
        };
        let (a, (c, m)) = match pick(axis, &seen, &processed) {
            Some(x) => (axis, x),
            None => match pick(other(axis), &seen, &processed) {
                Some(x) => (other(axis), x),
                None => {
                    return Err(Error::Construction(format!(
                        "test fraction {test_fraction} unreachable: held {test_agents} of {target} agents when contexts ran out"
                    )))
                }
            },
        };
        processed[axis_slot(a)].insert(c);
        let held: Vec<Pair> = seen.iter().copied().filter(|&p| on_axis(p, a) == c).collect();
        for p in &held {
            seen.remove(p);
            unseen.insert(*p);
            test_agents += count[p];
        }
        let mut added_back = Vec::new();
        if setting == Setting::ClosedWorld {
            let mut partners = held.clone();
            partners.sort_by_key(|&p| on_axis(p, other(a)));
            for p in partners.into_iter().take(held.len().div_ceil(2)) {
                unseen.remove(&p);
                seen.insert(p);
                test_agents -= count[&p];
                added_back.push(p);
            }
        }
        trace.push(HoldoutStep {
            axis: a,
            context: c,
            mean_difficulty: m,
            held_pairs: held,
            added_back,
            test_agents,
        });
        axis = other(a);
    }

    let mut repaired = Vec::new();
    if setting == Setting::ClosedWorld {
        loop {
            let (me, ms) = marginals(&seen);
            let Some(&p) = unseen.iter().find(|p| !me.contains(&p.0) || !ms.contains(&p.1)) else {
                break;
            };
            unseen.remove(&p);
            seen.insert(p);
            test_agents -= count[&p];
            repaired.push(p);
        }
    }
    if n - test_agents < 2 {
        return Err(Error::Construction(format!(
            "only {} seen agents remain; train and val cannot both be non-empty",
            n - test_agents
        )));
    }
    if test_agents == 0 {
        return Err(Error::Construction("no agent could be held out".into()));
    }

    let mut assignments: Vec<AgentAssignment> = labels
        .iter()
        .map(|l| AgentAssignment {
            key: l.key.clone(),
            agent_type: l.agent_type,
            c_e: l.c_e,
            c_s: l.c_s,
            split: if unseen.contains(&(l.c_e, l.c_s)) {
                Assignment::Test
            } else {
                Assignment::Train
            },
        })
        .collect();
    assignments.sort_by(|a, b| a.key.cmp(&b.key));
    if assignments.windows(2).any(|w| w[0].key == w[1].key) {
        return Err(Error::Construction("duplicate agent key in label table".into()));
    }
    Ok(SplitManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        config: SplitConfig {
            setting,
            test_fraction,
            val_fraction: 0.0,
            seed: 0,
        },
        target_test_agents: target,
        seen_pairs: seen.into_iter().collect(),
        unseen_pairs: unseen.into_iter().collect(),
        assignments,
        trace,
        repaired,
    })
}

pub fn build_open_world(labels: &[LabelRow], ctx: &ContextDifficulty, test_fraction: f64) -> Result<SplitManifest> {
    build_split(labels, ctx, Setting::OpenWorld, test_fraction)
}

pub fn build_closed_world(labels: &[LabelRow], ctx: &ContextDifficulty, test_fraction: f64) -> Result<SplitManifest> {
    build_split(labels, ctx, Setting::ClosedWorld, test_fraction)
}

/// Picks exactly `round(val_fraction * n)` (clamped to `[1, n - 1]`) of `seen` as validation agents.
pub fn partition_train_val(seen: &[AgentKey], val_fraction: f64, seed: u64) -> Result<BTreeSet<AgentKey>> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Validation(format!("val fraction {val_fraction} not in (0, 1)")));
    }
    let n = seen.len();
    if n < 2 {
        return Err(Error::Construction(format!("{n} seen agents cannot be split into train and val")));
    }
    let mut keys = seen.to_vec();
    keys.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);
    let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 1);
    Ok(keys.into_iter().take(n_val).collect())
}

/// Full construction: greedy holdout, then the seeded train/val partition of the seen pool.
pub fn construct_split(labels: &[LabelRow], ctx: &ContextDifficulty, config: &SplitConfig) -> Result<SplitManifest> {
    config.validate()?;
    let mut m = build_split(labels, ctx, config.setting, config.test_fraction)?;
    m.config = config.clone();
    let seen: Vec<AgentKey> = m
        .assignments
        .iter()
        .filter(|a| a.split != Assignment::Test)
        .map(|a| a.key.clone())
        .collect();
    let val = partition_train_val(&seen, config.val_fraction, config.seed)?;
    for a in &mut m.assignments {
        if val.contains(&a.key) {
            a.split = Assignment::Val;
        }
    }
    Ok(m)
}

impl SplitManifest {
    pub fn keys(&self, split: Assignment) -> Vec<AgentKey> {
        self.assignments
            .iter()
            .filter(|a| a.split == split)
            .map(|a| a.key.clone())
            .collect()
    }

    pub fn lookup(&self) -> BTreeMap<&AgentKey, &AgentAssignment> {
        self.assignments.iter().map(|a| (&a.key, a)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Content hash of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    /// Parses a manifest and checks its encoding-level invariants; split semantics are left to [`verify_split`].
    pub fn from_json(text: &str) -> Result<SplitManifest> {
        let m: SplitManifest = serde_json::from_str(text)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Validation(format!("unsupported manifest `{}` v{}", m.format, m.version)));
        }
        if m.assignments.windows(2).any(|w| w[0].key >= w[1].key) {
            return Err(Error::Validation("manifest assignments must be sorted with unique keys".into()));
        }
        for (name, v) in [("seen_pairs", &m.seen_pairs), ("unseen_pairs", &m.unseen_pairs)] {
            if v.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Validation(format!("manifest {name} must be sorted and unique")));
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub violations: Vec<String>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub train_mean: Option<f64>,
    pub val_mean: Option<f64>,
    pub test_mean: Option<f64>,
    /// Mean over train and val together.
    pub seen_mean: Option<f64>,
    /// `test_mean / val_mean`, informational.
    pub test_val_ratio: Option<f64>,
}

impl SplitReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<SplitReport> {
        if self.ok() {
            Ok(self)
        } else {
            Err(Error::Construction(self.violations.join("; ")))
        }
    }
}

/// Structural checks plus mean difficulties per split; agents without a difficulty are left out of the means.
pub fn verify_split(manifest: &SplitManifest, records: &[DifficultyRecord]) -> SplitReport {
    let mut v = Vec::new();
    let seen: BTreeSet<Pair> = manifest.seen_pairs.iter().copied().collect();
    let unseen: BTreeSet<Pair> = manifest.unseen_pairs.iter().copied().collect();
    for p in seen.intersection(&unseen) {
        v.push(format!("pair {p:?} is both seen and unseen"));
    }
    let mut observed_seen = BTreeSet::new();
    let mut observed_unseen = BTreeSet::new();
    for a in &manifest.assignments {
        let p = a.pair();
        match a.split {
            Assignment::Test => {
                observed_unseen.insert(p);
                if !unseen.contains(&p) {
                    v.push(format!("test agent {} has pair {p:?} outside unseen_pairs", a.key));
                }
            }
            Assignment::Train | Assignment::Val => {
                observed_seen.insert(p);
                if !seen.contains(&p) {
                    v.push(format!("{:?} agent {} has pair {p:?} outside seen_pairs", a.split, a.key));
                }
            }
        }
    }
    for p in seen.difference(&observed_seen) {
        v.push(format!("seen pair {p:?} has no train/val agent"));
    }
    for p in unseen.difference(&observed_unseen) {
        v.push(format!("unseen pair {p:?} has no test agent"));
    }
    let (me, ms) = marginals(&seen);
    for p in &unseen {
        let (e, s) = (me.contains(&p.0), ms.contains(&p.1));
        match manifest.config.setting {
            Setting::ClosedWorld if !(e && s) => {
                v.push(format!("closed-world pair {p:?} has a context never seen in training"))
            }
            Setting::OpenWorld if e && s => {
                v.push(format!("open-world pair {p:?} recombines two seen contexts"))
            }
            _ => {}
        }
    }
    let diff: BTreeMap<&AgentKey, Option<f64>> = records.iter().map(|r| (&r.key, r.difficulty)).collect();
    let lookup = manifest.lookup();
    for a in &manifest.assignments {
        if !diff.contains_key(&a.key) {
            v.push(format!("agent {} has no difficulty record", a.key));
        }
    }
    for r in records {
        if !lookup.contains_key(&r.key) {
            v.push(format!("difficulty record {} is not in the manifest", r.key));
        }
    }
    let mean = |pred: &dyn Fn(Assignment) -> bool| {
        let xs: Vec<f64> = manifest
            .assignments
            .iter()
            .filter(|a| pred(a.split))
            .filter_map(|a| diff.get(&a.key).copied().flatten())
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    let count = |s: Assignment| manifest.assignments.iter().filter(|a| a.split == s).count();
    let train_mean = mean(&|s| s == Assignment::Train);
    let val_mean = mean(&|s| s == Assignment::Val);
    let test_mean = mean(&|s| s == Assignment::Test);
    SplitReport {
        violations: v,
        train: count(Assignment::Train),
        val: count(Assignment::Val),
        test: count(Assignment::Test),
        train_mean,
        val_mean,
        test_mean,
        seen_mean: mean(&|s| s != Assignment::Test),
        test_val_ratio: test_mean.zip(val_mean).filter(|(_, v)| *v > 0.0).map(|(t, v)| t / v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::difficulty::ContextStat;

    fn stat(m: f64) -> Option<ContextStat> {
        Some(ContextStat { mean: m, count: 1 })
    }

    /// 2x2 pairs with `per` agents each; ego means (5, 1), social means (4, 1).
    fn toy(per: usize) -> (Vec<LabelRow>, ContextDifficulty) {
        let mut labels = Vec::new();
        for e in 0..2 {
            for s in 0..2 {
                for i in 0..per {
                    labels.push(LabelRow {
                        key: AgentKey::new(format!("{e}{s}"), i.to_string()),
                        agent_type: AgentType::Vehicle,
                        c_e: e,
                        c_s: s,
                    });
                }
            }
        }
        let ctx = ContextDifficulty {
            ego: vec![stat(5.0), stat(1.0)],
            social: vec![stat(4.0), stat(1.0)],
        };
        (labels, ctx)
    }

    fn records(m: &SplitManifest) -> Vec<DifficultyRecord> {
        m.assignments
            .iter()
            .map(|a| DifficultyRecord {
                key: a.key.clone(),
                fde: vec![Some(1.0)],
                difficulty: Some(1.0),
            })
            .collect()
    }

    #[test]
    fn open_world_toy_holds_out_best_ego_context() {
        let (l, c) = toy(5);
        let m = build_open_world(&l, &c, 0.5).unwrap();
        assert_eq!(m.unseen_pairs, vec![(0, 0), (0, 1)]);
        assert_eq!(m.trace.len(), 1);
        assert!(verify_split(&m, &records(&m)).ok());
    }

    #[test]
    fn closed_world_toy_add_back() {
        let (l, c) = toy(5);
        let m = build_closed_world(&l, &c, 0.25).unwrap();
        assert_eq!(m.unseen_pairs, vec![(0, 1)]);
        assert_eq!(m.seen_pairs, vec![(0, 0), (1, 0), (1, 1)]);
        assert_eq!(m.trace[0].added_back, vec![(0, 0)]);
        assert!(verify_split(&m, &records(&m)).ok());
        // a 50% target needs a second, social-axis step
        let m = build_closed_world(&l, &c, 0.5).unwrap();
        assert_eq!(m.unseen_pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(m.trace[1].axis, Axis::Social);
        assert!(verify_split(&m, &records(&m)).ok());
    }

    #[test]
    fn full_target_is_unconstructible() {
        let (l, c) = toy(5);
        for s in [Setting::OpenWorld, Setting::ClosedWorld] {
            assert!(matches!(build_split(&l, &c, s, 1.0), Err(Error::Construction(_))));
        }
    }

    #[test]
    fn single_partner_is_returned() {
        let (mut l, mut c) = toy(3);
        l.retain(|r| r.c_s == 0);
        c.social = vec![stat(4.0)];
        // every holdout is undone by add-back or by the marginal repair
        assert!(matches!(build_closed_world(&l, &c, 0.3), Err(Error::Construction(_))));
    }

    #[test]
    fn train_val_counts() {
        let keys: Vec<AgentKey> = (0..100).map(|i| AgentKey::new("s", i.to_string())).collect();
        let a = partition_train_val(&keys, 0.2, 9).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a, partition_train_val(&keys, 0.2, 9).unwrap());
    }

    #[test]
    fn planted_faults_are_reported() {
        let (l, c) = toy(5);
        let cfg = SplitConfig {
            setting: Setting::OpenWorld,
            test_fraction: 0.5,
            val_fraction: 0.2,
            seed: 1,
        };
        let m = construct_split(&l, &c, &cfg).unwrap();
        let mut leak = m.clone();
        leak.seen_pairs.push((0, 0));
        leak.seen_pairs.sort();
        assert!(verify_split(&leak, &records(&m))
            .violations
            .iter()
            .any(|v| v.contains("both seen and unseen")));

        let cfg = SplitConfig {
            setting: Setting::ClosedWorld,
            test_fraction: 0.25,
            ..cfg
        };
        let mut m = construct_split(&l, &c, &cfg).unwrap();
        // make ego context 0 test-only, so (0, 1) can no longer recombine seen contexts
        for a in &mut m.assignments {
            if a.c_e == 0 {
                a.split = Assignment::Test;
            }
        }
        m.seen_pairs.retain(|p| p.0 != 0);
        m.unseen_pairs = vec![(0, 0), (0, 1)];
        assert!(verify_split(&m, &records(&m))
            .violations
            .iter()
            .any(|v| v.contains("never seen")));
    }

    #[test]
    fn manifest_round_trip() {
        let (l, c) = toy(2);
        let cfg = SplitConfig {
            setting: Setting::ClosedWorld,
            test_fraction: 0.25,
            val_fraction: 0.3,
            seed: 4,
        };
        let m = construct_split(&l, &c, &cfg).unwrap();
        let back = SplitManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
    }
}
