//! Fixed-length grouped feature vectors with per-group valid bits.
//!
//! A [`GroupSchema`] is plain data: ordered groups of one-hot, scalar, and
//! series fields. Series fields expand to five statistics. Every group ends
//! with a valid bit, and an absent group is exactly zero.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{EgoFeatureSet, GeometryType, InteractionFeatureSet};
use crate::geometry::Vec2;
use crate::scenario::{AgentKey, AgentType, LaneType, TCD_KINDS};

pub const SCHEMA_VERSION: u32 = 1;
pub const STAT_NAMES: [&str; 5] = ["mean", "std", "min", "max", "slope"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Ego,
    Social,
}

impl Axis {
    pub const ALL: [Axis; 2] = [Axis::Ego, Axis::Social];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Ego => "ego",
            Axis::Social => "social",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    OneHot(Vec<String>),
    Scalar,
    Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

impl FieldSpec {
    pub fn width(&self) -> usize {
        match &self.kind {
            FieldKind::OneHot(c) => c.len(),
            FieldKind::Scalar => 1,
            FieldKind::Series => STAT_NAMES.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub fields: Vec<FieldSpec>,
}

impl GroupSpec {
    /// Width including the trailing valid bit.
    pub fn width(&self) -> usize {
        self.fields.iter().map(FieldSpec::width).sum::<usize>() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSchema {
    pub version: u32,
    pub axis: Axis,
    /// Seconds per step, used for series slopes.
    pub dt: f64,
    pub groups: Vec<GroupSpec>,
}

/// Half-open index range of one group; the valid bit is at `end - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupRange {
    pub start: usize,
    pub end: usize,
}

impl GroupRange {
    pub fn valid_index(&self) -> usize {
        self.end - 1
    }
}

impl GroupSchema {
    pub fn width(&self) -> usize {
        self.groups.iter().map(GroupSpec::width).sum()
    }

    pub fn ranges(&self) -> Vec<GroupRange> {
        let mut start = 0;
        self.groups
            .iter()
            .map(|g| {
                let r = GroupRange {
                    start,
                    end: start + g.width(),
                };
                start = r.end;
                r
            })
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        hex(&Sha256::digest(json))
    }

    /// One name per dimension, `group.field[.category|.stat]`, then `group.valid`.
    pub fn dim_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        for g in &self.groups {
            for f in &g.fields {
                match &f.kind {
                    FieldKind::OneHot(cats) => {
                        out.extend(cats.iter().map(|c| format!("{}.{}.{c}", g.name, f.name)));
                    }
                    FieldKind::Scalar => out.push(format!("{}.{}", g.name, f.name)),
                    FieldKind::Series => {
                        out.extend(STAT_NAMES.iter().map(|s| format!("{}.{}.{s}", g.name, f.name)));
                    }
                }
            }
            out.push(format!("{}.valid", g.name));
        }
        out
    }

    /// True for dimensions that hold a valid bit.
    pub fn valid_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.width()];
        for r in self.ranges() {
            mask[r.valid_index()] = true;
        }
        mask
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// `(mean, population std, min, max, endpoint slope)`.
pub fn summarize_series(series: &[f64], dt: f64) -> Result<[f64; 5]> {
    if series.is_empty() {
        return Err(Error::Contract("cannot summarize an empty series".into()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let min = series.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slope = if series.len() == 1 {
        0.0
    } else {
        (series[series.len() - 1] - series[0]) / ((n - 1.0) * dt)
    };
    Ok([mean, var.sqrt(), min, max, slope])
}

fn series(name: &str) -> FieldSpec {
    FieldSpec {
        name: name.into(),
        kind: FieldKind::Series,
    }
}

fn scalar(name: &str) -> FieldSpec {
    FieldSpec {
        name: name.into(),
        kind: FieldKind::Scalar,
    }
}

fn one_hot(name: &str, cats: &[&str]) -> FieldSpec {
    FieldSpec {
        name: name.into(),
        kind: FieldKind::OneHot(cats.iter().map(|c| c.to_string()).collect()),
    }
}

const LANE_TYPES: [&str; 3] = ["freeway", "surface_street", "bike_lane"];
const AGENT_TYPES: [&str; 3] = ["vehicle", "pedestrian", "cyclist"];

pub fn vector_schema(axis: Axis, dt: f64) -> GroupSchema {
    let groups = match axis {
        Axis::Ego => {
            let mut g = vec![
                GroupSpec {
                    name: "kinematics".into(),
                    fields: ["pos_x", "pos_y", "vel_x", "vel_y", "acc_x", "acc_y", "speed", "curvature"]
                        .iter()
                        .map(|n| series(n))
                        .chain([scalar("span")])
                        .collect(),
                },
                GroupSpec {
                    name: "lane".into(),
                    fields: vec![
                        one_hot("lane_type", &LANE_TYPES),
                        series("frenet_s"),
                        series("frenet_d"),
                        series("compliance"),
                        scalar("heading_diff"),
                        scalar("has_speed_limit"),
                        scalar("speed_limit"),
                    ],
                },
            ];
            for k in TCD_KINDS {
                g.push(GroupSpec {
                    name: format!("closest_{}", k.name()),
                    fields: vec![scalar("distance"), scalar("relative_heading"), scalar("is_forward")],
                });
            }
            for k in TCD_KINDS {
                g.push(GroupSpec {
                    name: format!("forward_{}", k.name()),
                    fields: vec![scalar("distance"), scalar("relative_heading")],
                });
            }
            g
        }
        Axis::Social => {
            let mut g = vec![GroupSpec {
                name: "global".into(),
                fields: vec![scalar("density"), scalar("nearby")],
            }];
            for geo in GeometryType::ALL {
                let mut fields = vec![one_hot("other_type", &AGENT_TYPES), scalar("distance")];
                for n in [
                    "rel_pos_x",
                    "rel_pos_y",
                    "rel_vel_x",
                    "rel_vel_y",
                    "rel_acc_x",
                    "rel_acc_y",
                    "step_pos_x",
                    "step_pos_y",
                    "step_vel_x",
                    "step_vel_y",
                    "closing_speed",
                ] {
                    fields.push(series(n));
                }
                for n in [
                    "conflict_exists",
                    "conflict_x",
                    "conflict_y",
                    "conflict_distance",
                    "conflict_bearing",
                    "ttcp_focal",
                    "ttcp_other",
                    "delta_ttcp",
                    "has_mttcp",
                    "mttcp",
                ] {
                    fields.push(scalar(n));
                }
                g.push(GroupSpec {
                    name: geo.name(),
                    fields,
                });
            }
            g
        }
    };
    GroupSchema {
        version: SCHEMA_VERSION,
        axis,
        dt,
        groups,
    }
}

/// Value supplied for one schema field of a present group.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    OneHot(usize),
    Scalar(f64),
    Series(Vec<f64>),
    /// Zero-filled field inside a present group.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub schema_hash: String,
}

pub enum Features<'a> {
    Ego(&'a EgoFeatureSet),
    Social(&'a InteractionFeatureSet),
}

/// Lays out group values; `None` marks an absent group.
pub fn assemble(groups: &[Option<Vec<FieldValue>>], schema: &GroupSchema) -> Result<Vec<f64>> {
    if groups.len() != schema.groups.len() {
        return Err(Error::Layout(format!(
            "{} groups supplied, schema has {}",
            groups.len(),
            schema.groups.len()
        )));
    }
    let mut out = Vec::with_capacity(schema.width());
    for (spec, values) in schema.groups.iter().zip(groups) {
        let Some(values) = values else {
            out.extend(std::iter::repeat_n(0.0, spec.width()));
            continue;
        };
        if values.len() != spec.fields.len() {
            return Err(Error::Layout(format!(
                "group `{}`: {} values for {} fields",
                spec.name,
                values.len(),
                spec.fields.len()
            )));
        }
        for (f, v) in spec.fields.iter().zip(values) {
            match (&f.kind, v) {
                (_, FieldValue::Zero) => out.extend(std::iter::repeat_n(0.0, f.width())),
                (FieldKind::OneHot(c), FieldValue::OneHot(i)) if *i < c.len() => {
                    out.extend((0..c.len()).map(|j| if j == *i { 1.0 } else { 0.0 }));
                }
                (FieldKind::Scalar, FieldValue::Scalar(x)) => out.push(*x),
                (FieldKind::Series, FieldValue::Series(s)) => out.extend(summarize_series(s, schema.dt)?),
                _ => {
                    return Err(Error::Layout(format!(
                        "group `{}` field `{}`: value {v:?} does not fit {:?}",
                        spec.name, f.name, f.kind
                    )))
                }
            }
        }
        out.push(1.0);
    }
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Layout(format!("non-finite value at dimension {i}")));
    }
    Ok(out)
}

fn xs(v: &[Vec2]) -> Vec<f64> {
    v.iter().map(|p| p.x).collect()
}

fn ys(v: &[Vec2]) -> Vec<f64> {
    v.iter().map(|p| p.y).collect()
}

fn flag(b: bool) -> FieldValue {
    FieldValue::Scalar(if b { 1.0 } else { 0.0 })
}

pub fn ego_groups(f: &EgoFeatureSet, dt: f64) -> Vec<Option<Vec<FieldValue>>> {
    use FieldValue::*;
    let k = &f.kinematics;
    let kin = (!k.is_empty()).then(|| {
        vec![
            Series(xs(&k.position)),
            Series(ys(&k.position)),
            Series(xs(&k.velocity)),
            Series(ys(&k.velocity)),
            Series(xs(&k.acceleration)),
            Series(ys(&k.acceleration)),
            Series(k.speed.clone()),
            Series(k.curvature.clone()),
            Scalar((k.len() as f64 - 1.0) * dt),
        ]
    });
    let lane = f.lane.as_ref().map(|l| {
        vec![
            OneHot(l.lane_type.index()),
            Series(l.frenet_s.clone()),
            Series(l.frenet_d.clone()),
            if l.compliance.is_empty() {
                Zero
            } else {
                Series(l.compliance.clone())
            },
            Scalar(l.heading_diff),
            flag(l.speed_limit.is_some()),
            Scalar(l.speed_limit.unwrap_or(0.0)),
        ]
    });
    debug_assert_eq!(LaneType::ALL.len(), LANE_TYPES.len());
    let mut out = vec![kin, lane];
    out.extend(
        f.tcd_closest
            .iter()
            .map(|t| t.map(|t| vec![Scalar(t.distance), Scalar(t.relative_heading), flag(t.is_forward)])),
    );
    out.extend(
        f.tcd_forward
            .iter()
            .map(|t| t.map(|t| vec![Scalar(t.distance), Scalar(t.relative_heading)])),
    );
    out
}

pub fn social_groups(f: &InteractionFeatureSet) -> Vec<Option<Vec<FieldValue>>> {
    use FieldValue::*;
    let mut out = vec![Some(vec![Scalar(f.density as f64), Scalar(f.nearby as f64)])];
    debug_assert_eq!(AgentType::ALL.len(), AGENT_TYPES.len());
    for slot in &f.slots {
        out.push(slot.as_ref().map(|s| {
            let c = &s.conflict;
            let mttcp = s.mttcp();
            vec![
                OneHot(s.other_type.index()),
                Scalar(s.distance),
                Series(xs(&s.rel_position)),
                Series(ys(&s.rel_position)),
                Series(xs(&s.rel_velocity)),
                Series(ys(&s.rel_velocity)),
                Series(xs(&s.rel_acceleration)),
                Series(ys(&s.rel_acceleration)),
                Series(xs(&s.step_position)),
                Series(ys(&s.step_position)),
                Series(xs(&s.step_velocity)),
                Series(ys(&s.step_velocity)),
                Series(s.closing_speed.clone()),
                flag(c.exists),
                Scalar(c.relative_position.x),
                Scalar(c.relative_position.y),
                Scalar(c.distance),
                Scalar(c.bearing),
                Scalar(c.ttcp_focal),
                Scalar(c.ttcp_other),
                Scalar(c.delta_ttcp),
                flag(mttcp.is_some()),
                Scalar(mttcp.unwrap_or(0.0)),
            ]
        }));
    }
    out
}

pub fn build_vector(features: Features<'_>, schema: &GroupSchema) -> Result<FeatureVector> {
    let groups = match (features, schema.axis) {
        (Features::Ego(f), Axis::Ego) => ego_groups(f, schema.dt),
        (Features::Social(f), Axis::Social) => social_groups(f),
        (_, axis) => {
            return Err(Error::Layout(format!(
                "feature set does not match the {} schema",
                axis.name()
            )))
        }
    };
    Ok(FeatureVector {
        axis: schema.axis,
        values: assemble(&groups, schema)?,
        schema_hash: schema.hash(),
    })
}

/// Per-dimension z-scoring fitted on training rows.
///
/// Statistics use only rows where the owning group is present; absent groups
/// and valid bits pass through unchanged, so zero-fill survives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Valid-bit index of each dimension's group; `None` for valid bits.
    pub owner: Vec<Option<usize>>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], schema: &GroupSchema) -> Result<Self> {
        let width = schema.width();
        let mut owner = vec![None; width];
        for r in schema.ranges() {
            for o in &mut owner[r.start..r.valid_index()] {
                *o = Some(r.valid_index());
            }
        }
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let mut cnt = vec![0usize; width];
        for row in rows {
            if row.len() != width {
                return Err(Error::Layout(format!("row width {} != schema width {width}", row.len())));
            }
            for d in 0..width {
                if let Some(v) = owner[d] {
                    if row[v] == 1.0 {
                        sum[d] += row[d];
                        cnt[d] += 1;
                    }
                }
            }
        }
        let mean: Vec<f64> = (0..width)
            .map(|d| if cnt[d] > 0 { sum[d] / cnt[d] as f64 } else { 0.0 })
            .collect();
        for row in rows {
            for d in 0..width {
                if let Some(v) = owner[d] {
                    if row[v] == 1.0 {
                        sq[d] += (row[d] - mean[d]).powi(2);
                    }
                }
            }
        }
        let std = (0..width)
            .map(|d| {
                let s = if cnt[d] > 0 { (sq[d] / cnt[d] as f64).sqrt() } else { 1.0 };
                if s > 1e-9 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std, owner })
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(d, &x)| match self.owner[d] {
                None => x,
                Some(v) if row[v] == 1.0 => (x - self.mean[d]) / self.std[d],
                Some(_) => 0.0,
            })
            .collect()
    }
}

/// One focal agent's vectors on both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub key: AgentKey,
    pub agent_type: AgentType,
    pub values: Vec<f64>,
}

/// Per-axis feature matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub axis: Axis,
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

const KEY_COLUMNS: [&str; 3] = ["scenario_id", "agent_id", "agent_type"];

impl FeatureTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(KEY_COLUMNS.iter().map(|s| s.to_string()).chain(self.names.iter().cloned()))?;
        for r in &self.rows {
            let mut rec = vec![
                r.key.scenario_id.clone(),
                r.key.agent_id.clone(),
                r.agent_type.name().to_string(),
            ];
            rec.extend(r.values.iter().map(|v| format!("{v:?}")));
            wr.write_record(rec)?;
        }
        wr.flush().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(())
    }

    /// Parses a table written by [`FeatureTable::write_csv`]; `expected` pins the column names.
    pub fn read_csv<R: Read>(axis: Axis, r: R, expected: Option<&[String]>) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rd.headers()?.clone();
        if header.len() < KEY_COLUMNS.len() || header.iter().take(3).ne(KEY_COLUMNS.iter().copied()) {
            return Err(Error::Layout("feature table must start with scenario_id,agent_id,agent_type".into()));
        }
        let names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
        if let Some(exp) = expected {
            if exp != names.as_slice() {
                return Err(Error::Layout("feature table columns do not match the schema".into()));
            }
        }
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    line,
                    field: "row".into(),
                    message: format!("{} columns, header has {}", rec.len(), header.len()),
                });
            }
            let agent_type = rec[2].parse::<AgentType>().map_err(|e| Error::Parse {
                line,
                field: "agent_type".into(),
                message: e.to_string(),
            })?;
            let mut values = Vec::with_capacity(names.len());
            for (j, cell) in rec.iter().skip(3).enumerate() {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    line,
                    field: names[j].clone(),
                    message: format!("not a number: `{cell}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        field: names[j].clone(),
                        message: "non-finite value".into(),
                    });
                }
                values.push(v);
            }
            rows.push(FeatureRow {
                key: AgentKey::new(&rec[0], &rec[1]),
                agent_type,
                values,
            });
        }
        Ok(FeatureTable { axis, names, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_statistics() {
        assert_eq!(summarize_series(&[2.0, 2.0, 2.0], 0.1).unwrap(), [2.0, 0.0, 2.0, 2.0, 0.0]);
        let s = summarize_series(&[0.0, 1.0, 2.0], 0.1).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert!((s[1] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!((s[2], s[3]), (0.0, 2.0));
        assert!((s[4] - 10.0).abs() < 1e-12);
        assert_eq!(summarize_series(&[5.0], 0.1).unwrap(), [5.0, 0.0, 5.0, 5.0, 0.0]);
        assert!(matches!(summarize_series(&[], 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn group_counts() {
        assert_eq!(vector_schema(Axis::Ego, 0.1).groups.len(), 10);
        assert_eq!(vector_schema(Axis::Social, 0.1).groups.len(), 10);
        let s = vector_schema(Axis::Social, 0.1);
        assert_eq!(s.dim_names().len(), s.width());
        assert_eq!(s.hash(), vector_schema(Axis::Social, 0.1).hash());
        assert_ne!(s.hash(), vector_schema(Axis::Ego, 0.1).hash());
    }

    #[test]
    fn layout_errors() {
        let schema = vector_schema(Axis::Ego, 0.1);
        assert!(matches!(assemble(&[None], &schema), Err(Error::Layout(_))));
        let mut groups: Vec<Option<Vec<FieldValue>>> = vec![None; 10];
        groups[2] = Some(vec![FieldValue::Series(vec![1.0]); 3]);
        assert!(matches!(assemble(&groups, &schema), Err(Error::Layout(_))));
    }

    #[test]
    fn standardizer_keeps_absent_groups_zero() {
        let schema = GroupSchema {
            version: 1,
            axis: Axis::Ego,
            dt: 0.1,
            groups: vec![GroupSpec {
                name: "g".into(),
                fields: vec![scalar("a")],
            }],
        };
        let rows = vec![vec![2.0, 1.0], vec![4.0, 1.0], vec![0.0, 0.0]];
        let st = Standardizer::fit(&rows, &schema).unwrap();
        assert_eq!(st.mean[0], 3.0);
        assert_eq!(st.std[0], 1.0);
        assert_eq!(st.transform(&rows[0]), vec![-1.0, 1.0]);
        assert_eq!(st.transform(&rows[2]), vec![0.0, 0.0]);
    }
}
