//! Multi-modal displacement metrics, difficulty-balanced averages, and seen/unseen gap tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scenario::AgentKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BestMode {
    #[default]
    Fde,
    Ade,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeMetrics {
    pub ade: f64,
    pub fde: f64,
    pub best_mode: usize,
}

/// ADE and FDE of every mode over the valid ground-truth steps; `None` without a valid step.
pub fn per_mode_metrics(modes: &[Vec<Vec2>], gt: &[Option<Vec2>]) -> Option<Vec<(f64, f64)>> {
    let valid: Vec<usize> = (0..gt.len()).filter(|&t| gt[t].is_some()).collect();
    let last = *valid.last()?;
    Some(
        modes
            .iter()
            .map(|m| {
                let ade = valid.iter().map(|&t| m[t].distance(gt[t].unwrap())).sum::<f64>() / valid.len() as f64;
                (ade, m[last].distance(gt[last].unwrap()))
            })
            .collect(),
    )
}

/// Metrics of the best-matching mode; ties go to the lower mode index.
pub fn min_metrics(modes: &[Vec<Vec2>], gt: &[Option<Vec2>], criterion: BestMode) -> Option<ModeMetrics> {
    let per = per_mode_metrics(modes, gt)?;
    let score = |(a, f): (f64, f64)| match criterion {
        BestMode::Fde => f,
        BestMode::Ade => a,
    };
    let mut best = 0;
    for k in 1..per.len() {
        if score(per[k]) < score(per[best]) {
            best = k;
        }
    }
    per.get(best).map(|&(ade, fde)| ModeMetrics {
        ade,
        fde,
        best_mode: best,
    })
}

pub fn min_ade(modes: &[Vec<Vec2>], gt: &[Option<Vec2>]) -> Option<f64> {
    min_metrics(modes, gt, BestMode::Fde).map(|m| m.ade)
}

pub fn min_fde(modes: &[Vec<Vec2>], gt: &[Option<Vec2>]) -> Option<f64> {
    min_metrics(modes, gt, BestMode::Fde).map(|m| m.fde)
}

/// `fde + (1 - p)^2` for the best-mode confidence `p`.
pub fn brier_fde(fde: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Contract(format!("confidence {p} outside [0, 1]")));
    }
    Ok(fde + (1.0 - p).powi(2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub key: AgentKey,
    pub ade: f64,
    pub fde: f64,
    pub brier_fde: f64,
}

/// Per-agent metrics of one prediction; `None` when the agent has no valid future.
pub fn agent_metrics(
    key: AgentKey,
    modes: &[Vec<Vec2>],
    confidences: &[f64],
    gt: &[Option<Vec2>],
    criterion: BestMode,
) -> Result<Option<AgentMetrics>> {
    if modes.len() != confidences.len() {
        return Err(Error::Contract(format!(
            "{} modes but {} confidences",
            modes.len(),
            confidences.len()
        )));
    }
    if let Some(m) = modes.iter().find(|m| m.len() != gt.len()) {
        return Err(Error::Contract(format!("mode of {} steps against {} ground-truth steps", m.len(), gt.len())));
    }
    let Some(m) = min_metrics(modes, gt, criterion) else {
        return Ok(None);
    };
    // clamp absorbs softmax roundoff just above one
    let p = confidences[m.best_mode].clamp(0.0, 1.0);
    Ok(Some(AgentMetrics {
        key,
        ade: m.ade,
        fde: m.fde,
        brier_fde: brier_fde(m.fde, p)?,
    }))
}

/// Half-open bins `[e_i, e_{i+1})` with a final open-ended bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DifficultyBins {
    pub edges: Vec<f64>,
}

impl Default for DifficultyBins {
    fn default() -> Self {
        DifficultyBins {
            edges: vec![0.0, 20.0, 45.0],
        }
    }
}

impl DifficultyBins {
    pub fn validate(&self) -> Result<()> {
        if self.edges.first() != Some(&0.0) {
            return Err(Error::Validation("difficulty bins must start at 0".into()));
        }
        if self.edges.windows(2).any(|w| !(w[0] < w[1])) || self.edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Validation("difficulty bin edges must be finite and increasing".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn bin_of(&self, d: f64) -> usize {
        self.edges.iter().rposition(|&e| d >= e).unwrap_or(0)
    }

    pub fn label(&self, i: usize) -> String {
        match self.edges.get(i + 1) {
            Some(hi) => format!("[{},{})", self.edges[i], hi),
            None => format!("[{},inf)", self.edges[i]),
        }
    }

    /// Parses `0,20,45`.
    pub fn parse(s: &str) -> Result<Self> {
        let edges = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Validation(format!("bad bin edge `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let b = DifficultyBins { edges };
        b.validate()?;
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ade: f64,
    pub fde: f64,
    pub brier_fde: f64,
}

impl Metrics {
    fn mean_of(rows: &[&AgentMetrics]) -> Metrics {
        let n = rows.len() as f64;
        Metrics {
            ade: rows.iter().map(|r| r.ade).sum::<f64>() / n,
            fde: rows.iter().map(|r| r.fde).sum::<f64>() / n,
            brier_fde: rows.iter().map(|r| r.brier_fde).sum::<f64>() / n,
        }
    }

    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Ade => self.ade,
            Metric::Fde => self.fde,
            Metric::BrierFde => self.brier_fde,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub label: String,
    pub count: usize,
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratified {
    pub bins: Vec<BinStat>,
    /// Unweighted mean over non-empty bins; `None` for an empty population.
    pub balanced: Option<Metrics>,
    pub count: usize,
}

/// Per-bin means, then their unweighted mean across non-empty bins.
pub fn stratified_report(
    metrics: &[AgentMetrics],
    difficulty: &BTreeMap<AgentKey, f64>,
    bins: &DifficultyBins,
) -> Result<Stratified> {
    bins.validate()?;
    let mut grouped: Vec<Vec<&AgentMetrics>> = vec![Vec::new(); bins.len()];
    for m in metrics {
        let d = difficulty
            .get(&m.key)
            .ok_or_else(|| Error::Join(format!("no difficulty for evaluated agent {}", m.key)))?;
        grouped[bins.bin_of(*d)].push(m);
    }
    let stats: Vec<BinStat> = grouped
        .iter()
        .enumerate()
        .map(|(i, g)| BinStat {
            label: bins.label(i),
            count: g.len(),
            metrics: (!g.is_empty()).then(|| Metrics::mean_of(g)),
        })
        .collect();
    let present: Vec<Metrics> = stats.iter().filter_map(|b| b.metrics).collect();
    let balanced = (!present.is_empty()).then(|| {
        let n = present.len() as f64;
        Metrics {
            ade: present.iter().map(|m| m.ade).sum::<f64>() / n,
            fde: present.iter().map(|m| m.fde).sum::<f64>() / n,
            brier_fde: present.iter().map(|m| m.brier_fde).sum::<f64>() / n,
        }
    });
    Ok(Stratified {
        bins: stats,
        balanced,
        count: metrics.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ade,
    Fde,
    BrierFde,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ade, Metric::Fde, Metric::BrierFde];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ade => "ADE",
            Metric::Fde => "FDE",
            Metric::BrierFde => "Brier-FDE",
        }
    }
}

/// Signed percentage change from `reference`; `None` when the reference is zero.
pub fn relative_change(value: f64, reference: f64) -> Option<f64> {
    (reference != 0.0).then(|| (value - reference) / reference * 100.0)
}

/// One method's row of the gap table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub method: String,
    pub seen: Metrics,
    pub unseen: Metrics,
    /// Percent change of each seen metric from the reference seen value, in [`Metric::ALL`] order.
    pub seen_change: [Option<f64>; 3],
    pub unseen_change: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub setting: String,
    pub reference: String,
    pub rows: Vec<GapRow>,
}

/// Every method's seen and unseen metrics relative to the reference method's seen metrics.
pub fn gap_report(setting: &str, methods: &[(String, Metrics, Metrics)], reference: &str) -> Result<GapReport> {
    let (_, ref_seen, _) = methods
        .iter()
        .find(|(m, _, _)| m == reference)
        .ok_or_else(|| Error::Validation(format!("reference method `{reference}` is not among the rows")))?;
    let change = |m: &Metrics| Metric::ALL.map(|k| relative_change(m.get(k), ref_seen.get(k)));
    Ok(GapReport {
        setting: setting.into(),
        reference: reference.into(),
        rows: methods
            .iter()
            .map(|(name, seen, unseen)| GapRow {
                method: name.clone(),
                seen: *seen,
                unseen: *unseen,
                seen_change: if name == reference { [None; 3] } else { change(seen) },
                unseen_change: change(unseen),
            })
            .collect(),
    })
}

const GAP_HEADER: [&str; 9] = [
    "setting",
    "method",
    "population",
    "ade",
    "fde",
    "brier_fde",
    "ade_change_pct",
    "fde_change_pct",
    "brier_fde_change_pct",
];

impl GapReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(GAP_HEADER)?;
        let pct = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &self.rows {
            for (pop, m, c) in [("seen", &r.seen, &r.seen_change), ("unseen", &r.unseen, &r.unseen_change)] {
                let mut rec = vec![self.setting.clone(), r.method.clone(), pop.to_string()];
                rec.extend(Metric::ALL.iter().map(|&k| format!("{:?}", m.get(k))));
                rec.extend(c.iter().map(|&v| pct(v)));
                wr.write_record(&rec)?;
            }
        }
        wr.flush().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(())
    }

    /// Parses the CSV form; the first method row is taken as the reference.
    pub fn read_csv<R: Read>(r: R) -> Result<GapReport> {
        let mut rd = csv::Reader::from_reader(r);
        if rd.headers()?.iter().ne(GAP_HEADER) {
            return Err(Error::Layout(format!("gap table header must be {}", GAP_HEADER.join(","))));
        }
        let mut setting: Option<String> = None;
        let mut rows: Vec<GapRow> = Vec::new();
        let mut pending: Option<(String, Metrics, [Option<f64>; 3])> = None;
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let perr = |field: &str, message: String| Error::Parse {
                line,
                field: field.into(),
                message,
            };
            if rec.len() != GAP_HEADER.len() {
                return Err(perr("row", format!("{} columns, expected {}", rec.len(), GAP_HEADER.len())));
            }
            match &setting {
                None => setting = Some(rec[0].to_string()),
                Some(s) if s != &rec[0] => return Err(perr("setting", "mixed settings in one table".into())),
                _ => {}
            }
            let num = |c: usize| {
                rec[c]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| perr(GAP_HEADER[c], format!("not a number: `{}`", &rec[c])))
            };
            let opt = |c: usize| if rec[c].is_empty() { Ok(None) } else { num(c).map(Some) };
            let m = Metrics {
                ade: num(3)?,
                fde: num(4)?,
                brier_fde: num(5)?,
            };
            let c = [opt(6)?, opt(7)?, opt(8)?];
            match (&rec[2], pending.take()) {
                ("seen", None) => pending = Some((rec[1].to_string(), m, c)),
                ("unseen", Some((method, seen, seen_change))) if method == rec[1] => rows.push(GapRow {
                    method,
                    seen,
                    unseen: m,
                    seen_change,
                    unseen_change: c,
                }),
                _ => return Err(perr("population", "rows must alternate seen then unseen per method".into())),
            }
        }
        if pending.is_some() {
            return Err(Error::Layout("gap table ends with an unpaired seen row".into()));
        }
        let reference = rows
            .first()
            .map(|r| r.method.clone())
            .ok_or_else(|| Error::Layout("gap table has no rows".into()))?;
        Ok(GapReport {
            setting: setting.unwrap_or_default(),
            reference,
            rows,
        })
    }

    /// Aligned text table in the layout of the published results table.
    pub fn to_text(&self) -> String {
        let cell = |v: f64, c: Option<f64>| match c {
            Some(p) => format!("{v:.2} ({p:+.1}%)"),
            None => format!("{v:.2} (-)"),
        };
        let mut header = vec!["Setting".to_string(), "Method".to_string()];
        for pop in ["Seen", "Unseen"] {
            header.extend(Metric::ALL.iter().map(|m| format!("{pop} {}", m.name())));
        }
        let mut table = vec![header];
        for r in &self.rows {
            let mut row = vec![self.setting.clone(), r.method.clone()];
            row.extend(Metric::ALL.iter().enumerate().map(|(i, &k)| cell(r.seen.get(k), r.seen_change[i])));
            row.extend(Metric::ALL.iter().enumerate().map(|(i, &k)| cell(r.unseen.get(k), r.unseen_change[i])));
            table.push(row);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &table {
            let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(offset: f64, n: usize) -> Vec<Vec2> {
        (0..n).map(|t| Vec2::new(t as f64, offset)).collect()
    }

    #[test]
    fn exact_and_offset_modes() {
        let gt: Vec<Option<Vec2>> = line(0.0, 5).into_iter().map(Some).collect();
        let m = min_metrics(&[line(3.0, 5), line(0.0, 5)], &gt, BestMode::Fde).unwrap();
        assert_eq!((m.ade, m.fde, m.best_mode), (0.0, 0.0, 1));
        let m = min_metrics(&[line(1.0, 5), line(-2.0, 5)], &gt, BestMode::Fde).unwrap();
        assert_eq!((m.ade, m.fde, m.best_mode), (1.0, 1.0, 0));
        assert!(min_metrics(&[line(0.0, 5)], &[None; 5], BestMode::Fde).is_none());
    }

    #[test]
    fn fde_uses_last_valid_step() {
        let mut gt: Vec<Option<Vec2>> = line(0.0, 5).into_iter().map(Some).collect();
        gt[4] = None;
        let mut mode = line(0.0, 5);
        mode[4] = Vec2::new(100.0, 0.0);
        assert_eq!(min_fde(&[mode], &gt), Some(0.0));
    }

    #[test]
    fn brier_values() {
        assert_eq!(brier_fde(4.0, 0.5).unwrap(), 4.25);
        assert_eq!(brier_fde(4.0, 1.0).unwrap(), 4.0);
        assert_eq!(brier_fde(4.0, 0.0).unwrap(), 5.0);
        assert!(brier_fde(1.0, 1.5).is_err());
    }

    fn am(k: &str, v: f64) -> AgentMetrics {
        AgentMetrics {
            key: AgentKey::new(k, "0"),
            ade: v,
            fde: v,
            brier_fde: v,
        }
    }

    #[test]
    fn balanced_average() {
        let m = vec![am("a", 1.0), am("b", 1.0), am("c", 1.0), am("d", 3.0)];
        let d: BTreeMap<AgentKey, f64> = [("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 50.0)]
            .into_iter()
            .map(|(k, v)| (AgentKey::new(k, "0"), v))
            .collect();
        let s = stratified_report(&m, &d, &DifficultyBins::default()).unwrap();
        assert_eq!(s.balanced.unwrap().fde, 2.0);
        assert_eq!(s.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![3, 0, 1]);
        let e = stratified_report(&[], &d, &DifficultyBins::default()).unwrap();
        assert!(e.balanced.is_none());
        assert!(matches!(
            stratified_report(&[am("z", 1.0)], &d, &DifficultyBins::default()),
            Err(Error::Join(_))
        ));
    }

    #[test]
    fn gap_percentages_and_round_trip() {
        let seen = Metrics {
            ade: 2.11,
            fde: 4.63,
            brier_fde: 5.12,
        };
        let unseen = Metrics {
            ade: 2.11,
            fde: 4.99,
            brier_fde: 5.47,
        };
        let r = gap_report("closed_world", &[("MTR".into(), seen, unseen)], "MTR").unwrap();
        assert!((r.rows[0].unseen_change[1].unwrap() - 7.775).abs() < 1e-2);
        assert_eq!(r.rows[0].seen_change, [None; 3]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(GapReport::read_csv(buf.as_slice()).unwrap(), r);
        assert!(r.to_text().contains("4.99 (+7.8%)"));
        assert_eq!(relative_change(1.0, 0.0), None);
    }
}
