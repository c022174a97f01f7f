//! MRR and Acc@k over ranked candidate lists.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{CaperError, Result};
use crate::inference::RankedPrediction;
use crate::tkg::{EntityKind, TestSet, UserId};
use crate::trainer::TargetKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Mrr,
    Acc1,
    Acc5,
    Acc10,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mrr, Metric::Acc1, Metric::Acc5, Metric::Acc10];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mrr => "MRR",
            Metric::Acc1 => "Acc@1",
            Metric::Acc5 => "Acc@5",
            Metric::Acc10 => "Acc@10",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one evaluation instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankHit {
    /// 1-based.
    pub rank: usize,
    pub reciprocal_rank: f64,
    pub hit1: bool,
    pub hit5: bool,
    pub hit10: bool,
}

impl RankHit {
    pub fn from_rank(rank: usize) -> Self {
        Self {
            rank,
            reciprocal_rank: 1.0 / rank as f64,
            hit1: rank <= 1,
            hit5: rank <= 5,
            hit10: rank <= 10,
        }
    }

    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Mrr => self.reciprocal_rank,
            Metric::Acc1 => f64::from(u8::from(self.hit1)),
            Metric::Acc5 => f64::from(u8::from(self.hit5)),
            Metric::Acc10 => f64::from(u8::from(self.hit10)),
        }
    }
}

/// One instance per truth, ranked by its position in `ranked`.
pub fn rank_metrics(ranked: &[u32], truths: &[u32], kind: EntityKind) -> Result<Vec<RankHit>> {
    truths
        .iter()
        .map(|t| {
            ranked
                .iter()
                .position(|c| c == t)
                .map(|i| RankHit::from_rank(i + 1))
                .ok_or(CaperError::TruthNotInCandidates {
                    kind,
                    entity: t.to_string(),
                })
        })
        .collect()
}

/// Means of each metric over `hits`, or `None` without instances.
pub fn mean_metrics(hits: &[RankHit]) -> Option<[f64; 4]> {
    if hits.is_empty() {
        return None;
    }
    let n = hits.len() as f64;
    Some(Metric::ALL.map(|m| hits.iter().map(|h| h.value(m)).sum::<f64>() / n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub kind: TargetKind,
    pub metric: Metric,
    pub horizon: usize,
    pub value: f64,
    pub instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn get(&self, kind: TargetKind, metric: Metric, horizon: usize) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.kind == kind && r.metric == metric && r.horizon == horizon)
    }

    pub fn value(&self, kind: TargetKind, metric: Metric, horizon: usize) -> Option<f64> {
        self.get(kind, metric, horizon).map(|r| r.value)
    }
}

/// Scores every test career against the prediction of its user at its
/// horizon. Horizons without test careers produce no rows.
pub fn evaluate(predictions: &[Vec<RankedPrediction>], test: &TestSet, variant: &str) -> Result<MetricsReport> {
    let mut rows = Vec::new();
    for kind in TargetKind::BOTH {
        for h in 1..=test.horizon {
            let year = test.year_of(h);
            let by_user: HashMap<UserId, &RankedPrediction> = predictions
                .get(h - 1)
                .map(|list| list.iter().map(|p| (p.user, p)).collect())
                .unwrap_or_default();
            let mut hits = Vec::new();
            for ((user, y), careers) in &test.careers {
                if *y != year {
                    continue;
                }
                let pred = by_user.get(user).ok_or(CaperError::UnknownTestUser(user.index()))?;
                let (ranked, truths): (Vec<u32>, Vec<u32>) = match kind {
                    TargetKind::Company => (
                        pred.companies.iter().map(|c| c.0 .0).collect(),
                        careers.iter().map(|c| c.company.0).collect(),
                    ),
                    TargetKind::Position => (
                        pred.positions.iter().map(|p| p.0 .0).collect(),
                        careers.iter().map(|c| c.position.0).collect(),
                    ),
                };
                hits.extend(rank_metrics(&ranked, &truths, kind.entity())?);
            }
            match mean_metrics(&hits) {
                Some(values) => {
                    for (metric, value) in Metric::ALL.into_iter().zip(values) {
                        rows.push(MetricRow {
                            kind,
                            metric,
                            horizon: h,
                            value,
                            instances: hits.len(),
                        });
                    }
                }
                None => log::warn!("no {} test careers at horizon {h}", kind.as_str()),
            }
        }
    }
    Ok(MetricsReport {
        variant: variant.to_owned(),
        rows,
    })
}

/// `variant,kind,metric,horizon,value,instances`
pub fn write_metrics<W: Write>(reports: &[MetricsReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["variant", "kind", "metric", "horizon", "value", "instances"])?;
    for r in reports {
        for row in &r.rows {
            w.write_record([
                r.variant.as_str(),
                row.kind.as_str(),
                row.metric.as_str(),
                &row.horizon.to_string(),
                &format!("{:.6}", row.value),
                &row.instances.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses the CSV written by [`write_metrics`], one report per variant in
/// order of first appearance.
pub fn read_metrics<R: Read>(reader: R) -> Result<Vec<MetricsReport>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut reports: Vec<MetricsReport> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |reason: String| CaperError::MalformedRecord { line: i + 2, reason };
        if rec.len() != 6 {
            return Err(bad(format!("expected 6 columns, found {}", rec.len())));
        }
        let kind = TargetKind::BOTH
            .into_iter()
            .find(|k| k.as_str() == &rec[1])
            .ok_or_else(|| bad(format!("unknown kind `{}`", &rec[1])))?;
        let metric = Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == &rec[2])
            .ok_or_else(|| bad(format!("unknown metric `{}`", &rec[2])))?;
        let number = |j: usize| bad(format!("column {} is not a number: `{}`", j + 1, &rec[j]));
        let row = MetricRow {
            kind,
            metric,
            horizon: rec[3].parse().map_err(|_| number(3))?,
            value: rec[4].parse().map_err(|_| number(4))?,
            instances: rec[5].parse().map_err(|_| number(5))?,
        };
        match reports.iter_mut().find(|rep| rep.variant == rec[0]) {
            Some(rep) => rep.rows.push(row),
            None => reports.push(MetricsReport {
                variant: rec[0].to_owned(),
                rows: vec![row],
            }),
        }
    }
    Ok(reports)
}

/// Row-wise mean of reports that share a layout, such as repeated seeds.
pub fn average_reports(reports: &[MetricsReport], variant: &str) -> Result<MetricsReport> {
    let Some(first) = reports.first() else {
        return Err(CaperError::EmptyInput("reports to average"));
    };
    let mut rows = first.rows.clone();
    for row in &mut rows {
        let mut sum = 0.0;
        for rep in reports {
            let other = rep.get(row.kind, row.metric, row.horizon).ok_or_else(|| {
                CaperError::Config(format!(
                    "report `{}` lacks {} {} at horizon {}",
                    rep.variant,
                    row.kind.as_str(),
                    row.metric,
                    row.horizon
                ))
            })?;
            sum += other.value;
        }
        row.value = sum / reports.len() as f64;
    }
    Ok(MetricsReport {
        variant: variant.to_owned(),
        rows,
    })
}
