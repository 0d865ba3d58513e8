//! Correlation metrics between predicted and ground-truth score series.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("series lengths differ: pred has {pred}, gt has {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("need at least 2 paired values, got {0}")]
    TooShort(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("{0} series has zero variance")]
    Degenerate(&'static str),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("ids missing from prediction file: {missing_pred:?}; ids missing from ground-truth file: {missing_gt:?}")]
    UnmatchedIds {
        missing_pred: Vec<String>,
        missing_gt: Vec<String>,
    },
    #[error("malformed input: {0}")]
    Csv(String),
}

/// Equal-length prediction and ground-truth series.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    pred: Vec<f64>,
    gt: Vec<f64>,
}

impl PairedSeries {
    pub fn new(pred: Vec<f64>, gt: Vec<f64>) -> Result<Self, MetricsError> {
        if pred.len() != gt.len() {
            return Err(MetricsError::LengthMismatch {
                pred: pred.len(),
                gt: gt.len(),
            });
        }
        if pred.len() < 2 {
            return Err(MetricsError::TooShort(pred.len()));
        }
        if let Some(i) = pred
            .iter()
            .zip(&gt)
            .position(|(p, g)| !p.is_finite() || !g.is_finite())
        {
            return Err(MetricsError::NonFinite(i));
        }
        Ok(Self { pred, gt })
    }

    pub fn pred(&self) -> &[f64] {
        &self.pred
    }

    pub fn gt(&self) -> &[f64] {
        &self.gt
    }

    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub plcc: f64,
    pub srocc: f64,
    pub main_score: f64,
}

impl CorrelationReport {
    pub fn compute(series: &PairedSeries) -> Result<Self, MetricsError> {
        let plcc = plcc(series)?;
        let srocc = srocc(series)?;
        Ok(Self {
            plcc,
            srocc,
            main_score: main_score(plcc, srocc),
        })
    }

    /// `plcc,srocc,main_score` header plus one row at 4 decimals.
    pub fn to_csv(&self) -> String {
        format!(
            "plcc,srocc,main_score\n{:.4},{:.4},{:.4}\n",
            self.plcc, self.srocc, self.main_score
        )
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricsError::Degenerate("prediction"));
    }
    if syy == 0.0 {
        return Err(MetricsError::Degenerate("ground-truth"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson linear correlation, with no monotonic fitting beforehand.
pub fn plcc(series: &PairedSeries) -> Result<f64, MetricsError> {
    pearson(&series.pred, &series.gt)
}

/// 1-based ranks; ties share the average of the positions they occupy.
pub fn rank_transform(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation as the Pearson coefficient of the two rank vectors.
pub fn srocc(series: &PairedSeries) -> Result<f64, MetricsError> {
    pearson(&rank_transform(&series.pred), &rank_transform(&series.gt))
}

pub fn main_score(plcc: f64, srocc: f64) -> f64 {
    (plcc + srocc) / 2.0
}

/// Reads an `id,score` file. A leading `id,score` header row is optional.
pub fn read_scores<R: Read>(reader: R) -> Result<BTreeMap<String, f64>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| MetricsError::Csv(e.to_string()))?;
        if i == 0 && rec.len() == 2 && &rec[0] == "id" && &rec[1] == "score" {
            continue;
        }
        let row = i + 1;
        if rec.len() != 2 {
            return Err(MetricsError::Row {
                row,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let score: f64 = rec[1].parse().map_err(|_| MetricsError::Row {
            row,
            message: format!("score `{}` is not a number", &rec[1]),
        })?;
        if out.insert(rec[0].to_string(), score).is_some() {
            return Err(MetricsError::DuplicateId(rec[0].to_string()));
        }
    }
    Ok(out)
}

/// Pairs two id-keyed score maps, failing with every id present on one side only.
pub fn align_by_id(
    pred: &BTreeMap<String, f64>,
    gt: &BTreeMap<String, f64>,
) -> Result<PairedSeries, MetricsError> {
    let pred_ids: BTreeSet<_> = pred.keys().collect();
    let gt_ids: BTreeSet<_> = gt.keys().collect();
    let missing_pred: Vec<String> = gt_ids.difference(&pred_ids).map(|s| s.to_string()).collect();
    let missing_gt: Vec<String> = pred_ids.difference(&gt_ids).map(|s| s.to_string()).collect();
    if !missing_pred.is_empty() || !missing_gt.is_empty() {
        return Err(MetricsError::UnmatchedIds {
            missing_pred,
            missing_gt,
        });
    }
    let (p, g) = gt.iter().map(|(id, &g)| (pred[id], g)).unzip();
    PairedSeries::new(p, g)
}
