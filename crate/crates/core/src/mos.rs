//! Subjective-study processing: ingest raw ratings, screen inconsistent
//! observers, z-score per participant, average into MOS and rescale.
//!
//! All statistics here use the population (divide-by-n) convention.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RAW_SCORE_MIN: f64 = 1.0;
pub const RAW_SCORE_MAX: f64 = 10.0;

const HEADER: [&str; 4] = ["participant", "sample", "dimension", "score"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    TextAlignment,
    Fidelity,
    Quality,
    Overall,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::TextAlignment,
        Dimension::Fidelity,
        Dimension::Quality,
        Dimension::Overall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::TextAlignment => "text_alignment",
            Dimension::Fidelity => "fidelity",
            Dimension::Quality => "quality",
            Dimension::Overall => "overall",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text_alignment" => Ok(Dimension::TextAlignment),
            "fidelity" => Ok(Dimension::Fidelity),
            "quality" => Ok(Dimension::Quality),
            "overall" => Ok(Dimension::Overall),
            other => Err(format!("unknown dimension `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingRecord {
    pub participant_id: String,
    pub sample_id: String,
    pub dimension: Dimension,
    pub raw_score: f64,
}

impl RatingRecord {
    pub fn new(participant: &str, sample: &str, dimension: Dimension, raw_score: f64) -> Self {
        Self {
            participant_id: participant.to_string(),
            sample_id: sample.to_string(),
            dimension,
            raw_score,
        }
    }

    fn stimulus(&self) -> (&str, Dimension) {
        (&self.sample_id, self.dimension)
    }
}

/// A problem with one input row. Rows are numbered from 1, header excluded.
#[derive(Debug, Clone, PartialEq)]
pub enum RowIssue {
    Malformed { row: usize, message: String },
    OutOfRange { row: usize, score: f64 },
    Duplicate { first_row: usize, row: usize },
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowIssue::Malformed { row, message } => write!(f, "row {row}: {message}"),
            RowIssue::OutOfRange { row, score } => {
                write!(f, "row {row}: score {score} outside [1, 10]")
            }
            RowIssue::Duplicate { first_row, row } => {
                write!(f, "rows {first_row} and {row}: duplicate (participant, sample, dimension)")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MosError {
    #[error("{}", format_issues(.0))]
    Ingest(Vec<RowIssue>),
    #[error("no ratings")]
    Empty,
    #[error("screening needs at least 2 participants, found {0}")]
    InsufficientParticipants(usize),
    #[error("stimulus ({sample}, {dimension}) rated by {count} participant(s); screening needs 2")]
    InsufficientRaters {
        sample: String,
        dimension: Dimension,
        count: usize,
    },
    #[error("rescale range must satisfy hi > lo, got [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
}

fn format_issues(issues: &[RowIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Parses `participant,sample,dimension,score` rows.
///
/// Every bad row is collected before failing, so one pass reports all of them.
pub fn ingest_ratings<R: Read>(reader: R) -> Result<Vec<RatingRecord>, MosError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut issues = Vec::new();
    match rdr.headers() {
        Ok(h) if h.iter().eq(HEADER) => {}
        Ok(h) if h.is_empty() => return Err(MosError::Empty),
        Ok(h) => issues.push(RowIssue::Malformed {
            row: 0,
            message: format!("expected header `{}`, found `{}`", HEADER.join(","), h.iter().collect::<Vec<_>>().join(",")),
        }),
        Err(e) => issues.push(RowIssue::Malformed {
            row: 0,
            message: e.to_string(),
        }),
    }
    if !issues.is_empty() {
        return Err(MosError::Ingest(issues));
    }

    let mut records = Vec::new();
    let mut seen: BTreeMap<(String, String, Dimension), usize> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                issues.push(RowIssue::Malformed { row, message: e.to_string() });
                continue;
            }
        };
        if rec.len() != 4 {
            issues.push(RowIssue::Malformed {
                row,
                message: format!("expected 4 fields, found {}", rec.len()),
            });
            continue;
        }
        let dimension = match rec[2].parse::<Dimension>() {
            Ok(d) => d,
            Err(message) => {
                issues.push(RowIssue::Malformed { row, message });
                continue;
            }
        };
        let score = match rec[3].parse::<f64>() {
            Ok(s) if s.is_finite() => s,
            _ => {
                issues.push(RowIssue::Malformed {
                    row,
                    message: format!("score `{}` is not a finite number", &rec[3]),
                });
                continue;
            }
        };
        if !(RAW_SCORE_MIN..=RAW_SCORE_MAX).contains(&score) {
            issues.push(RowIssue::OutOfRange { row, score });
            continue;
        }
        if rec[0].is_empty() || rec[1].is_empty() {
            issues.push(RowIssue::Malformed {
                row,
                message: "empty participant or sample id".into(),
            });
            continue;
        }
        let key = (rec[0].to_string(), rec[1].to_string(), dimension);
        if let Some(&first_row) = seen.get(&key) {
            issues.push(RowIssue::Duplicate { first_row, row });
            continue;
        }
        seen.insert(key, row);
        records.push(RatingRecord::new(&rec[0], &rec[1], dimension, score));
    }
    if !issues.is_empty() {
        return Err(MosError::Ingest(issues));
    }
    if records.is_empty() {
        return Err(MosError::Empty);
    }
    Ok(records)
}

/// Population mean and standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedRating {
    pub participant_id: String,
    pub sample_id: String,
    pub dimension: Dimension,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    /// Same order as the input records.
    pub ratings: Vec<NormalizedRating>,
    /// Participants whose ratings had zero variance; their z values are 0.
    pub degenerate: BTreeSet<String>,
}

/// Standardizes each participant's ratings over everything they rated.
pub fn zscore_normalize(records: &[RatingRecord]) -> Result<Normalization, MosError> {
    if records.is_empty() {
        return Err(MosError::Empty);
    }
    let mut by_participant: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_participant
            .entry(&r.participant_id)
            .or_default()
            .push(r.raw_score);
    }
    let stats: BTreeMap<&str, (f64, f64)> = by_participant
        .iter()
        .map(|(p, scores)| (*p, mean_std(scores)))
        .collect();
    let degenerate = stats
        .iter()
        .filter(|(_, &(_, sd))| sd == 0.0)
        .map(|(p, _)| p.to_string())
        .collect();
    let ratings = records
        .iter()
        .map(|r| {
            let (mean, sd) = stats[r.participant_id.as_str()];
            let z = if sd == 0.0 { 0.0 } else { (r.raw_score - mean) / sd };
            NormalizedRating {
                participant_id: r.participant_id.clone(),
                sample_id: r.sample_id.clone(),
                dimension: r.dimension,
                z,
            }
        })
        .collect();
    Ok(Normalization { ratings, degenerate })
}

/// Constants of the observer-screening rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScreeningThresholds {
    /// Kurtosis band `[lo, hi]` inside which a stimulus counts as normally distributed.
    pub normal_kurtosis: (f64, f64),
    /// Deviation multiplier for normally distributed stimuli.
    pub normal_multiplier: f64,
    /// Deviation multiplier otherwise.
    pub non_normal_multiplier: f64,
    /// Reject when `(P + Q) / N` exceeds this...
    pub outlier_fraction: f64,
    /// ...and `|P - Q| / (P + Q)` is below this.
    pub balance: f64,
}

impl Default for ScreeningThresholds {
    fn default() -> Self {
        Self {
            normal_kurtosis: (2.0, 4.0),
            normal_multiplier: 2.0,
            non_normal_multiplier: 20f64.sqrt(),
            outlier_fraction: 0.05,
            balance: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ObserverCounts {
    pub p: u32,
    pub q: u32,
    pub ratings: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreeningReport {
    pub counts: BTreeMap<String, ObserverCounts>,
    pub rejected: BTreeSet<String>,
    pub thresholds: ScreeningThresholds,
}

impl ScreeningReport {
    /// A report that keeps everyone, for callers that skip screening.
    pub fn retain_all(records: &[RatingRecord]) -> Self {
        let mut counts = BTreeMap::new();
        for r in records {
            counts
                .entry(r.participant_id.clone())
                .or_insert(ObserverCounts { p: 0, q: 0, ratings: 0 })
                .ratings += 1;
        }
        Self {
            counts,
            rejected: BTreeSet::new(),
            thresholds: ScreeningThresholds::default(),
        }
    }

    pub fn is_retained(&self, participant: &str) -> bool {
        !self.rejected.contains(participant)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("screening report serializes")
    }
}

pub fn screen_observers(records: &[RatingRecord]) -> Result<ScreeningReport, MosError> {
    screen_observers_with(records, ScreeningThresholds::default())
}

/// Kurtosis-based observer screening on raw scores.
///
/// For each stimulus (sample, dimension) the mean, standard deviation and
/// kurtosis `m4 / m2^2` are computed. A rating above `mean + k * sd` counts
/// toward P, below `mean - k * sd` toward Q, where `k` depends on whether
/// the kurtosis lies in the normal band. A participant is rejected iff both
/// the outlier fraction and balance conditions hold (strict inequalities).
pub fn screen_observers_with(
    records: &[RatingRecord],
    thresholds: ScreeningThresholds,
) -> Result<ScreeningReport, MosError> {
    let participants: BTreeSet<&str> = records.iter().map(|r| r.participant_id.as_str()).collect();
    if participants.len() < 2 {
        return Err(MosError::InsufficientParticipants(participants.len()));
    }
    let mut by_stimulus: BTreeMap<(&str, Dimension), Vec<&RatingRecord>> = BTreeMap::new();
    for r in records {
        by_stimulus.entry(r.stimulus()).or_default().push(r);
    }
    if let Some(((sample, dimension), rs)) = by_stimulus.iter().find(|(_, rs)| rs.len() < 2) {
        return Err(MosError::InsufficientRaters {
            sample: sample.to_string(),
            dimension: *dimension,
            count: rs.len(),
        });
    }

    let mut counts: BTreeMap<String, ObserverCounts> = participants
        .iter()
        .map(|p| (p.to_string(), ObserverCounts { p: 0, q: 0, ratings: 0 }))
        .collect();
    for r in records {
        counts.get_mut(r.participant_id.as_str()).unwrap().ratings += 1;
    }

    for rs in by_stimulus.values() {
        let scores: Vec<f64> = rs.iter().map(|r| r.raw_score).collect();
        let (mean, sd) = mean_std(&scores);
        if sd == 0.0 {
            continue;
        }
        let n = scores.len() as f64;
        let m2 = sd * sd;
        let m4 = scores.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let kurtosis = m4 / (m2 * m2);
        let (lo, hi) = thresholds.normal_kurtosis;
        let k = if (lo..=hi).contains(&kurtosis) {
            thresholds.normal_multiplier
        } else {
            thresholds.non_normal_multiplier
        };
        let upper = mean + k * sd;
        let lower = mean - k * sd;
        for r in rs {
            let c = counts.get_mut(r.participant_id.as_str()).unwrap();
            if r.raw_score > upper {
                c.p += 1;
            } else if r.raw_score < lower {
                c.q += 1;
            }
        }
    }

    let rejected = counts
        .iter()
        .filter(|(_, c)| {
            let flagged = (c.p + c.q) as f64;
            flagged > 0.0
                && flagged / c.ratings as f64 > thresholds.outlier_fraction
                && (c.p as f64 - c.q as f64).abs() / flagged < thresholds.balance
        })
        .map(|(p, _)| p.clone())
        .collect();
    Ok(ScreeningReport {
        counts,
        rejected,
        thresholds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MosEntry {
    pub mos: f64,
    pub rater_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MosTable {
    pub entries: BTreeMap<(String, Dimension), MosEntry>,
    /// Stimuli dropped because no retained participant rated them.
    pub excluded: Vec<(String, Dimension)>,
    /// Dimensions that were constant when rescaled (mapped to the midpoint).
    pub constant_dimensions: BTreeSet<Dimension>,
}

impl MosTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, sample: &str, dimension: Dimension) -> Option<&MosEntry> {
        self.entries.get(&(sample.to_string(), dimension))
    }

    /// `sample,dimension,mos,raters`, sorted by sample then dimension.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,dimension,mos,raters\n");
        for ((sample, dim), e) in &self.entries {
            out.push_str(&format!("{sample},{dim},{:.4},{}\n", e.mos, e.rater_count));
        }
        out
    }
}

/// Averages z over retained participants per (sample, dimension).
pub fn aggregate(
    normalized: &[NormalizedRating],
    screening: &ScreeningReport,
) -> Result<MosTable, MosError> {
    if normalized.is_empty() {
        return Err(MosError::Empty);
    }
    let mut sums: BTreeMap<(String, Dimension), (f64, usize)> = BTreeMap::new();
    for r in normalized {
        let slot = sums
            .entry((r.sample_id.clone(), r.dimension))
            .or_insert((0.0, 0));
        if screening.is_retained(&r.participant_id) {
            slot.0 += r.z;
            slot.1 += 1;
        }
    }
    let mut table = MosTable::default();
    for (key, (sum, count)) in sums {
        if count == 0 {
            table.excluded.push(key);
        } else {
            table.entries.insert(
                key,
                MosEntry {
                    mos: sum / count as f64,
                    rater_count: count,
                },
            );
        }
    }
    Ok(table)
}

/// Per dimension, maps the observed min to `lo` and max to `hi`.
pub fn rescale_to_range(table: &MosTable, lo: f64, hi: f64) -> Result<MosTable, MosError> {
    if !lo.is_finite() || !hi.is_finite() || hi <= lo {
        return Err(MosError::InvalidRange { lo, hi });
    }
    if table.is_empty() {
        return Err(MosError::Empty);
    }
    let mut bounds: BTreeMap<Dimension, (f64, f64)> = BTreeMap::new();
    for ((_, dim), e) in &table.entries {
        let b = bounds.entry(*dim).or_insert((f64::INFINITY, f64::NEG_INFINITY));
        b.0 = b.0.min(e.mos);
        b.1 = b.1.max(e.mos);
    }
    let mut out = MosTable {
        entries: BTreeMap::new(),
        excluded: table.excluded.clone(),
        constant_dimensions: BTreeSet::new(),
    };
    for (key, e) in &table.entries {
        let (min, max) = bounds[&key.1];
        let mos = if max > min {
            // clamp guards the last ulp at the endpoints
            (lo + (e.mos - min) * (hi - lo) / (max - min)).clamp(lo, hi)
        } else {
            out.constant_dimensions.insert(key.1);
            (lo + hi) / 2.0
        };
        out.entries.insert(key.clone(), MosEntry { mos, ..*e });
    }
    Ok(out)
}

/// Everything produced by one pass of the pipeline.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub screening: ScreeningReport,
    pub normalization: Normalization,
    pub z_table: MosTable,
    pub table: MosTable,
}

/// ingest → screen → normalize → aggregate → rescale to `[lo, hi]`.
pub fn run_pipeline<R: Read>(reader: R, lo: f64, hi: f64) -> Result<PipelineOutput, MosError> {
    let records = ingest_ratings(reader)?;
    let screening = screen_observers(&records)?;
    let normalization = zscore_normalize(&records)?;
    let z_table = aggregate(&normalization.ratings, &screening)?;
    let table = rescale_to_range(&z_table, lo, hi)?;
    Ok(PipelineOutput {
        screening,
        normalization,
        z_table,
        table,
    })
}
