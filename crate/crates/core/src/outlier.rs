//! Ugly-duckling detection by comparing a lesion against the other lesions
//! of the same patient and region.
//!
//! For a context of `N` embeddings the engine builds the pairwise cosine
//! distance matrix, scores each lesion by its mean distance to the others,
//! and flags scores at or above `Q3 + k * IQR`. Contexts smaller than
//! `min_context` cannot be compared meaningfully; every lesion then gets the
//! maximal score 1 and a not-applicable flag.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{Cohort, ContextSet};

#[derive(Debug, Error, PartialEq)]
pub enum OutlierError {
    #[error("lesion '{lesion_id}' has a zero-norm embedding; cosine distance is undefined")]
    ZeroNorm { lesion_id: String },
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("embeddings have mismatched dimensions")]
    DimensionMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Pairwise cosine distances `1 - <gi, gj> / (|gi| |gj|)`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds the matrix from raw vectors. A zero-norm vector is reported
    /// by its position, as `#index`.
    pub fn from_vectors(vectors: &[&[f64]]) -> Result<Self, OutlierError> {
        Self::build(vectors, |i| format!("#{i}"))
    }

    fn build(
        vectors: &[&[f64]],
        name_of: impl Fn(usize) -> String,
    ) -> Result<Self, OutlierError> {
        let n = vectors.len();
        if let Some(first) = vectors.first() {
            if vectors.iter().any(|v| v.len() != first.len()) {
                return Err(OutlierError::DimensionMismatch);
            }
        }
        let norms: Vec<f64> = vectors
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        if let Some(i) = norms.iter().position(|&nrm| nrm == 0.0) {
            return Err(OutlierError::ZeroNorm {
                lesion_id: name_of(i),
            });
        }

        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dot: f64 = vectors[i].iter().zip(vectors[j]).map(|(a, b)| a * b).sum();
                // rounding can push the cosine a hair past +-1
                let d = (1.0 - dot / (norms[i] * norms[j])).clamp(0.0, 2.0);
                entries[i * n + j] = d;
                entries[j * n + i] = d;
            }
        }
        Ok(DistanceMatrix { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }
}

pub fn cosine_distance_matrix(ctx: &ContextSet) -> Result<DistanceMatrix, OutlierError> {
    let vectors: Vec<&[f64]> = ctx.lesions.iter().map(|l| l.embedding.values()).collect();
    DistanceMatrix::build(&vectors, |i| ctx.lesions[i].lesion_id.clone())
}

/// Mean distance of each lesion to the other `N - 1` lesions.
pub fn outlier_scores(m: &DistanceMatrix) -> Result<Vec<f64>, OutlierError> {
    let n = m.n();
    if n < 2 {
        return Err(OutlierError::TooFew { needed: 2, got: n });
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            let sum: f64 = m
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, d)| d)
                .sum();
            sum / denom
        })
        .collect())
}

/// Quantile of ascending-sorted values by linear interpolation at position
/// `(len - 1) * q`.
pub fn quantile(sorted_values: &[f64], q: f64) -> Result<f64, OutlierError> {
    if sorted_values.is_empty() {
        return Err(OutlierError::TooFew { needed: 1, got: 0 });
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(OutlierError::InvalidParameter(format!(
            "quantile level {q} outside [0, 1]"
        )));
    }
    let pos = (sorted_values.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    let (a, b) = (sorted_values[lo], sorted_values[hi]);
    if a == b {
        return Ok(a);
    }
    Ok(a + (b - a) * frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flag {
    #[serde(rename = "outlier")]
    Outlier,
    #[serde(rename = "normal")]
    Normal,
    /// Context too small for comparison.
    #[serde(rename = "na")]
    NotApplicable,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::Outlier => "outlier",
            Flag::Normal => "normal",
            Flag::NotApplicable => "na",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IqrSummary {
    pub flags: Vec<Flag>,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub threshold: f64,
}

/// Flags scores with `score >= Q3 + k * IQR`.
///
/// When all quartile mass collapses (`IQR == 0`) the comparison becomes strict
/// `score > Q3`, otherwise a context of identical scores would flag everyone.
pub fn iqr_flags(scores: &[f64], k: f64) -> Result<IqrSummary, OutlierError> {
    if scores.len() < 2 {
        return Err(OutlierError::TooFew {
            needed: 2,
            got: scores.len(),
        });
    }
    if k.is_nan() || k < 0.0 {
        return Err(OutlierError::InvalidParameter(format!("k must be >= 0, got {k}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25)?;
    let q3 = quantile(&sorted, 0.75)?;
    let iqr = (q3 - q1).max(0.0);
    let threshold = q3 + k * iqr;
    let flags = scores
        .iter()
        .map(|&s| {
            let hit = if iqr > 0.0 { s >= threshold } else { s > q3 };
            if hit {
                Flag::Outlier
            } else {
                Flag::Normal
            }
        })
        .collect();
    Ok(IqrSummary {
        flags,
        q1,
        q3,
        iqr,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// IQR multiplier; larger values flag fewer lesions.
    pub k: f64,
    /// Smallest context size for which comparison is attempted.
    pub min_context: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            k: 1.0,
            min_context: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport {
    pub patient_id: String,
    pub region: String,
    pub lesion_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub threshold: f64,
    pub flags: Vec<Flag>,
    pub fallback: bool,
    pub k: f64,
    /// Present unless the report is a fallback.
    pub distances: Option<DistanceMatrix>,
}

impl OutlierReport {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

pub fn score_context(ctx: &ContextSet, cfg: &ScoreConfig) -> Result<OutlierReport, OutlierError> {
    let lesion_ids: Vec<String> = ctx.lesions.iter().map(|l| l.lesion_id.clone()).collect();
    let n = ctx.len();
    if n < cfg.min_context.max(2) {
        return Ok(OutlierReport {
            patient_id: ctx.patient_id.clone(),
            region: ctx.region.clone(),
            lesion_ids,
            scores: vec![1.0; n],
            q1: 1.0,
            q3: 1.0,
            iqr: 0.0,
            threshold: 1.0,
            flags: vec![Flag::NotApplicable; n],
            fallback: true,
            k: cfg.k,
            distances: None,
        });
    }
    let m = cosine_distance_matrix(ctx)?;
    let scores = outlier_scores(&m)?;
    let iqr = iqr_flags(&scores, cfg.k)?;
    Ok(OutlierReport {
        patient_id: ctx.patient_id.clone(),
        region: ctx.region.clone(),
        lesion_ids,
        scores,
        q1: iqr.q1,
        q3: iqr.q3,
        iqr: iqr.iqr,
        threshold: iqr.threshold,
        flags: iqr.flags,
        fallback: false,
        k: cfg.k,
        distances: Some(m),
    })
}

/// Scores every context of a cohort, in [`crate::store::group_contexts`] order.
pub fn score_cohort(cohort: &Cohort, cfg: &ScoreConfig) -> Result<Vec<OutlierReport>, OutlierError> {
    crate::store::group_contexts(cohort)
        .iter()
        .map(|ctx| score_context(ctx, cfg))
        .collect()
}

/// One line of the scores CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub patient_id: String,
    pub region: String,
    pub lesion_id: String,
    pub outlier_score: f64,
    pub flag: Flag,
    pub fallback: bool,
}

/// Flattens reports into rows following the cohort's record order.
pub fn score_rows(cohort: &Cohort, reports: &[OutlierReport]) -> Vec<ScoreRow> {
    let mut by_id = std::collections::HashMap::new();
    for rep in reports {
        for (i, id) in rep.lesion_ids.iter().enumerate() {
            by_id.insert(id.as_str(), (rep, i));
        }
    }
    cohort
        .records()
        .iter()
        .filter_map(|rec| {
            let (rep, i) = by_id.get(rec.lesion_id.as_str())?;
            Some(ScoreRow {
                patient_id: rec.patient_id.clone(),
                region: rec.region.clone(),
                lesion_id: rec.lesion_id.clone(),
                outlier_score: rep.scores[*i],
                flag: rep.flags[*i],
                fallback: rep.fallback,
            })
        })
        .collect()
}

pub fn write_score_rows<W: Write>(out: W, rows: &[ScoreRow]) -> csv::Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_score_rows(path: &Path) -> csv::Result<Vec<ScoreRow>> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

/// Plain-text PGM (P2) rendering of a distance matrix, one pixel per entry,
/// linearly mapping `[0, max entry]` onto `[0, 255]`. A matrix whose largest
/// entry is rounding noise (below 1e-12) renders black.
pub fn heatmap_pgm(m: &DistanceMatrix) -> String {
    let n = m.n();
    let max = m.max_entry();
    let mut out = format!("P2\n{n} {n}\n255\n");
    for i in 0..n {
        let line: Vec<String> = m
            .row(i)
            .iter()
            .map(|&d| {
                let level = if max > 1e-12 { (d / max * 255.0).round() } else { 0.0 };
                (level as u8).to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Raw matrix entries as CSV with a lesion-id header row and column.
pub fn distance_csv(m: &DistanceMatrix, lesion_ids: &[String]) -> String {
    let mut out = String::from("lesion_id");
    for id in lesion_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (i, id) in lesion_ids.iter().enumerate() {
        out.push_str(id);
        for d in m.row(i) {
            out.push_str(&format!(",{d}"));
        }
        out.push('\n');
    }
    out
}
