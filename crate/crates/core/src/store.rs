//! Lesion embedding data model and the CSV/JSONL interchange formats.
//!
//! A [`Cohort`] is a flat list of [`LesionRecord`]s sharing one embedding
//! dimension. Records of one patient in one anatomical region form a
//! [`ContextSet`], the unit that the outlier engine compares within.
//!
//! CSV layout (UTF-8, LF):
//!
//! ```text
//! patient_id,region,lesion_id,label,f0,f1,...,f{D-1}
//! ```
//!
//! JSONL layout, one object per line:
//!
//! ```text
//! {"patient_id":"p1","region":"torso","lesion_id":"l1","label":1,"embedding":[0.1,0.2]}
//! ```
//!
//! The `label` field is empty (CSV) or absent (JSONL) for unlabeled records.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const FIXED_COLUMNS: [&str; 4] = ["patient_id", "region", "lesion_id", "label"];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    Header(String),
    /// `row` is the 1-based data row (header excluded, blank lines skipped).
    #[error("{message} at row {row}")]
    Row { row: usize, message: String },
    #[error("unknown format '{0}' (expected csv or jsonl)")]
    UnknownFormat(String),
}

impl StoreError {
    fn row(row: usize, message: impl Into<String>) -> Self {
        StoreError::Row {
            row,
            message: message.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for failures of the underlying file system rather than content.
    pub fn is_io(&self) -> bool {
        matches!(self, StoreError::Io { .. })
    }
}

/// On-disk cohort format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Guess from a file extension; anything other than `.jsonl`/`.json` is CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(StoreError::UnknownFormat(other.to_string())),
        }
    }
}

/// Admissible sign of feature values.
///
/// Post-activation pooled CNN features are nonnegative; `Signed` relaxes that
/// for embeddings from other sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureDomain {
    #[default]
    NonNegative,
    Signed,
}

/// A feature vector produced by global average pooling over a CNN feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Check finiteness and, for the nonnegative domain, sign. Returns a
    /// description of the first offending value.
    fn check(&self, domain: FeatureDomain) -> Result<(), String> {
        for (j, &v) in self.0.iter().enumerate() {
            if !v.is_finite() {
                return Err(format!("non-finite feature f{j}"));
            }
            if domain == FeatureDomain::NonNegative && v < 0.0 {
                return Err(format!("negative value in feature f{j}"));
            }
        }
        Ok(())
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(values: Vec<f64>) -> Self {
        Embedding(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionRecord {
    pub patient_id: String,
    pub region: String,
    pub lesion_id: String,
    /// `Some(true)` for melanoma, `Some(false)` for benign.
    pub label: Option<bool>,
    pub embedding: Embedding,
}

impl LesionRecord {
    pub fn new(
        patient_id: impl Into<String>,
        region: impl Into<String>,
        lesion_id: impl Into<String>,
        label: Option<bool>,
        embedding: impl Into<Embedding>,
    ) -> Self {
        LesionRecord {
            patient_id: patient_id.into(),
            region: region.into(),
            lesion_id: lesion_id.into(),
            label,
            embedding: embedding.into(),
        }
    }
}

/// All lesions of one patient in one region, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSet {
    pub patient_id: String,
    pub region: String,
    pub lesions: Vec<LesionRecord>,
}

impl ContextSet {
    /// Builds a context from bare vectors, naming lesions `l0`, `l1`, ...
    pub fn from_vectors(
        patient_id: impl Into<String>,
        region: impl Into<String>,
        vectors: impl IntoIterator<Item = Vec<f64>>,
    ) -> Self {
        let patient_id = patient_id.into();
        let region = region.into();
        let lesions = vectors
            .into_iter()
            .enumerate()
            .map(|(i, v)| LesionRecord::new(&patient_id, &region, format!("l{i}"), None, v))
            .collect();
        ContextSet {
            patient_id,
            region,
            lesions,
        }
    }

    pub fn len(&self) -> usize {
        self.lesions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lesions.is_empty()
    }
}

/// A validated collection of lesion records with a common embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    records: Vec<LesionRecord>,
    dim: usize,
    domain: FeatureDomain,
}

impl Cohort {
    /// Validates records in order. Row numbers in errors are 1-based indices
    /// into `records`.
    pub fn new(records: Vec<LesionRecord>, domain: FeatureDomain) -> Result<Self, StoreError> {
        let mut dim = None;
        let mut seen = HashSet::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            validate_record(rec, i + 1, &mut dim, domain, &mut seen)?;
        }
        Ok(Cohort {
            records,
            dim: dim.unwrap_or(0),
            domain,
        })
    }

    pub fn empty(domain: FeatureDomain) -> Self {
        Cohort {
            records: Vec::new(),
            dim: 0,
            domain,
        }
    }

    pub fn records(&self) -> &[LesionRecord] {
        &self.records
    }

    /// Embedding dimension; 0 for an empty cohort.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> FeatureDomain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.records.iter().filter(|r| r.label.is_some()).count()
    }
}

fn validate_record(
    rec: &LesionRecord,
    row: usize,
    dim: &mut Option<usize>,
    domain: FeatureDomain,
    seen: &mut HashSet<String>,
) -> Result<(), StoreError> {
    let d = rec.embedding.dim();
    match *dim {
        None if d == 0 => return Err(StoreError::row(row, "empty embedding")),
        None => *dim = Some(d),
        Some(expected) if expected != d => {
            return Err(StoreError::row(
                row,
                format!("inconsistent dimension (expected {expected}, found {d})"),
            ))
        }
        Some(_) => {}
    }
    rec.embedding
        .check(domain)
        .map_err(|m| StoreError::row(row, m))?;
    if !seen.insert(rec.lesion_id.clone()) {
        return Err(StoreError::row(
            row,
            format!("duplicate lesion_id '{}'", rec.lesion_id),
        ));
    }
    Ok(())
}

/// Partition a cohort by `(patient_id, region)`.
///
/// Sets appear in order of first occurrence; members keep file order.
pub fn group_contexts(cohort: &Cohort) -> Vec<ContextSet> {
    let mut groups: IndexMap<(&str, &str), Vec<LesionRecord>> = IndexMap::new();
    for rec in cohort.records() {
        groups
            .entry((rec.patient_id.as_str(), rec.region.as_str()))
            .or_default()
            .push(rec.clone());
    }
    groups
        .into_iter()
        .map(|((patient_id, region), lesions)| ContextSet {
            patient_id: patient_id.to_string(),
            region: region.to_string(),
            lesions,
        })
        .collect()
}

pub fn load_cohort(
    path: &Path,
    format: Format,
    domain: FeatureDomain,
) -> Result<Cohort, StoreError> {
    let file = File::open(path).map_err(|e| StoreError::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        Format::Csv => read_csv(reader, domain, path),
        Format::Jsonl => read_jsonl(reader, domain, path),
    }
}

pub fn save_cohort(cohort: &Cohort, path: &Path, format: Format) -> Result<(), StoreError> {
    let file = File::create(path).map_err(|e| StoreError::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(cohort, &mut out),
        Format::Jsonl => write_jsonl(cohort, &mut out),
    }
    .and_then(|_| out.flush())
    .map_err(|e| StoreError::io(path, e))
}

fn csv_error(err: csv::Error, path: &Path) -> StoreError {
    let row = err.position().map(|p| p.line() as usize);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => StoreError::io(path, e),
        other => match row {
            // csv positions are 1-based file lines; data row = line - 1
            Some(line) => StoreError::row(line.saturating_sub(1), format!("{other:?}")),
            None => StoreError::Header(format!("{other:?}")),
        },
    }
}

fn read_csv<R: std::io::Read>(
    reader: R,
    domain: FeatureDomain,
    path: &Path,
) -> Result<Cohort, StoreError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(e, path))?.clone();
    if header.len() < FIXED_COLUMNS.len()
        || header.iter().take(4).ne(FIXED_COLUMNS.iter().copied())
    {
        return Err(StoreError::Header(format!(
            "expected columns {} followed by f0..f{{D-1}}",
            FIXED_COLUMNS.join(",")
        )));
    }
    let declared = header.len() - FIXED_COLUMNS.len();
    for (j, name) in header.iter().skip(4).enumerate() {
        if name != format!("f{j}") {
            return Err(StoreError::Header(format!(
                "feature column {j} is named '{name}', expected 'f{j}'"
            )));
        }
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = if declared > 0 { Some(declared) } else { None };
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| csv_error(e, path))?;
        if row.len() < FIXED_COLUMNS.len() {
            return Err(StoreError::row(
                row_no,
                format!("expected at least {} columns, found {}", 4, row.len()),
            ));
        }
        let label = parse_label(&row[3]).map_err(|m| StoreError::row(row_no, m))?;
        let values = row
            .iter()
            .skip(4)
            .enumerate()
            .map(|(j, field)| {
                field.trim().parse::<f64>().map_err(|_| {
                    StoreError::row(row_no, format!("non-numeric value '{field}' in f{j}"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rec = LesionRecord::new(&row[0], &row[1], &row[2], label, values);
        validate_record(&rec, row_no, &mut dim, domain, &mut seen)?;
        records.push(rec);
    }
    Ok(Cohort {
        records,
        dim: dim.filter(|_| !seen.is_empty()).unwrap_or(0),
        domain,
    })
}

fn parse_label(field: &str) -> Result<Option<bool>, String> {
    match field.trim() {
        "" => Ok(None),
        "0" => Ok(Some(false)),
        "1" => Ok(Some(true)),
        other => Err(format!("label must be empty, 0 or 1, found '{other}'")),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    patient_id: String,
    region: String,
    lesion_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
    embedding: Vec<f64>,
}

fn read_jsonl<R: BufRead>(
    reader: R,
    domain: FeatureDomain,
    path: &Path,
) -> Result<Cohort, StoreError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = None;
    let mut row_no = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        row_no += 1;
        let raw: JsonRecord =
            serde_json::from_str(&line).map_err(|e| StoreError::row(row_no, e.to_string()))?;
        let label = match raw.label {
            None => None,
            Some(0) => Some(false),
            Some(1) => Some(true),
            Some(other) => {
                return Err(StoreError::row(
                    row_no,
                    format!("label must be 0 or 1, found {other}"),
                ))
            }
        };
        let rec = LesionRecord::new(
            raw.patient_id,
            raw.region,
            raw.lesion_id,
            label,
            raw.embedding,
        );
        validate_record(&rec, row_no, &mut dim, domain, &mut seen)?;
        records.push(rec);
    }
    Ok(Cohort {
        records,
        dim: dim.unwrap_or(0),
        domain,
    })
}

fn write_csv<W: Write>(cohort: &Cohort, out: &mut W) -> std::io::Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let header = FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..cohort.dim()).map(|j| format!("f{j}")));
    wtr.write_record(header)?;
    for rec in cohort.records() {
        let label = match rec.label {
            None => "",
            Some(false) => "0",
            Some(true) => "1",
        };
        // `{}` on f64 prints the shortest representation that parses back exactly.
        let fields = [
            rec.patient_id.clone(),
            rec.region.clone(),
            rec.lesion_id.clone(),
            label.to_string(),
        ]
        .into_iter()
        .chain(rec.embedding.values().iter().map(|v| format!("{v}")));
        wtr.write_record(fields)?;
    }
    wtr.flush()
}

fn write_jsonl<W: Write>(cohort: &Cohort, out: &mut W) -> std::io::Result<()> {
    for rec in cohort.records() {
        let raw = JsonRecord {
            patient_id: rec.patient_id.clone(),
            region: rec.region.clone(),
            lesion_id: rec.lesion_id.clone(),
            label: rec.label.map(u8::from),
            embedding: rec.embedding.values().to_vec(),
        };
        serde_json::to_writer(&mut *out, &raw)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn load_csv(contents: &str) -> Result<Cohort, StoreError> {
        let f = write_tmp(contents, ".csv");
        load_cohort(f.path(), Format::Csv, FeatureDomain::NonNegative)
    }

    #[test]
    fn loads_minimal_csv() {
        let c = load_csv(
            "patient_id,region,lesion_id,label,f0,f1,f2\n\
             p1,torso,a,1,0.1,0.2,0.3\n\
             p1,torso,b,,1,2,3\n",
        )
        .unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.dim(), 3);
        assert_eq!(c.records()[0].label, Some(true));
        assert_eq!(c.records()[1].label, None);
        assert_eq!(c.records()[1].embedding.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn inconsistent_dimension_reports_row() {
        let err = load_csv(
            "patient_id,region,lesion_id,label,f0,f1,f2\n\
             p1,torso,a,0,0.1,0.2,0.3\n\
             p1,torso,b,0,0.1,0.2,0.3,0.4\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("inconsistent dimension"), "{msg}");
        assert!(msg.ends_with("at row 2"), "{msg}");
    }

    #[test]
    fn rejects_bad_values() {
        let head = "patient_id,region,lesion_id,label,f0,f1\n";
        let cases = [
            ("p,r,a,0,0.1,abc\n", "non-numeric"),
            ("p,r,a,0,0.1,NaN\n", "non-finite"),
            ("p,r,a,0,0.1,inf\n", "non-finite"),
            ("p,r,a,0,-0.5,1\n", "negative"),
            ("p,r,a,2,0.5,1\n", "label"),
            ("p,r,a,0,0.5,1\np,r,a,1,0.5,1\n", "duplicate lesion_id"),
        ];
        for (body, needle) in cases {
            let err = load_csv(&format!("{head}{body}")).unwrap_err();
            assert!(err.to_string().contains(needle), "{body:?}: {err}");
            assert!(matches!(err, StoreError::Row { .. }));
        }
    }

    #[test]
    fn signed_domain_accepts_negative_values() {
        let f = write_tmp("patient_id,region,lesion_id,label,f0\np,r,a,0,-1.5\n", ".csv");
        let c = load_cohort(f.path(), Format::Csv, FeatureDomain::Signed).unwrap();
        assert_eq!(c.records()[0].embedding.values(), &[-1.5]);
    }

    #[test]
    fn bad_header_is_rejected() {
        let err = load_csv("patient,region,lesion_id,label,f0\n").unwrap_err();
        assert!(matches!(err, StoreError::Header(_)));
        let err = load_csv("patient_id,region,lesion_id,label,f1\n").unwrap_err();
        assert!(matches!(err, StoreError::Header(_)));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_cohort(
            Path::new("/nonexistent/cohort.csv"),
            Format::Csv,
            FeatureDomain::NonNegative,
        )
        .unwrap_err();
        assert!(err.is_io());
    }

    #[test]
    fn empty_cohort_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        save_cohort(&Cohort::empty(FeatureDomain::NonNegative), &path, Format::Csv).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "patient_id,region,lesion_id,label\n"
        );
        let back = load_cohort(&path, Format::Csv, FeatureDomain::NonNegative).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn single_record_writes_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.csv");
        let c = Cohort::new(
            vec![LesionRecord::new("p", "arm", "x", Some(false), vec![0.25, 3.0])],
            FeatureDomain::NonNegative,
        )
        .unwrap();
        save_cohort(&c, &path, Format::Csv).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "patient_id,region,lesion_id,label,f0,f1\np,arm,x,0,0.25,3\n"
        );
    }

    #[test]
    fn jsonl_label_is_optional() {
        let f = write_tmp(
            "{\"patient_id\":\"p\",\"region\":\"r\",\"lesion_id\":\"a\",\"embedding\":[1,2]}\n\
             \n\
             {\"patient_id\":\"p\",\"region\":\"r\",\"lesion_id\":\"b\",\"label\":1,\"embedding\":[3,4]}\n",
            ".jsonl",
        );
        let c = load_cohort(f.path(), Format::Jsonl, FeatureDomain::NonNegative).unwrap();
        assert_eq!(c.records()[0].label, None);
        assert_eq!(c.records()[1].label, Some(true));
    }

    #[test]
    fn jsonl_dimension_mismatch_reports_row() {
        let f = write_tmp(
            "{\"patient_id\":\"p\",\"region\":\"r\",\"lesion_id\":\"a\",\"embedding\":[1,2]}\n\
             {\"patient_id\":\"p\",\"region\":\"r\",\"lesion_id\":\"b\",\"embedding\":[1,2,3]}\n",
            ".jsonl",
        );
        let err = load_cohort(f.path(), Format::Jsonl, FeatureDomain::NonNegative).unwrap_err();
        assert!(err.to_string().contains("at row 2"), "{err}");
    }

    #[test]
    fn groups_by_patient_and_region() {
        let recs = vec![
            LesionRecord::new("p1", "torso", "a", None, vec![1.0]),
            LesionRecord::new("p1", "arm", "b", None, vec![1.0]),
            LesionRecord::new("p2", "torso", "c", None, vec![1.0]),
            LesionRecord::new("p1", "torso", "d", None, vec![1.0]),
        ];
        let cohort = Cohort::new(recs, FeatureDomain::NonNegative).unwrap();
        let sets = group_contexts(&cohort);
        assert_eq!(sets.len(), 3);
        assert_eq!((sets[0].patient_id.as_str(), sets[0].region.as_str()), ("p1", "torso"));
        let ids: Vec<_> = sets[0].lesions.iter().map(|l| l.lesion_id.as_str()).collect();
        assert_eq!(ids, ["a", "d"]);
        assert_eq!(sets[1].region, "arm");
        assert_eq!(sets[2].patient_id, "p2");
    }

    #[test]
    fn region_match_is_exact() {
        let recs = vec![
            LesionRecord::new("p", "Torso", "a", None, vec![1.0]),
            LesionRecord::new("p", "torso", "b", None, vec![1.0]),
        ];
        let cohort = Cohort::new(recs, FeatureDomain::NonNegative).unwrap();
        assert_eq!(group_contexts(&cohort).len(), 2);
    }
}
