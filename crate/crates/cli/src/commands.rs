use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ipca_core::classifier::{
    predict, write_history_csv, Checkpoint, OutlierScores, TrainConfig, Weighting,
};
use ipca_core::evaluation::{
    auc, ensemble_scores, group_kfold, knee_point, roc_curve, write_roc_csv, Metrics,
    MetricsReport, PredictionRow,
};
use ipca_core::outlier::{
    distance_csv, heatmap_pgm, read_score_rows, score_cohort, score_rows, write_score_rows,
    ScoreConfig,
};
use ipca_core::pipeline::cross_validate;
use ipca_core::store::{
    group_contexts, load_cohort, save_cohort, Cohort, Format,
};
use ipca_core::synth::{generate_cohort, write_planted_csv, SynthConfig};

use crate::error::{from_csv, CliError};
use crate::CohortArgs;

type Result<T> = std::result::Result<T, CliError>;

fn load(args: &CohortArgs) -> Result<Cohort> {
    Ok(load_cohort(&args.input, args.format(), args.domain())?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_text(path, &(text + "\n"))
}

fn load_scores(path: &Path) -> Result<OutlierScores> {
    let rows = read_score_rows(path).map_err(|e| from_csv(path, e))?;
    Ok(OutlierScores::from_rows(&rows))
}

/// `dir/name.ext` -> `dir/name.<tag>.ext`
fn tagged_path(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn validate(args: &CohortArgs) -> Result<()> {
    let cohort = load(args)?;
    let contexts = group_contexts(&cohort);
    let comparable = contexts
        .iter()
        .filter(|c| c.len() >= ScoreConfig::default().min_context)
        .count();
    let patients: std::collections::HashSet<&str> = cohort
        .records()
        .iter()
        .map(|r| r.patient_id.as_str())
        .collect();
    println!(
        "records={} dim={} labeled={} patients={} contexts={} comparable_contexts={}",
        cohort.len(),
        cohort.dim(),
        cohort.labeled_count(),
        patients.len(),
        contexts.len(),
        comparable
    );
    Ok(())
}

pub fn score(
    args: &CohortArgs,
    k: f64,
    min_context: usize,
    output: &Path,
    heatmap_dir: Option<&Path>,
) -> Result<()> {
    if k.is_nan() || k < 0.0 {
        return Err(CliError::Validation(format!("--k must be >= 0, got {k}")));
    }
    let cohort = load(args)?;
    let cfg = ScoreConfig { k, min_context };
    let reports = score_cohort(&cohort, &cfg)?;
    let rows = score_rows(&cohort, &reports);
    write_score_rows(create(output)?, &rows).map_err(|e| from_csv(output, e))?;

    if let Some(dir) = heatmap_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (idx, rep) in reports.iter().enumerate() {
            let Some(m) = &rep.distances else { continue };
            let base = format!(
                "ctx{idx:04}_{}_{}",
                sanitize(&rep.patient_id),
                sanitize(&rep.region)
            );
            write_text(&dir.join(format!("{base}.pgm")), &heatmap_pgm(m))?;
            write_text(&dir.join(format!("{base}.csv")), &distance_csv(m, &rep.lesion_ids))?;
        }
    }
    let flagged = rows.iter().filter(|r| r.flag.as_str() == "outlier").count();
    let fallback = reports.iter().filter(|r| r.fallback).count();
    println!(
        "scored {} lesions in {} contexts ({} fallback); {} flagged",
        rows.len(),
        reports.len(),
        fallback,
        flagged
    );
    Ok(())
}

pub struct TrainArgs {
    pub cohort: CohortArgs,
    pub scores: PathBuf,
    pub folds: usize,
    pub seed: u64,
    pub config: Option<PathBuf>,
    pub ablation: Weighting,
    pub out_model: PathBuf,
    pub out_history: PathBuf,
    pub out_report: Option<PathBuf>,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cohort = load(&args.cohort)?;
    let scores = load_scores(&args.scores)?;
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    cfg.seed = args.seed;
    cfg.weighting = args.ablation;
    cfg.validate()?;
    if cohort.labeled_count() == 0 {
        return Err(CliError::Validation("cohort has no labeled records".into()));
    }

    let folds = group_kfold(&cohort, args.folds, args.seed)?;
    let cv = cross_validate(&cohort, &scores, &cfg, &folds)?;
    for (i, outcome) in cv.models.iter().enumerate() {
        let tag = format!("fold{i}");
        let model_path = tagged_path(&args.out_model, &tag);
        Checkpoint::new(&cfg, outcome)
            .save(&model_path)
            .map_err(|e| CliError::io(&model_path, e))?;
        let hist_path = tagged_path(&args.out_history, &tag);
        write_history_csv(create(&hist_path)?, &outcome.history)
            .map_err(|e| from_csv(&hist_path, e))?;
    }
    let report_path = args
        .out_report
        .clone()
        .unwrap_or_else(|| tagged_path(&args.out_model, "report").with_extension("json"));
    let report = MetricsReport {
        predictions: cv.predictions,
        ..cv.report
    };
    write_json(&report_path, &report)?;
    print_metrics(&report.overall);
    Ok(())
}

fn print_metrics(m: &Metrics) {
    println!(
        "auc={:.4} sensitivity={:.4} specificity={:.4} youden={:.4}",
        m.auc,
        m.sensitivity,
        m.specificity,
        m.youden()
    );
}

pub fn eval(
    model: &Path,
    args: &CohortArgs,
    scores: &Path,
    out_report: &Path,
    out_roc: Option<&Path>,
    out_predictions: Option<&Path>,
) -> Result<()> {
    let ckpt = Checkpoint::load(model).map_err(|e| {
        if e.is::<std::io::Error>() {
            CliError::io(model, e)
        } else {
            CliError::Validation(format!("{}: {e}", model.display()))
        }
    })?;
    let cohort = load(args)?;
    let scores = load_scores(scores)?;
    let preds = predict(
        &ckpt.params,
        &cohort,
        &scores,
        ckpt.config.weighting,
        ckpt.config.injection,
    )?;
    let labeled: Vec<&PredictionRow> = preds.iter().filter(|p| p.label.is_some()).collect();
    let labels: Vec<bool> = labeled.iter().map(|p| p.label == Some(true)).collect();
    let probs: Vec<f64> = labeled.iter().map(|p| p.p).collect();
    let curve = roc_curve(&labels, &probs)?;
    let knee = knee_point(&curve);
    let overall = Metrics {
        auc: auc(&curve),
        knee_threshold: knee.threshold.is_finite().then_some(knee.threshold),
        sensitivity: knee.sensitivity,
        specificity: knee.specificity,
    };
    if let Some(path) = out_roc {
        write_roc_csv(create(path)?, &curve).map_err(|e| CliError::io(path, e))?;
    }
    if let Some(path) = out_predictions {
        let mut out = create(path)?;
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "lesion_id,label,p,outlier_score")?;
            for p in &preds {
                let label = p.label.map(|y| u8::from(y).to_string()).unwrap_or_default();
                writeln!(out, "{},{label},{},{}", p.lesion_id, p.p, p.outlier_score)?;
            }
            out.flush()
        };
        write().map_err(|e| CliError::io(path, e))?;
    }
    write_json(
        out_report,
        &MetricsReport {
            overall,
            folds: Vec::new(),
            predictions: preds,
        },
    )?;
    print_metrics(&overall);
    Ok(())
}

pub fn synth(
    seed: Option<u64>,
    config: Option<&Path>,
    out: &Path,
    format: Option<Format>,
    planted_out: Option<&Path>,
) -> Result<()> {
    let mut cfg: SynthConfig = match config {
        Some(path) => read_json(path)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let synth = generate_cohort(&cfg)?;
    let format = format.unwrap_or_else(|| Format::from_path(out));
    save_cohort(&synth.cohort, out, format)?;
    let planted_path = planted_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| tagged_path(out, "planted").with_extension("csv"));
    let mut sidecar = create(&planted_path)?;
    write_planted_csv(&mut sidecar, &synth)
        .and_then(|_| sidecar.flush())
        .map_err(|e| CliError::io(&planted_path, e))?;
    println!(
        "generated {} lesions for {} patients ({} planted outliers)",
        synth.cohort.len(),
        cfg.n_patients,
        synth.planted.iter().filter(|&&p| p).count()
    );
    Ok(())
}

fn read_score_column(path: &Path, column: &str) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| from_csv(path, e))?;
    let headers = rdr.headers().map_err(|e| from_csv(path, e))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Validation(format!("{}: missing column '{name}'", path.display()))
        })
    };
    let (id_col, score_col) = (find("lesion_id")?, find(column)?);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| from_csv(path, e))?;
        let value: f64 = row[score_col].trim().parse().map_err(|_| {
            CliError::Validation(format!(
                "{}: non-numeric '{}' at row {}",
                path.display(),
                &row[score_col],
                i + 1
            ))
        })?;
        out.push((row[id_col].to_string(), value));
    }
    Ok(out)
}

pub fn ensemble(inputs: &[PathBuf], weights: &[f64], column: &str, out: &Path) -> Result<()> {
    let tables = inputs
        .iter()
        .map(|p| read_score_column(p, column))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<&str> = tables[0].iter().map(|(id, _)| id.as_str()).collect();
    let mut lists = Vec::with_capacity(tables.len());
    for (table, path) in tables.iter().zip(inputs) {
        let by_id: HashMap<&str, f64> = table.iter().map(|(id, v)| (id.as_str(), *v)).collect();
        if by_id.len() != ids.len() {
            return Err(CliError::Validation(format!(
                "{}: {} lesions, expected {}",
                path.display(),
                by_id.len(),
                ids.len()
            )));
        }
        let list = ids
            .iter()
            .map(|id| {
                by_id.get(id).copied().ok_or_else(|| {
                    CliError::Validation(format!("{}: lesion '{id}' missing", path.display()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        lists.push(list);
    }
    let combined = ensemble_scores(&lists, weights)?;
    let mut w = create(out)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "lesion_id,score")?;
        for (id, s) in ids.iter().zip(&combined) {
            writeln!(w, "{id},{s}")?;
        }
        w.flush()
    };
    write().map_err(|e| CliError::io(out, e))?;
    Ok(())
}
