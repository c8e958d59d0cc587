//! `ipca` - ugly-duckling scoring, outlier-gated training and evaluation.
//!
//! Exit codes: 0 success, 1 validation error, 2 I/O error, 3 computation error.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ipca_core::classifier::Weighting;
use ipca_core::store::{FeatureDomain, Format};

#[derive(Parser)]
#[command(name = "ipca", version, about = "Intra-patient comparative analysis of lesion embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct CohortArgs {
    /// Cohort file (CSV or JSONL).
    #[arg(long)]
    pub input: PathBuf,
    /// csv or jsonl; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<Format>,
    /// Allow negative feature values.
    #[arg(long)]
    pub signed: bool,
}

impl CohortArgs {
    pub fn format(&self) -> Format {
        self.format.unwrap_or_else(|| Format::from_path(&self.input))
    }

    pub fn domain(&self) -> FeatureDomain {
        if self.signed {
            FeatureDomain::Signed
        } else {
            FeatureDomain::NonNegative
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load a cohort and report its shape.
    Validate {
        #[command(flatten)]
        cohort: CohortArgs,
    },
    /// Compute outlier scores and flags for every context.
    Score {
        #[command(flatten)]
        cohort: CohortArgs,
        /// IQR multiplier.
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        /// Smallest context that is compared; smaller ones fall back to score 1.
        #[arg(long, default_value_t = 6)]
        min_context: usize,
        #[arg(long)]
        output: PathBuf,
        /// Write a PGM heatmap and CSV distance dump per compared context.
        #[arg(long)]
        heatmap_dir: Option<PathBuf>,
    },
    /// Grouped k-fold training of the outlier-gated classifier.
    Train {
        #[command(flatten)]
        cohort: CohortArgs,
        /// Scores CSV produced by `score`.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON training config; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "with-ducklings")]
        ablation: Weighting,
        /// Checkpoint path; fold i is written to `<stem>.fold<i>.<ext>`.
        #[arg(long)]
        out_model: PathBuf,
        /// History path; fold i is written to `<stem>.fold<i>.<ext>`.
        #[arg(long)]
        out_history: PathBuf,
        /// Cross-validated metrics report; defaults to `<model stem>.report.json`.
        #[arg(long)]
        out_report: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a labeled cohort.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out_report: PathBuf,
        /// Optional ROC dump `threshold,tpr,fpr`.
        #[arg(long)]
        out_roc: Option<PathBuf>,
        /// Optional per-lesion CSV `lesion_id,label,p,outlier_score`.
        #[arg(long)]
        out_predictions: Option<PathBuf>,
    },
    /// Generate a synthetic cohort with planted outliers.
    Synth {
        /// Overrides the seed in --config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        format: Option<Format>,
        /// Planted-outlier sidecar; defaults to `<out stem>.planted.csv`.
        #[arg(long)]
        planted_out: Option<PathBuf>,
    },
    /// Weighted average of per-lesion scores from several CSV files.
    Ensemble {
        #[arg(long, value_delimiter = ',', required = true)]
        scores: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        weights: Vec<f64>,
        /// Column holding the score in every input.
        #[arg(long, default_value = "p")]
        column: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { cohort } => commands::validate(&cohort),
        Command::Score {
            cohort,
            k,
            min_context,
            output,
            heatmap_dir,
        } => commands::score(&cohort, k, min_context, &output, heatmap_dir.as_deref()),
        Command::Train {
            cohort,
            scores,
            folds,
            seed,
            config,
            ablation,
            out_model,
            out_history,
            out_report,
        } => commands::train(&commands::TrainArgs {
            cohort,
            scores,
            folds,
            seed,
            config,
            ablation,
            out_model,
            out_history,
            out_report,
        }),
        Command::Eval {
            model,
            cohort,
            scores,
            out_report,
            out_roc,
            out_predictions,
        } => commands::eval(
            &model,
            &cohort,
            &scores,
            &out_report,
            out_roc.as_deref(),
            out_predictions.as_deref(),
        ),
        Command::Synth {
            seed,
            config,
            out,
            format,
            planted_out,
        } => commands::synth(seed, config.as_deref(), &out, format, planted_out.as_deref()),
        Command::Ensemble {
            scores,
            weights,
            column,
            out,
        } => commands::ensemble(&scores, &weights, &column, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
