//! Ugly-duckling detection for skin lesions by intra-patient comparison of
//! lesion embeddings, and an outlier-gated classifier that feeds the outlier
//! score into the network so that it scales both features and gradients.
//!
//! * [`store`] - embedding records, cohorts, CSV/JSONL interchange.
//! * [`outlier`] - cosine-distance matrix, outlier scores, IQR flags.
//! * [`classifier`] - `p = m(o * h(f(x)))` with focal loss and RAdam.
//! * [`evaluation`] - ROC/AUC, knee point, grouped folds, ensembling.
//! * [`synth`] - seeded cohorts with planted outliers.
//! * [`pipeline`] - grouped cross-validation tying the above together.

pub mod classifier;
pub mod evaluation;
pub mod outlier;
pub mod pipeline;
pub mod store;
pub mod synth;
