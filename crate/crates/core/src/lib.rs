//! File-level defect risk models and the tooling to explain them.
//!
//! The pipeline:
//!
//! 1. [`dataset`] loads metric tables and annotated source trees.
//! 2. [`tokenizer`] turns source files into bag-of-token vectors with a
//!    token→line index.
//! 3. [`forest`] trains the random-forest black box that produces risk scores.
//! 4. [`explain`] fits local weighted-ridge surrogates around one prediction.
//! 5. [`localize`] turns token attributions into ranked lines plus
//!    effort-aware recall.
//! 6. [`guidance`] induces local "do"/"avoid" threshold rules.
//! 7. [`evaluation`] scores models and generates planted-defect corpora.
//! 8. [`report`] renders explanations and plans as JSON, markdown or HTML.

pub mod dataset;
pub mod evaluation;
pub mod explain;
pub mod forest;
pub mod guidance;
mod linalg;
pub mod localize;
pub mod numfmt;
pub mod report;
pub mod tokenizer;

pub use dataset::{MetricRecord, SourceCorpus, SourceFile, TabularDataset};
pub use explain::{
    BlackBox, Direction, DiscretizationScheme, ExplainerConfig, Explanation, FeatureContribution,
};
pub use forest::{ForestConfig, ForestModel};
pub use guidance::{GuidanceRule, ImprovementPlan, RuleKind};
pub use localize::{EffortMetrics, LineRisk, LocalizationReport};
pub use tokenizer::{TokenLineIndex, TokenVector};

/// Risk scores at or above this value are treated as the defective class.
pub const CLASS_THRESHOLD: f64 = 0.5;
