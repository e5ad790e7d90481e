//! Counterfactual generation, label selection, quality metrics and the
//! theory harness.

pub mod dump;
pub mod generate;
pub mod quality;
pub mod select;
pub mod theory;

pub use generate::{CfEngine, CounterfactualPair};
pub use quality::{evaluate_quality, summarize, CfQualityReport, QualitySummary};
pub use select::{select_cf_label, Strategy};
pub use theory::{check_conditions, corollary_harness, violation_probe, BoundReport, ConditionReport};
