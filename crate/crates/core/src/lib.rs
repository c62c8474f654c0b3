//! Treatment-policy optimization for two-arm survival cohorts.
//!
//! The crate covers the full prescriptive pipeline on tabular cohorts with
//! right-censored outcomes:
//!
//! 1. [`cohort`] — data model and CSV ingestion for patients, features,
//!    treatment arms (SAVR/TAVR) and survival outcomes;
//! 2. [`impute`] — k-nearest-neighbor imputation fitted on a training cohort
//!    and reusable on external cohorts;
//! 3. [`balance`] — standardized mean differences and two-sample tests
//!    quantifying covariate balance between arms;
//! 4. [`matching`] — risk-score stratification plus 1:1 greedy
//!    nearest-neighbor matching within strata;
//! 5. [`survival`] — random survival forests with log-rank splitting and
//!    Nelson–Aalen leaf estimators;
//! 6. [`rewards`] — the per-patient, per-arm predicted-risk matrix assembled
//!    from two per-arm forests;
//! 7. [`weighting`] — outcome-atypicality sample weights and the sweep that
//!    selects the weight by mean sensitivity/specificity;
//! 8. [`policy`] — depth-bounded axis-aligned prescription trees minimizing
//!    the weighted expected predicted risk;
//! 9. [`eval`] — sensitivity/specificity/concordance, policy-value
//!    improvements against baselines, leaf-level analysis, and percentile
//!    bootstrap confidence intervals;
//! 10. [`synth`] — synthetic confounded cohorts with known potential
//!     outcomes, used as ground-truth oracles.
//!
//! All randomized steps are driven by explicit 64-bit seeds and produce
//! bit-identical results regardless of thread count.

pub mod balance;
pub mod cohort;
pub mod error;
pub mod eval;
pub mod impute;
pub mod matching;
pub mod policy;
pub mod rewards;
pub mod seed;
pub mod stats;
pub mod survival;
pub mod synth;
pub mod weighting;

pub use cohort::{BinaryLabel, Cohort, FeatureKind, FeatureSchema, SurvivalOutcome, TreatmentArm};
pub use error::{Error, Result};

/// Default outcome horizon: five years expressed in days.
pub const DEFAULT_HORIZON_DAYS: f64 = 1825.0;
