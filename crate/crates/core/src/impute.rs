//! K-nearest-neighbor imputation.
//!
//! The model is fitted on a training cohort and can be applied to external
//! cohorts with the same schema. Standardization statistics are computed on
//! observed training cells only; the reference set is the complete cases.
//! Neighbor distances are Euclidean over standardized features observed in
//! the target row, rescaled by √(p/p_observed). Continuous cells are filled
//! with the neighbor mean, binary cells with the majority vote (ties → 1).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, FeatureKind, FeatureSchema};
use crate::error::{Error, Result};
use crate::stats;

/// Fitted KNN imputation model. Immutable after fit; serializable so a
/// model fitted on one cohort can impute another.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImputationModel {
    pub format: String,
    pub k: usize,
    pub schema: FeatureSchema,
    /// Per-feature mean over observed training cells.
    pub column_means: Vec<f64>,
    /// Per-feature sample std over observed training cells (n−1 denominator).
    pub column_stds: Vec<f64>,
    /// Complete-case rows, standardized. Zero-variance columns are stored as
    /// 0 and excluded from distances.
    pub reference_rows: Vec<Vec<f64>>,
}

pub const IMPUTER_FORMAT: &str = "valve-policy.imputer.v1";

/// Fits the imputer on a training cohort.
///
/// Requires at least `k` rows with no missing feature values.
pub fn fit_imputer(train: &Cohort, k: usize) -> Result<ImputationModel> {
    if k == 0 {
        return Err(Error::InvalidParameter("imputation k must be ≥ 1".into()));
    }
    let p = train.p();
    let mut means = Vec::with_capacity(p);
    let mut stds = Vec::with_capacity(p);
    for j in 0..p {
        let observed = train.observed_column(j);
        if observed.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "feature `{}` has no observed values to fit on",
                train.schema().features[j].name
            )));
        }
        means.push(stats::mean(&observed));
        let sd = if observed.len() < 2 { 0.0 } else { stats::sample_sd(&observed) };
        stds.push(if sd.is_finite() { sd } else { 0.0 });
    }

    let complete: Vec<usize> =
        (0..train.n()).filter(|&i| train.row(i).iter().all(|c| c.is_some())).collect();
    if complete.len() < k {
        return Err(Error::InsufficientCompleteRows { needed: k, found: complete.len() });
    }

    let reference_rows = complete
        .iter()
        .map(|&i| {
            (0..p)
                .map(|j| standardize(train.feature(i, j).unwrap(), means[j], stds[j]))
                .collect()
        })
        .collect();

    Ok(ImputationModel {
        format: IMPUTER_FORMAT.to_string(),
        k,
        schema: train.schema().clone(),
        column_means: means,
        column_stds: stds,
        reference_rows,
    })
}

fn standardize(v: f64, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        (v - mean) / sd
    } else {
        0.0
    }
}

impl ImputationModel {
    /// Fills every missing cell of `target`. Observed cells never change and
    /// the result has no missing cells, so the operation is idempotent.
    pub fn impute(&self, target: &Cohort) -> Result<Cohort> {
        if *target.schema() != self.schema {
            return Err(Error::SchemaMismatch(
                "target cohort schema differs from the imputer's training schema".into(),
            ));
        }
        let p = target.p();
        let filled_rows: Vec<Vec<Option<f64>>> = (0..target.n())
            .into_par_iter()
            .map(|i| self.impute_row(target.row(i)))
            .collect();
        let mut cells = Vec::with_capacity(target.n() * p);
        for row in filled_rows {
            cells.extend(row);
        }
        Ok(target.with_features(cells))
    }

    fn impute_row(&self, row: &[Option<f64>]) -> Vec<Option<f64>> {
        if row.iter().all(|c| c.is_some()) {
            return row.to_vec();
        }
        let neighbors = self.nearest_reference_rows(row);
        row.iter()
            .enumerate()
            .map(|(j, cell)| {
                if cell.is_some() {
                    return *cell;
                }
                Some(self.fill_value(j, &neighbors))
            })
            .collect()
    }

    /// Indices of the k nearest reference rows; ties broken by lower index.
    fn nearest_reference_rows(&self, row: &[Option<f64>]) -> Vec<usize> {
        let usable: Vec<usize> = (0..row.len()).filter(|&j| self.column_stds[j] > 0.0).collect();
        let observed: Vec<usize> =
            usable.iter().copied().filter(|&j| row[j].is_some()).collect();
        let p_total = usable.len().max(1);
        let p_obs = observed.len().max(1);
        let scale = p_total as f64 / p_obs as f64;

        let z: Vec<(usize, f64)> = observed
            .iter()
            .map(|&j| (j, standardize(row[j].unwrap(), self.column_means[j], self.column_stds[j])))
            .collect();

        let mut dists: Vec<(f64, usize)> = self
            .reference_rows
            .iter()
            .enumerate()
            .map(|(r, reference)| {
                let d2: f64 = z.iter().map(|&(j, zj)| (zj - reference[j]).powi(2)).sum();
                ((d2 * scale).sqrt(), r)
            })
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        dists.truncate(self.k);
        dists.into_iter().map(|(_, r)| r).collect()
    }

    fn fill_value(&self, col: usize, neighbors: &[usize]) -> f64 {
        let raw = |r: usize| {
            // reference rows are standardized; undo for the fill value
            self.reference_rows[r][col] * self.column_stds[col] + self.column_means[col]
        };
        match self.schema.features[col].kind {
            FeatureKind::Continuous => {
                neighbors.iter().map(|&r| raw(r)).sum::<f64>() / neighbors.len() as f64
            }
            FeatureKind::Binary => {
                let ones = neighbors.iter().filter(|&&r| raw(r) > 0.5).count();
                // majority vote, ties resolved toward 1
                if 2 * ones >= neighbors.len() {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Writes the model as JSON.
    pub fn to_json_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Reads a model previously written by [`ImputationModel::to_json_file`].
    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let model: ImputationModel = serde_json::from_str(&text)?;
        if model.format != IMPUTER_FORMAT {
            return Err(Error::UnsupportedFormat(model.format));
        }
        Ok(model)
    }
}
