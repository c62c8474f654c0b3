//! Risk-score stratification and 1:1 nearest-neighbor matching.
//!
//! Patients are first bucketed by a risk feature at its empirical quantiles
//! so bucket counts are near-equal. Within each bucket, SAVR and TAVR
//! patients are paired greedily without replacement on a standardized
//! covariate distance, optionally augmented with proximity in predicted
//! per-arm risk:
//!
//! ```text
//! distance² = Σ_j (z_aj − z_bj)² + prognostic_weight · Σ_t (risk_a[t] − risk_b[t])²
//! ```
//!
//! Unmatched patients are dropped, so the matched cohort has equal arm
//! counts. Ties are broken by (savr_id, tavr_id) lexicographic order and
//! the result is deterministic.

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, TreatmentArm};
use crate::error::{Error, Result};
use crate::stats;

/// Quantile bucket boundaries of a risk feature.
///
/// `boundaries` are strictly ascending; a value `v` falls in the bucket
/// equal to the number of boundaries strictly below it, so values exactly
/// at a boundary go to the lower bucket. `collapsed_from` records the
/// originally requested bucket count when ties forced a collapse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskStrata {
    pub feature: String,
    pub boundaries: Vec<f64>,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collapsed_from: Option<usize>,
}

impl RiskStrata {
    /// Bucket index of a risk value.
    pub fn bucket_of(&self, v: f64) -> usize {
        self.boundaries.partition_point(|b| *b < v)
    }
}

/// One matched SAVR/TAVR pair inside a bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub savr_id: String,
    pub tavr_id: String,
    pub distance: f64,
    pub bucket: usize,
}

/// Matching result: the pairs plus the cohort restricted to matched
/// patients (original row order preserved).
#[derive(Debug, Clone)]
pub struct MatchedCohort {
    pub pairs: Vec<MatchedPair>,
    pub cohort: Cohort,
    /// Buckets where one arm was empty and no pairs could be formed.
    pub empty_bucket_arms: Vec<usize>,
}

/// Cuts `values` into `k` near-equal buckets at the i/k empirical quantiles
/// (linear-interpolation definition). All-equal quantiles collapse; a fully
/// degenerate sample collapses to a single bucket.
pub fn make_strata(feature: &str, values: &[f64], k: usize) -> Result<RiskStrata> {
    if k == 0 {
        return Err(Error::InvalidParameter("bucket count must be ≥ 1".into()));
    }
    if values.len() < k {
        return Err(Error::TooFewPatients { needed: k, found: values.len() });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN risk value"));

    let mut boundaries: Vec<f64> = (1..k)
        .map(|i| stats::quantile_sorted(&sorted, i as f64 / k as f64))
        .collect();
    boundaries.dedup();
    // a boundary equal to the minimum produces an empty lowest bucket; drop it
    boundaries.retain(|b| *b > sorted[0]);

    let effective = boundaries.len() + 1;
    Ok(RiskStrata {
        feature: feature.to_string(),
        boundaries,
        k: effective,
        collapsed_from: if effective < k { Some(k) } else { None },
    })
}

/// Greedy 1:1 nearest-neighbor matching within strata.
///
/// `distance_features` are the feature names used for the covariate part of
/// the distance (standardized with statistics from this cohort's observed
/// cells). `risk_scores[i] = [risk_savr, risk_tavr]` supplies the
/// prognostic part; required when `prognostic_weight > 0`.
pub fn match_within_strata(
    cohort: &Cohort,
    strata: &RiskStrata,
    distance_features: &[String],
    prognostic_weight: f64,
    risk_scores: Option<&[[f64; 2]]>,
) -> Result<MatchedCohort> {
    if prognostic_weight < 0.0 {
        return Err(Error::InvalidParameter("prognostic weight must be ≥ 0".into()));
    }
    if prognostic_weight > 0.0 {
        match risk_scores {
            None => {
                return Err(Error::InvalidParameter(
                    "prognostic_weight > 0 requires risk scores".into(),
                ))
            }
            Some(rs) if rs.len() != cohort.n() => {
                return Err(Error::InconsistentDimensions(format!(
                    "risk scores for {} patients, cohort has {}",
                    rs.len(),
                    cohort.n()
                )));
            }
            _ => {}
        }
    }

    let risk_col = cohort
        .schema()
        .feature_index(&strata.feature)
        .ok_or_else(|| Error::MissingFeature(strata.feature.clone()))?;
    let dist_cols: Vec<usize> = distance_features
        .iter()
        .map(|name| {
            cohort
                .schema()
                .feature_index(name)
                .ok_or_else(|| Error::MissingFeature(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    // standardization statistics from this cohort's observed cells
    let mut means = Vec::with_capacity(dist_cols.len());
    let mut sds = Vec::with_capacity(dist_cols.len());
    for &c in &dist_cols {
        let observed = cohort.observed_column(c);
        means.push(stats::mean(&observed));
        let sd = if observed.len() > 1 { stats::sample_sd(&observed) } else { 0.0 };
        sds.push(if sd.is_finite() && sd > 0.0 { sd } else { 0.0 });
    }

    // bucket assignment
    let mut buckets: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); strata.k];
    for i in 0..cohort.n() {
        let v = cohort.feature(i, risk_col).ok_or_else(|| Error::MissingFeatureValue {
            row: i,
            feature: strata.feature.clone(),
        })?;
        let b = strata.bucket_of(v);
        match cohort.arms()[i] {
            TreatmentArm::Savr => buckets[b].0.push(i),
            TreatmentArm::Tavr => buckets[b].1.push(i),
        }
    }

    let distance = |a: usize, b: usize| -> f64 {
        let mut d2 = 0.0;
        for (k, &c) in dist_cols.iter().enumerate() {
            if sds[k] <= 0.0 {
                continue;
            }
            if let (Some(va), Some(vb)) = (cohort.feature(a, c), cohort.feature(b, c)) {
                let za = (va - means[k]) / sds[k];
                let zb = (vb - means[k]) / sds[k];
                d2 += (za - zb) * (za - zb);
            }
        }
        if prognostic_weight > 0.0 {
            let rs = risk_scores.unwrap();
            for t in 0..2 {
                let gap = rs[a][t] - rs[b][t];
                d2 += prognostic_weight * gap * gap;
            }
        }
        d2.sqrt()
    };

    let mut pairs = Vec::new();
    let mut empty_bucket_arms = Vec::new();
    for (b, (savr, tavr)) in buckets.iter().enumerate() {
        if savr.is_empty() || tavr.is_empty() {
            empty_bucket_arms.push(b);
            continue;
        }
        // all cross-arm candidate pairs, sorted by (distance, ids)
        let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(savr.len() * tavr.len());
        for &s in savr {
            for &t in tavr {
                candidates.push((distance(s, t), s, t));
            }
        }
        candidates.sort_by(|x, y| {
            x.0.partial_cmp(&y.0)
                .expect("NaN matching distance")
                .then_with(|| cohort.ids()[x.1].cmp(&cohort.ids()[y.1]))
                .then_with(|| cohort.ids()[x.2].cmp(&cohort.ids()[y.2]))
        });
        let target = savr.len().min(tavr.len());
        let mut used_s = std::collections::HashSet::new();
        let mut used_t = std::collections::HashSet::new();
        for (d, s, t) in candidates {
            if used_s.len() == target {
                break;
            }
            if used_s.contains(&s) || used_t.contains(&t) {
                continue;
            }
            used_s.insert(s);
            used_t.insert(t);
            pairs.push(MatchedPair {
                savr_id: cohort.ids()[s].clone(),
                tavr_id: cohort.ids()[t].clone(),
                distance: d,
                bucket: b,
            });
        }
    }

    let matched_ids: std::collections::HashSet<&str> = pairs
        .iter()
        .flat_map(|p| [p.savr_id.as_str(), p.tavr_id.as_str()])
        .collect();
    let rows: Vec<usize> = (0..cohort.n())
        .filter(|&i| matched_ids.contains(cohort.ids()[i].as_str()))
        .collect();

    Ok(MatchedCohort { pairs, cohort: cohort.subset(&rows), empty_bucket_arms })
}

/// Matched pairs as CSV: savr_id, tavr_id, bucket, distance.
pub fn pairs_csv(pairs: &[MatchedPair]) -> String {
    let mut out = String::from("savr_id,tavr_id,bucket,distance\n");
    for p in pairs {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.savr_id,
            p.tavr_id,
            p.bucket,
            crate::cohort::format_float(p.distance)
        ));
    }
    out
}
