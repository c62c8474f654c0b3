//! Covariate-balance diagnostics between treatment arms.
//!
//! For each feature we report the absolute standardized mean difference
//!
//! ```text
//! SMD = |μ_TAVR − μ_SAVR| / sqrt(½(σ²_TAVR + σ²_SAVR))
//! ```
//!
//! with sample SDs for continuous features; for binary features the means
//! are proportions and the variances p(1−p). Two-sample p-values come from
//! Welch's unequal-variance t-test (continuous) or a pooled two-proportion
//! z-test (binary). SMDs are not influenced by sample size; values below
//! 0.1 are conventionally considered negligible imbalance.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::cohort::{split_by_arm, Cohort, FeatureKind};
use crate::error::{Error, Result};
use crate::stats;

/// Conventional imbalance threshold.
pub const SMD_THRESHOLD: f64 = 0.1;

/// Balance summary for one feature. `smd`/`p_value` are `None` when the
/// quantity is undefined (zero pooled variance, too few observations);
/// these render as `--` in exports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceRow {
    pub feature: String,
    pub mean_savr: f64,
    pub mean_tavr: f64,
    pub sd_savr: f64,
    pub sd_tavr: f64,
    pub smd: Option<f64>,
    pub p_value: Option<f64>,
}

/// Balance report over all schema features, ordered by descending SMD.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
    pub threshold: f64,
    pub n_savr: usize,
    pub n_tavr: usize,
}

impl BalanceReport {
    /// Largest defined SMD, if any.
    pub fn max_smd(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.smd).fold(None, |acc, v| {
            Some(match acc {
                None => v,
                Some(a) => a.max(v),
            })
        })
    }

    /// SMD of one feature by name.
    pub fn smd_of(&self, feature: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.feature == feature).and_then(|r| r.smd)
    }
}

/// SMD from summary statistics (continuous convention, sample SDs).
pub fn smd_from_stats(mean_a: f64, sd_a: f64, mean_b: f64, sd_b: f64) -> Result<f64> {
    let pooled = 0.5 * (sd_a * sd_a + sd_b * sd_b);
    if pooled <= 0.0 {
        return Err(Error::ZeroPooledVariance);
    }
    Ok((mean_a - mean_b).abs() / pooled.sqrt())
}

/// Absolute standardized mean difference between two samples.
///
/// Missing values must be excluded by the caller; both samples must be
/// nonempty. Binary features use proportions and p(1−p) variances.
pub fn compute_smd(values_a: &[f64], values_b: &[f64], kind: FeatureKind) -> Result<f64> {
    if values_a.is_empty() || values_b.is_empty() {
        return Err(Error::TooFewObservations);
    }
    match kind {
        FeatureKind::Continuous => {
            let sd_a = if values_a.len() < 2 { 0.0 } else { stats::sample_sd(values_a) };
            let sd_b = if values_b.len() < 2 { 0.0 } else { stats::sample_sd(values_b) };
            smd_from_stats(stats::mean(values_a), sd_a, stats::mean(values_b), sd_b)
        }
        FeatureKind::Binary => {
            let pa = stats::mean(values_a);
            let pb = stats::mean(values_b);
            let pooled = 0.5 * (pa * (1.0 - pa) + pb * (1.0 - pb));
            if pooled <= 0.0 {
                return Err(Error::ZeroPooledVariance);
            }
            Ok((pa - pb).abs() / pooled.sqrt())
        }
    }
}

/// Two-sided two-sample p-value.
///
/// Continuous: Welch's unequal-variance t-test with Welch–Satterthwaite
/// degrees of freedom. Binary: pooled two-proportion z-test.
pub fn compute_p_value(values_a: &[f64], values_b: &[f64], kind: FeatureKind) -> Result<f64> {
    let (na, nb) = (values_a.len(), values_b.len());
    if na < 2 || nb < 2 {
        return Err(Error::TooFewObservations);
    }
    match kind {
        FeatureKind::Continuous => {
            let (ma, mb) = (stats::mean(values_a), stats::mean(values_b));
            let (va, vb) = (stats::sample_variance(values_a), stats::sample_variance(values_b));
            let se2 = va / na as f64 + vb / nb as f64;
            if se2 <= 0.0 {
                // both samples constant
                return Ok(if ma == mb { 1.0 } else { 0.0 });
            }
            let t = (ma - mb) / se2.sqrt();
            let df = se2 * se2
                / ((va / na as f64).powi(2) / (na as f64 - 1.0)
                    + (vb / nb as f64).powi(2) / (nb as f64 - 1.0));
            let dist = StudentsT::new(0.0, 1.0, df)
                .map_err(|e| Error::InvalidParameter(format!("t distribution: {e}")))?;
            Ok((2.0 * dist.cdf(-t.abs())).min(1.0))
        }
        FeatureKind::Binary => {
            let (pa, pb) = (stats::mean(values_a), stats::mean(values_b));
            let pooled = (pa * na as f64 + pb * nb as f64) / (na + nb) as f64;
            let se2 = pooled * (1.0 - pooled) * (1.0 / na as f64 + 1.0 / nb as f64);
            if se2 <= 0.0 {
                return Ok(if pa == pb { 1.0 } else { 0.0 });
            }
            let z = (pa - pb) / se2.sqrt();
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            Ok((2.0 * normal.cdf(-z.abs())).min(1.0))
        }
    }
}

/// Per-feature balance between the SAVR and TAVR arms of a cohort.
/// Missing cells are excluded feature by feature. Rows are ordered by
/// descending SMD with undefined SMDs last.
pub fn balance_report(cohort: &Cohort) -> Result<BalanceReport> {
    let (savr, tavr) = split_by_arm(cohort);
    if savr.n() == 0 {
        return Err(Error::EmptyArm("SAVR".into()));
    }
    if tavr.n() == 0 {
        return Err(Error::EmptyArm("TAVR".into()));
    }

    let mut rows = Vec::with_capacity(cohort.p());
    for (j, spec) in cohort.schema().features.iter().enumerate() {
        let a = savr.observed_column(j);
        let b = tavr.observed_column(j);
        if a.is_empty() || b.is_empty() {
            rows.push(BalanceRow {
                feature: spec.name.clone(),
                mean_savr: f64::NAN,
                mean_tavr: f64::NAN,
                sd_savr: f64::NAN,
                sd_tavr: f64::NAN,
                smd: None,
                p_value: None,
            });
            continue;
        }
        let smd = match compute_smd(&b, &a, spec.kind) {
            Ok(v) => Some(v),
            Err(Error::ZeroPooledVariance) => None,
            Err(e) => return Err(e),
        };
        let p_value = compute_p_value(&b, &a, spec.kind).ok();
        rows.push(BalanceRow {
            feature: spec.name.clone(),
            mean_savr: stats::mean(&a),
            mean_tavr: stats::mean(&b),
            sd_savr: if a.len() > 1 { stats::sample_sd(&a) } else { 0.0 },
            sd_tavr: if b.len() > 1 { stats::sample_sd(&b) } else { 0.0 },
            smd,
            p_value,
        });
    }

    rows.sort_by(|x, y| match (x.smd, y.smd) {
        (Some(a), Some(b)) => b.partial_cmp(&a).unwrap(),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });

    Ok(BalanceReport { rows, threshold: SMD_THRESHOLD, n_savr: savr.n(), n_tavr: tavr.n() })
}

fn opt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => crate::cohort::format_float(x),
        None => "--".to_string(),
    }
}

/// Single-report CSV: feature, means, SDs, smd, p_value.
pub fn balance_csv(report: &BalanceReport) -> String {
    let mut out = String::from("feature,mean_savr,mean_tavr,sd_savr,sd_tavr,smd,p_value\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.feature,
            crate::cohort::format_float(r.mean_savr),
            crate::cohort::format_float(r.mean_tavr),
            crate::cohort::format_float(r.sd_savr),
            crate::cohort::format_float(r.sd_tavr),
            opt_cell(r.smd),
            opt_cell(r.p_value),
        ));
    }
    out
}

/// Pre/post-match love-plot data: feature, smd_pre, smd_post, p_value
/// (pre-match p-value). Row order follows the pre-match report.
pub fn love_plot_csv(pre: &BalanceReport, post: &BalanceReport) -> String {
    let mut out = String::from("feature,smd_pre,smd_post,p_value\n");
    for r in &pre.rows {
        let post_smd = post
            .rows
            .iter()
            .find(|q| q.feature == r.feature)
            .and_then(|q| q.smd);
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.feature,
            opt_cell(r.smd),
            opt_cell(post_smd),
            opt_cell(r.p_value),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{FeatureSchema, FeatureSpec, SurvivalOutcome, TreatmentArm};
    use rand::Rng;

    #[test]
    fn age_summary_stats_give_expected_smd() {
        // means 78.91 vs 70.81, SDs 7.06 vs 7.85
        let smd = smd_from_stats(78.91, 7.06, 70.81, 7.85).unwrap();
        assert!((smd - 1.085).abs() < 0.0005, "smd = {smd}");
    }

    #[test]
    fn identical_samples_have_zero_smd() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(compute_smd(&xs, &xs, FeatureKind::Continuous).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_binary_yields_zero_pooled_variance() {
        let a = [1.0, 1.0, 1.0];
        let b = [0.0, 0.0, 0.0];
        assert!(matches!(
            compute_smd(&a, &b, FeatureKind::Binary),
            Err(Error::ZeroPooledVariance)
        ));
    }

    #[test]
    fn smd_is_scale_invariant_and_symmetric() {
        let a = [1.0, 2.5, 3.0, 4.5, 5.0];
        let b = [2.0, 3.5, 4.0, 6.5, 8.0];
        let base = compute_smd(&a, &b, FeatureKind::Continuous).unwrap();
        let sa: Vec<f64> = a.iter().map(|x| x * 17.3).collect();
        let sb: Vec<f64> = b.iter().map(|x| x * 17.3).collect();
        let scaled = compute_smd(&sa, &sb, FeatureKind::Continuous).unwrap();
        assert!((base - scaled).abs() < 1e-12);
        let swapped = compute_smd(&b, &a, FeatureKind::Continuous).unwrap();
        assert!((base - swapped).abs() < 1e-15);
    }

    #[test]
    fn smd_ignores_sample_size() {
        let mut rng = crate::seed::rng_for(11, 0);
        let a: Vec<f64> = (0..100).map(|_| rng.random::<f64>() * 4.0).collect();
        let b: Vec<f64> = (0..100).map(|_| rng.random::<f64>() * 4.0 + 1.0).collect();
        let base = compute_smd(&a, &b, FeatureKind::Continuous).unwrap();
        let a2: Vec<f64> = a.iter().chain(a.iter()).copied().collect();
        let b2: Vec<f64> = b.iter().chain(b.iter()).copied().collect();
        let doubled = compute_smd(&a2, &b2, FeatureKind::Continuous).unwrap();
        // duplication nudges the n−1 SD by O(1/n); proportions are exact
        assert!((base - doubled).abs() < 0.01);
        let pa = [1.0, 0.0, 1.0, 0.0];
        let pb = [1.0, 1.0, 1.0, 0.0];
        let pbase = compute_smd(&pa, &pb, FeatureKind::Binary).unwrap();
        let pa2: Vec<f64> = pa.iter().chain(pa.iter()).copied().collect();
        let pb2: Vec<f64> = pb.iter().chain(pb.iter()).copied().collect();
        let pdoubled = compute_smd(&pa2, &pb2, FeatureKind::Binary).unwrap();
        assert!((pbase - pdoubled).abs() < 1e-12);
    }

    #[test]
    fn identical_nonconstant_samples_have_p_one() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let p = compute_p_value(&xs, &xs, FeatureKind::Continuous).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_vs_all_one_proportions_z_is_sqrt_ten() {
        // pooled p = 0.5, se = sqrt(0.25·(2/5)) → z = √10, p < 0.01
        let a = [0.0; 5];
        let b = [1.0; 5];
        let p = compute_p_value(&a, &b, FeatureKind::Binary).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let expected = 2.0 * normal.cdf(-(10.0_f64).sqrt());
        assert!((p - expected).abs() < 1e-12);
        assert!(p < 0.01);
    }

    #[test]
    fn p_values_stay_in_unit_interval() {
        let mut rng = crate::seed::rng_for(3, 0);
        for _ in 0..200 {
            let a: Vec<f64> = (0..12).map(|_| rng.random::<f64>() * 5.0).collect();
            let b: Vec<f64> = (0..9).map(|_| rng.random::<f64>() * 5.0 + 1.0).collect();
            let p = compute_p_value(&a, &b, FeatureKind::Continuous).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn welch_test_is_calibrated_under_the_null() {
        // 500 vs 500 draws from the same normal, 500 seeds; rejection rate
        // at α = 0.05 should land in [0.02, 0.09]
        let mut rejections = 0;
        let trials = 500;
        for s in 0..trials {
            let mut rng = crate::seed::rng_for(1000, s);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
                rand::Rng::sample::<f64, _>(rng, rand_distr::StandardNormal) * 2.0 + 1.0
            };
            let a: Vec<f64> = (0..500).map(|_| draw(&mut rng)).collect();
            let b: Vec<f64> = (0..500).map(|_| draw(&mut rng)).collect();
            let p = compute_p_value(&a, &b, FeatureKind::Continuous).unwrap();
            if p < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / trials as f64;
        assert!((0.02..=0.09).contains(&rate), "rejection rate {rate}");
    }

    fn two_arm_cohort(
        savr_rows: Vec<Vec<Option<f64>>>,
        tavr_rows: Vec<Vec<Option<f64>>>,
    ) -> Cohort {
        let p = savr_rows[0].len();
        let schema = FeatureSchema {
            features: (0..p)
                .map(|j| FeatureSpec { name: format!("f{j}"), kind: FeatureKind::Continuous })
                .collect(),
            treatment_column: "treatment".into(),
            time_column: "time_days".into(),
            event_column: "event".into(),
            id_column: None,
        };
        let n = savr_rows.len() + tavr_rows.len();
        let mut arms = vec![TreatmentArm::Savr; savr_rows.len()];
        arms.extend(vec![TreatmentArm::Tavr; tavr_rows.len()]);
        let cells: Vec<Option<f64>> =
            savr_rows.into_iter().chain(tavr_rows).flatten().collect();
        Cohort::new(
            schema,
            (0..n).map(|i| format!("p{i}")).collect(),
            cells,
            arms,
            vec![SurvivalOutcome { time_days: 10.0, event: false }; n],
        )
        .unwrap()
    }

    #[test]
    fn mirrored_arms_have_zero_smds() {
        let rows = vec![
            vec![Some(1.0), Some(3.0)],
            vec![Some(2.0), Some(5.0)],
            vec![Some(4.0), Some(9.0)],
        ];
        let cohort = two_arm_cohort(rows.clone(), rows);
        let report = balance_report(&cohort).unwrap();
        assert_eq!(report.rows.len(), 2);
        for r in &report.rows {
            assert_eq!(r.smd, Some(0.0));
        }
    }

    #[test]
    fn planted_shift_shows_up_and_rows_are_sorted() {
        let mut rng = crate::seed::rng_for(5, 1);
        let savr: Vec<Vec<Option<f64>>> = (0..80)
            .map(|_| vec![Some(rng.random::<f64>()), Some(rng.random::<f64>())])
            .collect();
        let tavr: Vec<Vec<Option<f64>>> = (0..80)
            .map(|_| vec![Some(rng.random::<f64>() + 0.8), Some(rng.random::<f64>())])
            .collect();
        let report = balance_report(&two_arm_cohort(savr, tavr)).unwrap();
        assert!(report.max_smd().unwrap() > 0.1);
        assert_eq!(report.rows[0].feature, "f0");
        let smds: Vec<f64> = report.rows.iter().filter_map(|r| r.smd).collect();
        assert!(smds.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn empty_arm_is_an_error() {
        let cohort = two_arm_cohort(vec![vec![Some(1.0)]], vec![]);
        assert!(matches!(balance_report(&cohort), Err(Error::EmptyArm(_))));
    }

    #[test]
    fn csv_exports_mark_undefined_as_dashes() {
        let savr = vec![vec![Some(1.0), Some(2.0)], vec![Some(1.0), Some(3.0)]];
        let tavr = vec![vec![Some(1.0), Some(4.0)], vec![Some(1.0), Some(6.0)]];
        let report = balance_report(&two_arm_cohort(savr, tavr)).unwrap();
        let csv = balance_csv(&report);
        assert!(csv.contains("f0") && csv.contains("--"));
        let love = love_plot_csv(&report, &report);
        assert!(love.lines().count() == 3);
    }
}
