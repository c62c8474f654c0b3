//! Random survival forest with log-rank splitting and Nelson–Aalen leaves.
//!
//! Each tree is grown on a bootstrap sample (with replacement, size N). At
//! every node `mtry` features are sampled without replacement and all
//! midpoint thresholds of each sampled feature are scored with the log-rank
//! statistic (hypergeometric variance); the split with the largest
//! statistic wins, ties going to the lowest feature index and threshold.
//! Leaves store Nelson–Aalen cumulative-hazard curves
//! `H(t) = Σ_{t_j ≤ t} d_j / n_j`; forest predictions average `H` across
//! trees and map to risk via `1 − exp(−H̄)`.
//!
//! Per-tree randomness is derived as `seed ⊕ tree_index`, so parallel
//! fitting is schedule-independent and a `(cohort, params)` pair fully
//! determines the forest.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::Cohort;
use crate::error::{Error, Result};

/// Cumulative-hazard step function over ascending event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardCurve {
    pub times: Vec<f64>,
    pub cumulative_hazard: Vec<f64>,
}

impl HazardCurve {
    /// H(t): value of the last step at or before `t`, 0 before the first.
    pub fn cumulative_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|x| *x <= t) {
            0 => 0.0,
            k => self.cumulative_hazard[k - 1],
        }
    }
}

/// Nelson–Aalen estimator over (time, event) observations.
pub fn nelson_aalen(observations: &[(f64, bool)]) -> HazardCurve {
    let mut sorted = observations.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("NaN survival time"));
    let mut times = Vec::new();
    let mut hazards = Vec::new();
    let mut at_risk = sorted.len();
    let mut h = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let mut deaths = 0usize;
        let mut group = 0usize;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                deaths += 1;
            }
            group += 1;
            i += 1;
        }
        if deaths > 0 {
            h += deaths as f64 / at_risk as f64;
            times.push(t);
            hazards.push(h);
        }
        at_risk -= group;
    }
    HazardCurve { times, cumulative_hazard: hazards }
}

/// One node of a survival tree. `Split` sends `x[feature] ≤ threshold`
/// left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SurvivalNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { n_samples: usize, curve: HazardCurve },
}

/// A single survival tree stored as a node array with the root at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTree {
    pub nodes: Vec<SurvivalNode>,
}

impl SurvivalTree {
    /// Leaf curve reached by a complete feature vector.
    pub fn leaf_for(&self, x: &[f64]) -> &HazardCurve {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                SurvivalNode::Split { feature, threshold, left, right } => {
                    idx = if x[*feature] <= *threshold { *left } else { *right };
                }
                SurvivalNode::Leaf { curve, .. } => return curve,
            }
        }
    }

    /// Root split, if the tree is not a single leaf.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match &self.nodes[0] {
            SurvivalNode::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            SurvivalNode::Leaf { .. } => None,
        }
    }
}

/// Forest hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features sampled per node; `None` = ⌈√p⌉ in a forest, all features
    /// in a single tree.
    pub mtry: Option<usize>,
    /// `None` = unlimited depth.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 500, mtry: None, max_depth: None, min_leaf: 10, seed: 0 }
    }
}

pub const FOREST_FORMAT: &str = "valve-policy.survival-forest.v1";

/// Fitted random survival forest. Immutable; serializable to JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalForest {
    pub format: String,
    pub feature_names: Vec<String>,
    pub n_trees: usize,
    pub mtry: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
    pub trees: Vec<SurvivalTree>,
    /// Per-tree bootstrap complement (sorted row indices).
    pub oob_indices: Vec<Vec<u32>>,
}

struct TrainData {
    n: usize,
    p: usize,
    features: Vec<f64>,
    times: Vec<f64>,
    events: Vec<bool>,
}

impl TrainData {
    fn from_cohort(cohort: &Cohort) -> Result<TrainData> {
        Ok(TrainData {
            n: cohort.n(),
            p: cohort.p(),
            features: cohort.dense_features()?,
            times: cohort.outcomes().iter().map(|o| o.time_days).collect(),
            events: cohort.outcomes().iter().map(|o| o.event).collect(),
        })
    }

    fn value(&self, row: usize, col: usize) -> f64 {
        self.features[row * self.p + col]
    }
}

fn validate_params(data: &TrainData, params: &ForestParams, mtry: usize) -> Result<()> {
    if params.n_trees == 0 {
        return Err(Error::InvalidParameter("n_trees must be ≥ 1".into()));
    }
    if params.min_leaf == 0 {
        return Err(Error::InvalidParameter("min_leaf must be ≥ 1".into()));
    }
    if mtry == 0 || mtry > data.p {
        return Err(Error::InvalidParameter(format!(
            "mtry must be in 1..={}, got {mtry}",
            data.p
        )));
    }
    if data.n < 2 * params.min_leaf {
        return Err(Error::TooFewRows { needed: 2 * params.min_leaf, found: data.n });
    }
    if !data.events.iter().any(|&e| e) {
        return Err(Error::NoEvents);
    }
    Ok(())
}

/// Fits a forest with uniform bootstrap sampling.
pub fn fit_forest(cohort: &Cohort, params: &ForestParams) -> Result<SurvivalForest> {
    fit_forest_weighted(cohort, params, None)
}

/// Fits a forest whose bootstrap draws each row with probability
/// proportional to `sample_weights` (uniform when `None`).
pub fn fit_forest_weighted(
    cohort: &Cohort,
    params: &ForestParams,
    sample_weights: Option<&[f64]>,
) -> Result<SurvivalForest> {
    let data = TrainData::from_cohort(cohort)?;
    let mtry = params.mtry.unwrap_or_else(|| (data.p as f64).sqrt().ceil() as usize);
    validate_params(&data, params, mtry)?;
    if let Some(w) = sample_weights {
        if w.len() != data.n {
            return Err(Error::InconsistentDimensions(format!(
                "{} sample weights for {} rows",
                w.len(),
                data.n
            )));
        }
        if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter("sample weights must be positive".into()));
        }
    }
    let cumulative: Option<Vec<f64>> = sample_weights.map(|w| {
        w.iter()
            .scan(0.0, |acc, &x| {
                *acc += x;
                Some(*acc)
            })
            .collect()
    });

    let built: Vec<(SurvivalTree, Vec<u32>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ t as u64);
            let rows = bootstrap_rows(data.n, cumulative.as_deref(), &mut rng);
            let mut in_bag = vec![false; data.n];
            for &r in &rows {
                in_bag[r as usize] = true;
            }
            let oob: Vec<u32> =
                (0..data.n as u32).filter(|&i| !in_bag[i as usize]).collect();
            let tree = grow_tree(&data, rows, mtry, params.max_depth, params.min_leaf, &mut rng);
            (tree, oob)
        })
        .collect();

    let (trees, oob_indices): (Vec<_>, Vec<_>) = built.into_iter().unzip();
    Ok(SurvivalForest {
        format: FOREST_FORMAT.to_string(),
        feature_names: cohort.schema().feature_names(),
        n_trees: params.n_trees,
        mtry,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        seed: params.seed,
        trees,
        oob_indices,
    })
}

/// Fits one survival tree on all rows of the cohort (no bootstrap).
/// `mtry` defaults to all features here, so the split search is exhaustive.
pub fn fit_survival_tree(cohort: &Cohort, params: &ForestParams) -> Result<SurvivalTree> {
    let data = TrainData::from_cohort(cohort)?;
    let mtry = params.mtry.unwrap_or(data.p);
    validate_params(&data, params, mtry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let rows: Vec<u32> = (0..data.n as u32).collect();
    Ok(grow_tree(&data, rows, mtry, params.max_depth, params.min_leaf, &mut rng))
}

fn bootstrap_rows(n: usize, cumulative: Option<&[f64]>, rng: &mut ChaCha8Rng) -> Vec<u32> {
    (0..n)
        .map(|_| match cumulative {
            None => (rng.random::<u64>() % n as u64) as u32,
            Some(cum) => {
                let total = *cum.last().expect("nonempty weights");
                let u = rng.random::<f64>() * total;
                cum.partition_point(|&c| c <= u).min(n - 1) as u32
            }
        })
        .collect()
}

fn grow_tree(
    data: &TrainData,
    rows: Vec<u32>,
    mtry: usize,
    max_depth: Option<usize>,
    min_leaf: usize,
    rng: &mut ChaCha8Rng,
) -> SurvivalTree {
    let mut nodes = Vec::new();
    build_node(data, rows, 0, mtry, max_depth, min_leaf, rng, &mut nodes);
    SurvivalTree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn build_node(
    data: &TrainData,
    rows: Vec<u32>,
    depth: usize,
    mtry: usize,
    max_depth: Option<usize>,
    min_leaf: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<SurvivalNode>,
) -> usize {
    let leaf = |rows: &[u32]| SurvivalNode::Leaf {
        n_samples: rows.len(),
        curve: nelson_aalen(
            &rows
                .iter()
                .map(|&r| (data.times[r as usize], data.events[r as usize]))
                .collect::<Vec<_>>(),
        ),
    };

    let depth_reached = max_depth.is_some_and(|d| depth >= d);
    if depth_reached || rows.len() < 2 * min_leaf {
        let idx = nodes.len();
        nodes.push(leaf(&rows));
        return idx;
    }

    let features = sample_features(data.p, mtry, rng);
    let best = best_split(data, &rows, &features, min_leaf);
    let Some((_, feature, threshold)) = best else {
        let idx = nodes.len();
        nodes.push(leaf(&rows));
        return idx;
    };

    let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
        .iter()
        .partition(|&&r| data.value(r as usize, feature) <= threshold);

    let idx = nodes.len();
    nodes.push(leaf(&rows)); // placeholder until children exist
    let left = build_node(data, left_rows, depth + 1, mtry, max_depth, min_leaf, rng, nodes);
    let right = build_node(data, right_rows, depth + 1, mtry, max_depth, min_leaf, rng, nodes);
    nodes[idx] = SurvivalNode::Split { feature, threshold, left, right };
    idx
}

/// `mtry` distinct feature indices, ascending (partial Fisher–Yates).
fn sample_features(p: usize, mtry: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..p).collect();
    for i in 0..mtry {
        let j = i + (rng.random::<u64>() % (p - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut chosen = pool[..mtry].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Best (statistic, feature, threshold) over all candidate splits of the
/// given features; `None` when no split has positive log-rank variance or
/// respects `min_leaf`. Iteration order (features ascending, thresholds
/// ascending, strictly-greater updates) fixes tie-breaks.
fn best_split(
    data: &TrainData,
    rows: &[u32],
    features: &[usize],
    min_leaf: usize,
) -> Option<(f64, usize, f64)> {
    // distinct event times among the node rows, with totals
    let mut event_times: Vec<f64> = rows
        .iter()
        .filter(|&&r| data.events[r as usize])
        .map(|&r| data.times[r as usize])
        .collect();
    event_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    event_times.dedup();
    let m = event_times.len();
    if m == 0 {
        return None;
    }

    // for each node slot: how many event times its survival time covers,
    // and which event time it contributes a death to
    let cover: Vec<usize> = rows
        .iter()
        .map(|&r| event_times.partition_point(|&t| t <= data.times[r as usize]))
        .collect();
    let death_at: Vec<Option<usize>> = rows
        .iter()
        .map(|&r| {
            if data.events[r as usize] {
                let t = data.times[r as usize];
                let j = event_times.partition_point(|&x| x < t);
                Some(j)
            } else {
                None
            }
        })
        .collect();

    let mut d_total = vec![0u32; m];
    let mut cover_hist_total = vec![0u32; m + 1];
    for slot in 0..rows.len() {
        cover_hist_total[cover[slot]] += 1;
        if let Some(j) = death_at[slot] {
            d_total[j] += 1;
        }
    }
    // n_total[j] = rows with time ≥ event_times[j]
    let mut n_total = vec![0u32; m];
    let mut suffix = 0u32;
    for j in (0..m).rev() {
        suffix += cover_hist_total[j + 1];
        n_total[j] = suffix;
    }

    let mut best: Option<(f64, usize, f64)> = None;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut hist = vec![0u32; m + 1];
    let mut d_left = vec![0u32; m];
    let mut n_left = vec![0u32; m];

    for &feature in features {
        order.sort_by(|&a, &b| {
            data.value(rows[a] as usize, feature)
                .partial_cmp(&data.value(rows[b] as usize, feature))
                .expect("NaN feature value")
        });
        hist.iter_mut().for_each(|x| *x = 0);
        d_left.iter_mut().for_each(|x| *x = 0);

        for i in 0..order.len() {
            let slot = order[i];
            hist[cover[slot]] += 1;
            if let Some(j) = death_at[slot] {
                d_left[j] += 1;
            }
            if i + 1 >= order.len() {
                break;
            }
            let v = data.value(rows[slot] as usize, feature);
            let v_next = data.value(rows[order[i + 1]] as usize, feature);
            if v_next <= v {
                continue; // not a block boundary
            }
            let left_count = i + 1;
            let right_count = order.len() - left_count;
            if left_count < min_leaf || right_count < min_leaf {
                continue;
            }
            // n_left[j] from the cover histogram suffix
            let mut acc = 0u32;
            for j in (0..m).rev() {
                acc += hist[j + 1];
                n_left[j] = acc;
            }
            let mut observed = 0.0;
            let mut expected = 0.0;
            let mut variance = 0.0;
            for j in 0..m {
                let d = d_total[j] as f64;
                let n = n_total[j] as f64;
                if n <= 1.0 {
                    continue;
                }
                let nl = n_left[j] as f64;
                observed += d_left[j] as f64;
                expected += d * nl / n;
                variance += d * (nl / n) * (1.0 - nl / n) * (n - d) / (n - 1.0);
            }
            if variance <= 0.0 {
                continue;
            }
            let diff = observed - expected;
            let stat = diff * diff / variance;
            if !stat.is_finite() {
                continue;
            }
            let threshold = 0.5 * (v + v_next);
            if best.map_or(true, |(s, _, _)| stat > s) {
                best = Some((stat, feature, threshold));
            }
        }
    }
    best
}

impl SurvivalForest {
    /// Mean cumulative hazard at `horizon_days` across trees.
    pub fn mean_hazard(&self, x: &[f64], horizon_days: f64) -> f64 {
        let total: f64 = self
            .trees
            .iter()
            .map(|t| t.leaf_for(x).cumulative_at(horizon_days))
            .sum();
        total / self.trees.len() as f64
    }

    /// Predicted mortality risk by `horizon_days`: `1 − exp(−H̄)`.
    pub fn predict_risk(&self, x: &[f64], horizon_days: f64) -> f64 {
        1.0 - (-self.mean_hazard(x, horizon_days)).exp()
    }

    /// Risk for every row of a cohort (parallel over patients).
    pub fn predict_cohort(&self, cohort: &Cohort, horizon_days: f64) -> Result<Vec<f64>> {
        self.check_schema(cohort)?;
        let dense = cohort.dense_features()?;
        let p = cohort.p();
        Ok((0..cohort.n())
            .into_par_iter()
            .map(|i| self.predict_risk(&dense[i * p..(i + 1) * p], horizon_days))
            .collect())
    }

    /// Out-of-bag risk predictions (each patient scored only by trees whose
    /// bootstrap excluded it).
    pub fn oob_risks(&self, cohort: &Cohort, horizon_days: f64) -> Result<Vec<f64>> {
        self.check_schema(cohort)?;
        let dense = cohort.dense_features()?;
        let p = cohort.p();
        let n = cohort.n();
        let mut sums = vec![0.0; n];
        let mut counts = vec![0u32; n];
        for (tree, oob) in self.trees.iter().zip(&self.oob_indices) {
            for &i in oob {
                let i = i as usize;
                if i >= n {
                    return Err(Error::InconsistentDimensions(
                        "forest out-of-bag indices exceed cohort size".into(),
                    ));
                }
                sums[i] += tree.leaf_for(&dense[i * p..(i + 1) * p]).cumulative_at(horizon_days);
                counts[i] += 1;
            }
        }
        sums.iter()
            .zip(&counts)
            .enumerate()
            .map(|(i, (&s, &c))| {
                if c == 0 {
                    Err(Error::NeverOutOfBag(i))
                } else {
                    Ok(1.0 - (-s / c as f64).exp())
                }
            })
            .collect()
    }

    fn check_schema(&self, cohort: &Cohort) -> Result<()> {
        if cohort.schema().feature_names() != self.feature_names {
            return Err(Error::SchemaMismatch(
                "cohort features differ from the forest's training features".into(),
            ));
        }
        Ok(())
    }

    /// Short content hash identifying this model.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("forest serializes");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..8])
    }

    pub fn to_json_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let forest: SurvivalForest = serde_json::from_str(&text)?;
        if forest.format != FOREST_FORMAT {
            return Err(Error::UnsupportedFormat(forest.format));
        }
        Ok(forest)
    }
}

/// Harrell's concordance index.
///
/// Pair (i, j) is comparable when `time_i < time_j` and patient i's event
/// was observed; concordant when `risk_i > risk_j`, ties scoring 0.5.
pub fn harrell_c(times: &[f64], events: &[bool], risks: &[f64]) -> Result<f64> {
    if times.len() != events.len() || times.len() != risks.len() {
        return Err(Error::InconsistentDimensions(
            "times/events/risks lengths differ".into(),
        ));
    }
    let mut concordant = 0.0;
    let mut total = 0u64;
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        for j in 0..times.len() {
            if i == j || times[i] >= times[j] {
                continue;
            }
            total += 1;
            if risks[i] > risks[j] {
                concordant += 1.0;
            } else if risks[i] == risks[j] {
                concordant += 0.5;
            }
        }
    }
    if total == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(concordant / total as f64)
}

/// Out-of-bag Harrell's C at a horizon; the forest's overfitting guard.
pub fn oob_concordance(
    forest: &SurvivalForest,
    cohort: &Cohort,
    horizon_days: f64,
) -> Result<f64> {
    let risks = forest.oob_risks(cohort, horizon_days)?;
    let times: Vec<f64> = cohort.outcomes().iter().map(|o| o.time_days).collect();
    let events: Vec<bool> = cohort.outcomes().iter().map(|o| o.event).collect();
    harrell_c(&times, &events, &risks)
}
