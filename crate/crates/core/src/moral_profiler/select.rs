//! Foundation-specific greedy forward selection of cultural variables,
//! repeated over random train/validation splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Foundation, MoralVector, OracleMatrix};
use crate::cultural_space::{ConfigId, CulturalConfiguration};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub runs: usize,
    pub train_fraction: f64,
    /// Minimum validation R² gain for a variable to be accepted.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            runs: 50,
            train_fraction: 0.8,
            epsilon: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("invalid selection parameters: {0}")]
    Params(String),
    #[error("need at least 4 personas, got {0}")]
    TooFewPersonas(usize),
    #[error("no configuration for persona {0}")]
    MissingConfig(ConfigId),
    #[error("configuration arity does not match the oracle matrix")]
    Arity,
    #[error("all {0} runs aborted")]
    AllRunsAborted(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRun {
    pub run: usize,
    /// In order of acceptance.
    pub selected: Vec<String>,
    /// Validation R² of the intercept-only model the search starts from.
    pub baseline_r2: f64,
    /// Validation R² after each accepted variable.
    pub r2_path: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedRun {
    pub run: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSetResult {
    pub foundation: Foundation,
    pub runs: Vec<SelectionRun>,
    pub aborted: Vec<AbortedRun>,
    /// Variables selected in every completed run, in schema order.
    pub core_set: Vec<String>,
    pub mean_jaccard: f64,
    /// Selected-set size -> number of runs.
    pub k_distribution: BTreeMap<usize, usize>,
    /// Fraction of completed runs selecting each variable, highest first.
    pub support: Vec<(String, f64)>,
}

/// Least-squares slope and intercept of `y` on `x`. A constant `x` gets
/// slope 0, i.e. the mean of `y`.
pub fn fit_ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let scale = x.iter().map(|a| a * a).sum::<f64>().max(1.0);
    if sxx <= 1e-12 * scale {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// 1 - SS_res / SS_tot, or `None` when `y` is constant.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Option<f64> {
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
    let scale = y.iter().map(|a| a * a).sum::<f64>();
    if ss_tot <= f64::EPSILON * scale || ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

/// Two empty sets count as identical.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        1.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

struct Data<'a> {
    /// `cols[v][p]`: matrix entry of persona `p`'s level of variable `v`.
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
    names: &'a [String],
}

fn split(n: usize, run: usize, params: &SelectionParams) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(run as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_train = ((n as f64 * params.train_fraction).round() as usize).clamp(2, n - 2);
    let val = idx.split_off(n_train);
    (idx, val)
}

fn evaluate(pred: &[f64], y: &[f64], train: &[usize], val: &[usize]) -> f64 {
    let xt: Vec<f64> = train.iter().map(|&i| pred[i]).collect();
    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let (b, a) = fit_ols(&xt, &yt);
    let yv: Vec<f64> = val.iter().map(|&i| y[i]).collect();
    let fv: Vec<f64> = val.iter().map(|&i| a + b * pred[i]).collect();
    r_squared(&yv, &fv).expect("validation variance checked before the search")
}

fn run_once(data: &Data, run: usize, params: &SelectionParams) -> Result<SelectionRun, AbortedRun> {
    let n = data.y.len();
    let (train, val) = split(n, run, params);
    let yv: Vec<f64> = val.iter().map(|&i| data.y[i]).collect();
    let mean_train = train.iter().map(|&i| data.y[i]).sum::<f64>() / train.len() as f64;
    let baseline = r_squared(&yv, &vec![mean_train; yv.len()]).ok_or_else(|| AbortedRun {
        run,
        reason: "validation scores are constant; R² undefined".into(),
    })?;

    let p = data.cols.len();
    let mut chosen: Vec<usize> = Vec::new();
    let mut sums = vec![0.0; n];
    let mut current = baseline;
    let mut path = Vec::new();
    let mut pred = vec![0.0; n];
    loop {
        let k = (chosen.len() + 1) as f64;
        let mut best: Option<(usize, f64)> = None;
        for v in (0..p).filter(|v| !chosen.contains(v)) {
            for (q, out) in pred.iter_mut().enumerate() {
                *out = (sums[q] + data.cols[v][q]) / k;
            }
            let r2 = evaluate(&pred, &data.y, &train, &val);
            if best.is_none_or(|(_, b)| r2 > b) {
                best = Some((v, r2));
            }
        }
        match best {
            Some((v, r2)) if r2 - current > params.epsilon => {
                chosen.push(v);
                for (s, c) in sums.iter_mut().zip(&data.cols[v]) {
                    *s += c;
                }
                current = r2;
                path.push(r2);
            }
            _ => break,
        }
    }
    log::debug!("selection run {run}: {:?} r2 {current:.4}", chosen);
    Ok(SelectionRun {
        run,
        selected: chosen.iter().map(|&v| data.names[v].clone()).collect(),
        baseline_r2: baseline,
        r2_path: path,
    })
}

/// Repeats the greedy search `params.runs` times, each on a fresh split
/// seeded by `(params.seed, run)`, and reduces the selected sets.
pub fn greedy_core_set_selection(
    foundation: Foundation,
    mfq: &[MoralVector],
    configs: &[CulturalConfiguration],
    matrix: &OracleMatrix,
    params: &SelectionParams,
) -> Result<CoreSetResult, SelectionError> {
    if params.runs == 0 {
        return Err(SelectionError::Params("runs must be positive".into()));
    }
    if !(params.train_fraction > 0.0 && params.train_fraction < 1.0) {
        return Err(SelectionError::Params(format!(
            "train fraction {} outside (0, 1)",
            params.train_fraction
        )));
    }
    if !(params.epsilon.is_finite() && params.epsilon >= 0.0) {
        return Err(SelectionError::Params(format!("epsilon {} invalid", params.epsilon)));
    }
    if mfq.len() < 4 {
        return Err(SelectionError::TooFewPersonas(mfq.len()));
    }
    let by_id: HashMap<ConfigId, &CulturalConfiguration> = configs.iter().map(|c| (c.id(), c)).collect();
    let p = matrix.variables().len();
    let mut cols = vec![Vec::with_capacity(mfq.len()); p];
    for m in mfq {
        let c = by_id
            .get(&m.config_id)
            .ok_or(SelectionError::MissingConfig(m.config_id))?;
        if c.level_indices().len() != p {
            return Err(SelectionError::Arity);
        }
        for (v, col) in cols.iter_mut().enumerate() {
            col.push(matrix.entry(v, c.level_of(v), foundation) as f64);
        }
    }
    let data = Data {
        cols,
        y: mfq.iter().map(|m| m.get(foundation)).collect(),
        names: matrix.variables(),
    };

    let outcomes: Vec<Result<SelectionRun, AbortedRun>> = (0..params.runs)
        .into_par_iter()
        .map(|r| run_once(&data, r, params))
        .collect();
    let mut runs = Vec::new();
    let mut aborted = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => runs.push(r),
            Err(a) => {
                log::warn!("{foundation} selection run {} aborted: {}", a.run, a.reason);
                aborted.push(a);
            }
        }
    }
    if runs.is_empty() {
        return Err(SelectionError::AllRunsAborted(params.runs));
    }

    let sets: Vec<BTreeSet<&str>> = runs
        .iter()
        .map(|r| r.selected.iter().map(String::as_str).collect())
        .collect();
    let core_set: Vec<String> = data
        .names
        .iter()
        .filter(|n| sets.iter().all(|s| s.contains(n.as_str())))
        .cloned()
        .collect();
    let mut pairs = 0usize;
    let mut total = 0.0;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            pairs += 1;
            total += jaccard(&sets[i], &sets[j]);
        }
    }
    let mean_jaccard = if pairs == 0 { 1.0 } else { total / pairs as f64 };
    let mut k_distribution = BTreeMap::new();
    for s in &sets {
        *k_distribution.entry(s.len()).or_insert(0) += 1;
    }
    let mut support: Vec<(usize, String, f64)> = data
        .names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let c = sets.iter().filter(|s| s.contains(n.as_str())).count();
            (i, n.clone(), c as f64 / sets.len() as f64)
        })
        .filter(|t| t.2 > 0.0)
        .collect();
    support.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));

    Ok(CoreSetResult {
        foundation,
        runs,
        aborted,
        core_set,
        mean_jaccard,
        k_distribution,
        support: support.into_iter().map(|(_, n, s)| (n, s)).collect(),
    })
}
