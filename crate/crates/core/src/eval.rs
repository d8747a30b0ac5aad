//! Downstream evaluation of node embeddings: single-linkage clustering with
//! homogeneity, completeness and silhouette, a softmax logistic-regression
//! probe over repeated random splits, and a two-component PCA projection.

use std::collections::HashMap;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState, ParamStore};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

pub const N_SPLITS: usize = 10;
pub const PROBE_LR: f64 = 0.01;
pub const PROBE_STEPS: usize = 1000;
pub const PROBE_L2: f64 = 1e-4;
/// Extra attempts with a shifted seed when a split misses a class.
pub const MAX_SPLIT_RETRIES: u64 = 5;

/// Pairwise Euclidean distances between the rows of `h`.
pub fn pairwise_distances(h: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = h.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let dist = h
                .row(i)
                .iter()
                .zip(h.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    d
}

/// Relabels arbitrary ids to `0..k` in order of first appearance.
pub fn relabel_contiguous(labels: &[usize]) -> Vec<usize> {
    let mut ids = HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect()
}

/// Agglomerative clustering under Euclidean distance with the single-linkage
/// rule, stopped at `k` clusters. Among equally close pairs the one with the
/// smallest `(i, j)` representative indices merges first. Labels are
/// contiguous and numbered by first occurrence.
pub fn single_linkage_cluster(h: ArrayView2<'_, f64>, k: usize) -> Result<Vec<usize>> {
    let n = h.nrows();
    if k == 0 || k > n {
        return Err(Error::contract(format!("cluster count {k} outside 1..={n}")));
    }
    // Cluster `r` is represented by its smallest member; `dist` rows of
    // merged-away clusters are ignored via `active`.
    let mut dist = pairwise_distances(h);
    let mut active = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    for _ in 0..n - k {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                if best.is_none_or(|(d, _, _)| dist[[i, j]] < d) {
                    best = Some((dist[[i, j]], i, j));
                }
            }
        }
        let (_, i, j) = best.expect("at least two active clusters");
        active[j] = false;
        for m in 0..n {
            let merged = dist[[i, m]].min(dist[[j, m]]);
            dist[[i, m]] = merged;
            dist[[m, i]] = merged;
        }
        for o in owner.iter_mut().filter(|o| **o == j) {
            *o = i;
        }
    }
    Ok(relabel_contiguous(&owner))
}

/// Sum in ascending order so that equal multisets of terms give bit-equal sums.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

fn entropy(counts: impl Iterator<Item = usize>, total: f64) -> f64 {
    sorted_sum(
        counts
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .collect(),
    )
}

/// `(h, c)` with `h = 1 − H(C|K)/H(C)` and `c = 1 − H(K|C)/H(K)`, natural
/// logarithms, each defined as 1 when its denominator entropy vanishes.
pub fn homogeneity_completeness(truth: &[usize], pred: &[usize]) -> Result<(f64, f64)> {
    if truth.len() != pred.len() {
        return Err(Error::contract(format!(
            "label lengths differ: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::contract("labels are empty"));
    }
    let total = truth.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut by_class: HashMap<usize, usize> = HashMap::new();
    let mut by_cluster: HashMap<usize, usize> = HashMap::new();
    for (&c, &k) in truth.iter().zip(pred) {
        *joint.entry((c, k)).or_default() += 1;
        *by_class.entry(c).or_default() += 1;
        *by_cluster.entry(k).or_default() += 1;
    }
    let h_c = entropy(by_class.values().copied(), total);
    let h_k = entropy(by_cluster.values().copied(), total);
    let conditional = |given: &HashMap<usize, usize>, pick: fn(&(usize, usize)) -> usize| {
        sorted_sum(
            joint
                .iter()
                .map(|(key, &n)| -(n as f64 / total) * (n as f64 / given[&pick(key)] as f64).ln())
                .collect(),
        )
    };
    let h_c_given_k = conditional(&by_cluster, |&(_, k)| k);
    let h_k_given_c = conditional(&by_class, |&(c, _)| c);
    let homogeneity = if h_c == 0.0 { 1.0 } else { 1.0 - h_c_given_k / h_c };
    let completeness = if h_k == 0.0 { 1.0 } else { 1.0 - h_k_given_c / h_k };
    Ok((homogeneity.clamp(0.0, 1.0), completeness.clamp(0.0, 1.0)))
}

/// Mean silhouette `(b − a) / max(a, b)` over points; members of singleton
/// clusters contribute 0.
pub fn silhouette(h: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let n = h.nrows();
    if labels.len() != n {
        return Err(Error::contract(format!("{} labels for {n} points", labels.len())));
    }
    let labels = relabel_contiguous(labels);
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    if n_clusters < 2 {
        return Err(Error::contract("silhouette needs at least two clusters"));
    }
    let mut sizes = vec![0usize; n_clusters];
    for &l in &labels {
        sizes[l] += 1;
    }
    let dist = pairwise_distances(h);
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; n_clusters];
        for j in 0..n {
            sums[labels[j]] += dist[[i, j]];
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_clusters)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterResult {
    pub labels: Vec<usize>,
    pub n_clusters: usize,
    pub homogeneity: f64,
    pub completeness: f64,
    pub silhouette: f64,
}

/// Clusters `h` into as many groups as `truth` has classes and scores the
/// result against `truth`.
pub fn evaluate_clustering(h: ArrayView2<'_, f64>, truth: &[usize]) -> Result<ClusterResult> {
    if truth.len() != h.nrows() {
        return Err(Error::contract(format!("{} labels for {} nodes", truth.len(), h.nrows())));
    }
    let k = relabel_contiguous(truth).into_iter().max().map_or(0, |m| m + 1);
    let labels = single_linkage_cluster(h, k)?;
    let (homogeneity, completeness) = homogeneity_completeness(truth, &labels)?;
    let silhouette = silhouette(h, &labels)?;
    Ok(ClusterResult {
        labels,
        n_clusters: k,
        homogeneity,
        completeness,
        silhouette,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub splits: Vec<Split>,
}

/// Repetition `r` of the splits drawn from `seed`: a shuffle of `0..n` cut
/// so that validation and test take `⌊n/5⌋` nodes each and training keeps
/// the remainder.
pub fn split_once(n: usize, seed: u64, r: u64) -> Result<Split> {
    if n < 5 {
        return Err(Error::contract(format!("splitting needs at least 5 nodes, got {n}")));
    }
    let n_held = n / 5;
    let n_train = n - 2 * n_held;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed, Stream::Splits, r));
    Ok(Split {
        train: perm[..n_train].to_vec(),
        val: perm[n_train..n_train + n_held].to_vec(),
        test: perm[n_train + n_held..].to_vec(),
    })
}

/// Ten independent 60/20/20 repetitions of [`split_once`].
pub fn random_splits(n: usize, seed: u64) -> Result<SplitSpec> {
    let splits = (0..N_SPLITS as u64)
        .map(|r| split_once(n, seed, r))
        .collect::<Result<_>>()?;
    Ok(SplitSpec { seed, splits })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub per_split: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `per_split`.
    pub std: f64,
}

impl ProbeResult {
    pub fn from_accuracies(per_split: Vec<f64>) -> ProbeResult {
        let n = per_split.len().max(1) as f64;
        let mean = per_split.iter().sum::<f64>() / n;
        let std = (per_split.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
        ProbeResult { per_split, mean, std }
    }
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn accuracy(logits: &Array2<f64>, y: &[usize], rows: &[usize]) -> f64 {
    let correct = rows
        .iter()
        .filter(|&&r| {
            let row = logits.row(r);
            let arg = (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best });
            arg == y[r]
        })
        .count();
    correct as f64 / rows.len() as f64
}

/// Trains one softmax regression on `split.train` and returns the test
/// accuracy of the iterate with the best validation accuracy (earliest on ties).
pub fn probe_split(h: ArrayView2<'_, f64>, y: &[usize], split: &Split) -> Result<f64> {
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let present: std::collections::BTreeSet<usize> = y.iter().copied().collect();
    let train_classes: std::collections::BTreeSet<usize> = split.train.iter().map(|&i| y[i]).collect();
    if train_classes.len() < 2 {
        return Err(Error::DegenerateSplit("training split covers fewer than two classes".into()));
    }
    if let Some(missing) = present.difference(&train_classes).next() {
        return Err(Error::DegenerateSplit(format!("class {missing} is absent from the training split")));
    }
    if split.val.is_empty() || split.test.is_empty() {
        return Err(Error::contract("validation and test splits must be nonempty"));
    }

    let d = h.ncols();
    let x_train = h.select(Axis(0), &split.train);
    let n_train = split.train.len() as f64;
    let mut targets = Array2::<f64>::zeros((split.train.len(), n_classes));
    for (r, &i) in split.train.iter().enumerate() {
        targets[[r, y[i]]] = 1.0;
    }

    let mut store = ParamStore::new();
    let w = store.add("w", Array2::zeros((d, n_classes)));
    let b = store.add("b", Array2::zeros((1, n_classes)));
    let mut adam = AdamState::new(&store, PROBE_LR);
    let mut best: Option<(f64, f64)> = None;

    for _ in 0..PROBE_STEPS {
        let mut probs = x_train.dot(store.value(w)) + store.value(b);
        softmax_rows(&mut probs);
        let delta = (probs - &targets) / n_train;
        let grad_w = x_train.t().dot(&delta) + PROBE_L2 * store.value(w);
        let grad_b = delta.sum_axis(Axis(0)).insert_axis(Axis(0));
        store.zero_grad();
        *store.grad_mut(w) += &grad_w;
        *store.grad_mut(b) += &grad_b;
        adam_step(&mut store, &mut adam)?;

        let logits = h.dot(store.value(w)) + store.value(b);
        let val = accuracy(&logits, y, &split.val);
        if best.is_none_or(|(v, _)| val > v) {
            best = Some((val, accuracy(&logits, y, &split.test)));
        }
    }
    Ok(best.map_or(0.0, |(_, test)| test))
}

/// Runs [`probe_split`] on every repetition of `splits`.
pub fn logistic_probe(h: ArrayView2<'_, f64>, y: &[usize], splits: &SplitSpec) -> Result<ProbeResult> {
    if y.len() != h.nrows() {
        return Err(Error::contract(format!("{} labels for {} nodes", y.len(), h.nrows())));
    }
    let accs = splits
        .splits
        .iter()
        .map(|s| probe_split(h, y, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeResult::from_accuracies(accs))
}

/// Whether the training set of `split` holds every class present in `y`.
fn covers_all_classes(y: &[usize], split: &Split) -> bool {
    let present: std::collections::BTreeSet<usize> = y.iter().copied().collect();
    let train: std::collections::BTreeSet<usize> = split.train.iter().map(|&i| y[i]).collect();
    present == train
}

/// [`logistic_probe`] on the repetitions of [`random_splits`] of `seed`. A
/// repetition whose training set misses a class is redrawn with seeds
/// `seed + 1, seed + 2, …` (at most [`MAX_SPLIT_RETRIES`] times). Returns the
/// seed each repetition was finally drawn from.
pub fn probe_with_resampling(h: ArrayView2<'_, f64>, y: &[usize], seed: u64) -> Result<(ProbeResult, Vec<u64>)> {
    if y.len() != h.nrows() {
        return Err(Error::contract(format!("{} labels for {} nodes", y.len(), h.nrows())));
    }
    let mut splits = Vec::with_capacity(N_SPLITS);
    let mut seeds = Vec::with_capacity(N_SPLITS);
    for r in 0..N_SPLITS as u64 {
        let mut chosen = None;
        for attempt in 0..=MAX_SPLIT_RETRIES {
            let s = seed.wrapping_add(attempt);
            let split = split_once(h.nrows(), s, r)?;
            if covers_all_classes(y, &split) {
                chosen = Some((split, s));
                break;
            }
            log::warn!("repetition {r} of split seed {s} misses a class; redrawing");
        }
        let (split, s) = chosen.ok_or_else(|| {
            Error::DegenerateSplit(format!(
                "repetition {r} misses a class after {MAX_SPLIT_RETRIES} redraws"
            ))
        })?;
        splits.push(split);
        seeds.push(s);
    }
    let result = logistic_probe(h, y, &SplitSpec { seed, splits })?;
    Ok((result, seeds))
}

/// Projection of the centred rows of `h` onto its two leading right singular
/// vectors. Each direction is signed so that its largest-magnitude loading is
/// positive; a missing second direction yields a zero column.
pub fn pca2(h: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (n, d) = h.dim();
    if n < 2 {
        return Err(Error::contract(format!("PCA needs at least two rows, got {n}")));
    }
    let mean: Array1<f64> = h.mean_axis(Axis(0)).expect("nonempty");
    let centred = &h - &mean;
    let mut out = Array2::zeros((n, 2));
    if d == 0 {
        return Ok(out);
    }
    let m = DMatrix::from_row_iterator(n, d, centred.iter().copied());
    let svd = m.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::numeric("SVD did not return right singular vectors"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));

    for (component, &idx) in order.iter().take(2.min(d)).enumerate() {
        let mut direction: Vec<f64> = v_t.row(idx).iter().copied().collect();
        let pivot = (0..d).fold(0, |best, i| {
            if direction[i].abs() > direction[best].abs() {
                i
            } else {
                best
            }
        });
        if direction[pivot] < 0.0 {
            direction.iter_mut().for_each(|v| *v = -*v);
        }
        let direction = Array1::from(direction);
        out.column_mut(component).assign(&centred.dot(&direction));
    }
    Ok(out)
}
