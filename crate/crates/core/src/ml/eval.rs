//! Class balancing, stratified k-fold, leave-one-subject-out evaluation with
//! per-fold feature ranking, scrambled-label baselines, the feature-count
//! sweep, and ROC/confusion reporting.
//!
//! Class convention: the two condition labels are sorted; the first maps to
//! -1 and the second to +1 (the "positive" class). A decision value of
//! exactly 0 predicts the positive class.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::seeds;
use crate::stats::{kruskal_wallis, rank_features, TestResult};

use super::svm::{predict, train_ksvm, SvmConfig, TrainedClassifier};

/// The two class labels of a comparison, sorted ascending.
pub fn class_pair(fm: &FeatureMatrix) -> Result<[String; 2]> {
    let mut classes = fm.conditions();
    if classes.len() != 2 {
        return Err(Error::data(format!(
            "expected exactly 2 classes, found {classes:?}"
        )));
    }
    classes.sort();
    Ok([classes.remove(0), classes.remove(0)])
}

fn signed_labels(fm: &FeatureMatrix, classes: &[String; 2]) -> Vec<i8> {
    fm.rows
        .iter()
        .map(|r| if r.condition == classes[1] { 1 } else { -1 })
        .collect()
}

fn median_of(sorted_ok: &[f64]) -> f64 {
    let mut v = sorted_ok.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }
}

// ---------------------------------------------------------------------------
// Class balancing
// ---------------------------------------------------------------------------

/// Uniformly sample `n_per_class` rows without replacement from every
/// (subject, task, condition) cell. A short cell is an error unless
/// `with_replacement` is set, in which case it is sampled with replacement.
pub fn balance_classes(
    fm: &FeatureMatrix,
    n_per_class: usize,
    seed: u64,
    with_replacement: bool,
) -> Result<FeatureMatrix> {
    if n_per_class == 0 {
        return Err(Error::config("n_per_class must be >= 1".to_string()));
    }
    let mut cells: BTreeMap<(String, String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in fm.rows.iter().enumerate() {
        cells
            .entry((r.subject.clone(), r.task.clone(), r.condition.clone()))
            .or_default()
            .push(i);
    }
    let mut keep = Vec::with_capacity(cells.len() * n_per_class);
    for (cell_idx, ((subject, task, condition), rows)) in cells.iter().enumerate() {
        let mut rng = seeds::rng(seed, &[seeds::STREAM_BALANCE, cell_idx as u64]);
        if rows.len() >= n_per_class {
            let mut picked = rand::seq::index::sample(&mut rng, rows.len(), n_per_class)
                .into_iter()
                .map(|k| rows[k])
                .collect::<Vec<_>>();
            picked.sort_unstable();
            keep.extend(picked);
        } else if with_replacement {
            let mut picked: Vec<usize> = (0..n_per_class)
                .map(|_| rows[rand::Rng::random_range(&mut rng, 0..rows.len())])
                .collect();
            picked.sort_unstable();
            keep.extend(picked);
        } else {
            return Err(Error::data(format!(
                "cell (subject={subject}, task={task}, condition={condition}) has {} rows, \
                 need {n_per_class}; enable sampling with replacement to override",
                rows.len()
            )));
        }
    }
    Ok(fm.select_rows(&keep))
}

// ---------------------------------------------------------------------------
// k-fold cross-validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KfoldReport {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Stratified k-fold cross-validation, deterministic under `seed`.
pub fn kfold_cv(
    x: ArrayView2<f64>,
    y: &[i8],
    k: usize,
    cfg: &SvmConfig,
    seed: u64,
) -> Result<KfoldReport> {
    let n = x.nrows();
    if k < 2 {
        return Err(Error::config("k must be >= 2".to_string()));
    }
    if n < k {
        return Err(Error::data(format!("{n} samples cannot fill {k} folds")));
    }
    let mut fold_of = vec![0usize; n];
    for (class_idx, class) in [-1i8, 1].iter().enumerate() {
        let mut idx: Vec<usize> = (0..n).filter(|&i| y[i] == *class).collect();
        if idx.len() < k {
            return Err(Error::data(format!(
                "class {class} has {} samples, too few to stratify into {k} folds",
                idx.len()
            )));
        }
        let mut rng = seeds::rng(seed, &[seeds::STREAM_FOLDS, class_idx as u64]);
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }
    let mut fold_accuracies = Vec::with_capacity(k);
    for fold in 0..k {
        let train_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let test_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        let xt = select_matrix(x, &train_idx);
        let yt: Vec<i8> = train_idx.iter().map(|&i| y[i]).collect();
        let model = train_ksvm(xt.view(), &yt, cfg)?;
        let xe = select_matrix(x, &test_idx);
        let (pred, _) = predict(&model, xe.view())?;
        let correct = test_idx
            .iter()
            .zip(&pred)
            .filter(|(&i, &p)| y[i] == p)
            .count();
        fold_accuracies.push(correct as f64 / test_idx.len() as f64);
    }
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / k as f64;
    Ok(KfoldReport { fold_accuracies, mean_accuracy })
}

fn select_matrix(x: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), x.ncols()), |(i, j)| x[[rows[i], j]])
}

// ---------------------------------------------------------------------------
// ROC and confusion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Rows are the true class (index 0 = negative, 1 = positive), columns the
/// predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 2]; 2],
    pub percent: [[f64; 2]; 2],
}

/// ROC by threshold sweep over the distinct decision values, AUC by
/// trapezoid, and the confusion matrix at threshold 0.
pub fn roc_and_confusion(
    decisions: &[f64],
    truth: &[i8],
) -> Result<(Vec<RocPoint>, f64, ConfusionMatrix)> {
    if decisions.len() != truth.len() || decisions.is_empty() {
        return Err(Error::data("decision/truth length mismatch".to_string()));
    }
    let n_pos = truth.iter().filter(|&&t| t == 1).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::data("ROC needs both classes in the truth labels".to_string()));
    }
    let mut order: Vec<usize> = (0..decisions.len()).collect();
    order.sort_by(|&a, &b| decisions[b].partial_cmp(&decisions[a]).unwrap());

    let mut roc = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut auc = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_fpr, mut prev_tpr) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < order.len() {
        let d = decisions[order[i]];
        while i < order.len() && decisions[order[i]] == d {
            if truth[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let fpr = fp as f64 / n_neg as f64;
        let tpr = tp as f64 / n_pos as f64;
        auc += 0.5 * (fpr - prev_fpr) * (tpr + prev_tpr);
        roc.push(RocPoint { fpr, tpr });
        prev_fpr = fpr;
        prev_tpr = tpr;
    }

    let mut counts = [[0usize; 2]; 2];
    for (d, t) in decisions.iter().zip(truth) {
        let row = if *t == 1 { 1 } else { 0 };
        let col = if *d >= 0.0 { 1 } else { 0 };
        counts[row][col] += 1;
    }
    let mut percent = [[0.0f64; 2]; 2];
    for row in 0..2 {
        let total: usize = counts[row].iter().sum();
        for col in 0..2 {
            percent[row][col] = 100.0 * counts[row][col] as f64 / total as f64;
        }
    }
    Ok((roc, auc, ConfusionMatrix { counts, percent }))
}

// ---------------------------------------------------------------------------
// Leave-one-subject-out
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LosoIteration {
    pub held_out_subject: String,
    pub accuracy: f64,
    pub auc: f64,
    pub confusion: ConfusionMatrix,
    pub roc: Vec<RocPoint>,
    pub n_train_per_class: Vec<(String, usize)>,
    pub n_test_per_class: Vec<(String, usize)>,
    pub selected_features: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_cv_mean_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScrambledBaseline {
    pub accuracies: Vec<f64>,
    pub median_accuracy: f64,
    pub kw: TestResult,
    pub threshold_primary: f64,
    pub threshold_secondary: f64,
    pub significant_primary: bool,
    pub significant_secondary: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task: String,
    pub classes: [String; 2],
    pub n_features: usize,
    pub svm: SvmConfig,
    pub seed: u64,
    pub iterations: Vec<LosoIteration>,
    pub accuracies: Vec<f64>,
    pub median_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ScrambledBaseline>,
}

/// Leave-one-subject-out evaluation. Feature ranking happens inside each
/// fold on the training subjects only, so nothing about the held-out subject
/// leaks into feature selection.
pub fn loso_evaluate(
    dataset: &FeatureMatrix,
    cfg: &SvmConfig,
    n_features: usize,
    seed: u64,
    inner_cv: Option<usize>,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    if n_features == 0 {
        return Err(Error::config("n_features must be >= 1".to_string()));
    }
    let tasks = dataset.tasks();
    if tasks.len() != 1 {
        return Err(Error::data(format!(
            "loso_evaluate expects a single task, found {tasks:?}; split by task first"
        )));
    }
    let classes = class_pair(dataset)?;
    let mut subjects = dataset.subjects();
    subjects.sort();
    if subjects.len() < 3 {
        return Err(Error::data(format!(
            "LOSO needs >= 3 subjects, got {}",
            subjects.len()
        )));
    }
    for s in &subjects {
        for class in &classes {
            if !dataset
                .rows
                .iter()
                .any(|r| &r.subject == s && &r.condition == class)
            {
                return Err(Error::data(format!(
                    "subject {s:?} has no rows for class {class:?}"
                )));
            }
        }
    }
    let y_all = signed_labels(dataset, &classes);

    let iterations: Vec<LosoIteration> = subjects
        .par_iter()
        .enumerate()
        .map(|(iter_idx, held_out)| -> Result<LosoIteration> {
            let train_rows: Vec<usize> = dataset
                .rows
                .iter()
                .enumerate()
                .filter(|(_, r)| &r.subject != held_out)
                .map(|(i, _)| i)
                .collect();
            let test_rows: Vec<usize> = (0..dataset.n_rows())
                .filter(|i| !train_rows.contains(i))
                .collect();

            let train_fm = dataset.select_rows(&train_rows);
            let ranked = rank_features(&train_fm)?;
            let take = n_features.min(ranked.len());
            let col_of: BTreeMap<String, usize> = dataset
                .descriptors
                .iter()
                .enumerate()
                .map(|(j, d)| (d.to_string(), j))
                .collect();
            let cols: Vec<usize> = ranked[..take]
                .iter()
                .map(|(d, _)| col_of[&d.to_string()])
                .collect();

            let x_train = Array2::from_shape_fn((train_rows.len(), take), |(i, j)| {
                dataset.values[[train_rows[i], cols[j]]]
            });
            let y_train: Vec<i8> = train_rows.iter().map(|&i| y_all[i]).collect();
            let model: TrainedClassifier = train_ksvm(x_train.view(), &y_train, cfg)?;

            let x_test = Array2::from_shape_fn((test_rows.len(), take), |(i, j)| {
                dataset.values[[test_rows[i], cols[j]]]
            });
            let y_test: Vec<i8> = test_rows.iter().map(|&i| y_all[i]).collect();
            let (pred, decisions) = predict(&model, x_test.view())?;
            let correct = pred.iter().zip(&y_test).filter(|(p, t)| p == t).count();
            let accuracy = correct as f64 / y_test.len() as f64;
            let (roc, auc, confusion) = roc_and_confusion(&decisions, &y_test)?;

            let count_per_class = |rows: &[usize]| -> Vec<(String, usize)> {
                classes
                    .iter()
                    .map(|class| {
                        (
                            class.clone(),
                            rows.iter()
                                .filter(|&&i| dataset.rows[i].condition == *class)
                                .count(),
                        )
                    })
                    .collect()
            };

            let inner_cv_mean_accuracy = match inner_cv {
                Some(k) => Some(
                    kfold_cv(
                        x_train.view(),
                        &y_train,
                        k,
                        cfg,
                        seeds::derive(seed, &[seeds::STREAM_FOLDS, iter_idx as u64]),
                    )?
                    .mean_accuracy,
                ),
                None => None,
            };

            Ok(LosoIteration {
                held_out_subject: held_out.clone(),
                accuracy,
                auc,
                confusion,
                roc,
                n_train_per_class: count_per_class(&train_rows),
                n_test_per_class: count_per_class(&test_rows),
                selected_features: ranked[..take].iter().map(|(d, _)| d.to_string()).collect(),
                inner_cv_mean_accuracy,
            })
        })
        .collect::<Result<_>>()?;

    let accuracies: Vec<f64> = iterations.iter().map(|it| it.accuracy).collect();
    let median_accuracy = median_of(&accuracies);
    Ok(EvaluationReport {
        task: tasks[0].clone(),
        classes,
        n_features,
        svm: *cfg,
        seed,
        iterations,
        accuracies,
        median_accuracy,
        baseline: None,
    })
}

/// Permute class labels within every subject, then run the identical LOSO
/// procedure (ranking included); returns its per-iteration accuracies.
pub fn scrambled_baseline(
    dataset: &FeatureMatrix,
    cfg: &SvmConfig,
    n_features: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let scrambled = scramble_labels_within_subject(dataset, seed);
    let report = loso_evaluate(&scrambled, cfg, n_features, seed, None)?;
    Ok(report.accuracies)
}

/// Label permutation preserving per-subject class counts.
pub fn scramble_labels_within_subject(dataset: &FeatureMatrix, seed: u64) -> FeatureMatrix {
    let mut out = dataset.clone();
    let mut subjects = dataset.subjects();
    subjects.sort();
    for (s_idx, subject) in subjects.iter().enumerate() {
        let rows: Vec<usize> = dataset
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| &r.subject == subject)
            .map(|(i, _)| i)
            .collect();
        let mut labels: Vec<String> =
            rows.iter().map(|&i| dataset.rows[i].condition.clone()).collect();
        let mut rng = seeds::rng(seed, &[seeds::STREAM_SCRAMBLE, s_idx as u64]);
        labels.shuffle(&mut rng);
        for (&i, label) in rows.iter().zip(labels) {
            out.rows[i].condition = label;
        }
    }
    out
}

/// LOSO plus scrambled baseline plus the real-vs-scrambled Kruskal-Wallis
/// test at the two Bonferroni thresholds.
pub fn evaluate_with_baseline(
    dataset: &FeatureMatrix,
    cfg: &SvmConfig,
    n_features: usize,
    seed: u64,
    inner_cv: Option<usize>,
    threshold_primary: f64,
    threshold_secondary: f64,
) -> Result<EvaluationReport> {
    let mut report = loso_evaluate(dataset, cfg, n_features, seed, inner_cv)?;
    let baseline_acc = scrambled_baseline(dataset, cfg, n_features, seed)?;
    let kw = kruskal_wallis(&[report.accuracies.clone(), baseline_acc.clone()])?;
    report.baseline = Some(ScrambledBaseline {
        median_accuracy: median_of(&baseline_acc),
        accuracies: baseline_acc,
        significant_primary: kw.p < threshold_primary,
        significant_secondary: kw.p < threshold_secondary,
        threshold_primary,
        threshold_secondary,
        kw,
    });
    Ok(report)
}

// ---------------------------------------------------------------------------
// Feature-count sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_features: usize,
    pub median_accuracy: f64,
    pub q25: f64,
    pub q75: f64,
    pub scrambled_median: f64,
    pub scrambled_q25: f64,
    pub scrambled_q75: f64,
    pub kw_p: f64,
    pub significant_primary: bool,
    pub significant_secondary: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub task: String,
    pub classes: [String; 2],
    pub seed: u64,
    pub points: Vec<SweepPoint>,
    /// Count with the most significant comparisons; ties resolve to the
    /// smaller p, then the smaller count.
    pub best_count: usize,
}

/// Feature counts evaluated by the sweep, ascending; always contains 180
/// when the budget allows.
pub fn sweep_schedule(max_features: usize, available: usize) -> Vec<usize> {
    const ANCHORS: [usize; 14] = [1, 2, 3, 5, 8, 12, 20, 32, 50, 80, 120, 180, 260, 400];
    let cap = max_features.min(available);
    let mut counts: Vec<usize> = ANCHORS.iter().copied().filter(|&c| c <= cap).collect();
    if cap >= 1 && !counts.contains(&cap) {
        counts.push(cap);
    }
    counts.sort_unstable();
    counts.dedup();
    counts
}

/// LOSO accuracy and scrambled comparison at an increasing feature-count
/// schedule.
pub fn feature_sweep(
    dataset: &FeatureMatrix,
    cfg: &SvmConfig,
    max_features: usize,
    seed: u64,
    threshold_primary: f64,
    threshold_secondary: f64,
) -> Result<SweepReport> {
    if dataset.n_features() == 0 {
        return Err(Error::data("empty feature ranking".to_string()));
    }
    if max_features == 0 {
        return Err(Error::config("max_features must be >= 1".to_string()));
    }
    let counts = sweep_schedule(max_features, dataset.n_features());
    let classes = class_pair(dataset)?;
    let task = dataset.tasks().first().cloned().unwrap_or_default();

    let mut points = Vec::with_capacity(counts.len());
    for &count in &counts {
        let point_seed = seeds::derive(seed, &[seeds::STREAM_SWEEP, count as u64]);
        let report = loso_evaluate(dataset, cfg, count, point_seed, None)?;
        let scrambled = scrambled_baseline(dataset, cfg, count, point_seed)?;
        let kw = kruskal_wallis(&[report.accuracies.clone(), scrambled.clone()])?;
        points.push(SweepPoint {
            n_features: count,
            median_accuracy: report.median_accuracy,
            q25: quantile(&report.accuracies, 0.25),
            q75: quantile(&report.accuracies, 0.75),
            scrambled_median: median_of(&scrambled),
            scrambled_q25: quantile(&scrambled, 0.25),
            scrambled_q75: quantile(&scrambled, 0.75),
            kw_p: kw.p,
            significant_primary: kw.p < threshold_primary,
            significant_secondary: kw.p < threshold_secondary,
        });
    }
    let mut best = 0usize;
    for (i, p) in points.iter().enumerate() {
        let better = (p.significant_primary as u8, points[best].significant_primary as u8);
        if better.0 > better.1
            || (better.0 == better.1 && p.kw_p < points[best].kw_p)
        {
            best = i;
        }
    }
    Ok(SweepReport {
        task,
        classes,
        seed,
        points: points.clone(),
        best_count: points[best].n_features,
    })
}
