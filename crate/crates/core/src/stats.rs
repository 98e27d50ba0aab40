//! Nonparametric testing, feature ranking, multiple-comparison thresholds,
//! and behavioral performance metrics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::features::{FeatureDesc, FeatureMatrix};

/// Kruskal-Wallis outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub h: f64,
    pub p: f64,
    pub group_sizes: Vec<usize>,
}

/// Average ranks of the pooled sample, midranks for ties.
fn midranks(pooled: &[f64]) -> Vec<f64> {
    let n = pooled.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pooled[a].partial_cmp(&pooled[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Kruskal-Wallis H test across `groups`, tie-corrected, chi-square p-value
/// with k-1 degrees of freedom.
///
/// Identical data across all groups is not an error: it returns H = 0, p = 1.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::data(format!(
            "kruskal_wallis needs >= 2 groups, got {}",
            groups.len()
        )));
    }
    let group_sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    if group_sizes.iter().any(|&s| s == 0) {
        return Err(Error::data("kruskal_wallis: empty group".to_string()));
    }
    let n: usize = group_sizes.iter().sum();
    if n < 3 {
        return Err(Error::data(format!("kruskal_wallis needs N >= 3, got {n}")));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("kruskal_wallis: non-finite value".to_string()));
    }
    let ranks = midranks(&pooled);

    let nf = n as f64;
    let mut idx = 0;
    let mut sum_r2 = 0.0;
    for g in groups {
        let r: f64 = ranks[idx..idx + g.len()].iter().sum();
        idx += g.len();
        sum_r2 += r * r / g.len() as f64;
    }
    let h_raw = 12.0 / (nf * (nf + 1.0)) * sum_r2 - 3.0 * (nf + 1.0);

    // tie correction: divide by 1 - sum(t^3 - t) / (N^3 - N)
    let mut sorted = pooled.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    let correction = 1.0 - tie_sum / (nf * nf * nf - nf);
    if correction <= 0.0 {
        // every pooled value identical
        return Ok(TestResult { h: 0.0, p: 1.0, group_sizes });
    }
    let h = (h_raw / correction).max(0.0);
    let p = chi_square_sf(h, groups.len() as f64 - 1.0);
    Ok(TestResult { h, p, group_sizes })
}

/// Chi-square survival function via the regularized upper incomplete gamma,
/// accurate deep into the tail.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df / 2.0, x / 2.0).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Rank features by two-class Kruskal-Wallis p-value (ascending); ties break
/// on the descriptor string so the ordering is a pure function of the data.
///
/// The class label is the row's condition; exactly two conditions must be
/// present.
pub fn rank_features(fm: &FeatureMatrix) -> Result<Vec<(FeatureDesc, f64)>> {
    let classes = fm.conditions();
    if classes.len() != 2 {
        return Err(Error::data(format!(
            "rank_features needs exactly 2 classes, found {:?}",
            classes
        )));
    }
    let in_a: Vec<bool> = fm.rows.iter().map(|r| r.condition == classes[0]).collect();
    let mut ranked: Vec<(FeatureDesc, f64)> = (0..fm.n_features())
        .map(|j| {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for (i, &is_a) in in_a.iter().enumerate() {
                if is_a {
                    a.push(fm.values[[i, j]]);
                } else {
                    b.push(fm.values[[i, j]]);
                }
            }
            let t = kruskal_wallis(&[a, b])?;
            Ok((fm.descriptors[j].clone(), t.p))
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|(da, pa), (db, pb)| {
        pa.partial_cmp(pb)
            .unwrap()
            .then_with(|| da.to_string().cmp(&db.to_string()))
    });
    Ok(ranked)
}

/// Bonferroni-corrected significance threshold alpha / m.
pub fn bonferroni_threshold(alpha: f64, m: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha must be in (0,1), got {alpha}")));
    }
    if m < 1 {
        return Err(Error::config("m must be >= 1".to_string()));
    }
    Ok(alpha / m as f64)
}

// ---------------------------------------------------------------------------
// Behavioral metrics
// ---------------------------------------------------------------------------

/// One participant's performance on one task in one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralRecord {
    pub subject: String,
    pub condition: String,
    pub task: String,
    pub n_correct: u32,
    pub n_submitted: u32,
    pub duration_s: f64,
}

impl BehavioralRecord {
    pub fn validate(&self) -> Result<()> {
        if self.n_correct > self.n_submitted {
            return Err(Error::data(format!(
                "{}/{}: n_correct {} exceeds n_submitted {}",
                self.subject, self.task, self.n_correct, self.n_submitted
            )));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::data(format!(
                "{}/{}: duration_s must be positive",
                self.subject, self.task
            )));
        }
        Ok(())
    }
}

/// Load behavioral records from a CSV with header
/// `subject,condition,task,n_correct,n_submitted,duration_s`.
pub fn load_behavioral_csv(path: &Path) -> Result<Vec<BehavioralRecord>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::data(format!("open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in r.deserialize::<BehavioralRecord>() {
        let rec = rec.map_err(|e| Error::data(format!("behavioral csv: {e}")))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// Fraction of submitted responses that were correct.
pub fn response_accuracy(rec: &BehavioralRecord) -> Result<f64> {
    if rec.n_submitted == 0 {
        return Err(Error::data(format!(
            "{}/{}: no submitted responses",
            rec.subject, rec.task
        )));
    }
    Ok(rec.n_correct as f64 / rec.n_submitted as f64)
}

/// Inverse efficiency score rt / (1 - pe); undefined at pe = 1.
pub fn inverse_efficiency_score(rt: f64, pe: f64) -> Result<f64> {
    if !(rt > 0.0) {
        return Err(Error::data(format!("rt must be positive, got {rt}")));
    }
    if !(0.0..1.0).contains(&pe) {
        return Err(Error::data(format!("pe must be in [0,1), got {pe}")));
    }
    Ok(rt / (1.0 - pe))
}

/// Performance metric compared across conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehavioralMetric {
    Accuracy,
    NCorrect,
    Duration,
    InverseEfficiency,
}

pub const ALL_METRICS: [BehavioralMetric; 4] = [
    BehavioralMetric::Accuracy,
    BehavioralMetric::NCorrect,
    BehavioralMetric::Duration,
    BehavioralMetric::InverseEfficiency,
];

impl BehavioralMetric {
    pub fn value(&self, rec: &BehavioralRecord) -> Result<f64> {
        match self {
            BehavioralMetric::Accuracy => response_accuracy(rec),
            BehavioralMetric::NCorrect => Ok(rec.n_correct as f64),
            BehavioralMetric::Duration => Ok(rec.duration_s),
            BehavioralMetric::InverseEfficiency => {
                let pe = 1.0 - response_accuracy(rec)?;
                if pe >= 1.0 {
                    return Err(Error::data(format!(
                        "{}/{}: IES undefined at pe = 1",
                        rec.subject, rec.task
                    )));
                }
                inverse_efficiency_score(rec.duration_s, pe)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BehavioralMetric::Accuracy => "accuracy",
            BehavioralMetric::NCorrect => "n_correct",
            BehavioralMetric::Duration => "duration",
            BehavioralMetric::InverseEfficiency => "inverse_efficiency",
        }
    }
}

/// One Kruskal-Wallis test per task comparing `metric` across conditions.
pub fn compare_conditions(
    records: &[BehavioralRecord],
    metric: BehavioralMetric,
) -> Result<BTreeMap<String, TestResult>> {
    let mut by_task: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for rec in records {
        rec.validate()?;
        by_task
            .entry(rec.task.clone())
            .or_default()
            .entry(rec.condition.clone())
            .or_default()
            .push(metric.value(rec)?);
    }
    let mut out = BTreeMap::new();
    for (task, by_cond) in by_task {
        if by_cond.len() < 2 {
            return Err(Error::data(format!(
                "task {task:?} has {} condition(s), need >= 2",
                by_cond.len()
            )));
        }
        let groups: Vec<Vec<f64>> = by_cond.into_values().collect();
        out.insert(task, kruskal_wallis(&groups)?);
    }
    Ok(out)
}

/// One row of the behavioral comparison report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BehavioralTest {
    pub task: String,
    pub metric: String,
    pub h: f64,
    pub p: f64,
    pub group_sizes: Vec<usize>,
    pub significant_uncorrected: bool,
    /// p < 0.05 / n_tests
    pub significant_bonferroni_05: bool,
    /// p < 0.01 / n_tests
    pub significant_bonferroni_01: bool,
}

/// Behavioral comparison across conditions: tasks x metrics tests with raw
/// p-values and both Bonferroni flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BehavioralReport {
    pub n_tests: usize,
    pub threshold_bonferroni_05: f64,
    pub threshold_bonferroni_01: f64,
    pub tests: Vec<BehavioralTest>,
}

/// Run every metric for every task (tasks x 4 metrics tests).
pub fn behavioral_report(records: &[BehavioralRecord]) -> Result<BehavioralReport> {
    let mut tests = Vec::new();
    let mut entries: Vec<(String, BehavioralMetric, TestResult)> = Vec::new();
    for metric in ALL_METRICS {
        for (task, result) in compare_conditions(records, metric)? {
            entries.push((task, metric, result));
        }
    }
    let n_tests = entries.len();
    let thr05 = bonferroni_threshold(0.05, n_tests)?;
    let thr01 = bonferroni_threshold(0.01, n_tests)?;
    for (task, metric, r) in entries {
        tests.push(BehavioralTest {
            task,
            metric: metric.name().to_string(),
            h: r.h,
            p: r.p,
            group_sizes: r.group_sizes,
            significant_uncorrected: r.p < 0.05,
            significant_bonferroni_05: r.p < thr05,
            significant_bonferroni_01: r.p < thr01,
        });
    }
    tests.sort_by(|a, b| a.task.cmp(&b.task).then_with(|| a.metric.cmp(&b.metric)));
    Ok(BehavioralReport {
        n_tests,
        threshold_bonferroni_05: thr05,
        threshold_bonferroni_01: thr01,
        tests,
    })
}
