//! Range-level attack evaluation: ROC, AUC, TPR at fixed FPR, percentile
//! correlation between two attacks, and report files.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RangeId, RangeLabel, TrimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve over the distinct score values, highest first. Tied scores move
/// together; the curve starts at (0,0) and ends at (1,1).
pub fn roc(scores: &[(RangeId, f64)], labels: &[RangeLabel]) -> Result<Vec<RocPoint>> {
    let by_id: HashMap<RangeId, bool> = labels.iter().map(|l| (l.range_id, l.is_in())).collect();
    let mut scored = Vec::with_capacity(scores.len());
    for &(id, score) in scores {
        let positive = *by_id
            .get(&id)
            .ok_or_else(|| Error::Validation(format!("range {id} has a score but no label")))?;
        if !score.is_finite() {
            return Err(Error::Validation(format!("range {id} has non-finite score {score}")));
        }
        scored.push((score, positive));
    }
    let n_pos = scored.iter().filter(|s| s.1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation(format!(
            "ROC needs both classes, got {n_pos} in-ranges and {n_neg} out-ranges"
        )));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC curve sorted by FPR.
pub fn auc(points: &[RocPoint]) -> Result<f64> {
    if points.windows(2).any(|w| w[1].fpr < w[0].fpr) {
        return Err(Error::Validation("ROC points are not sorted by FPR".into()));
    }
    Ok(points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum())
}

/// Step-function TPR at each FPR target: the best TPR among points whose FPR
/// does not exceed the target.
pub fn tpr_at_fpr(points: &[RocPoint], fpr_targets: &[f64]) -> Result<Vec<f64>> {
    if fpr_targets.is_empty() {
        return Err(Error::Validation("no FPR targets given".into()));
    }
    fpr_targets
        .iter()
        .map(|&target| {
            if !(target > 0.0 && target < 1.0) {
                return Err(Error::Validation(format!("FPR target {target} outside (0, 1)")));
            }
            Ok(points
                .iter()
                .filter(|p| p.fpr <= target)
                .map(|p| p.tpr)
                .fold(0.0, f64::max))
        })
        .collect()
}

/// Midrank percentile of `value` in `sorted`: fraction strictly below plus half the ties.
fn midrank(sorted: &[f64], value: f64) -> f64 {
    let below = sorted.partition_point(|&x| x < value);
    let not_above = sorted.partition_point(|&x| x <= value);
    (below as f64 + 0.5 * (not_above - below) as f64) / sorted.len() as f64
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Evaluation(
            "correlation undefined: a percentile vector is constant".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation, over members, of each member's percentile among
/// non-members under the point attack and under the range attack.
pub fn percentile_correlation(
    member_point_scores: &[f64],
    member_range_scores: &[f64],
    nonmember_point_scores: &[f64],
    nonmember_range_scores: &[f64],
) -> Result<f64> {
    if member_point_scores.len() != member_range_scores.len() {
        return Err(Error::Validation(
            "member score vectors have different lengths".into(),
        ));
    }
    if member_point_scores.len() < 2 {
        return Err(Error::Evaluation("correlation needs at least two members".into()));
    }
    if nonmember_point_scores.is_empty() || nonmember_range_scores.is_empty() {
        return Err(Error::Validation("non-member scores are empty".into()));
    }
    let sorted = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let point_ref = sorted(nonmember_point_scores);
    let range_ref = sorted(nonmember_range_scores);
    let p: Vec<f64> = member_point_scores.iter().map(|&s| midrank(&point_ref, s)).collect();
    let r: Vec<f64> = member_range_scores.iter().map(|&s| midrank(&range_ref, s)).collect();
    pearson(&p, &r)
}

/// Same correlation, given the member percentiles directly.
pub fn pearson_of_percentiles(point: &[f64], range: &[f64]) -> Result<f64> {
    if point.len() != range.len() || point.len() < 2 {
        return Err(Error::Evaluation("correlation needs two equal vectors of length >= 2".into()));
    }
    pearson(point, range)
}

/// Metrics of one attack over a labelled set of ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackEval {
    pub roc: Vec<RocPoint>,
    pub auc: f64,
    pub fpr_targets: Vec<f64>,
    pub tpr: Vec<f64>,
    pub n_ranges: usize,
}

pub fn evaluate(scores: &[(RangeId, f64)], labels: &[RangeLabel], fpr_targets: &[f64]) -> Result<AttackEval> {
    if scores.is_empty() {
        return Err(Error::Evaluation("no scored ranges to evaluate".into()));
    }
    let curve = roc(scores, labels)?;
    Ok(AttackEval {
        auc: auc(&curve)?,
        tpr: tpr_at_fpr(&curve, fpr_targets)?,
        fpr_targets: fpr_targets.to_vec(),
        n_ranges: scores.len(),
        roc: curve,
    })
}

/// Everything an evaluation run produced; written by [`emit_report`].
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub ramia: Option<AttackEval>,
    pub mia: Option<AttackEval>,
    pub trim: Option<TrimConfig>,
    pub seed: u64,
    pub percentile_correlation: Option<f64>,
}

fn tpr_key(target: f64) -> String {
    format!("tpr@{}%", target * 100.0)
}

fn attack_json(eval: &AttackEval) -> serde_json::Map<String, serde_json::Value> {
    let mut map = serde_json::Map::new();
    map.insert("auc".into(), eval.auc.into());
    for (&t, &v) in eval.fpr_targets.iter().zip(&eval.tpr) {
        map.insert(tpr_key(t), v.into());
    }
    map.insert("n_ranges".into(), eval.n_ranges.into());
    map
}

impl EvalReport {
    /// RaMIA AUC minus MIA AUC, when both attacks were evaluated.
    pub fn delta_auc(&self) -> Option<f64> {
        Some(self.ramia.as_ref()?.auc - self.mia.as_ref()?.auc)
    }

    /// Summary JSON. Top-level metrics describe RaMIA when present, else MIA.
    pub fn summary(&self) -> Result<serde_json::Value> {
        let (name, primary) = match (&self.ramia, &self.mia) {
            (Some(r), _) => ("ramia", r),
            (None, Some(m)) => ("mia", m),
            (None, None) => return Err(Error::Evaluation("empty evaluation results".into())),
        };
        let mut map = attack_json(primary);
        map.insert("attack".into(), name.into());
        map.insert(
            "trim".into(),
            serde_json::to_value(self.trim).expect("trim serializes"),
        );
        map.insert("seed".into(), self.seed.into());
        if let (Some(_), Some(mia)) = (&self.ramia, &self.mia) {
            map.insert("mia".into(), attack_json(mia).into());
            map.insert("delta_auc".into(), self.delta_auc().into());
        }
        if let Some(r) = self.percentile_correlation {
            map.insert("percentile_correlation".into(), r.into());
        }
        Ok(serde_json::Value::Object(map))
    }
}

pub fn write_roc_csv(points: &[RocPoint], path: &Path) -> Result<()> {
    let mut text = String::from("fpr,tpr\n");
    for p in points {
        text.push_str(&format!("{},{}\n", p.fpr, p.tpr));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `roc.csv` (RaMIA if present, else MIA), `roc_mia.csv` when both
/// attacks are present, and `summary.json`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<()> {
    let summary = report.summary()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let primary = report.ramia.as_ref().or(report.mia.as_ref()).expect("checked by summary");
    write_roc_csv(&primary.roc, &dir.join("roc.csv"))?;
    if let (Some(_), Some(mia)) = (&report.ramia, &report.mia) {
        write_roc_csv(&mia.roc, &dir.join("roc_mia.csv"))?;
    }
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    let path = dir.join("summary.json");
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Groups member and non-member values by label; helper for correlation runs.
pub fn split_by_label(
    values: &BTreeMap<RangeId, f64>,
    labels: &[RangeLabel],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for label in labels {
        let v = *values
            .get(&label.range_id)
            .ok_or_else(|| Error::Validation(format!("range {} has no score", label.range_id)))?;
        if label.is_in() {
            ins.push(v);
        } else {
            outs.push(v);
        }
    }
    Ok((ins, outs))
}
