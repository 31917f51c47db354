//! Range predicates, ground-truth labelling, and aggregation of per-sample
//! membership scores into a range score.
//!
//! The aggregate is a one-sided trimmed mean. Scores are ranked ascending and
//! the item at 1-based rank `i` of `n` sits at percentile `100·i/n`; items whose
//! percentile falls in the half-open window `(q_s, q_e]` are dropped and the
//! rest are averaged. `q_e = 100` drops the top of the attack set (synthetic
//! candidates, where the highest scores are likely false positives); `q_s = 0`
//! drops the bottom (real in-distribution candidates, averaging the top).

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval;
use crate::model::{DataRecord, Payload, RangeFn, RangeId, RangeLabel, RangeQuery, RecordId, TrimConfig};
use crate::rng::seeded;
use crate::samplers::CandidatePools;
use crate::scorers::MembershipScorer;
use crate::signals::SignalMatrix;

/// Whether `record` lies inside `range`. Candidate-pool ranges need `pools`.
pub fn in_range(range: &RangeQuery, record: &DataRecord, pools: Option<&CandidatePools>) -> Result<bool> {
    match range.range_fn {
        RangeFn::MaskedColumns => {
            let (Payload::Binary(center), Payload::Binary(bits)) = (&range.center.payload, &record.payload)
            else {
                return Err(schema_mismatch(range, record));
            };
            if center.len() != bits.len() {
                return Err(schema_mismatch(range, record));
            }
            let mask = range.mask();
            let mut masked = mask.iter().peekable();
            for (j, (a, b)) in center.iter().zip(bits).enumerate() {
                if masked.peek() == Some(&&j) {
                    masked.next();
                    continue;
                }
                if a != b {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        RangeFn::Hamming => {
            let (Payload::Tokens(center), Payload::Tokens(words)) = (&range.center.payload, &record.payload)
            else {
                return Err(schema_mismatch(range, record));
            };
            if center.len() != words.len() {
                return Ok(false);
            }
            Ok(hamming_distance(center, words) <= range.size)
        }
        RangeFn::CandidatePool => {
            let pools = pools.ok_or_else(|| {
                Error::Config(format!("range {}: candidate pools not loaded", range.id))
            })?;
            let pool_id = range.pool_id.as_deref().unwrap_or_default();
            let pool = pools
                .get(pool_id)
                .ok_or_else(|| Error::Validation(format!("unknown candidate pool {pool_id:?}")))?;
            Ok(pool.contains(&record.id))
        }
    }
}

fn schema_mismatch(range: &RangeQuery, record: &DataRecord) -> Error {
    Error::Validation(format!(
        "record {} ({:?}, {} positions) is incompatible with range {} ({:?}, {} positions)",
        record.id,
        record.payload.schema(),
        record.payload.len(),
        range.id,
        range.center.payload.schema(),
        range.center.payload.len()
    ))
}

/// Word-level Hamming distance of two equal-length sequences.
pub fn hamming_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Label 1 iff some training member lies in the range.
///
/// Candidate-pool ranges whose center carries an identity tag are labelled by
/// identity: 1 iff some member shares the tag.
pub fn label_range<'a>(
    range: &RangeQuery,
    members: impl IntoIterator<Item = &'a DataRecord>,
    pools: Option<&CandidatePools>,
) -> Result<RangeLabel> {
    let identity = match range.range_fn {
        RangeFn::CandidatePool => range.center.identity.as_deref(),
        _ => None,
    };
    let mut bit = 0;
    for member in members {
        if !member.is_member() {
            return Err(Error::Validation(format!(
                "record {} passed as a member but its split is {:?}",
                member.id, member.split
            )));
        }
        let hit = match identity {
            Some(tag) => member.identity.as_deref() == Some(tag),
            None => in_range(range, member, pools)?,
        };
        if hit {
            bit = 1;
            break;
        }
    }
    Ok(RangeLabel { range_id: range.id, bit })
}

/// Keep-flags by ascending rank: rank `i` (0-based) is dropped iff its
/// percentile `100·(i+1)/n` lies in `(q_s, q_e]`.
fn kept_ranks(n: usize, trim: &TrimConfig) -> Vec<bool> {
    (1..=n)
        .map(|i| {
            let pct = 100.0 * i as f64 / n as f64;
            !(trim.q_s < pct && pct <= trim.q_e)
        })
        .collect()
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Validation("cannot aggregate an empty attack set".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Validation(format!("non-finite membership score {bad}")));
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// One-sided trimmed mean. When every item falls in the window the plain mean
/// of all scores is returned.
pub fn trimmed_avg(scores: &[f64], trim: &TrimConfig) -> Result<f64> {
    trim.validate()?;
    check_scores(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let keep = kept_ranks(sorted.len(), trim);
    if keep.iter().any(|&k| k) {
        Ok(mean(sorted.iter().zip(&keep).filter(|(_, &k)| k).map(|(&s, _)| s)))
    } else {
        Ok(mean(sorted.into_iter()))
    }
}

/// State of one range through sampling, scoring and aggregation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RangeJob {
    pub range_id: RangeId,
    pub attack_set: Vec<RecordId>,
    pub scores: Vec<f64>,
    /// Whether each sample survived trimming, aligned with `attack_set`.
    pub kept: Vec<bool>,
    pub trim: TrimConfig,
    pub aggregated: Option<f64>,
}

impl RangeJob {
    pub fn new(range_id: RangeId, attack_set: Vec<RecordId>, scores: Vec<f64>, trim: TrimConfig) -> Result<Self> {
        if attack_set.len() != scores.len() {
            return Err(Error::Validation(format!(
                "range {range_id}: {} samples but {} scores",
                attack_set.len(),
                scores.len()
            )));
        }
        let kept = vec![false; scores.len()];
        Ok(Self { range_id, attack_set, scores, kept, trim, aggregated: None })
    }

    /// Runs the trimmed mean and records which samples were kept. Ties in
    /// score are ranked by record id.
    pub fn aggregate(&mut self) -> Result<f64> {
        let value = trimmed_avg(&self.scores, &self.trim)?;
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[a]
                .total_cmp(&self.scores[b])
                .then(self.attack_set[a].cmp(&self.attack_set[b]))
        });
        let keep = kept_ranks(order.len(), &self.trim);
        let any = keep.iter().any(|&k| k);
        for (rank, &i) in order.iter().enumerate() {
            self.kept[i] = keep[rank] || !any;
        }
        self.aggregated = Some(value);
        Ok(value)
    }
}

/// Scores every sample of an attack set and aggregates.
pub fn ramia_score(
    range: &RangeQuery,
    attack_set: &[DataRecord],
    scorer: &dyn MembershipScorer,
    signals: &SignalMatrix,
    trim: &TrimConfig,
) -> Result<RangeJob> {
    let ids: Vec<RecordId> = attack_set.iter().map(|r| r.id).collect();
    score_attack_set(range.id, &ids, scorer, signals, trim)
}

/// [`ramia_score`] for an attack set given by record ids.
pub fn score_attack_set(
    range_id: RangeId,
    attack_set: &[RecordId],
    scorer: &dyn MembershipScorer,
    signals: &SignalMatrix,
    trim: &TrimConfig,
) -> Result<RangeJob> {
    let scores = attack_set
        .iter()
        .map(|&id| scorer.score(id, signals))
        .collect::<Result<Vec<_>>>()?;
    let mut job = RangeJob::new(range_id, attack_set.to_vec(), scores, *trim)?;
    job.aggregate()?;
    Ok(job)
}

/// Which half of the trim window is swept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrimBranch {
    /// Real in-distribution candidates: `q_s = 0`, sweep `q_e`.
    Real,
    /// Synthetic candidates: `q_e = 100`, sweep `q_s`.
    Synthetic,
}

/// Grid over the swept end of the window in steps of `step` percentage points.
pub fn trim_grid(branch: TrimBranch, step: f64) -> Result<Vec<TrimConfig>> {
    if !(step > 0.0 && step <= 100.0) {
        return Err(Error::Config(format!("grid step {step} outside (0, 100]")));
    }
    let n = (100.0 / step).floor() as usize;
    let mut values: Vec<f64> = (0..=n).map(|i| (i as f64 * step).min(100.0)).collect();
    if *values.last().expect("non-empty") < 100.0 {
        values.push(100.0);
    }
    values
        .into_iter()
        .map(|v| match branch {
            TrimBranch::Real => TrimConfig::new(0.0, v),
            TrimBranch::Synthetic => TrimConfig::new(v, 100.0),
        })
        .collect()
}

/// Reference model that plays the target during a sweep.
pub fn choose_temporary_target(n_refs: usize, seed: u64) -> Result<usize> {
    if n_refs < 2 {
        return Err(Error::Config(format!(
            "trim sweep needs at least 2 reference models, got {n_refs}"
        )));
    }
    Ok(seeded(seed, 0x5EED_7A26).random_range(0..n_refs))
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SweepOutcome {
    pub chosen: TrimConfig,
    pub temporary_target: usize,
    pub grid_aucs: Vec<(TrimConfig, f64)>,
}

/// Builds the scorer used on the re-targeted signals; receives the index of
/// the temporary target.
pub type ScorerFactory<'a> = dyn Fn(&SignalMatrix, usize) -> Result<Box<dyn MembershipScorer>> + Sync + 'a;

/// Picks the trim window with the best range AUC when one reference model
/// plays the target and the others serve as references.
///
/// `labels_by_ref[t]` labels the calibration ranges against the training set of
/// reference model `t`. Ties go to the narrower window, then the lower `q_s`.
pub fn sweep_trim(
    signals: &SignalMatrix,
    ranges: &[(RangeId, Vec<RecordId>)],
    labels_by_ref: &[Vec<RangeLabel>],
    grid: &[TrimConfig],
    build_scorer: &ScorerFactory<'_>,
    seed: u64,
) -> Result<SweepOutcome> {
    let t = choose_temporary_target(signals.n_refs(), seed)?;
    if grid.is_empty() {
        return Err(Error::Config("trim grid is empty".into()));
    }
    for trim in grid {
        trim.validate()?;
    }
    if labels_by_ref.len() != signals.n_refs() {
        return Err(Error::Config(format!(
            "{} label sets for {} reference models",
            labels_by_ref.len(),
            signals.n_refs()
        )));
    }
    let retargeted = signals.reference_as_target(t)?;
    let scorer = build_scorer(&retargeted, t)?;
    let per_range: Vec<Vec<f64>> = ranges
        .par_iter()
        .map(|(_, ids)| ids.iter().map(|&id| scorer.score(id, &retargeted)).collect())
        .collect::<Result<_>>()?;

    let grid_aucs: Vec<(TrimConfig, f64)> = grid
        .par_iter()
        .map(|trim| {
            let scores = ranges
                .iter()
                .zip(&per_range)
                .map(|((id, _), s)| Ok((*id, trimmed_avg(s, trim)?)))
                .collect::<Result<Vec<_>>>()?;
            let curve = eval::roc(&scores, &labels_by_ref[t])?;
            Ok((*trim, eval::auc(&curve)?))
        })
        .collect::<Result<_>>()?;

    let chosen = grid_aucs
        .iter()
        .copied()
        .reduce(|best, cand| {
            let better = cand.1 > best.1
                || (cand.1 == best.1
                    && (cand.0.width() < best.0.width()
                        || (cand.0.width() == best.0.width() && cand.0.q_s < best.0.q_s)));
            if better { cand } else { best }
        })
        .expect("grid is non-empty")
        .0;
    Ok(SweepOutcome { chosen, temporary_target: t, grid_aucs })
}
