//! Glue between the stages: sample attack sets for many ranges, build a
//! scorer from configuration, score range centers (point baseline) and whole
//! ranges, and calibrate the trim window on reference models.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::AttackSets;
use crate::model::{DataRecord, RangeFn, RangeId, RangeLabel, RangeQuery, RecordId, Split, TrimConfig};
use crate::range_engine::{self, label_range, RangeJob, SweepOutcome, TrimBranch};
use crate::samplers::{self, CandidatePools, SamplerSpec, SamplingContext};
use crate::scorers::{LossScorer, MembershipScorer, RmiaConfig, RmiaScorer};
use crate::signals::SignalMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Loss,
    Rmia,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_a() -> f64 {
    0.33
}

fn default_gamma() -> f64 {
    1.0
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self { kind: ScorerKind::Rmia, a: default_a(), gamma: default_gamma() }
    }
}

/// `members` are the training records of whichever model plays the target;
/// RMIA refuses population records among them.
pub fn build_scorer(
    cfg: &ScorerConfig,
    signals: &SignalMatrix,
    population_ids: &[RecordId],
    members: &BTreeSet<RecordId>,
) -> Result<Box<dyn MembershipScorer>> {
    match cfg.kind {
        ScorerKind::Loss => Ok(Box::new(LossScorer)),
        ScorerKind::Rmia => {
            let rmia = RmiaConfig { a: cfg.a, gamma: cfg.gamma, population_ids: population_ids.to_vec() };
            Ok(Box::new(RmiaScorer::new(&rmia, signals, members)?))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TrimPolicy {
    Fixed { q_s: f64, q_e: f64 },
    Sweep { branch: TrimBranch, step: f64 },
}

impl TrimPolicy {
    pub fn fixed(&self) -> Option<TrimConfig> {
        match *self {
            TrimPolicy::Fixed { q_s, q_e } => Some(TrimConfig { q_s, q_e }),
            TrimPolicy::Sweep { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TrimPolicy::Fixed { q_s, q_e } => TrimConfig::new(*q_s, *q_e).map(|_| ()),
            TrimPolicy::Sweep { branch, step } => range_engine::trim_grid(*branch, *step).map(|_| ()),
        }
    }
}

/// Samples every range. Fresh candidates of the range at position `i` get ids
/// `id_base + i·n_samples ..`; pool candidates keep their ids. Returns the
/// attack sets and the newly created records.
pub fn sample_attack_sets(
    ranges: &[RangeQuery],
    ctx: &SamplingContext<'_>,
    spec: &SamplerSpec,
    id_base: RecordId,
) -> Result<(AttackSets, Vec<DataRecord>)> {
    let per_range: Vec<Vec<DataRecord>> = ranges
        .par_iter()
        .enumerate()
        .map(|(i, r)| samplers::sample_range(r, ctx, spec, id_base + (i * spec.n_samples) as u64))
        .collect::<Result<_>>()?;
    let mut sets = AttackSets::new();
    let mut fresh = Vec::new();
    for (range, samples) in ranges.iter().zip(per_range) {
        sets.insert(range.id, samples.iter().map(|s| s.id).collect());
        if range.range_fn != RangeFn::CandidatePool {
            fresh.extend(samples);
        }
    }
    Ok((sets, fresh))
}

/// Labels every range against the given training records.
pub fn label_ranges(
    ranges: &[RangeQuery],
    members: &[&DataRecord],
    pools: Option<&CandidatePools>,
) -> Result<Vec<RangeLabel>> {
    ranges
        .par_iter()
        .map(|r| label_range(r, members.iter().copied(), pools))
        .collect()
}

/// Point-attack baseline: the score of each range's center record.
pub fn score_centers(
    ranges: &[RangeQuery],
    signals: &SignalMatrix,
    scorer: &dyn MembershipScorer,
) -> Result<Vec<(RangeId, f64)>> {
    ranges
        .par_iter()
        .map(|r| Ok((r.id, scorer.score(r.center.id, signals)?)))
        .collect()
}

/// Range scores for every range, in the order of `ranges`.
pub fn score_ranges(
    ranges: &[RangeQuery],
    attack_sets: &AttackSets,
    signals: &SignalMatrix,
    scorer: &dyn MembershipScorer,
    trim: &TrimConfig,
) -> Result<Vec<RangeJob>> {
    ranges
        .par_iter()
        .map(|r| {
            let ids = attack_sets
                .get(&r.id)
                .ok_or_else(|| Error::Validation(format!("range {} has no attack set", r.id)))?;
            range_engine::score_attack_set(r.id, ids, scorer, signals, trim)
        })
        .collect()
}

pub fn job_scores(jobs: &[RangeJob]) -> Vec<(RangeId, f64)> {
    jobs.iter()
        .map(|j| (j.range_id, j.aggregated.expect("aggregated job")))
        .collect()
}

/// Ranges built for calibrating the trim window on reference models.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub ranges: Vec<RangeQuery>,
    pub attack_sets: AttackSets,
    /// Training record ids of each reference model.
    pub ref_members: Vec<BTreeSet<RecordId>>,
}

/// Marks the records of `ids` as training members of some model.
pub fn member_view<'a>(
    ids: &BTreeSet<RecordId>,
    lookup: impl Fn(RecordId) -> Result<&'a DataRecord>,
) -> Result<Vec<DataRecord>> {
    ids.iter()
        .map(|&id| Ok(lookup(id)?.clone().with_split(Split::Member)))
        .collect()
}

/// Sweeps the grid of `policy` on the calibration ranges.
///
/// RMIA's population for the temporary target excludes that model's
/// training records.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    signals: &SignalMatrix,
    calibration: &Calibration,
    labels_by_ref: &[Vec<RangeLabel>],
    scorer: &ScorerConfig,
    population_ids: &[RecordId],
    branch: TrimBranch,
    step: f64,
    seed: u64,
) -> Result<SweepOutcome> {
    let grid = range_engine::trim_grid(branch, step)?;
    let ranges: Vec<(RangeId, Vec<RecordId>)> = calibration
        .ranges
        .iter()
        .map(|r| {
            let ids = calibration
                .attack_sets
                .get(&r.id)
                .ok_or_else(|| Error::Validation(format!("calibration range {} has no attack set", r.id)))?;
            Ok((r.id, ids.clone()))
        })
        .collect::<Result<_>>()?;
    let factory = |m: &SignalMatrix, t: usize| {
        let members = calibration.ref_members.get(t).cloned().unwrap_or_default();
        let population: Vec<RecordId> =
            population_ids.iter().copied().filter(|id| !members.contains(id)).collect();
        build_scorer(scorer, m, &population, &members)
    };
    range_engine::sweep_trim(signals, &ranges, labels_by_ref, &grid, &factory, seed)
}

/// Labels of the calibration ranges against each reference model's training set.
pub fn calibration_labels<'a>(
    calibration: &Calibration,
    lookup: impl Fn(RecordId) -> Result<&'a DataRecord> + Copy,
    pools: Option<&CandidatePools>,
) -> Result<Vec<Vec<RangeLabel>>> {
    calibration
        .ref_members
        .iter()
        .map(|ids| {
            let members = member_view(ids, lookup)?;
            let refs: Vec<&DataRecord> = members.iter().collect();
            label_ranges(&calibration.ranges, &refs, pools)
        })
        .collect()
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Score map keyed by range, for pairing the two attacks.
pub fn score_map(scores: &[(RangeId, f64)]) -> BTreeMap<RangeId, f64> {
    scores.iter().copied().collect()
}
