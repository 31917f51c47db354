//! Synthetic challenger for the point and range membership games.
//!
//! Trained models are replaced by [`SimulatedModels`]: a deterministic function
//! from a binary payload to a correct-label probability. A record's logit is
//! `mu_out + boost + noise`, where the boost `(mu_in - mu_out)·decay^d` decays
//! with the Hamming distance `d` to the model's nearest training record (no
//! boost beyond [`BOOST_RADIUS`]) and the noise is Gaussian, seeded by the
//! payload so that repeated queries of the same point agree.
//!
//! A world holds the target's record universe (members and non-members), a
//! disjoint population from which each reference model draws its own training
//! half, and the population subset `Z` used by RMIA. Reference models never
//! see the target's records.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::files::AttackSets;
use crate::model::{DataRecord, Payload, RangeId, RangeLabel, RangeQuery, RecordId, Schema, Split, TrimConfig};
use crate::eval::{self, AttackEval, EvalReport};
use crate::pipeline::{self, Calibration, ScorerConfig, TrimPolicy};
use crate::range_engine::{choose_temporary_target, label_range, SweepOutcome};
use crate::rng::{derive_seed, mix64, seeded};
use crate::samplers::{self, CandidatePools, SamplerKind, SamplerSpec, SamplingContext};
use crate::signals::SignalMatrix;

/// Beyond this distance to the nearest training record there is no boost.
pub const BOOST_RADIUS: u32 = 8;

/// Retry cap when rejection-sampling an out-range.
pub const OUT_RANGE_RETRIES: usize = 1000;

const STREAM_DATA: u64 = 1;
const STREAM_POPULATION: u64 = 2;
const STREAM_MODEL: u64 = 3;
const STREAM_GAME: u64 = 4;
const STREAM_CALIBRATION: u64 = 5;
const STREAM_GROUPS: u64 = 6;
const STREAM_QUERIES: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationModel {
    pub mu_in: f64,
    pub mu_out: f64,
    pub sigma: f64,
    pub decay: f64,
    pub seed: u64,
}

impl MemorizationModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.mu_in > self.mu_out) {
            return Err(Error::Config(format!(
                "mu_in ({}) must exceed mu_out ({})",
                self.mu_in, self.mu_out
            )));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::Config(format!("decay {} outside [0, 1]", self.decay)));
        }
        Ok(())
    }

    fn boost(&self, distance: Option<u32>) -> f64 {
        match distance {
            Some(d) => (self.mu_in - self.mu_out) * self.decay.powi(d as i32),
            None => 0.0,
        }
    }
}

fn pack(bits: &[u8]) -> Vec<u64> {
    bits.chunks(64)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u64, |w, (i, &b)| w | (u64::from(b) << i))
        })
        .collect()
}

fn packed_distance(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Training records of one simulated model, packed for distance queries.
#[derive(Clone, Debug, Default)]
struct MemberIndex {
    rows: Vec<Vec<u64>>,
}

impl MemberIndex {
    fn new<'a>(records: impl IntoIterator<Item = &'a DataRecord>) -> Result<Self> {
        let rows = records
            .into_iter()
            .map(|r| binary(r).map(pack))
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    /// Distance to the nearest training record, if within [`BOOST_RADIUS`].
    fn nearest(&self, query: &[u64]) -> Option<u32> {
        let mut best: Option<u32> = None;
        for row in &self.rows {
            let d = packed_distance(row, query);
            if d <= BOOST_RADIUS && best.is_none_or(|b| d < b) {
                best = Some(d);
                if d == 0 {
                    break;
                }
            }
        }
        best
    }
}

fn binary(record: &DataRecord) -> Result<&[u8]> {
    record
        .payload
        .as_bits()
        .ok_or_else(|| Error::Validation(format!("record {} is not binary", record.id)))
}

/// Stand-in for a target model and its reference models.
#[derive(Clone, Debug)]
pub struct SimulatedModels {
    model: MemorizationModel,
    target: MemberIndex,
    refs: Vec<MemberIndex>,
}

impl SimulatedModels {
    pub fn new<'a>(
        model: MemorizationModel,
        target_members: impl IntoIterator<Item = &'a DataRecord>,
        ref_members: Vec<Vec<&'a DataRecord>>,
    ) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            model,
            target: MemberIndex::new(target_members)?,
            refs: ref_members
                .into_iter()
                .map(MemberIndex::new)
                .collect::<Result<_>>()?,
        })
    }

    pub fn n_refs(&self) -> usize {
        self.refs.len()
    }

    /// Model 0 is the target; `1..=n_refs` are the references.
    fn signal(&self, which: usize, packed: &[u64], width: usize) -> f64 {
        let index = if which == 0 { &self.target } else { &self.refs[which - 1] };
        let boost = self.model.boost(index.nearest(packed));
        let mut h = mix64(self.model.seed ^ mix64(which as u64 + 1));
        h = mix64(h ^ width as u64);
        for &w in packed {
            h = mix64(h ^ w);
        }
        let z: f64 = ChaCha8Rng::seed_from_u64(h).sample(StandardNormal);
        let logit = self.model.mu_out + boost + self.model.sigma * z;
        1.0 / (1.0 + (-logit).exp())
    }

    /// Signals of every record under the target and each reference model.
    pub fn signals_for<'a>(&self, records: impl IntoIterator<Item = &'a DataRecord>) -> Result<SignalMatrix> {
        let records: Vec<&DataRecord> = records.into_iter().collect();
        let rows: Vec<(RecordId, f64, Vec<f64>)> = records
            .par_iter()
            .map(|r| {
                let bits = binary(r)?;
                let packed = pack(bits);
                let target = self.signal(0, &packed, bits.len());
                let refs = (1..=self.refs.len())
                    .map(|m| self.signal(m, &packed, bits.len()))
                    .collect();
                Ok((r.id, target, refs))
            })
            .collect::<Result<_>>()?;
        let mut matrix = SignalMatrix::new(self.refs.len());
        for (id, target, refs) in rows {
            matrix.push(id, target, &refs)?;
        }
        Ok(matrix)
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    pub column_probs: Vec<f64>,
}

fn column_probs(n_features: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n_features).map(|_| rng.random_range(0.1..0.9)).collect()
}

fn draw_records(n: usize, probs: &[f64], first_id: RecordId, rng: &mut ChaCha8Rng) -> Vec<DataRecord> {
    (0..n)
        .map(|i| {
            let bits = probs.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect();
            DataRecord::new(first_id + i as u64, Payload::Binary(bits))
        })
        .collect()
}

fn random_half(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut picked = index::sample(rng, n, n / 2).into_vec();
    picked.sort_unstable();
    picked
}

/// `n_records` i.i.d. records with per-column `Bernoulli(p_j)` features,
/// `p_j ~ U(0.1, 0.9)`; a random half are training members.
pub fn generate_dataset(n_records: usize, n_features: usize, seed: u64) -> Result<GeneratedDataset> {
    if n_records == 0 || !n_records.is_multiple_of(2) {
        return Err(Error::Validation(format!(
            "n_records must be positive and even, got {n_records}"
        )));
    }
    if n_features == 0 {
        return Err(Error::Validation("n_features must be at least 1".into()));
    }
    let mut rng = seeded(seed, STREAM_DATA);
    let probs = column_probs(n_features, &mut rng);
    let records = draw_records(n_records, &probs, 0, &mut rng);
    let members = random_half(n_records, &mut rng).into_iter().map(|i| i as u64);
    Ok(GeneratedDataset {
        dataset: Dataset::new(Schema::Binary, records, members, Split::Nonmember)?,
        column_probs: probs,
    })
}

/// Signals where only the target is boosted; references never trained on
/// anything near the records.
pub fn synthesize_signals(dataset: &Dataset, model: &MemorizationModel, n_refs: usize) -> Result<SignalMatrix> {
    if n_refs == 0 {
        return Err(Error::Config("n_refs must be at least 1".into()));
    }
    let models = SimulatedModels::new(model.clone(), dataset.members(), vec![Vec::new(); n_refs])?;
    models.signals_for(dataset.records())
}

/// How ranges are formed in a simulated world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RangeSetup {
    /// Records with `k` masked columns; mode-imputed centers.
    MaskedColumns { k: usize },
    /// One pool per identity: `group_size` near-copies of a prototype. For
    /// trained identities a random half of the copies are training records.
    IdentityPool { group_size: usize, jitter: usize },
    /// One pool per source record: `group_size` transformed copies. For
    /// trained sources the source is a training record and each copy is also
    /// trained with probability `member_probability`.
    TransformPool { group_size: usize, jitter: usize, member_probability: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Size of the target's record universe (masked-column worlds).
    pub n_records: usize,
    pub n_features: usize,
    pub mu_in: f64,
    pub mu_out: f64,
    pub sigma: f64,
    pub decay: f64,
    pub n_refs: usize,
    /// Population records shared by the reference models; defaults to `n_records`.
    pub population_size: Option<usize>,
    /// Size of RMIA's population `Z`.
    pub z_size: usize,
    /// Ranges per run (pool worlds: one range per group).
    pub n_games: usize,
    pub ranges: RangeSetup,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_records: 2000,
            n_features: 64,
            mu_in: 3.0,
            mu_out: 0.0,
            sigma: 0.5,
            decay: 0.5,
            n_refs: 3,
            population_size: None,
            z_size: 500,
            n_games: 1000,
            ranges: RangeSetup::MaskedColumns { k: 10 },
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.model(0).validate()?;
        if self.n_refs == 0 {
            return Err(Error::Config("simulator needs at least one reference model".into()));
        }
        if self.z_size == 0 || self.z_size > self.population() {
            return Err(Error::Config(format!(
                "z_size {} must be in 1..={}",
                self.z_size,
                self.population()
            )));
        }
        match self.ranges {
            RangeSetup::MaskedColumns { k } => {
                if k > self.n_features {
                    return Err(Error::Config(format!("k={k} exceeds {} features", self.n_features)));
                }
                if self.n_records < 2 || !self.n_records.is_multiple_of(2) {
                    return Err(Error::Config("n_records must be even and at least 2".into()));
                }
            }
            RangeSetup::IdentityPool { group_size, jitter }
            | RangeSetup::TransformPool { group_size, jitter, .. } => {
                if group_size == 0 || jitter > self.n_features {
                    return Err(Error::Config("group_size must be >= 1 and jitter <= n_features".into()));
                }
            }
        }
        if let RangeSetup::TransformPool { member_probability, .. } = self.ranges {
            if !(0.0..=1.0).contains(&member_probability) {
                return Err(Error::Config("member_probability outside [0, 1]".into()));
            }
        }
        Ok(())
    }

    fn population(&self) -> usize {
        self.population_size.unwrap_or(self.n_records)
    }

    pub fn model(&self, seed: u64) -> MemorizationModel {
        MemorizationModel {
            mu_in: self.mu_in,
            mu_out: self.mu_out,
            sigma: self.sigma,
            decay: self.decay,
            seed: derive_seed(seed, STREAM_MODEL),
        }
    }
}

/// A group of near-copies around a prototype, the unit of pool ranges.
#[derive(Clone, Debug)]
pub struct Group {
    pub prototype: RecordId,
    pub copies: Vec<RecordId>,
    pub tag: String,
}

#[derive(Clone, Debug)]
pub struct SimWorld {
    pub config: SimConfig,
    pub seed: u64,
    /// Target-side records with member/non-member splits.
    pub records: Dataset,
    /// Population records, disjoint from `records`.
    pub population: Dataset,
    /// Attacker's per-column Bernoulli parameters, estimated on the population.
    pub column_means: Vec<f64>,
    pub ref_members: Vec<BTreeSet<RecordId>>,
    /// RMIA's population `Z`.
    pub population_ids: Vec<RecordId>,
    pub groups: Vec<Group>,
    pub pools: Option<CandidatePools>,
    pub models: SimulatedModels,
    next_id: RecordId,
}

fn flip_bits(bits: &[u8], count: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut out = bits.to_vec();
    for j in index::sample(rng, bits.len(), count) {
        out[j] ^= 1;
    }
    out
}

impl SimWorld {
    pub fn build(config: &SimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed, STREAM_DATA);
        let probs = column_probs(config.n_features, &mut rng);

        let mut groups = Vec::new();
        let mut pools = None;
        let (records, member_ids) = match config.ranges {
            RangeSetup::MaskedColumns { .. } => {
                let records = draw_records(config.n_records, &probs, 0, &mut rng);
                let members: Vec<RecordId> =
                    random_half(config.n_records, &mut rng).into_iter().map(|i| i as u64).collect();
                (records, members)
            }
            RangeSetup::IdentityPool { group_size, jitter }
            | RangeSetup::TransformPool { group_size, jitter, .. } => {
                let mut grng = seeded(seed, STREAM_GROUPS);
                let prototypes = draw_records(config.n_games, &probs, 0, &mut grng);
                let mut records = Vec::new();
                let mut members = Vec::new();
                let mut pool_map = CandidatePools::default();
                let mut next = config.n_games as u64;
                for (g, proto) in prototypes.into_iter().enumerate() {
                    let tag = format!("g{g}");
                    let trained = grng.random_bool(0.5);
                    let bits = binary(&proto)?.to_vec();
                    let copies: Vec<DataRecord> = (0..group_size)
                        .map(|i| {
                            DataRecord::new(next + i as u64, Payload::Binary(flip_bits(&bits, jitter, &mut grng)))
                                .with_identity(tag.clone())
                        })
                        .collect();
                    next += group_size as u64;
                    if trained {
                        match config.ranges {
                            RangeSetup::IdentityPool { .. } => {
                                let half = random_half(group_size, &mut grng);
                                members.extend(half.into_iter().map(|i| copies[i].id));
                            }
                            RangeSetup::TransformPool { member_probability, .. } => {
                                members.push(proto.id);
                                for c in &copies {
                                    if grng.random_bool(member_probability) {
                                        members.push(c.id);
                                    }
                                }
                            }
                            RangeSetup::MaskedColumns { .. } => unreachable!(),
                        }
                    }
                    let ids: Vec<RecordId> = copies.iter().map(|c| c.id).collect();
                    pool_map.insert(tag.clone(), ids.clone());
                    groups.push(Group { prototype: proto.id, copies: ids, tag: tag.clone() });
                    records.push(proto.with_identity(tag));
                    records.extend(copies);
                }
                pools = Some(pool_map);
                (records, members)
            }
        };
        let records = Dataset::new(Schema::Binary, records, member_ids, Split::Nonmember)?;

        let mut prng = seeded(seed, STREAM_POPULATION);
        let first = records.max_id().map_or(0, |m| m + 1);
        let population = Dataset::new(
            Schema::Binary,
            draw_records(config.population(), &probs, first, &mut prng),
            [],
            Split::Population,
        )?;
        let pop_ids: Vec<RecordId> = population.records().iter().map(|r| r.id).collect();
        let ref_members: Vec<BTreeSet<RecordId>> = (0..config.n_refs)
            .map(|_| random_half(pop_ids.len(), &mut prng).into_iter().map(|i| pop_ids[i]).collect())
            .collect();
        let mut population_ids: Vec<RecordId> = index::sample(&mut prng, pop_ids.len(), config.z_size)
            .into_iter()
            .map(|i| pop_ids[i])
            .collect();
        population_ids.sort_unstable();
        let column_means = samplers::column_means(population.records())?;

        let ref_records: Vec<Vec<&DataRecord>> = ref_members
            .iter()
            .map(|ids| ids.iter().map(|&id| population.get(id)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let models = SimulatedModels::new(config.model(seed), records.members(), ref_records)?;
        let next_id = population.max_id().map_or(first, |m| m + 1);
        Ok(Self {
            config: config.clone(),
            seed,
            records,
            population,
            column_means,
            ref_members,
            population_ids,
            groups,
            pools,
            models,
            next_id,
        })
    }

    /// First id not used by any world record.
    pub fn next_id(&self) -> RecordId {
        self.next_id
    }

    /// Looks up a record among target-side and population records.
    pub fn record(&self, id: RecordId) -> Result<&DataRecord> {
        self.records.get(id).or_else(|_| self.population.get(id))
    }
}

/// Ranges handed to the adversary, their ground truth, and the freshly built
/// center records.
#[derive(Clone, Debug, Default)]
pub struct RangeGame {
    pub ranges: Vec<RangeQuery>,
    pub labels: Vec<RangeLabel>,
    pub centers: Vec<DataRecord>,
}

impl RangeGame {
    pub fn in_fraction(&self) -> f64 {
        self.labels.iter().filter(|l| l.is_in()).count() as f64 / self.labels.len().max(1) as f64
    }
}

/// Where the challenger draws masked-column ranges from.
pub struct MaskedChallenger<'a> {
    pub universe: &'a Dataset,
    pub column_means: &'a [f64],
    pub k: usize,
    /// Range `g` gets id `range_id_base + g` and center id `center_id_base + g`.
    pub range_id_base: u64,
    pub center_id_base: RecordId,
}

impl MaskedChallenger<'_> {
    /// Plays `n_games` rounds: a fair coin picks an in-range (a masked member)
    /// or an out-range (a masked non-member whose range holds no member,
    /// rejection-sampled). Centers are mode-imputed at the masked columns.
    /// `force_bit` fixes the coin.
    pub fn play(&self, n_games: usize, seed: u64, force_bit: Option<u8>) -> Result<RangeGame> {
        let members: Vec<&DataRecord> = self.universe.members().collect();
        let others: Vec<&DataRecord> = self.universe.records().iter().filter(|r| !r.is_member()).collect();
        let rounds: Vec<(RangeQuery, RangeLabel)> = (0..n_games)
            .into_par_iter()
            .map(|g| {
                let mut rng = seeded(seed, g as u64);
                let bit = force_bit.unwrap_or_else(|| u8::from(rng.random_bool(0.5)));
                let pool = if bit == 1 { &members } else { &others };
                if pool.is_empty() {
                    return Err(Error::Generation(format!(
                        "no {} records to center a range on",
                        if bit == 1 { "member" } else { "non-member" }
                    )));
                }
                for _ in 0..OUT_RANGE_RETRIES {
                    let source = pool[rng.random_range(0..pool.len())];
                    let range = self.masked_range(g, source, &mut rng)?;
                    let label = label_range(&range, members.iter().copied(), None)?;
                    if label.bit == bit {
                        return Ok((range, label));
                    }
                }
                Err(Error::Generation(format!(
                    "no range with label {bit} after {OUT_RANGE_RETRIES} attempts"
                )))
            })
            .collect::<Result<_>>()?;
        let mut game = RangeGame::default();
        for (range, label) in rounds {
            game.centers.push(range.center.clone());
            game.ranges.push(range);
            game.labels.push(label);
        }
        Ok(game)
    }

    fn masked_range(&self, g: usize, source: &DataRecord, rng: &mut ChaCha8Rng) -> Result<RangeQuery> {
        let bits = binary(source)?;
        let mask = index::sample(rng, bits.len(), self.k).into_vec();
        let mut center_bits = bits.to_vec();
        for &j in &mask {
            center_bits[j] = samplers::mode_bit(self.column_means[j]);
        }
        let center = DataRecord::new(self.center_id_base + g as u64, Payload::Binary(center_bits));
        RangeQuery::masked_columns(self.range_id_base + g as u64, center, mask)
    }
}

/// Plays the range game in `world`. Masked-column worlds build fresh ranges;
/// pool worlds use one range per group centered on its prototype.
pub fn play_range_game(world: &SimWorld, n_games: usize, seed: u64, force_bit: Option<u8>) -> Result<RangeGame> {
    match world.config.ranges {
        RangeSetup::MaskedColumns { k } => MaskedChallenger {
            universe: &world.records,
            column_means: &world.column_means,
            k,
            range_id_base: 0,
            center_id_base: world.next_id(),
        }
        .play(n_games, derive_seed(seed, STREAM_GAME), force_bit),
        RangeSetup::IdentityPool { .. } | RangeSetup::TransformPool { .. } => {
            let pools = world.pools.as_ref().expect("pool world has pools");
            let members: Vec<&DataRecord> = world.records.members().collect();
            let mut game = RangeGame::default();
            for (g, group) in world.groups.iter().enumerate().take(n_games) {
                let center = world.records.get(group.prototype)?.clone();
                let range = RangeQuery::candidate_pool(g as u64, center, group.tag.clone(), group.copies.len())?;
                let label = label_range(&range, members.iter().copied(), Some(pools))?;
                if force_bit.is_some_and(|b| b != label.bit) {
                    continue;
                }
                game.ranges.push(range);
                game.labels.push(label);
            }
            Ok(game)
        }
    }
}

/// Attack-set sampling options for a simulated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSampling {
    pub n_samples: usize,
    #[serde(default)]
    pub include_mode_imputed: bool,
    /// Fraction of training records in each in-range pool's attack set.
    #[serde(default)]
    pub member_density: Option<f64>,
    pub seed: u64,
}

/// Everything a simulated run produces before scoring.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub world: SimWorld,
    pub game: RangeGame,
    pub attack_sets: AttackSets,
    /// Sampled records that did not exist in the world.
    pub candidates: Vec<DataRecord>,
    pub calibration: Option<Calibration>,
    /// Signals for every world record, center and candidate.
    pub signals: SignalMatrix,
}

impl SimRun {
    pub fn labels(&self) -> &[RangeLabel] {
        &self.game.labels
    }

    pub fn target_members(&self) -> &BTreeSet<RecordId> {
        self.world.records.member_ids()
    }

    /// Labels of the calibration ranges against each reference model.
    pub fn calibration_labels(&self) -> Result<Vec<Vec<RangeLabel>>> {
        let cal = self
            .calibration
            .as_ref()
            .ok_or_else(|| Error::Config("run has no calibration ranges".into()))?;
        pipeline::calibration_labels(cal, |id| self.world.population.get(id), None)
    }
}

fn sampler_spec(world: &SimWorld, sampling: &SimSampling) -> SamplerSpec {
    SamplerSpec {
        kind: match world.config.ranges {
            RangeSetup::MaskedColumns { .. } => SamplerKind::BernoulliTabular,
            _ => SamplerKind::CandidatePool,
        },
        n_samples: sampling.n_samples,
        include_mode_imputed: sampling.include_mode_imputed,
        seed: sampling.seed,
    }
}

/// Builds the world, plays the range game, samples attack sets and computes
/// all signals. With `calibrate`, also builds calibration ranges around the
/// training records of the reference model that the trim sweep will pick as
/// temporary target (masked-column worlds only).
pub fn simulate(config: &SimConfig, seed: u64, sampling: &SimSampling, calibrate: bool) -> Result<SimRun> {
    let world = SimWorld::build(config, seed)?;
    simulate_in(world, sampling, calibrate)
}

/// [`simulate`] in an existing world, e.g. to resample with another seed.
pub fn simulate_in(world: SimWorld, sampling: &SimSampling, calibrate: bool) -> Result<SimRun> {
    let game = play_range_game(&world, world.config.n_games, world.seed, None)?;
    let spec = sampler_spec(&world, sampling);
    spec.validate()?;
    let mut next = world.next_id() + game.centers.len() as u64;

    let (attack_sets, candidates) = match world.config.ranges {
        RangeSetup::MaskedColumns { .. } => {
            let ctx = SamplingContext { column_means: Some(&world.column_means), ..Default::default() };
            pipeline::sample_attack_sets(&game.ranges, &ctx, &spec, next)?
        }
        _ => {
            // Member density is a property of in-ranges; out-range pools hold no members.
            let pools = world.pools.as_ref().expect("pool world has pools");
            let mut sets = AttackSets::new();
            for (range, label) in game.ranges.iter().zip(&game.labels) {
                let density = sampling.member_density.filter(|_| label.is_in());
                let picked = samplers::sample_pool(range, pools, &world.records, &spec, density)?;
                sets.insert(range.id, picked.iter().map(|r| r.id).collect());
            }
            (sets, Vec::new())
        }
    };
    next += candidates.len() as u64;

    let calibration = match (calibrate, &world.config.ranges) {
        (true, RangeSetup::MaskedColumns { k }) => {
            let t = choose_temporary_target(world.config.n_refs, world.seed)?;
            let universe = Dataset::new(
                Schema::Binary,
                world.population.records().to_vec(),
                world.ref_members[t].iter().copied(),
                Split::Nonmember,
            )?;
            let challenger = MaskedChallenger {
                universe: &universe,
                column_means: &world.column_means,
                k: *k,
                range_id_base: game.ranges.len() as u64,
                center_id_base: next,
            };
            let cal_game = challenger.play(world.config.n_games, derive_seed(world.seed, STREAM_CALIBRATION), None)?;
            next += cal_game.centers.len() as u64;
            let ctx = SamplingContext { column_means: Some(&world.column_means), ..Default::default() };
            let (cal_sets, cal_candidates) = pipeline::sample_attack_sets(&cal_game.ranges, &ctx, &spec, next)?;
            Some((
                Calibration { ranges: cal_game.ranges, attack_sets: cal_sets, ref_members: world.ref_members.clone() },
                cal_game.centers,
                cal_candidates,
            ))
        }
        (true, _) => {
            return Err(Error::Config("trim calibration is only simulated for masked-column worlds".into()));
        }
        (false, _) => None,
    };

    let mut scored: Vec<&DataRecord> = world
        .records
        .records()
        .iter()
        .chain(world.population.records())
        .chain(&game.centers)
        .chain(&candidates)
        .collect();
    if let Some((_, centers, cands)) = &calibration {
        scored.extend(centers.iter().chain(cands));
    }
    let signals = world.models.signals_for(scored)?;
    let (calibration, candidates) = match calibration {
        Some((cal, centers, cands)) => {
            let mut all = candidates;
            all.extend(centers);
            all.extend(cands);
            (Some(cal), all)
        }
        None => (None, candidates),
    };
    Ok(SimRun { world, game, attack_sets, candidates, calibration, signals })
}

/// Outcome of attacking a simulated run with both the point attack on range
/// centers and the range attack.
#[derive(Clone, Debug)]
pub struct RunAttack {
    pub report: EvalReport,
    pub mia_scores: Vec<(RangeId, f64)>,
    pub ramia_scores: Vec<(RangeId, f64)>,
    pub sweep: Option<SweepOutcome>,
}

/// Scores the run with `scorer` and evaluates both attacks. A sweep policy
/// needs a run simulated with calibration.
pub fn attack_run(
    run: &SimRun,
    scorer: &ScorerConfig,
    trim: &TrimPolicy,
    fpr_targets: &[f64],
) -> Result<RunAttack> {
    trim.validate()?;
    let members = run.target_members();
    let model = pipeline::build_scorer(scorer, &run.signals, &run.world.population_ids, members)?;
    let (chosen, sweep) = match *trim {
        TrimPolicy::Fixed { q_s, q_e } => (TrimConfig::new(q_s, q_e)?, None),
        TrimPolicy::Sweep { branch, step } => {
            let cal = run
                .calibration
                .as_ref()
                .ok_or_else(|| Error::Config("trim sweep needs calibration ranges".into()))?;
            let labels = run.calibration_labels()?;
            let outcome = pipeline::sweep(
                &run.signals,
                cal,
                &labels,
                scorer,
                &run.world.population_ids,
                branch,
                step,
                run.world.seed,
            )?;
            (outcome.chosen, Some(outcome))
        }
    };
    let mia_scores = pipeline::score_centers(&run.game.ranges, &run.signals, model.as_ref())?;
    let jobs = pipeline::score_ranges(&run.game.ranges, &run.attack_sets, &run.signals, model.as_ref(), &chosen)?;
    let ramia_scores = pipeline::job_scores(&jobs);
    let (point_in, point_out) = eval::split_by_label(&pipeline::score_map(&mia_scores), run.labels())?;
    let (range_in, range_out) = eval::split_by_label(&pipeline::score_map(&ramia_scores), run.labels())?;
    let report = EvalReport {
        ramia: Some(eval::evaluate(&ramia_scores, run.labels(), fpr_targets)?),
        mia: Some(eval::evaluate(&mia_scores, run.labels(), fpr_targets)?),
        trim: Some(chosen),
        seed: run.world.seed,
        percentile_correlation: eval::percentile_correlation(&point_in, &range_in, &point_out, &range_out).ok(),
    };
    Ok(RunAttack { report, mia_scores, ramia_scores, sweep })
}

/// Point queries at Hamming distance `distance` from every target-side record,
/// labelled by the source record's membership. Query `i` gets id
/// `id_base + i`; its label uses `i` as the range id.
pub fn perturbed_queries(
    dataset: &Dataset,
    distance: usize,
    seed: u64,
    id_base: RecordId,
) -> Result<(Vec<DataRecord>, Vec<RangeLabel>)> {
    let mut rng = seeded(seed, STREAM_QUERIES);
    let mut queries = Vec::with_capacity(dataset.len());
    let mut labels = Vec::with_capacity(dataset.len());
    for (i, record) in dataset.records().iter().enumerate() {
        let bits = binary(record)?;
        if distance > bits.len() {
            return Err(Error::Validation(format!("distance {distance} exceeds {} features", bits.len())));
        }
        let id = id_base + i as u64;
        queries.push(DataRecord::new(id, Payload::Binary(flip_bits(bits, distance, &mut rng))));
        labels.push(RangeLabel { range_id: i as u64, bit: u8::from(record.is_member()) });
    }
    Ok((queries, labels))
}

/// Point attack on queries at Hamming distance `distance` from every
/// target-side record of `world`; distance 0 queries the records themselves.
pub fn point_attack(
    world: &SimWorld,
    distance: usize,
    scorer: &ScorerConfig,
    seed: u64,
    fpr_targets: &[f64],
) -> Result<AttackEval> {
    let (queries, labels) = perturbed_queries(&world.records, distance, seed, world.next_id())?;
    let signals = world.models.signals_for(queries.iter().chain(world.population.records()))?;
    let model = pipeline::build_scorer(scorer, &signals, &world.population_ids, world.records.member_ids())?;
    let scores = queries
        .iter()
        .zip(&labels)
        .map(|(q, l)| Ok((l.range_id, model.score(q.id, &signals)?)))
        .collect::<Result<Vec<_>>>()?;
    eval::evaluate(&scores, &labels, fpr_targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(decay: f64) -> MemorizationModel {
        MemorizationModel { mu_in: 3.0, mu_out: 0.0, sigma: 0.5, decay, seed: 1 }
    }

    #[test]
    fn dataset_split_and_determinism() {
        let g = generate_dataset(4, 3, 7).unwrap();
        assert_eq!(g.dataset.members().count(), 2);
        assert_eq!(g.dataset.len(), 4);
        let again = generate_dataset(4, 3, 7).unwrap();
        assert_eq!(g.dataset, again.dataset);
        assert!(generate_dataset(3, 3, 7).is_err());
        assert!(generate_dataset(4, 0, 7).is_err());
        assert!(g.column_probs.iter().all(|p| (0.1..0.9).contains(p)));
    }

    #[test]
    fn column_means_concentrate() {
        let g = generate_dataset(100_000, 4, 3).unwrap();
        let means = samplers::column_means(g.dataset.records()).unwrap();
        for (m, p) in means.iter().zip(&g.column_probs) {
            let sd = (p * (1.0 - p) / 100_000f64).sqrt();
            assert!((m - p).abs() <= 3.0 * sd, "{m} vs {p}");
        }
    }

    #[test]
    fn model_validation() {
        assert!(MemorizationModel { sigma: 0.0, ..model(0.5) }.validate().is_err());
        assert!(MemorizationModel { mu_in: -1.0, ..model(0.5) }.validate().is_err());
        assert!(MemorizationModel { decay: 1.5, ..model(0.5) }.validate().is_err());
    }

    #[test]
    fn boost_decays_with_distance() {
        let m = model(0.5);
        assert_eq!(m.boost(Some(0)), 3.0);
        assert_eq!(m.boost(Some(2)), 0.75);
        assert_eq!(m.boost(None), 0.0);
        let zero = model(0.0);
        assert_eq!(zero.boost(Some(0)), 3.0);
        assert_eq!(zero.boost(Some(1)), 0.0);
        assert_eq!(model(1.0).boost(Some(7)), 3.0);
    }

    #[test]
    fn signals_are_deterministic_per_payload() {
        let g = generate_dataset(20, 16, 2).unwrap();
        let s = synthesize_signals(&g.dataset, &model(0.5), 2).unwrap();
        assert_eq!(s.len(), 20);
        assert_eq!(s.n_refs(), 2);
        let again = synthesize_signals(&g.dataset, &model(0.5), 2).unwrap();
        assert_eq!(s, again);
        // A duplicate payload under a new id gets identical signals.
        let dup = DataRecord::new(99, g.dataset.get(0).unwrap().payload.clone());
        let models = SimulatedModels::new(model(0.5), g.dataset.members(), vec![vec![], vec![]]).unwrap();
        let d = models.signals_for([&dup]).unwrap();
        assert_eq!(d.target(99).unwrap(), s.target(0).unwrap());
        assert_eq!(d.refs(99).unwrap(), s.refs(0).unwrap());
    }

    #[test]
    fn members_are_boosted_on_average() {
        let g = generate_dataset(400, 32, 5).unwrap();
        let s = synthesize_signals(&g.dataset, &model(0.0), 1).unwrap();
        let avg = |member: bool| {
            let v: Vec<f64> = g
                .dataset
                .records()
                .iter()
                .filter(|r| r.is_member() == member)
                .map(|r| s.target(r.id).unwrap())
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(avg(true) > 0.9 && avg(false) < 0.6, "{} {}", avg(true), avg(false));
    }

    #[test]
    fn decay_one_boosts_near_records() {
        // With decay 1 every record within the radius of a member gets the full boost.
        let g = generate_dataset(40, 8, 5).unwrap();
        let s = synthesize_signals(&g.dataset, &model(1.0), 1).unwrap();
        let mean: f64 = g.dataset.records().iter().map(|r| s.target(r.id).unwrap()).sum::<f64>() / 40.0;
        assert!(mean > 0.9, "{mean}");
    }

    fn small(ranges: RangeSetup) -> SimConfig {
        SimConfig {
            n_records: 200,
            n_features: 16,
            population_size: Some(200),
            z_size: 50,
            n_games: 40,
            ranges,
            ..SimConfig::default()
        }
    }

    #[test]
    fn masked_game_labels_match_construction() {
        let world = SimWorld::build(&small(RangeSetup::MaskedColumns { k: 4 }), 3).unwrap();
        let game = play_range_game(&world, 40, 1, None).unwrap();
        let members: Vec<&DataRecord> = world.records.members().collect();
        for (r, l) in game.ranges.iter().zip(&game.labels) {
            assert_eq!(label_range(r, members.iter().copied(), None).unwrap(), *l);
            assert_eq!(r.size, 4);
        }
        assert!(play_range_game(&world, 0, 1, None).unwrap().ranges.is_empty());
        let forced = play_range_game(&world, 10, 1, Some(1)).unwrap();
        assert!(forced.labels.iter().all(|l| l.bit == 1));
    }

    #[test]
    fn out_range_failure_is_generation_error() {
        // Every record is a member, so no out-range exists.
        let universe = Dataset::new(
            Schema::Binary,
            vec![DataRecord::new(0, Payload::Binary(vec![0, 1]))],
            [0],
            Split::Nonmember,
        )
        .unwrap();
        let ch = MaskedChallenger { universe: &universe, column_means: &[0.5, 0.5], k: 1, range_id_base: 0, center_id_base: 10 };
        assert!(matches!(ch.play(1, 0, Some(0)), Err(Error::Generation(_))));
    }

    #[test]
    fn identity_world_pools() {
        let cfg = small(RangeSetup::IdentityPool { group_size: 8, jitter: 2 });
        let world = SimWorld::build(&cfg, 4).unwrap();
        let game = play_range_game(&world, cfg.n_games, 0, None).unwrap();
        assert_eq!(game.ranges.len(), 40);
        for (g, l) in world.groups.iter().zip(&game.labels) {
            let members = g.copies.iter().filter(|id| world.records.get(**id).unwrap().is_member()).count();
            assert_eq!(members, if l.is_in() { 4 } else { 0 });
        }
    }

    #[test]
    fn simulate_covers_every_scored_record() {
        let cfg = small(RangeSetup::MaskedColumns { k: 4 });
        let sampling = SimSampling { n_samples: 5, include_mode_imputed: true, member_density: None, seed: 9 };
        let run = simulate(&cfg, 2, &sampling, true).unwrap();
        run.signals.check_covers(run.game.centers.iter().map(|c| &c.id)).unwrap();
        for ids in run.attack_sets.values() {
            assert_eq!(ids.len(), 5);
            run.signals.check_covers(ids).unwrap();
        }
        let cal = run.calibration.as_ref().unwrap();
        for ids in cal.attack_sets.values() {
            run.signals.check_covers(ids).unwrap();
        }
        run.signals.check_covers(&run.world.population_ids).unwrap();
        let labels = run.calibration_labels().unwrap();
        assert_eq!(labels.len(), cfg.n_refs);
        let again = simulate(&cfg, 2, &sampling, true).unwrap();
        assert_eq!(again.signals, run.signals);
        assert_eq!(again.attack_sets, run.attack_sets);
    }

    #[test]
    fn perturbed_queries_have_requested_distance() {
        let g = generate_dataset(10, 12, 1).unwrap();
        let (q, l) = perturbed_queries(&g.dataset, 2, 0, 100).unwrap();
        for ((query, label), source) in q.iter().zip(&l).zip(g.dataset.records()) {
            let a = query.payload.as_bits().unwrap();
            let b = source.payload.as_bits().unwrap();
            assert_eq!(a.iter().zip(b).filter(|(x, y)| x != y).count(), 2);
            assert_eq!(label.bit, u8::from(source.is_member()));
        }
    }
}
