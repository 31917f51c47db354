//! Attack-set samplers: draw candidate records inside a range.
//!
//! Every sampler call owns a generator seeded from `(spec.seed, range.id)`, so the
//! attack set of a range does not depend on which other ranges were sampled or in
//! what order.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{DataRecord, Payload, RangeFn, RangeQuery, RecordId, Split};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    BernoulliTabular,
    HammingSubstitution,
    CandidatePool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub n_samples: usize,
    #[serde(default)]
    pub include_mode_imputed: bool,
    pub seed: u64,
}

impl SamplerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mode imputation of one column: 1 iff the mean is strictly above one half.
pub fn mode_bit(mean: f64) -> u8 {
    u8::from(mean > 0.5)
}

/// Center with every masked position replaced by its column mode.
pub fn mode_imputed(range: &RangeQuery, column_means: &[f64]) -> Result<Vec<u8>> {
    let bits = tabular_center(range, column_means)?;
    let mut out = bits.to_vec();
    for &j in range.mask() {
        out[j] = mode_bit(column_means[j]);
    }
    Ok(out)
}

fn tabular_center<'a>(range: &'a RangeQuery, column_means: &[f64]) -> Result<&'a [u8]> {
    if range.range_fn != RangeFn::MaskedColumns {
        return Err(Error::Validation(format!(
            "range {}: Bernoulli sampling needs a masked-columns range",
            range.id
        )));
    }
    range.validate()?;
    let bits = range.center.payload.as_bits().ok_or_else(|| {
        Error::Validation(format!("range {}: center is not binary", range.id))
    })?;
    if column_means.len() != bits.len() {
        return Err(Error::Validation(format!(
            "{} column means for {} features",
            column_means.len(),
            bits.len()
        )));
    }
    if let Some(m) = column_means.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::Validation(format!("column mean {m} outside [0, 1]")));
    }
    Ok(bits)
}

/// Masked positions are drawn independently from `Bernoulli(column_means[j])`;
/// unmasked positions are copied from the center. With `include_mode_imputed`
/// the first sample is the mode imputation. Sampled records get ids
/// `id_base, id_base + 1, ...`.
pub fn sample_bernoulli_tabular(
    range: &RangeQuery,
    column_means: &[f64],
    spec: &SamplerSpec,
    id_base: RecordId,
) -> Result<Vec<DataRecord>> {
    spec.validate()?;
    let center = tabular_center(range, column_means)?;
    let mut rng = seeded(spec.seed, range.id);
    let mut out = Vec::with_capacity(spec.n_samples);
    if spec.include_mode_imputed {
        out.push(mode_imputed(range, column_means)?);
    }
    while out.len() < spec.n_samples {
        let mut bits = center.to_vec();
        for &j in range.mask() {
            bits[j] = u8::from(rng.random::<f64>() < column_means[j]);
        }
        out.push(bits);
    }
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(i, bits)| candidate(range, id_base + i as u64, Payload::Binary(bits)))
        .collect())
}

fn candidate(range: &RangeQuery, id: RecordId, payload: Payload) -> DataRecord {
    DataRecord {
        id,
        payload,
        identity: range.center.identity.clone(),
        split: Split::Unknown,
    }
}

/// Supplies replacement words for masked positions of a sentence.
pub trait FillProvider: Send + Sync {
    fn fill(&self, center: &DataRecord, position: usize, rng: &mut dyn RngCore) -> Result<String>;
}

/// Uniform draw from a vocabulary.
#[derive(Clone, Debug)]
pub struct VocabularyFill {
    words: Vec<String>,
}

impl VocabularyFill {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        Ok(Self { words })
    }

    /// One token per line; blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect(),
        )
    }
}

impl FillProvider for VocabularyFill {
    fn fill(&self, _center: &DataRecord, _position: usize, rng: &mut dyn RngCore) -> Result<String> {
        Ok(self.words[rng.random_range(0..self.words.len())].clone())
    }
}

/// Precomputed candidate words per (center record, position), e.g. the top
/// choices of an external masked language model.
///
/// File format: `{"<center id>": [["w", ...], ["w", ...], ...]}`, one list per position.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PositionalFill {
    lists: BTreeMap<RecordId, Vec<Vec<String>>>,
}

impl PositionalFill {
    pub fn new(lists: BTreeMap<RecordId, Vec<Vec<String>>>) -> Self {
        Self { lists }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

impl FillProvider for PositionalFill {
    fn fill(&self, center: &DataRecord, position: usize, rng: &mut dyn RngCore) -> Result<String> {
        let choices = self
            .lists
            .get(&center.id)
            .and_then(|per_pos| per_pos.get(position))
            .filter(|c| !c.is_empty())
            .ok_or_else(|| {
                Error::Provider(format!(
                    "no fill candidates for record {} position {position}",
                    center.id
                ))
            })?;
        Ok(choices[rng.random_range(0..choices.len())].clone())
    }
}

/// Each sample masks `range.size` distinct positions, chosen afresh per sample,
/// and fills each from the provider.
pub fn sample_hamming(
    range: &RangeQuery,
    provider: &dyn FillProvider,
    spec: &SamplerSpec,
    id_base: RecordId,
) -> Result<Vec<DataRecord>> {
    spec.validate()?;
    if range.range_fn != RangeFn::Hamming {
        return Err(Error::Validation(format!(
            "range {}: Hamming sampling needs a hamming range",
            range.id
        )));
    }
    range.validate()?;
    let words = range.center.payload.as_tokens().expect("validated token center");
    if words.len() < range.size {
        return Err(Error::Validation(format!(
            "range {}: sentence has {} words, fewer than distance {}",
            range.id,
            words.len(),
            range.size
        )));
    }
    let mut rng = seeded(spec.seed, range.id);
    (0..spec.n_samples)
        .map(|i| {
            let mut sample = words.to_vec();
            for pos in index::sample(&mut rng, words.len(), range.size) {
                sample[pos] = provider.fill(&range.center, pos, &mut rng)?;
            }
            Ok(candidate(range, id_base + i as u64, Payload::Tokens(sample)))
        })
        .collect()
}

/// Pre-enumerated candidate pools keyed by pool id.
///
/// File format: `{"<pool id>": [record ids]}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidatePools {
    pools: BTreeMap<String, Vec<RecordId>>,
}

impl CandidatePools {
    pub fn new(pools: BTreeMap<String, Vec<RecordId>>) -> Self {
        Self { pools }
    }

    pub fn insert(&mut self, pool_id: impl Into<String>, ids: Vec<RecordId>) {
        self.pools.insert(pool_id.into(), ids);
    }

    pub fn get(&self, pool_id: &str) -> Option<&[RecordId]> {
        self.pools.get(pool_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<RecordId>)> {
        self.pools.iter()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self).expect("pools serialize");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Draws `min(n_samples, |pool|)` pool records without replacement.
///
/// With `member_density = Some(ρ)` the draw is rebalanced so that
/// `round(ρ·m)` of the `m` returned records are training members, where `m`
/// is the largest size `≤ min(n_samples, |pool|)` the pool composition allows.
pub fn sample_pool(
    range: &RangeQuery,
    pools: &CandidatePools,
    records: &Dataset,
    spec: &SamplerSpec,
    member_density: Option<f64>,
) -> Result<Vec<DataRecord>> {
    spec.validate()?;
    if range.range_fn != RangeFn::CandidatePool {
        return Err(Error::Validation(format!(
            "range {}: pool sampling needs a candidate-pool range",
            range.id
        )));
    }
    let pool_id = range.pool_id.as_deref().expect("validated pool range");
    let ids = pools
        .get(pool_id)
        .ok_or_else(|| Error::Validation(format!("unknown candidate pool {pool_id:?}")))?;
    if ids.is_empty() {
        return Err(Error::Validation(format!("candidate pool {pool_id:?} is empty")));
    }
    let pool = ids
        .iter()
        .map(|&id| records.get(id))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = seeded(spec.seed, range.id);
    let want = spec.n_samples.min(pool.len());

    let chosen: Vec<&DataRecord> = match member_density {
        None => index::sample(&mut rng, pool.len(), want)
            .into_iter()
            .map(|i| pool[i])
            .collect(),
        Some(density) => {
            if !(0.0..=1.0).contains(&density) {
                return Err(Error::Config(format!("member density {density} outside [0, 1]")));
            }
            let (members, others): (Vec<&DataRecord>, Vec<&DataRecord>) =
                pool.iter().partition(|r| r.is_member());
            let (m, k) = (1..=want)
                .rev()
                .map(|m| (m, (density * m as f64).round() as usize))
                .find(|&(m, k)| {
                    k <= members.len() && m - k <= others.len() && (density == 0.0 || k > 0)
                })
                .ok_or_else(|| {
                    Error::Config(format!(
                        "member density {density} unattainable from pool {pool_id:?} \
                         ({} members, {} non-members)",
                        members.len(),
                        others.len()
                    ))
                })?;
            let mut picked: Vec<&DataRecord> = index::sample(&mut rng, members.len(), k)
                .into_iter()
                .map(|i| members[i])
                .chain(
                    index::sample(&mut rng, others.len(), m - k)
                        .into_iter()
                        .map(|i| others[i]),
                )
                .collect();
            picked.shuffle(&mut rng);
            picked
        }
    };
    Ok(chosen.into_iter().cloned().collect())
}

/// Everything a sampler might need; only the parts relevant to the range
/// function have to be present.
#[derive(Clone, Copy, Default)]
pub struct SamplingContext<'a> {
    pub column_means: Option<&'a [f64]>,
    pub fill: Option<&'a dyn FillProvider>,
    pub pools: Option<&'a CandidatePools>,
    pub records: Option<&'a Dataset>,
    pub member_density: Option<f64>,
}

/// Dispatches on the range function. Fresh candidates (tabular, Hamming) get
/// ids starting at `id_base`; pool candidates keep their own ids.
pub fn sample_range(
    range: &RangeQuery,
    ctx: &SamplingContext<'_>,
    spec: &SamplerSpec,
    id_base: RecordId,
) -> Result<Vec<DataRecord>> {
    let missing = |what: &str| Error::Config(format!("range {}: sampler needs {what}", range.id));
    match range.range_fn {
        RangeFn::MaskedColumns => {
            let means = ctx.column_means.ok_or_else(|| missing("column means"))?;
            sample_bernoulli_tabular(range, means, spec, id_base)
        }
        RangeFn::Hamming => {
            let fill = ctx.fill.ok_or_else(|| missing("a fill provider"))?;
            sample_hamming(range, fill, spec, id_base)
        }
        RangeFn::CandidatePool => {
            let pools = ctx.pools.ok_or_else(|| missing("candidate pools"))?;
            let records = ctx.records.ok_or_else(|| missing("the pool records"))?;
            sample_pool(range, pools, records, spec, ctx.member_density)
        }
    }
}

/// Per-column mean of binary records.
pub fn column_means<'a>(records: impl IntoIterator<Item = &'a DataRecord>) -> Result<Vec<f64>> {
    let mut sums: Vec<u64> = Vec::new();
    let mut n = 0u64;
    for record in records {
        let bits = record.payload.as_bits().ok_or_else(|| {
            Error::Validation(format!("record {} is not binary", record.id))
        })?;
        if n == 0 {
            sums = vec![0; bits.len()];
        } else if bits.len() != sums.len() {
            return Err(Error::Validation(format!(
                "record {} has {} features, expected {}",
                record.id,
                bits.len(),
                sums.len()
            )));
        }
        for (s, &b) in sums.iter_mut().zip(bits) {
            *s += u64::from(b);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Validation("cannot compute column means of no records".into()));
    }
    Ok(sums.into_iter().map(|s| s as f64 / n as f64).collect())
}

/// CSV `index,mean`.
pub fn write_column_means(means: &[f64], path: &Path) -> Result<()> {
    let mut text = String::from("index,mean\n");
    for (j, m) in means.iter().enumerate() {
        text.push_str(&format!("{j},{m}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_column_means(path: &Path) -> Result<Vec<f64>> {
    let ctx = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(&ctx, e))?;
    let mut by_index: HashMap<usize, f64> = HashMap::new();
    for row in reader.deserialize::<(usize, f64)>() {
        let (j, m) = row.map_err(|e| Error::csv(&ctx, e))?;
        if by_index.insert(j, m).is_some() {
            return Err(Error::Validation(format!("{ctx}: duplicate column index {j}")));
        }
    }
    (0..by_index.len())
        .map(|j| {
            by_index
                .get(&j)
                .copied()
                .ok_or_else(|| Error::Validation(format!("{ctx}: column index {j} missing")))
        })
        .collect()
}
