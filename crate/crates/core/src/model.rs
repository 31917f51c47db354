//! Domain types shared across the crate: records, ranges, labels and trim windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type RecordId = u64;
pub type RangeId = u64;

/// Record contents: an ordered bit vector or an ordered word sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Binary(Vec<u8>),
    Tokens(Vec<String>),
}

impl Payload {
    /// Splits on whitespace. Words are compared case-sensitively afterwards.
    pub fn from_text(text: &str) -> Self {
        Payload::Tokens(text.split_whitespace().map(str::to_owned).collect())
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::Binary(bits) => bits.len(),
            Payload::Tokens(words) => words.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn schema(&self) -> Schema {
        match self {
            Payload::Binary(_) => Schema::Binary,
            Payload::Tokens(_) => Schema::Tokens,
        }
    }

    pub fn as_bits(&self) -> Option<&[u8]> {
        match self {
            Payload::Binary(bits) => Some(bits),
            Payload::Tokens(_) => None,
        }
    }

    pub fn as_tokens(&self) -> Option<&[String]> {
        match self {
            Payload::Tokens(words) => Some(words),
            Payload::Binary(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Binary,
    Tokens,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Member,
    Nonmember,
    Population,
    #[default]
    Unknown,
}

/// One data point. Immutable once loaded; masking builds a new [`RangeQuery`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRecord {
    pub id: RecordId,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(skip)]
    pub split: Split,
}

impl DataRecord {
    pub fn new(id: RecordId, payload: Payload) -> Self {
        Self {
            id,
            payload,
            identity: None,
            split: Split::Unknown,
        }
    }

    pub fn with_identity(mut self, identity: impl Into<String>) -> Self {
        self.identity = Some(identity.into());
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn is_member(&self) -> bool {
        self.split == Split::Member
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeFn {
    MaskedColumns,
    Hamming,
    CandidatePool,
}

/// A range: a center record, the predicate that defines the range, and its size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeQuery {
    pub id: RangeId,
    pub center: DataRecord,
    pub range_fn: RangeFn,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_id: Option<String>,
}

impl RangeQuery {
    /// Masked-column range. The mask is sorted; the center keeps whatever values it
    /// has at masked positions, they are ignored by the range predicate.
    pub fn masked_columns(id: RangeId, center: DataRecord, mut mask: Vec<usize>) -> Result<Self> {
        mask.sort_unstable();
        let range = Self {
            id,
            center,
            range_fn: RangeFn::MaskedColumns,
            size: mask.len(),
            mask: Some(mask),
            pool_id: None,
        };
        range.validate()?;
        Ok(range)
    }

    pub fn hamming(id: RangeId, center: DataRecord, distance: usize) -> Result<Self> {
        let range = Self {
            id,
            center,
            range_fn: RangeFn::Hamming,
            size: distance,
            mask: None,
            pool_id: None,
        };
        range.validate()?;
        Ok(range)
    }

    pub fn candidate_pool(
        id: RangeId,
        center: DataRecord,
        pool_id: impl Into<String>,
        size: usize,
    ) -> Result<Self> {
        let range = Self {
            id,
            center,
            range_fn: RangeFn::CandidatePool,
            size,
            mask: None,
            pool_id: Some(pool_id.into()),
        };
        range.validate()?;
        Ok(range)
    }

    /// Checks the structural invariants for the range function.
    ///
    /// A zero-size masked or Hamming range is accepted: it is the point query
    /// of its center.
    pub fn validate(&self) -> Result<()> {
        match self.range_fn {
            RangeFn::MaskedColumns => {
                let mask = self.mask.as_ref().ok_or_else(|| {
                    Error::Validation(format!("range {}: masked-columns range needs a mask", self.id))
                })?;
                if mask.len() != self.size {
                    return Err(Error::Validation(format!(
                        "range {}: size {} does not match mask length {}",
                        self.id,
                        self.size,
                        mask.len()
                    )));
                }
                if mask.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Validation(format!(
                        "range {}: mask must be strictly increasing",
                        self.id
                    )));
                }
                let width = self.center.payload.len();
                if let Some(&bad) = mask.iter().find(|&&j| j >= width) {
                    return Err(Error::Validation(format!(
                        "range {}: mask index {bad} out of bounds for {width} features",
                        self.id
                    )));
                }
                if self.center.payload.schema() != Schema::Binary {
                    return Err(Error::Validation(format!(
                        "range {}: masked-columns range needs a binary center",
                        self.id
                    )));
                }
            }
            RangeFn::Hamming => {
                if self.center.payload.schema() != Schema::Tokens {
                    return Err(Error::Validation(format!(
                        "range {}: hamming range needs a token-sequence center",
                        self.id
                    )));
                }
            }
            RangeFn::CandidatePool => {
                if self.pool_id.is_none() {
                    return Err(Error::Validation(format!(
                        "range {}: candidate-pool range needs a pool_id",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mask(&self) -> &[usize] {
        self.mask.as_deref().unwrap_or(&[])
    }
}

/// Ground truth for a range: 1 iff it contains at least one training record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeLabel {
    pub range_id: RangeId,
    pub bit: u8,
}

impl RangeLabel {
    pub fn is_in(&self) -> bool {
        self.bit == 1
    }
}

/// Percentile window `(q_s, q_e]` dropped before averaging.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimConfig {
    pub q_s: f64,
    pub q_e: f64,
}

impl TrimConfig {
    pub fn new(q_s: f64, q_e: f64) -> Result<Self> {
        let trim = Self { q_s, q_e };
        trim.validate()?;
        Ok(trim)
    }

    /// No trimming at all.
    pub fn none() -> Self {
        Self { q_s: 100.0, q_e: 100.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.q_s.is_finite()
            && self.q_e.is_finite()
            && 0.0 <= self.q_s
            && self.q_s <= self.q_e
            && self.q_e <= 100.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "trim window needs 0 <= q_s <= q_e <= 100, got q_s={} q_e={}",
                self.q_s, self.q_e
            )))
        }
    }

    pub fn width(&self) -> f64 {
        self.q_e - self.q_s
    }
}
