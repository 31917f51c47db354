//! Small run-directory file formats: ranges, labels, scores, id lists and
//! attack sets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{RangeId, RangeLabel, RangeQuery, RecordId};

/// Attack set of every range: `{"<range id>": [record ids]}`.
pub type AttackSets = BTreeMap<RangeId, Vec<RecordId>>;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Compact JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_ranges(path: &Path) -> Result<Vec<RangeQuery>> {
    let ranges: Vec<RangeQuery> = read_json(path)?;
    for r in &ranges {
        r.validate()?;
    }
    let mut ids: Vec<RangeId> = ranges.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!("duplicate range id {}", w[0])));
    }
    Ok(ranges)
}

pub fn save_ranges(ranges: &[RangeQuery], path: &Path) -> Result<()> {
    write_json(&ranges, path)
}

/// CSV `range_id,bit`.
pub fn write_labels(labels: &[RangeLabel], path: &Path) -> Result<()> {
    let mut text = String::from("range_id,bit\n");
    for l in labels {
        text.push_str(&format!("{},{}\n", l.range_id, l.bit));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<Vec<RangeLabel>> {
    let ctx = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(&ctx, e))?;
    reader
        .deserialize::<(RangeId, u8)>()
        .map(|row| {
            let (range_id, bit) = row.map_err(|e| Error::csv(&ctx, e))?;
            if bit > 1 {
                return Err(Error::Validation(format!("{ctx}: range {range_id} has bit {bit}")));
            }
            Ok(RangeLabel { range_id, bit })
        })
        .collect()
}

/// CSV `range_id,score`.
pub fn write_scores(scores: &[(RangeId, f64)], path: &Path) -> Result<()> {
    let mut text = String::from("range_id,score\n");
    for (id, s) in scores {
        text.push_str(&format!("{id},{s}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_scores(path: &Path) -> Result<Vec<(RangeId, f64)>> {
    let ctx = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(&ctx, e))?;
    reader
        .deserialize::<(RangeId, f64)>()
        .map(|row| row.map_err(|e| Error::csv(&ctx, e)))
        .collect()
}

/// One record id per line.
pub fn write_id_list(ids: &[RecordId], path: &Path) -> Result<()> {
    let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_id_list(path: &Path) -> Result<Vec<RecordId>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                context: path.display().to_string(),
                line: i + 1,
                column: 0,
                message: format!("invalid record id {l:?}"),
            })
        })
        .collect()
}
