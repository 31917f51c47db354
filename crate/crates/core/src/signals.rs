//! Per-record model signals `P(x | θ)` for the target and reference models.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RecordId;

/// Smallest signal kept after ingestion. Scorers divide by signals.
pub const SIGNAL_FLOOR: f64 = 1e-12;

/// JSON sidecar describing a signal CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSidecar {
    pub n_refs: usize,
    pub signal_kind: String,
    /// Producer-specific notes (NLL convention, precision, ...), kept verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl SignalSidecar {
    pub fn prob(n_refs: usize) -> Self {
        Self {
            n_refs,
            signal_kind: "prob".into(),
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SignalMatrix {
    record_ids: Vec<RecordId>,
    target: Vec<f64>,
    refs: Vec<f64>,
    n_refs: usize,
    index: HashMap<RecordId, usize>,
    clamped: usize,
}

impl SignalMatrix {
    pub fn new(n_refs: usize) -> Self {
        Self {
            n_refs,
            ..Self::default()
        }
    }

    /// Adds one row. Values below [`SIGNAL_FLOOR`] are raised to it; values
    /// above 1, negative or non-finite values are rejected.
    pub fn push(&mut self, id: RecordId, target: f64, refs: &[f64]) -> Result<()> {
        if refs.len() != self.n_refs {
            return Err(Error::Validation(format!(
                "record {id}: expected {} reference signals, got {}",
                self.n_refs,
                refs.len()
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Validation(format!("duplicate signal row for record {id}")));
        }
        let target = self.checked(id, target)?;
        let refs = refs
            .iter()
            .map(|&v| self.checked(id, v))
            .collect::<Result<Vec<_>>>()?;
        self.index.insert(id, self.record_ids.len());
        self.record_ids.push(id);
        self.target.push(target);
        self.refs.extend(refs);
        Ok(())
    }

    fn checked(&mut self, id: RecordId, value: f64) -> Result<f64> {
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(Error::Validation(format!(
                "record {id}: signal {value} outside [0, 1]"
            )));
        }
        if value < SIGNAL_FLOOR {
            self.clamped += 1;
            Ok(SIGNAL_FLOOR)
        } else {
            Ok(value)
        }
    }

    pub fn n_refs(&self) -> usize {
        self.n_refs
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn record_ids(&self) -> &[RecordId] {
        &self.record_ids
    }

    /// Number of values raised to the floor so far.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn contains(&self, id: RecordId) -> bool {
        self.index.contains_key(&id)
    }

    fn row(&self, id: RecordId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::MissingRecord(id))
    }

    pub fn target(&self, id: RecordId) -> Result<f64> {
        Ok(self.target[self.row(id)?])
    }

    pub fn refs(&self, id: RecordId) -> Result<&[f64]> {
        let row = self.row(id)?;
        Ok(&self.refs[row * self.n_refs..(row + 1) * self.n_refs])
    }

    /// Referential integrity: every id must have a row.
    pub fn check_covers<'a>(&self, ids: impl IntoIterator<Item = &'a RecordId>) -> Result<()> {
        match ids.into_iter().find(|id| !self.contains(**id)) {
            Some(&id) => Err(Error::Validation(format!(
                "record {id} is referenced but has no signal row"
            ))),
            None => Ok(()),
        }
    }

    /// Re-targets the matrix at reference model `t`; the remaining reference
    /// models stay references. The original target column is dropped.
    pub fn reference_as_target(&self, t: usize) -> Result<SignalMatrix> {
        if t >= self.n_refs {
            return Err(Error::Config(format!(
                "reference index {t} out of range for {} reference models",
                self.n_refs
            )));
        }
        let mut out = SignalMatrix::new(self.n_refs - 1);
        for (row, &id) in self.record_ids.iter().enumerate() {
            let refs = &self.refs[row * self.n_refs..(row + 1) * self.n_refs];
            let others: Vec<f64> = refs
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != t)
                .map(|(_, &v)| v)
                .collect();
            out.push(id, refs[t], &others)?;
        }
        Ok(out)
    }

    /// Appends rows of `other`. Ids must not repeat.
    pub fn extend_from(&mut self, other: &SignalMatrix) -> Result<()> {
        if other.n_refs != self.n_refs {
            return Err(Error::Validation(format!(
                "cannot merge signals with {} and {} reference models",
                self.n_refs, other.n_refs
            )));
        }
        for &id in &other.record_ids {
            self.push(id, other.target(id)?, other.refs(id)?)?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path.display().to_string(), e))?;
        let mut header = vec!["id".to_string(), "target".to_string()];
        header.extend((0..self.n_refs).map(|j| format!("ref_{j}")));
        let ctx = || path.display().to_string();
        writer.write_record(&header).map_err(|e| Error::csv(ctx(), e))?;
        for (row, &id) in self.record_ids.iter().enumerate() {
            let mut fields = vec![id.to_string(), self.target[row].to_string()];
            fields.extend(
                self.refs[row * self.n_refs..(row + 1) * self.n_refs]
                    .iter()
                    .map(f64::to_string),
            );
            writer.write_record(&fields).map_err(|e| Error::csv(ctx(), e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads `signals.csv` plus its JSON sidecar. Clamped values are logged.
pub fn load_signals(csv_path: &Path, sidecar_path: &Path) -> Result<(SignalMatrix, SignalSidecar)> {
    let text = std::fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let sidecar: SignalSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::json(sidecar_path.display().to_string(), e))?;
    if sidecar.signal_kind != "prob" {
        return Err(Error::Validation(format!(
            "unsupported signal_kind {:?}; only \"prob\" signals are accepted",
            sidecar.signal_kind
        )));
    }
    let matrix = read_signal_csv(csv_path, sidecar.n_refs)?;
    if matrix.clamped() > 0 {
        log::warn!(
            "{}: {} signal values raised to the floor {SIGNAL_FLOOR:e}",
            csv_path.display(),
            matrix.clamped()
        );
    }
    Ok((matrix, sidecar))
}

pub fn read_signal_csv(path: &Path, n_refs: usize) -> Result<SignalMatrix> {
    let ctx = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(&ctx, e))?;
    let header = reader.headers().map_err(|e| Error::csv(&ctx, e))?.clone();
    let mut expected = vec!["id".to_string(), "target".to_string()];
    expected.extend((0..n_refs).map(|j| format!("ref_{j}")));
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Validation(format!(
            "{ctx}: header {:?} does not match expected {:?}",
            header.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    let mut matrix = SignalMatrix::new(n_refs);
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::csv(&ctx, e))?;
        let bad = |what: &str| Error::Parse {
            context: ctx.clone(),
            line: line + 2,
            column: 0,
            message: format!("invalid {what}"),
        };
        let id: RecordId = row[0].trim().parse().map_err(|_| bad("id"))?;
        let values = row
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad("signal value")))
            .collect::<Result<Vec<_>>>()?;
        matrix.push(id, values[0], &values[1..])?;
    }
    Ok(matrix)
}

pub fn write_signals(matrix: &SignalMatrix, sidecar: &SignalSidecar, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
    matrix.write_csv(csv_path)?;
    let mut text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    text.push('\n');
    std::fs::write(sidecar_path, text).map_err(|e| Error::io(sidecar_path, e))
}
