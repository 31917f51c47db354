//! Dataset manifests: the record set of a run plus its training-member list.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DataRecord, Payload, RecordId, Schema, Split};

#[derive(Deserialize, Serialize)]
struct Manifest {
    schema: Schema,
    records: Vec<DataRecord>,
    members: Vec<RecordId>,
}

/// Records ordered by id, with the training-member index set.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Schema,
    records: Vec<DataRecord>,
    index: HashMap<RecordId, usize>,
    members: BTreeSet<RecordId>,
}

impl Dataset {
    /// Builds a dataset; records whose id is in `members` become `Split::Member`,
    /// every other record gets `others`.
    pub fn new(
        schema: Schema,
        records: Vec<DataRecord>,
        members: impl IntoIterator<Item = RecordId>,
        others: Split,
    ) -> Result<Self> {
        let members: BTreeSet<RecordId> = members.into_iter().collect();
        let mut records = records;
        records.sort_by_key(|r| r.id);
        if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Validation(format!("duplicate record id {}", w[0].id)));
        }
        for record in &mut records {
            normalize_payload(record, schema)?;
            record.split = if members.contains(&record.id) {
                Split::Member
            } else {
                others
            };
        }
        let index: HashMap<RecordId, usize> =
            records.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        if let Some(missing) = members.iter().find(|id| !index.contains_key(id)) {
            return Err(Error::Validation(format!(
                "member id {missing} has no record in the manifest"
            )));
        }
        Ok(Self {
            schema,
            records,
            index,
            members,
        })
    }

    pub fn from_json(text: &str, context: &str, others: Split) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(text).map_err(|e| Error::json(context, e))?;
        Self::new(manifest.schema, manifest.records, manifest.members, others)
    }

    pub fn to_json(&self) -> String {
        let manifest = Manifest {
            schema: self.schema,
            records: self.records.clone(),
            members: self.members.iter().copied().collect(),
        };
        serde_json::to_string(&manifest).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }

    pub fn records(&self) -> &[DataRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: RecordId) -> Result<&DataRecord> {
        self.index
            .get(&id)
            .map(|&i| &self.records[i])
            .ok_or(Error::MissingRecord(id))
    }

    pub fn contains(&self, id: RecordId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn member_ids(&self) -> &BTreeSet<RecordId> {
        &self.members
    }

    pub fn members(&self) -> impl Iterator<Item = &DataRecord> {
        self.records.iter().filter(|r| r.is_member())
    }

    pub fn max_id(&self) -> Option<RecordId> {
        self.records.last().map(|r| r.id)
    }

    /// Union of two datasets with the same schema. Ids must not collide.
    pub fn merged(&self, other: &Dataset) -> Result<Dataset> {
        if self.schema != other.schema {
            return Err(Error::Validation(
                "cannot merge manifests with different schemas".into(),
            ));
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        let splits: HashMap<RecordId, Split> =
            records.iter().map(|r| (r.id, r.split)).collect();
        let members = self.members.iter().chain(&other.members).copied();
        let mut merged = Dataset::new(self.schema, records, members, Split::Unknown)?;
        for record in &mut merged.records {
            record.split = splits[&record.id];
        }
        Ok(merged)
    }
}

/// Loads a manifest; non-member records are marked `Split::Nonmember`.
pub fn load_dataset_manifest(path: &Path) -> Result<Dataset> {
    load_manifest_with(path, Split::Nonmember)
}

/// Loads a candidate manifest (sampler output); non-member records are
/// `Split::Unknown` since nobody asserted anything about them.
pub fn load_candidate_manifest(path: &Path) -> Result<Dataset> {
    load_manifest_with(path, Split::Unknown)
}

fn load_manifest_with(path: &Path, others: Split) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_json(&text, &path.display().to_string(), others)
}

fn normalize_payload(record: &mut DataRecord, schema: Schema) -> Result<()> {
    match (&record.payload, schema) {
        (Payload::Binary(bits), Schema::Binary) => {
            if let Some(bad) = bits.iter().find(|&&b| b > 1) {
                return Err(Error::Validation(format!(
                    "record {}: non-binary feature value {bad}",
                    record.id
                )));
            }
        }
        // `[]` deserializes as an empty bit vector.
        (Payload::Binary(bits), Schema::Tokens) if bits.is_empty() => {
            record.payload = Payload::Tokens(Vec::new());
        }
        (Payload::Tokens(_), Schema::Tokens) => {}
        _ => {
            return Err(Error::Validation(format!(
                "record {}: payload does not match the {schema:?} schema",
                record.id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOUR: &str = r#"{"schema":"binary","records":[
        {"id":3,"payload":[1,1]},{"id":0,"payload":[0,1]},
        {"id":1,"payload":[1,0]},{"id":2,"payload":[0,0],"identity":"alice"}],
        "members":[0,2]}"#;

    #[test]
    fn members_and_nonmembers_come_from_the_member_list() {
        let ds = Dataset::from_json(FOUR, "test", Split::Nonmember).unwrap();
        let splits: Vec<_> = ds.records().iter().map(|r| (r.id, r.split)).collect();
        assert_eq!(
            splits,
            vec![
                (0, Split::Member),
                (1, Split::Nonmember),
                (2, Split::Member),
                (3, Split::Nonmember)
            ]
        );
        assert_eq!(ds.get(2).unwrap().identity.as_deref(), Some("alice"));
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = r#"{"schema":"binary","records":[{"id":7,"payload":[0]},{"id":7,"payload":[1]}],"members":[]}"#;
        let err = Dataset::from_json(text, "test", Split::Nonmember).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("duplicate record id 7"), "{err}");
    }

    #[test]
    fn non_binary_value_rejected() {
        let text = r#"{"schema":"binary","records":[{"id":1,"payload":[0,2]}],"members":[]}"#;
        let err = Dataset::from_json(text, "test", Split::Nonmember).unwrap_err();
        assert!(err.to_string().contains("non-binary"), "{err}");
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = "{\"schema\":\"binary\",\n\"records\": [\n{\"id\": 1, \"payload\": [0,}\n]}";
        match Dataset::from_json(text, "bad.json", Split::Nonmember).unwrap_err() {
            Error::Parse { line, context, .. } => {
                assert_eq!(line, 3);
                assert_eq!(context, "bad.json");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wide_binary_rows_accepted() {
        let row: Vec<String> = (0..600).map(|i| (i % 2).to_string()).collect();
        let text = format!(
            r#"{{"schema":"binary","records":[{{"id":0,"payload":[{}]}}],"members":[0]}}"#,
            row.join(",")
        );
        let ds = Dataset::from_json(&text, "purchase", Split::Nonmember).unwrap();
        assert_eq!(ds.get(0).unwrap().payload.len(), 600);
    }

    #[test]
    fn token_schema() {
        let text = r#"{"schema":"tokens","records":[{"id":0,"payload":["a","b"]},{"id":1,"payload":[]}],"members":[1]}"#;
        let ds = Dataset::from_json(text, "t", Split::Nonmember).unwrap();
        assert_eq!(ds.get(1).unwrap().payload, Payload::Tokens(vec![]));
        let mixed = r#"{"schema":"tokens","records":[{"id":0,"payload":[0,1]}],"members":[]}"#;
        assert!(Dataset::from_json(mixed, "t", Split::Nonmember).is_err());
    }

    #[test]
    fn unknown_member_id_rejected() {
        let text = r#"{"schema":"binary","records":[{"id":0,"payload":[0]}],"members":[5]}"#;
        assert!(Dataset::from_json(text, "t", Split::Nonmember).is_err());
    }

    #[test]
    fn merge_keeps_splits() {
        let a = Dataset::from_json(FOUR, "a", Split::Nonmember).unwrap();
        let b = Dataset::from_json(
            r#"{"schema":"binary","records":[{"id":10,"payload":[1,1]}],"members":[]}"#,
            "b",
            Split::Unknown,
        )
        .unwrap();
        let m = a.merged(&b).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(m.get(10).unwrap().split, Split::Unknown);
        assert_eq!(m.get(1).unwrap().split, Split::Nonmember);
        assert!(a.merged(&a).is_err());
    }
}
