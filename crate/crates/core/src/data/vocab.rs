use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::UNKNOWN_ID;
use crate::error::Result;

/// Token that missing cells are mapped to before lookup.
pub const NA_VALUE: &str = "na_value";

/// Dense ids per categorical field. Ids 0 (padding) and 1 (unknown) are
/// reserved; observed categories are numbered from 2 in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    fields: BTreeMap<String, FieldVocab>,
    frozen: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct FieldVocab {
    ids: HashMap<String, usize>,
    categories: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Serialized {
    /// Categories per field in id order, starting at id 2.
    fields: BTreeMap<String, Vec<String>>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stops assigning new ids; unseen categories map to the unknown id.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Id for `value` in `field`, assigning a fresh one unless frozen.
    pub fn encode(&mut self, field: &str, value: &str) -> usize {
        let value = value.trim();
        if value.is_empty() || value == NA_VALUE {
            return UNKNOWN_ID;
        }
        if self.frozen {
            return self.lookup(field, value);
        }
        let fv = self.fields.entry(field.to_string()).or_default();
        if let Some(&id) = fv.ids.get(value) {
            return id;
        }
        let id = fv.categories.len() + 2;
        fv.ids.insert(value.to_string(), id);
        fv.categories.push(value.to_string());
        id
    }

    pub fn lookup(&self, field: &str, value: &str) -> usize {
        self.fields
            .get(field)
            .and_then(|fv| fv.ids.get(value.trim()))
            .copied()
            .unwrap_or(UNKNOWN_ID)
    }

    /// Vocabulary size including the two reserved ids.
    pub fn size(&self, field: &str) -> usize {
        self.fields.get(field).map_or(0, |fv| fv.categories.len()) + 2
    }

    pub fn category(&self, field: &str, id: usize) -> Option<&str> {
        self.fields
            .get(field)
            .and_then(|fv| fv.categories.get(id.checked_sub(2)?))
            .map(String::as_str)
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.keys().map(String::as_str)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        let s = Serialized {
            fields: self
                .fields
                .iter()
                .map(|(k, v)| (k.clone(), v.categories.clone()))
                .collect(),
        };
        serde_json::to_writer_pretty(w, &s)?;
        Ok(())
    }

    /// Loads a vocabulary written by [`Vocabulary::write_json`]; the result
    /// is frozen.
    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let s: Serialized = serde_json::from_reader(r)?;
        let fields = s
            .fields
            .into_iter()
            .map(|(k, categories)| {
                let ids = categories
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (c.clone(), i + 2))
                    .collect();
                (k, FieldVocab { ids, categories })
            })
            .collect();
        Ok(Self {
            fields,
            frozen: true,
        })
    }
}
