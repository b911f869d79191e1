//! Instances, vocabularies, ingestion, history features, resampling and the
//! synthetic generators used by the experiments.

pub mod history;
pub mod ingest;
pub mod moons;
pub mod resample;
pub mod synthetic;
pub mod vocab;

use serde::{Deserialize, Serialize};

pub use history::{build_histories, pad_history};
pub use ingest::{ingest_csv, DomainPaths, IngestOptions, RawLog, Record, Schema};
pub use moons::{generate_moons, MoonsConfig, MoonsData};
pub use resample::{resample, Split, SplitSpec};
pub use vocab::Vocabulary;

/// Reserved id for padding positions in history sequences.
pub const PAD_ID: usize = 0;
/// Reserved id for missing (`na_value`) or unseen categories.
pub const UNKNOWN_ID: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Domain label `d`: 1 for the target domain, 0 for the source domain.
    pub fn label(self) -> f64 {
        match self {
            Domain::Target => 1.0,
            Domain::Source => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Target => "target",
            Domain::Source => "source",
        }
    }
}

/// Categorical ids of the candidate item, tagged by domain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemField {
    Target(Vec<usize>),
    Source(Vec<usize>),
}

/// One user–item interaction, ready for the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    /// Position of the originating record in the interaction log.
    pub record_id: usize,
    pub user: usize,
    /// One id per profile field.
    pub profile: Vec<usize>,
    /// Chronological clicked target items, without padding.
    pub target_history: Vec<usize>,
    /// Chronological clicked source items, without padding.
    pub source_history: Vec<usize>,
    pub item: ItemField,
    /// Click label in {0, 1}.
    pub y: f64,
    pub domain: Domain,
    /// Ordinal day.
    pub timestamp: i64,
}
