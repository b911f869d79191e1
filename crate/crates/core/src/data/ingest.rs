//! CSV ingestion driven by a declarative schema.
//!
//! A schema file is TOML with one column list per domain:
//!
//! ```toml
//! label_threshold = 4.0   # optional; binarizes ratings as value >= threshold
//!
//! [target]
//! columns = [
//!     { name = "user", role = "user_key" },
//!     { name = "age", role = "profile" },
//!     { name = "ad", role = "item" },
//!     { name = "click", role = "label" },
//!     { name = "day", role = "timestamp" },
//! ]
//!
//! [source]
//! columns = [
//!     { name = "user", role = "user_key" },
//!     { name = "age", role = "profile" },
//!     { name = "article", role = "item" },
//!     { name = "click", role = "label" },
//!     { name = "day", role = "timestamp" },
//! ]
//! ```
//!
//! A column may be listed twice to give it two roles (for example a user key
//! that is also embedded as a profile field). The first `item` column of a
//! domain is the item id used by behaviour histories.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Domain, Vocabulary, UNKNOWN_ID};
use crate::error::{Error, Result};
use crate::model::{FeatureLayout, FieldSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    UserKey,
    Profile,
    Item,
    Label,
    Timestamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSchema {
    pub columns: Vec<Column>,
}

impl DomainSchema {
    fn names(&self, role: Role) -> impl Iterator<Item = &str> {
        self.columns
            .iter()
            .filter(move |c| c.role == role)
            .map(|c| c.name.as_str())
    }

    fn single(&self, role: Role, domain: Domain) -> Result<&str> {
        let mut it = self.names(role);
        match (it.next(), it.next()) {
            (Some(name), None) => Ok(name),
            _ => Err(Error::Schema(format!(
                "{} schema needs exactly one {role:?} column",
                domain.as_str()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_threshold: Option<f64>,
    pub target: DomainSchema,
    pub source: DomainSchema,
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    fn domain(&self, domain: Domain) -> &DomainSchema {
        match domain {
            Domain::Target => &self.target,
            Domain::Source => &self.source,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for domain in [Domain::Target, Domain::Source] {
            let ds = self.domain(domain);
            ds.single(Role::UserKey, domain)?;
            ds.single(Role::Label, domain)?;
            ds.single(Role::Timestamp, domain)?;
            if ds.names(Role::Item).next().is_none() {
                return Err(Error::Schema(format!("{} schema has no item column", domain.as_str())));
            }
        }
        if self.profile_fields().is_empty() {
            return Err(Error::Schema("schema declares no profile column".into()));
        }
        Ok(())
    }

    /// Profile fields in declaration order: target columns first, then any
    /// source-only ones.
    pub fn profile_fields(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for name in self.target.names(Role::Profile).chain(self.source.names(Role::Profile)) {
            if !out.iter().any(|n| n == name) {
                out.push(name.to_string());
            }
        }
        out
    }

    pub fn item_fields(&self, domain: Domain) -> Vec<String> {
        self.domain(domain).names(Role::Item).map(str::to_string).collect()
    }
}

/// Paths of the two per-domain CSV files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainPaths {
    pub target: PathBuf,
    pub source: PathBuf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Skip unparseable rows (logging them) instead of failing.
    pub skip_bad_rows: bool,
}

/// One typed interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: usize,
    pub domain: Domain,
    /// Dense user index into [`RawLog::user_keys`].
    pub user: usize,
    pub profile: Vec<usize>,
    pub item: Vec<usize>,
    pub label: f64,
    pub timestamp: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub path: PathBuf,
    pub line: u64,
    pub reason: String,
}

/// The typed interaction log of both domains. Record ids equal positions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RawLog {
    pub records: Vec<Record>,
    pub user_keys: Vec<String>,
    pub profile_fields: Vec<String>,
    pub target_item_fields: Vec<String>,
    pub source_item_fields: Vec<String>,
    pub skipped: Vec<SkippedRow>,
}

/// Vocabulary key of a profile field.
pub fn profile_key(field: &str) -> String {
    format!("profile.{field}")
}

/// Vocabulary key of an item field in `domain`.
pub fn item_key(domain: Domain, field: &str) -> String {
    format!("{}.{field}", domain.as_str())
}

impl RawLog {
    /// Embedding-table layout matching this log's fields and `vocab` sizes.
    pub fn feature_layout(&self, vocab: &Vocabulary) -> FeatureLayout {
        let specs = |keys: Vec<String>, names: &[String]| -> Vec<FieldSpec> {
            keys.iter()
                .zip(names)
                .map(|(k, n)| FieldSpec::new(n.clone(), vocab.size(k)))
                .collect()
        };
        FeatureLayout {
            profile: specs(self.profile_fields.iter().map(|f| profile_key(f)).collect(), &self.profile_fields),
            target_item: specs(
                self.target_item_fields.iter().map(|f| item_key(Domain::Target, f)).collect(),
                &self.target_item_fields,
            ),
            source_item: specs(
                self.source_item_fields.iter().map(|f| item_key(Domain::Source, f)).collect(),
                &self.source_item_fields,
            ),
        }
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.records.iter().filter(|r| r.domain == domain).count()
    }
}

/// Reads both domain files through `schema`. When `vocab` is frozen, unseen
/// categories map to the unknown id; otherwise it grows as rows are read.
pub fn ingest_csv(
    paths: &DomainPaths,
    schema: &Schema,
    vocab: &mut Vocabulary,
    options: IngestOptions,
) -> Result<RawLog> {
    schema.validate()?;
    let mut log = RawLog {
        profile_fields: schema.profile_fields(),
        target_item_fields: schema.item_fields(Domain::Target),
        source_item_fields: schema.item_fields(Domain::Source),
        ..RawLog::default()
    };
    let mut users: HashMap<String, usize> = HashMap::new();
    for (domain, path) in [(Domain::Target, &paths.target), (Domain::Source, &paths.source)] {
        let file = File::open(path)?;
        read_domain(file, path, domain, schema, vocab, options, &mut users, &mut log)?;
    }
    Ok(log)
}

#[allow(clippy::too_many_arguments)]
fn read_domain<R: Read>(
    input: R,
    path: &Path,
    domain: Domain,
    schema: &Schema,
    vocab: &mut Vocabulary,
    options: IngestOptions,
    users: &mut HashMap<String, usize>,
    log: &mut RawLog,
) -> Result<()> {
    let ds = schema.domain(domain);
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Ok(());
    }
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let col = |name: &str| -> Result<usize> {
        index.get(name).copied().ok_or_else(|| {
            Error::Schema(format!("{}: missing column `{name}`", path.display()))
        })
    };
    let user_col = col(ds.single(Role::UserKey, domain)?)?;
    let label_col = col(ds.single(Role::Label, domain)?)?;
    let time_col = col(ds.single(Role::Timestamp, domain)?)?;
    let item_cols = ds.names(Role::Item).map(col).collect::<Result<Vec<_>>>()?;
    let own_profile: Vec<&str> = ds.names(Role::Profile).collect();
    // Profile fields absent from this domain's file read as unknown.
    let profile_cols: Vec<Option<usize>> = log
        .profile_fields
        .iter()
        .map(|f| {
            if own_profile.contains(&f.as_str()) {
                col(f).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let item_names = schema.item_fields(domain);

    for row in reader.records() {
        let parsed = row.map_err(Error::from).and_then(|rec| {
            let line = rec.position().map_or(0, |p| p.line());
            let row_err = |reason: String| Error::Row {
                path: path.to_path_buf(),
                line,
                reason,
            };
            let label = parse_label(rec.get(label_col).unwrap_or(""), schema.label_threshold).map_err(&row_err)?;
            let raw_t = rec.get(time_col).unwrap_or("").trim();
            let timestamp: i64 = raw_t
                .parse()
                .map_err(|_| row_err(format!("timestamp `{raw_t}` is not an integer day")))?;
            let key = rec.get(user_col).unwrap_or("").trim().to_string();
            if key.is_empty() {
                return Err(row_err("empty user key".into()));
            }
            Ok((rec, key, label, timestamp))
        });
        let (rec, key, label, timestamp) = match parsed {
            Ok(v) => v,
            Err(e) if options.skip_bad_rows => {
                let (line, reason) = match &e {
                    Error::Row { line, reason, .. } => (*line, reason.clone()),
                    other => (0, other.to_string()),
                };
                log::warn!("skipping {}:{line}: {reason}", path.display());
                log.skipped.push(SkippedRow {
                    path: path.to_path_buf(),
                    line,
                    reason,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let next = users.len();
        let user = *users.entry(key.clone()).or_insert_with(|| {
            log.user_keys.push(key);
            next
        });
        let profile = log
            .profile_fields
            .iter()
            .zip(&profile_cols)
            .map(|(f, c)| match c {
                Some(c) => vocab.encode(&profile_key(f), rec.get(*c).unwrap_or("")),
                None => UNKNOWN_ID,
            })
            .collect();
        let item = item_names
            .iter()
            .zip(&item_cols)
            .map(|(f, &c)| vocab.encode(&item_key(domain, f), rec.get(c).unwrap_or("")))
            .collect();
        log.records.push(Record {
            id: log.records.len(),
            domain,
            user,
            profile,
            item,
            label,
            timestamp,
        });
    }
    Ok(())
}

fn parse_label(raw: &str, threshold: Option<f64>) -> std::result::Result<f64, String> {
    let raw = raw.trim();
    let v: f64 = raw.parse().map_err(|_| format!("label `{raw}` is not numeric"))?;
    match threshold {
        Some(t) => Ok(if v >= t { 1.0 } else { 0.0 }),
        None if v == 0.0 || v == 1.0 => Ok(v),
        None => Err(format!("label `{raw}` is not 0 or 1")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const SCHEMA: &str = r#"
[target]
columns = [
  { name = "uid", role = "user_key" },
  { name = "uid", role = "profile" },
  { name = "age", role = "profile" },
  { name = "ad", role = "item" },
  { name = "y", role = "label" },
  { name = "day", role = "timestamp" },
]
[source]
columns = [
  { name = "uid", role = "user_key" },
  { name = "uid", role = "profile" },
  { name = "news", role = "item" },
  { name = "y", role = "label" },
  { name = "day", role = "timestamp" },
]
"#;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn paths(dir: &Path, target: &str, source: &str) -> DomainPaths {
        DomainPaths {
            target: write(dir, "t.csv", target),
            source: write(dir, "s.csv", source),
        }
    }

    #[test]
    fn missing_value_maps_to_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let p = paths(
            dir.path(),
            "uid,age,ad,y,day\nu1,,a1,1,3\nu2,30,a2,0,4\n",
            "uid,news,y,day\n",
        );
        let schema = Schema::from_toml(SCHEMA).unwrap();
        let mut vocab = Vocabulary::new();
        let log = ingest_csv(&p, &schema, &mut vocab, IngestOptions::default()).unwrap();
        assert_eq!(log.records.len(), 2);
        assert_eq!(log.records[0].profile[1], UNKNOWN_ID);
        assert_eq!(log.records[1].profile[1], 2);
    }

    #[test]
    fn empty_files_give_empty_log() {
        let dir = tempfile::tempdir().unwrap();
        let p = paths(dir.path(), "", "");
        let schema = Schema::from_toml(SCHEMA).unwrap();
        let log = ingest_csv(&p, &schema, &mut Vocabulary::new(), IngestOptions::default()).unwrap();
        assert!(log.records.is_empty());
    }

    #[test]
    fn missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = paths(dir.path(), "uid,ad,y,day\nu1,a,1,1\n", "uid,news,y,day\n");
        let schema = Schema::from_toml(SCHEMA).unwrap();
        let err = ingest_csv(&p, &schema, &mut Vocabulary::new(), IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(m) if m.contains("age")));
    }

    #[test]
    fn bad_row_fails_or_skips_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = paths(
            dir.path(),
            "uid,age,ad,y,day\nu1,3,a,1,1\nu2,3,a,maybe,2\nu3,3,a,0,2\n",
            "uid,news,y,day\n",
        );
        let schema = Schema::from_toml(SCHEMA).unwrap();
        let err = ingest_csv(&p, &schema, &mut Vocabulary::new(), IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Row { line: 3, .. }), "{err}");
        let log = ingest_csv(
            &p,
            &schema,
            &mut Vocabulary::new(),
            IngestOptions { skip_bad_rows: true },
        )
        .unwrap();
        assert_eq!(log.records.len(), 2);
        assert_eq!(log.skipped.len(), 1);
        assert_eq!(log.skipped[0].line, 3);
    }

    #[test]
    fn label_threshold_binarizes_ratings() {
        assert_eq!(parse_label("4", Some(4.0)), Ok(1.0));
        assert_eq!(parse_label("3.5", Some(4.0)), Ok(0.0));
        assert!(parse_label("3", None).is_err());
    }

    #[test]
    fn schema_requires_single_label() {
        let bad = SCHEMA.replace(r#"{ name = "day", role = "timestamp" }"#, r#"{ name = "day", role = "label" }"#);
        assert!(matches!(Schema::from_toml(&bad), Err(Error::Schema(_))));
    }
}
