//! Synthetic two-domain click logs with a known latent structure.
//!
//! Every user has a latent preference vector `u`; every item a latent vector
//! `v`. A source-domain click happens with probability
//! `sigmoid(signal * <u, v>)`; a target-domain click with
//! `sigmoid(signal * <R u, v>)`, where `R` rotates each consecutive pair of
//! latent coordinates by `rotation_degrees`. Profile fields expose coarse sign
//! patterns of `u`, so cold users remain predictable from their profile and
//! source behaviour.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ingest::{Column, DomainSchema, Role};
use crate::data::{Domain, DomainPaths, Schema};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_target_items: usize,
    pub n_source_items: usize,
    /// Latent dimension; must be even.
    pub latent_dim: usize,
    pub days: i64,
    pub target_per_user: usize,
    pub source_per_user: usize,
    pub rotation_degrees: f64,
    pub signal: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 400,
            n_target_items: 60,
            n_source_items: 120,
            latent_dim: 4,
            days: 30,
            target_per_user: 10,
            source_per_user: 15,
            rotation_degrees: 60.0,
            signal: 3.0,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_target_items == 0 || self.n_source_items == 0 {
            return Err(Error::Config("synthetic log needs users and items".into()));
        }
        if self.latent_dim == 0 || !self.latent_dim.is_multiple_of(2) {
            return Err(Error::Config("latent_dim must be even and positive".into()));
        }
        if self.days <= 0 || self.target_per_user == 0 || self.source_per_user == 0 {
            return Err(Error::Config("days and per-user counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRow {
    pub user: String,
    pub segment_a: String,
    pub segment_b: String,
    pub item: String,
    pub category: String,
    pub click: u8,
    pub day: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLog {
    pub target: Vec<SyntheticRow>,
    pub source: Vec<SyntheticRow>,
}

fn normal_vec<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    (0..k).map(|_| StandardNormal.sample(rng)).collect()
}

fn rotate_pairs(u: &[f64], degrees: f64) -> Vec<f64> {
    let (s, c) = degrees.to_radians().sin_cos();
    u.chunks(2).flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect()
}

fn sign_pattern(a: f64, b: f64) -> String {
    format!("{}{}", if a >= 0.0 { 'p' } else { 'n' }, if b >= 0.0 { 'p' } else { 'n' })
}

/// Index of the largest-magnitude coordinate, with its sign.
fn category(v: &[f64]) -> String {
    let (i, x) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("nonempty latent");
    format!("c{i}{}", if *x >= 0.0 { 'p' } else { 'n' })
}

pub fn generate_log(cfg: &SyntheticConfig) -> Result<SyntheticLog> {
    cfg.validate()?;
    let k = cfg.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let users: Vec<Vec<f64>> = (0..cfg.n_users).map(|_| normal_vec(&mut rng, k)).collect();
    let target_items: Vec<Vec<f64>> = (0..cfg.n_target_items).map(|_| normal_vec(&mut rng, k)).collect();
    let source_items: Vec<Vec<f64>> = (0..cfg.n_source_items).map(|_| normal_vec(&mut rng, k)).collect();
    let scale = cfg.signal / (k as f64).sqrt();
    let mut log = SyntheticLog::default();
    for (ui, u) in users.iter().enumerate() {
        let ru = rotate_pairs(u, cfg.rotation_degrees);
        let emit = |rng: &mut ChaCha8Rng, n: usize, items: &[Vec<f64>], pref: &[f64], prefix: &str| {
            let mut rows = Vec::with_capacity(n);
            for _ in 0..n {
                let j = rng.random_range(0..items.len());
                let score: f64 = pref.iter().zip(&items[j]).map(|(a, b)| a * b).sum::<f64>() * scale;
                let p = crate::autodiff::stable_sigmoid(score);
                rows.push(SyntheticRow {
                    user: format!("u{ui}"),
                    segment_a: sign_pattern(u[0], u[1]),
                    segment_b: sign_pattern(u[k - 2], u[k - 1]),
                    item: format!("{prefix}{j}"),
                    category: format!("{prefix}{}", category(&items[j])),
                    click: u8::from(rng.random::<f64>() < p),
                    day: rng.random_range(0..cfg.days),
                });
            }
            rows.sort_by_key(|r| r.day);
            rows
        };
        let t = emit(&mut rng, cfg.target_per_user, &target_items, &ru, "t");
        let s = emit(&mut rng, cfg.source_per_user, &source_items, u, "s");
        log.target.extend(t);
        log.source.extend(s);
    }
    Ok(log)
}

/// Schema matching the files written by [`SyntheticLog::write_csv`].
pub fn schema() -> Schema {
    let columns = |item: &str| DomainSchema {
        columns: vec![
            Column { name: "user".into(), role: Role::UserKey },
            Column { name: "user".into(), role: Role::Profile },
            Column { name: "segment_a".into(), role: Role::Profile },
            Column { name: "segment_b".into(), role: Role::Profile },
            Column { name: item.into(), role: Role::Item },
            Column { name: "category".into(), role: Role::Item },
            Column { name: "click".into(), role: Role::Label },
            Column { name: "day".into(), role: Role::Timestamp },
        ],
    };
    Schema {
        label_threshold: None,
        target: columns("ad"),
        source: columns("article"),
    }
}

impl SyntheticLog {
    pub fn len(&self) -> usize {
        self.target.len() + self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `target.csv`, `source.csv` and `schema.toml` into `dir` and
    /// returns the data paths and the schema path.
    pub fn write_csv(&self, dir: &Path) -> Result<(DomainPaths, PathBuf)> {
        fs::create_dir_all(dir)?;
        let paths = DomainPaths {
            target: dir.join("target.csv"),
            source: dir.join("source.csv"),
        };
        for (domain, rows, path) in [
            (Domain::Target, &self.target, &paths.target),
            (Domain::Source, &self.source, &paths.source),
        ] {
            let item = if domain == Domain::Target { "ad" } else { "article" };
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["user", "segment_a", "segment_b", item, "category", "click", "day"])?;
            for r in rows {
                w.write_record([
                    r.user.as_str(),
                    &r.segment_a,
                    &r.segment_b,
                    &r.item,
                    &r.category,
                    &r.click.to_string(),
                    &r.day.to_string(),
                ])?;
            }
            w.flush()?;
        }
        let schema_path = dir.join("schema.toml");
        fs::write(&schema_path, schema().to_toml())?;
        Ok((paths, schema_path))
    }
}
