//! Versioned plain-text checkpoints.
//!
//! ```text
//! dadin-checkpoint 1
//! config {"embed_dim":64,...}
//! layout {"profile":[...],...}
//! param theta_f 12x64 emb.profile.user
//! 0.0123 -0.004 ...
//! ```
//!
//! Each `param` line gives the partition, the shape and the name (the rest of
//! the line); the next line holds the values in row-major order. Values are
//! written in Rust's shortest round-trip form, so loading is exact.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dadin, FeatureLayout, ModelConfig};
use crate::params::{ParamStore, Partition};
use crate::tensor::Tensor;

pub const MAGIC: &str = "dadin-checkpoint";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &Dadin, mut w: W) -> Result<()> {
    writeln!(w, "{MAGIC} {VERSION}")?;
    writeln!(w, "config {}", serde_json::to_string(model.config())?)?;
    writeln!(w, "layout {}", serde_json::to_string(model.layout())?)?;
    for p in model.params().iter() {
        let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        writeln!(w, "param {} {} {}", p.partition, dims.join("x"), p.name)?;
        let values: Vec<String> = p.value.data().iter().map(f64::to_string).collect();
        writeln!(w, "{}", values.join(" "))?;
    }
    Ok(())
}

pub fn save_checkpoint(model: &Dadin, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(model, &mut f)?;
    f.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Dadin> {
    let mut lines = BufReader::new(r).lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| bad(format!("truncated checkpoint: expected {what}")))
    };
    let header = next("header")?;
    let version = header
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| bad("not a dadin checkpoint"))?;
    if version != VERSION.to_string() {
        return Err(bad(format!("checkpoint format version {version} is not supported (expected {VERSION})")));
    }
    let config: ModelConfig = serde_json::from_str(
        next("config")?
            .strip_prefix("config ")
            .ok_or_else(|| bad("missing config line"))?,
    )?;
    let layout: FeatureLayout = serde_json::from_str(
        next("layout")?
            .strip_prefix("layout ")
            .ok_or_else(|| bad("missing layout line"))?,
    )?;
    let mut store = ParamStore::new();
    while let Some(line) = lines.next().transpose()? {
        if line.trim().is_empty() {
            continue;
        }
        let rest = line.strip_prefix("param ").ok_or_else(|| bad(format!("unexpected line `{line}`")))?;
        let mut parts = rest.splitn(3, ' ');
        let (Some(part), Some(dims), Some(name)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(format!("malformed parameter line `{line}`")));
        };
        let partition: Partition = part.parse()?;
        let shape = dims
            .split('x')
            .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad shape `{dims}`"))))
            .collect::<Result<Vec<_>>>()?;
        let values_line = lines
            .next()
            .transpose()?
            .ok_or_else(|| bad(format!("missing values for `{name}`")))?;
        let values = values_line
            .split_ascii_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}` in `{name}`"))))
            .collect::<Result<Vec<_>>>()?;
        let tensor = Tensor::new(shape, values).map_err(|e| bad(format!("parameter `{name}`: {e}")))?;
        if store.id(name).is_some() {
            return Err(bad(format!("duplicate parameter `{name}`")));
        }
        store.add(name, partition, tensor);
    }
    let mut model = Dadin::new(config, layout, 0)?;
    model.load_params(&store)?;
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Dadin> {
    read_checkpoint(std::fs::File::open(path)?)
}
