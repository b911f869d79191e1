//! Regenerates the bundled two-domain CSV fixture under `data/synthetic/`.
//!
//! ```text
//! cargo run --example make_fixture [output-dir]
//! ```

use std::path::PathBuf;

use dadin::data::synthetic::{generate_log, SyntheticConfig};

fn main() -> dadin::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic"));
    let log = generate_log(&SyntheticConfig::default())?;
    let (paths, schema) = log.write_csv(&dir)?;
    println!(
        "wrote {} target rows to {}, {} source rows to {}, schema {}",
        log.target.len(),
        paths.target.display(),
        log.source.len(),
        paths.source.display(),
        schema.display()
    );
    Ok(())
}
