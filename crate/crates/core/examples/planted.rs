//! Writes a synthetic planted-rule dataset as train/valid/test sextuple files.
//!
//! cargo run -p ctlogic-core --example planted -- OUT_DIR [SEED]

use std::path::PathBuf;

use ctlogic_core::synthetic::{generate, PlantedConfig};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "planted".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let config = PlantedConfig {
        pool: Some(60),
        noise_facts: 300,
        object_categories: 3,
        seed,
        ..PlantedConfig::default()
    };
    let data = generate(&config);
    data.write(&out)?;
    println!(
        "{} train, {} valid, {} test facts written to {}",
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}
