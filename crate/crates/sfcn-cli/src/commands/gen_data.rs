//! `sfcn gen-data`: render a synthetic dataset to disk.

use std::path::Path;

use sfcn::data::{save_dataset, synth};
use sfcn::Result;

pub fn run(spec: Option<&Path>, out: &Path, overrides: &[String]) -> Result<()> {
    let config = super::resolve_config(spec, overrides)?;
    let samples = synth::generate(&config.synth)?;
    super::create_dir(out)?;
    save_dataset(out, &samples)?;
    super::write_resolved(&config, out)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}
