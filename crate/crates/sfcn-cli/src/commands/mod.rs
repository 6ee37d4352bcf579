//! Subcommand implementations.

pub mod ablate;
pub mod eval;
pub mod gen_data;
pub mod gradcheck;
pub mod infer;
pub mod train;

use std::path::Path;

use sfcn::config::RunConfig;
use sfcn::{Error, Result};

/// Load a configuration file (or defaults) and apply `--set` overrides.
pub fn resolve_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.apply_overrides(overrides)?;
    config.validate()?;
    Ok(config)
}

/// Every command records its fully-resolved configuration beside its
/// outputs.
pub fn write_resolved(config: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    config.save(&dir.join("config.resolved.txt"))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Ids (file stems) of every file in `dir` with the given extension, sorted.
pub fn ids_with_extension(dir: &Path, extension: &str) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("missing directory {}", dir.display())));
    }
    let mut ids = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(&format!(".{extension}")) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}
