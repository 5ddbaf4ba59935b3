pub mod check;
pub mod enhance;
pub mod eval;
pub mod mix;
pub mod train;

use std::path::{Path, PathBuf};

use anyhow::Context;

/// `*.wav` files directly inside `dir`, sorted by name.
pub fn wav_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    mdphd::Error::InvalidArgument(msg.into()).into()
}
