//! On-disk cache of operator matrices keyed by (field, σ).
//!
//! Enabled only when `SCHUR_ODE_CACHE_DIR` is set. Entries are written to a
//! temporary file in the cache directory and renamed into place.

use std::io::Write;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use schur_ode::io::{format_real, read_matrix};
use schur_ode::poly::PolynomialODE;
use schur_ode::{RealMatrix, Result};

pub const ENV_VAR: &str = "SCHUR_ODE_CACHE_DIR";

pub struct OperatorCache {
    dir: Option<PathBuf>,
}

impl OperatorCache {
    pub fn from_env() -> Self {
        OperatorCache {
            dir: std::env::var_os(ENV_VAR).filter(|v| !v.is_empty()).map(PathBuf::from),
        }
    }

    fn path(&self, field: &PolynomialODE, sigma: usize) -> Option<PathBuf> {
        let dir = self.dir.as_ref()?;
        let mut hasher = Sha256::new();
        hasher.update(format!("sigma {sigma}\n{field}").as_bytes());
        Some(dir.join(format!("M-{}.txt", hex::encode(hasher.finalize()))))
    }

    /// Cached matrix, or `build()` stored for next time.
    pub fn get_or_build(
        &self,
        field: &PolynomialODE,
        sigma: usize,
        build: impl FnOnce() -> Result<RealMatrix>,
    ) -> Result<RealMatrix> {
        let Some(path) = self.path(field, sigma) else {
            return build();
        };
        if let Ok(m) = read_matrix(&path).and_then(|d| d.into_real()) {
            return Ok(m);
        }
        let m = build()?;
        if let Err(e) = store(&path, &format_real(&m)) {
            eprintln!("warning: could not write cache entry {}: {e}", path.display());
        }
        Ok(m)
    }
}

fn store(path: &std::path::Path, text: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(std::path::Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Writes `text` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &std::path::Path, text: &str) -> Result<()> {
    store(path, text).map_err(Into::into)
}
