//! Benchmark kernels stored as `.rk` files with optional `.json` input
//! sidecars of the same stem.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::frontend::{parse, KernelAst, ParseError};
use crate::sidecar::{InputSpec, SidecarError};
use crate::sim::KernelInputs;

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    /// File stem of the `.rk` file.
    pub name: String,
    pub path: PathBuf,
    pub ast: KernelAst,
    pub inputs: KernelInputs,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{path}: {source}")]
    Inputs { path: PathBuf, source: SidecarError },
}

/// The corpus shipped with the crate.
pub fn bundled_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

/// Loads one kernel and its sidecar, if present.
pub fn load_kernel(path: &Path) -> Result<CorpusEntry, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let text = fs::read_to_string(path).map_err(io_err)?;
    let ast = parse(&text).map_err(|source| CorpusError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let sidecar = path.with_extension("json");
    let spec = if sidecar.exists() {
        let json = fs::read_to_string(&sidecar).map_err(|source| CorpusError::Io {
            path: sidecar.clone(),
            source,
        })?;
        InputSpec::from_json(&json).map_err(|source| CorpusError::Inputs {
            path: sidecar.clone(),
            source,
        })?
    } else {
        InputSpec::default()
    };
    let inputs = spec.resolve(&ast).map_err(|source| CorpusError::Inputs {
        path: sidecar,
        source,
    })?;
    Ok(CorpusEntry {
        name: path
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned(),
        path: path.to_path_buf(),
        ast,
        inputs,
    })
}

/// Loads every `.rk` file in `dir`, sorted by name. A kernel that fails to
/// load yields an error in its slot without affecting the others.
pub fn load_dir(dir: &Path) -> io::Result<Vec<(String, Result<CorpusEntry, CorpusError>)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "rk"))
        .collect();
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| {
            let name = p
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            (name, load_kernel(&p))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_corpus_loads() {
        let entries = load_dir(&bundled_dir()).unwrap();
        let names: Vec<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            [
                "2mm",
                "atax",
                "histogram",
                "jacobi-1d",
                "tanh-poly",
                "triangular"
            ]
        );
        for (name, e) in entries {
            e.unwrap_or_else(|err| panic!("{name}: {err}"));
        }
    }

    #[test]
    fn bad_files_do_not_stop_the_rest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("ok.rk"), "kernel ok() { return 1; }").unwrap();
        fs::write(dir.path().join("bad.rk"), "kernel bad( {").unwrap();
        let entries = load_dir(dir.path()).unwrap();
        assert_eq!(entries.len(), 2);
        assert!(entries[0].1.is_err());
        assert!(entries[1].1.is_ok());
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dir(dir.path()).unwrap().is_empty());
    }
}
