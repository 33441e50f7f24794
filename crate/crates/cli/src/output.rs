use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::CliError;

/// Output directory assembled in a hidden sibling and moved into place only
/// once every file has been written.
pub struct Staged {
    target: PathBuf,
    temp: TempDir,
}

impl Staged {
    pub fn new(target: &Path, overwrite: bool) -> Result<Self, CliError> {
        if target.exists() && !overwrite {
            return Err(CliError::Usage(format!(
                "{} already exists; pass --overwrite to replace it",
                target.display()
            )));
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).map_err(|e| io_error(&parent, e))?;
        let temp = tempfile::Builder::new()
            .prefix(".dagperm-staging-")
            .tempdir_in(&parent)
            .map_err(|e| io_error(&parent, e))?;
        Ok(Self {
            target: target.to_path_buf(),
            temp,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.temp.path().join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        std::fs::create_dir_all(&p).map_err(|e| io_error(&p, e))?;
        Ok(p)
    }

    pub fn commit(self) -> Result<PathBuf, CliError> {
        if self.target.exists() {
            let removed = if self.target.is_dir() {
                std::fs::remove_dir_all(&self.target)
            } else {
                std::fs::remove_file(&self.target)
            };
            removed.map_err(|e| io_error(&self.target, e))?;
        }
        let staged = self.temp.keep();
        std::fs::rename(&staged, &self.target).map_err(|e| io_error(&self.target, e))?;
        Ok(self.target)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}
