//! Output directory of one command, with rollback of what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub struct RunDir {
    path: PathBuf,
    created: bool,
    written: Vec<PathBuf>,
}

impl RunDir {
    pub fn open(path: PathBuf) -> Result<Self> {
        let created = !path.exists();
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(RunDir {
            path,
            created,
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let target = self.join(name);
        self.track(target.clone());
        fs::write(&target, bytes).with_context(|| format!("writing {}", target.display()))?;
        Ok(target)
    }

    /// Registers a file some other writer is about to create.
    pub fn track(&mut self, path: PathBuf) {
        if !path.exists() {
            self.written.push(path);
        }
    }

    /// Removes every new file and, when this command created it, the
    /// directory once empty.
    pub fn rollback(self) {
        for p in self.written.iter().rev() {
            let _ = fs::remove_file(p);
        }
        if self.created {
            let _ = fs::remove_dir(&self.path);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rollback_removes_only_new_files() {
        let tmp = tempfile::tempdir().unwrap();
        let old = tmp.path().join("kept.txt");
        fs::write(&old, "x").unwrap();
        let mut dir = RunDir::open(tmp.path().to_path_buf()).unwrap();
        dir.write("new.txt", "y").unwrap();
        dir.write("kept.txt", "z").unwrap();
        dir.rollback();
        assert!(old.exists());
        assert!(!tmp.path().join("new.txt").exists());
    }

    #[test]
    fn rollback_removes_created_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let run = tmp.path().join("a/b");
        let mut dir = RunDir::open(run.clone()).unwrap();
        dir.write("f", "1").unwrap();
        dir.rollback();
        assert!(!run.exists());
    }
}
