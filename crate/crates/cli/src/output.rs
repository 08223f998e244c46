use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// Collects output files in a scratch directory next to the destination and
/// moves them into place only on [`Staging::commit`]. Dropping without a
/// commit discards everything.
pub struct Staging {
    dest: PathBuf,
    scratch: tempfile::TempDir,
}

impl Staging {
    pub fn new(dest: impl Into<PathBuf>) -> CliResult<Self> {
        let dest = dest.into();
        if dest.is_file() {
            return Err(CliError::Config(format!("{} is a file, expected a directory", dest.display())));
        }
        let parent = dest
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        std::fs::create_dir_all(&parent)?;
        let scratch = tempfile::Builder::new().prefix(".inpaint-staging").tempdir_in(&parent)?;
        Ok(Self { dest, scratch })
    }

    /// Scratch path for `relative`; the file must be written by the caller.
    pub fn path(&mut self, relative: impl AsRef<Path>) -> CliResult<PathBuf> {
        let p = self.scratch.path().join(relative);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn write(&mut self, relative: impl AsRef<Path>, bytes: &[u8]) -> CliResult<()> {
        let p = self.path(relative)?;
        std::fs::write(p, bytes)?;
        Ok(())
    }

    /// Root of the scratch tree, for writers that lay out whole directories.
    pub fn dir(&self) -> &Path {
        self.scratch.path()
    }

    /// Moves every staged file under the destination directory.
    pub fn commit(self) -> CliResult<()> {
        move_tree(self.scratch.path(), &self.dest)
    }
}

fn move_tree(from: &Path, to: &Path) -> CliResult<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            move_tree(&entry.path(), &target)?;
        } else {
            std::fs::rename(entry.path(), target)?;
        }
    }
    Ok(())
}

/// Writes one file atomically, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    inpaint_core::util::write_atomic(path, bytes).map_err(CliError::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_lands_without_commit() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("out");
        {
            let mut s = Staging::new(&dest).unwrap();
            s.write("a/b.txt", b"x").unwrap();
        }
        assert!(!dest.exists());
        let mut s = Staging::new(&dest).unwrap();
        s.write("a/b.txt", b"x").unwrap();
        s.commit().unwrap();
        assert_eq!(std::fs::read(dest.join("a/b.txt")).unwrap(), b"x");
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
