//! Buffered artifact output: nothing touches the disk until a command has
//! finished computing, and a failed write removes what this run created.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::config::Format;

#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(Format, Vec<u8>)>,
}

impl Artifacts {
    pub fn push(&mut self, format: Format, bytes: Vec<u8>) {
        self.files.push((format, bytes));
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes `<dir>/<stem>.<ext>` for every buffered file.
    pub fn write(self, dir: &Path, stem: &str) -> io::Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let result = (|| {
            fs::create_dir_all(dir)?;
            for (format, bytes) in &self.files {
                let path = dir.join(format!("{stem}.{}", format.extension()));
                written.push(path.clone());
                fs::write(&path, bytes)?;
            }
            Ok(())
        })();
        match result {
            Ok(()) => Ok(written),
            Err(e) => {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                Err(e)
            }
        }
    }
}
