//! Outputs are staged in memory and written only once a command has fully
//! succeeded, so a failing run leaves no partial files behind.

use std::fs;
use std::path::{Path, PathBuf};

use hcfmem_core::report::Report;
use serde::Serialize;

use crate::failure::Failure;

#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, report: &Report<T>) -> Result<(), Failure> {
        let mut bytes =
            serde_json::to_vec_pretty(report).map_err(|e| Failure::input(format!("cannot serialise report: {e}")))?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    /// Writes everything under `dir` via temporary files and renames; on any
    /// failure the files already placed are removed again.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::input(format!("cannot create output directory {}: {e}", dir.display())))?;
        let mut staged = Vec::new();
        for (name, bytes) in &self.files {
            let tmp = dir.join(format!(".{name}.partial"));
            if let Err(e) = fs::write(&tmp, bytes) {
                let _ = fs::remove_file(&tmp);
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                return Err(Failure::input(format!("cannot write {}: {e}", tmp.display())));
            }
            staged.push((tmp, dir.join(name)));
        }
        let mut done = Vec::new();
        for (tmp, target) in staged {
            fs::rename(&tmp, &target).map_err(|e| Failure::input(format!("cannot write {}: {e}", target.display())))?;
            done.push(target);
        }
        Ok(done)
    }
}
