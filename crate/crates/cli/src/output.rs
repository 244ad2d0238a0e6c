//! Staged output directories, content hashes and the effective-config
//! snapshot written next to every command's outputs.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = env!("CARGO_BIN_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Files are written into a hidden sibling directory and moved into place
/// only by [`Staging::commit`]. Dropping an uncommitted staging area removes
/// it, so a failed run leaves the output directory untouched.
pub struct Staging {
    dir: PathBuf,
    target: PathBuf,
    files: Vec<String>,
    committed: bool,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self> {
        fs::create_dir_all(target).with_context(|| format!("creating output directory {}", target.display()))?;
        let dir = target.join(format!(".staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir(&dir).with_context(|| format!("creating staging directory {}", dir.display()))?;
        Ok(Staging {
            dir,
            target: target.to_path_buf(),
            files: Vec::new(),
            committed: false,
        })
    }

    pub fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        self.files.push(name.to_string());
        let path = self.dir.join(name);
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(file))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// Path of a staged file, for reading back before commit.
    pub fn staged(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut moved = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let to = self.target.join(name);
            fs::rename(self.dir.join(name), &to).with_context(|| format!("moving {name} into place"))?;
            moved.push(to);
        }
        fs::remove_dir_all(&self.dir)?;
        self.committed = true;
        Ok(moved)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn sha256_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    hex::encode(hasher.finalize())
}

#[derive(Serialize)]
pub struct EffectiveConfig<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub inputs: Vec<(String, String)>,
    pub config: &'a T,
}

pub fn effective<'a, T: Serialize>(command: &'a str, inputs: Vec<(String, String)>, config: &'a T) -> EffectiveConfig<'a, T> {
    EffectiveConfig {
        tool: TOOL,
        version: VERSION,
        command,
        inputs,
        config,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_staging_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        {
            let mut s = Staging::new(&out).unwrap();
            s.write_json("a.json", &1).unwrap();
        }
        assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
        let mut s = Staging::new(&out).unwrap();
        s.write_json("a.json", &1).unwrap();
        s.commit().unwrap();
        let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("a.json")]);
    }

    #[test]
    fn part_hash_is_length_prefixed() {
        assert_ne!(sha256_parts([b"ab".as_slice(), b"c"]), sha256_parts([b"a".as_slice(), b"bc"]));
    }
}
