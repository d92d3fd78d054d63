//! CSV artifacts and the run manifest.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.json";

/// Float cell with 17 significant digits, enough to round-trip any `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub file: String,
    pub rows: usize,
}

/// Files written by one run. Unless [`commit`](Self::commit) is reached,
/// dropping the set deletes everything it wrote.
pub struct ArtifactSet {
    dir: PathBuf,
    written: Vec<Artifact>,
    committed: bool,
}

impl ArtifactSet {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(ArtifactSet { dir: dir.to_path_buf(), written: Vec::new(), committed: false })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.written
    }

    /// Writes `header` then one line per row. Rows are pre-joined cells.
    pub fn csv<I>(&mut self, name: &str, header: &str, rows: I) -> io::Result<usize>
    where
        I: IntoIterator<Item = String>,
    {
        let path = self.dir.join(name);
        // Registered before writing so a failed write is cleaned up too.
        self.written.push(Artifact { file: name.to_string(), rows: 0 });
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "{header}")?;
        let mut n = 0;
        for row in rows {
            writeln!(out, "{row}")?;
            n += 1;
        }
        out.flush()?;
        self.written.last_mut().expect("just pushed").rows = n;
        Ok(n)
    }

    /// Writes the manifest through a temporary file and a rename, then
    /// keeps every artifact.
    pub fn commit(mut self, manifest: &serde_json::Value) -> io::Result<PathBuf> {
        let tmp = self.dir.join(format!("{MANIFEST}.tmp"));
        let dst = self.dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(manifest).map_err(io::Error::other)?;
        text.push('\n');
        let result = fs::write(&tmp, text).and_then(|_| fs::rename(&tmp, &dst));
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
            return result.map(|_| dst);
        }
        self.committed = true;
        Ok(dst)
    }
}

impl Drop for ArtifactSet {
    fn drop(&mut self) {
        if !self.committed {
            for a in &self.written {
                let _ = fs::remove_file(self.dir.join(&a.file));
            }
        }
    }
}

/// Joins cells with commas.
pub fn row<I, S>(cells: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for (k, c) in cells.into_iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "{}", c.as_ref());
    }
    out
}
