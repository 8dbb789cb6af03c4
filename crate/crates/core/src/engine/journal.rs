use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub at: String,
    pub job: String,
    pub kind: String,
    pub status: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

/// Append-only JSON-lines job log; each append is fsynced before return.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    inner: Mutex<(File, u64)>,
}

impl Journal {
    pub fn open(path: &Path) -> Result<Self> {
        let last = if path.exists() {
            read_entries(path)?.last().map_or(0, |e| e.seq)
        } else {
            0
        };
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path).at(path)?;
        let len = file.metadata().at(path)?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1)).at(path)?;
            file.read_exact(&mut last).at(path)?;
            if last[0] != b'\n' {
                file.write_all(b"\n").at(path)?;
                file.sync_data().at(path)?;
            }
        }
        Ok(Journal {
            path: path.to_path_buf(),
            inner: Mutex::new((file, last)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, job: &str, kind: &str, status: &str, detail: serde_json::Value) -> Result<JournalEntry> {
        let mut g = self.inner.lock();
        let entry = JournalEntry {
            seq: g.1 + 1,
            at: chrono::Utc::now().to_rfc3339(),
            job: job.into(),
            kind: kind.into(),
            status: status.into(),
            detail,
        };
        let mut line = serde_json::to_vec(&entry)?;
        line.push(b'\n');
        g.0.write_all(&line).at(&self.path)?;
        g.0.sync_data().at(&self.path)?;
        g.1 = entry.seq;
        Ok(entry)
    }

    pub fn entries(&self) -> Result<Vec<JournalEntry>> {
        let _g = self.inner.lock();
        read_entries(&self.path)
    }
}

/// Parse a journal, ignoring a torn trailing line from an interrupted write.
pub fn read_entries(path: &Path) -> Result<Vec<JournalEntry>> {
    let f = File::open(path).at(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(e) => out.push(e),
            Err(e) => log::warn!("ignoring unreadable journal line in {}: {e}", path.display()),
        }
    }
    Ok(out)
}
