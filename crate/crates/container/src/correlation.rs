//! Durable correlation table: business key to process id, per tenant.
//!
//! Stored as an append-only JSON-lines log. Every entry is synced before
//! `put` returns. Opening the log drops a torn trailing line and rewrites
//! the file when it holds anything beyond the live entries.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Line {
    tenant: String,
    key: String,
    process: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CorrelationError {
    #[error("correlation {key} already belongs to process {holder}")]
    Duplicate { key: String, holder: String },
    #[error("correlation log: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug)]
pub struct CorrelationStore {
    path: PathBuf,
    file: File,
    entries: BTreeMap<(String, String), String>,
    /// Lines appended since the last rewrite, including the initial ones.
    lines: usize,
}

impl CorrelationStore {
    pub fn open(path: &Path) -> io::Result<CorrelationStore> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let text = match fs::read(path) {
            Ok(b) => String::from_utf8_lossy(&b).into_owned(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e),
        };
        let mut entries = BTreeMap::new();
        let mut lines = 0;
        let mut dirty = !text.is_empty() && !text.ends_with('\n');
        for raw in text.lines().filter(|l| !l.trim().is_empty()) {
            lines += 1;
            match serde_json::from_str::<Line>(raw) {
                Ok(l) => {
                    entries.entry((l.tenant, l.key)).or_insert(l.process);
                }
                Err(e) => {
                    tracing::warn!(path = %path.display(), "dropping unreadable correlation line: {e}");
                    dirty = true;
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut store = CorrelationStore { path: path.to_path_buf(), file, entries, lines };
        if dirty || store.lines != store.entries.len() {
            store.compact()?;
        }
        Ok(store)
    }

    pub fn lookup(&self, tenant: &str, key: &str) -> Option<&str> {
        self.entries.get(&(tenant.to_string(), key.to_string())).map(String::as_str)
    }

    /// Records `key` for `process`. Re-registering the same pair is a no-op.
    pub fn put(&mut self, tenant: &str, key: &str, process: &str) -> Result<(), CorrelationError> {
        match self.lookup(tenant, key) {
            Some(p) if p == process => return Ok(()),
            Some(p) => return Err(CorrelationError::Duplicate { key: key.to_string(), holder: p.to_string() }),
            None => {}
        }
        let line = Line { tenant: tenant.into(), key: key.into(), process: process.into() };
        let mut text = serde_json::to_string(&line).expect("correlation line serializes");
        text.push('\n');
        self.file.write_all(text.as_bytes())?;
        self.file.sync_data()?;
        self.lines += 1;
        self.entries.insert((line.tenant, line.key), line.process);
        Ok(())
    }

    /// Entries of one tenant as (key, process).
    pub fn entries(&self, tenant: &str) -> Vec<(String, String)> {
        self.entries.iter().filter(|((t, _), _)| t == tenant).map(|((_, k), p)| (k.clone(), p.clone())).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rewrites the log with exactly the live entries.
    pub fn compact(&mut self) -> io::Result<()> {
        let tmp = self.path.with_extension("compact.tmp");
        {
            let mut f = File::create(&tmp)?;
            for ((tenant, key), process) in &self.entries {
                let line = Line { tenant: tenant.clone(), key: key.clone(), process: process.clone() };
                writeln!(f, "{}", serde_json::to_string(&line).expect("correlation line serializes"))?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        if let Some(dir) = self.path.parent() {
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        self.file = OpenOptions::new().append(true).open(&self.path)?;
        self.lines = self.entries.len();
        Ok(())
    }
}
