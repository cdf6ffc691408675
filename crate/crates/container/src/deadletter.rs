//! Undeliverable messages, one JSON file each under `<data>/deadletters/<tenant>/`.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub id: String,
    pub tenant: String,
    pub reason: String,
    pub at_ms: i64,
    pub envelope: serde_json::Value,
}

#[derive(Debug)]
pub struct DeadLetters {
    dir: PathBuf,
    seq: AtomicU64,
}

impl DeadLetters {
    pub fn new(dir: PathBuf) -> DeadLetters {
        DeadLetters { dir, seq: AtomicU64::new(0) }
    }

    pub fn put(&self, tenant: &str, reason: &str, envelope: serde_json::Value, at_ms: i64) -> io::Result<String> {
        let dir = self.dir.join(tenant);
        fs::create_dir_all(&dir)?;
        let id = loop {
            let id = format!("dl-{:013}-{:06}", at_ms.max(0), self.seq.fetch_add(1, Ordering::SeqCst));
            if !dir.join(format!("{id}.json")).exists() {
                break id;
            }
        };
        let letter = DeadLetter { id: id.clone(), tenant: tenant.into(), reason: reason.into(), at_ms, envelope };
        let tmp = dir.join(format!(".{id}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(serde_json::to_string_pretty(&letter).expect("dead letter serializes").as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, dir.join(format!("{id}.json")))?;
        Ok(id)
    }

    /// All dead letters of `tenant`, oldest first.
    pub fn list(&self, tenant: &str) -> io::Result<Vec<DeadLetter>> {
        let dir = self.dir.join(tenant);
        let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
            Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "json")).collect(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        paths.sort();
        let mut out = Vec::new();
        for p in paths {
            let text = fs::read_to_string(&p)?;
            match serde_json::from_str(&text) {
                Ok(l) => out.push(l),
                Err(e) => tracing::warn!(path = %p.display(), "skipping unreadable dead letter: {e}"),
            }
        }
        Ok(out)
    }
}
