//! Persists a live session in the batch harness layout, plus the key log
//! and the loop's jitter histogram.

use std::fs;
use std::io::Write;
use std::path::Path;

use colearn_core::partner::KeyLogEntry;
use colearn_core::study::output::{write_study, FileEntry, Manifest};
use colearn_core::Result;

use crate::session::LiveRun;
use crate::timing::JitterHistogram;

pub const KEY_LOG_VERSION: u32 = 1;

pub fn write_key_log(path: &Path, log: &[KeyLogEntry]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for e in log {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_key_log(path: &Path) -> Result<Vec<KeyLogEntry>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn write_live_run(dir: &Path, live: &LiveRun, jitter: Option<&JitterHistogram>) -> Result<Manifest> {
    let mut manifest = write_study(dir, &live.study, &live.run)?;
    write_key_log(&dir.join("keys.jsonl"), &live.key_log)?;
    manifest.files.push(FileEntry { path: "keys.jsonl".into(), format: "key-log-jsonl".into(), version: KEY_LOG_VERSION });
    if let Some(h) = jitter {
        fs::write(dir.join("jitter.json"), serde_json::to_string_pretty(h)?)?;
        manifest.files.push(FileEntry { path: "jitter.json".into(), format: "jitter-histogram".into(), version: 1 });
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
