use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Sender};
use std::thread::JoinHandle;

use anyhow::{anyhow, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Appends JSONL lines from many producers through one writer thread.
/// Batches carry a sequence number and are written in sequence order, one
/// `write_all` per line, so the file content does not depend on scheduling.
pub struct OrderedWriter {
    tx: Option<Sender<(usize, Vec<String>)>>,
    handle: Option<JoinHandle<Result<usize>>>,
}

impl OrderedWriter {
    /// Truncates `path` and starts the writer.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let mut file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let display = path.display().to_string();
        let (tx, rx) = channel::<(usize, Vec<String>)>();
        let handle = std::thread::spawn(move || -> Result<usize> {
            let mut pending = BTreeMap::new();
            let mut next = 0usize;
            let mut lines = 0usize;
            for (seq, batch) in rx {
                pending.insert(seq, batch);
                while let Some(batch) = pending.remove(&next) {
                    for line in batch {
                        let mut bytes = line.into_bytes();
                        bytes.push(b'\n');
                        file.write_all(&bytes).with_context(|| format!("writing {display}"))?;
                        lines += 1;
                    }
                    file.flush()?;
                    next += 1;
                }
            }
            if !pending.is_empty() {
                return Err(anyhow!("{display}: batch {next} never arrived"));
            }
            Ok(lines)
        });
        Ok(Self { tx: Some(tx), handle: Some(handle) })
    }

    pub fn sender(&self) -> BatchSender {
        BatchSender(self.tx.as_ref().expect("writer open").clone())
    }

    /// Waits for every batch to be written; returns the line count.
    pub fn finish(mut self) -> Result<usize> {
        drop(self.tx.take());
        self.handle.take().expect("writer open").join().map_err(|_| anyhow!("JSONL writer panicked"))?
    }
}

#[derive(Clone)]
pub struct BatchSender(Sender<(usize, Vec<String>)>);

impl BatchSender {
    pub fn send<T: Serialize>(&self, seq: usize, records: &[T]) -> Result<()> {
        let lines = records.iter().map(serde_json::to_string).collect::<serde_json::Result<Vec<_>>>()?;
        self.0.send((seq, lines)).map_err(|_| anyhow!("JSONL writer stopped"))
    }
}

/// Reads a JSONL file. A final line without its newline, or one that does not
/// parse, is treated as a torn write and dropped; damage anywhere else is an
/// error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    // bytes, not String: a torn write can split a multi-byte character
    let mut buf = Vec::new();
    let mut lineno = 0;
    loop {
        buf.clear();
        let read = reader.read_until(b'\n', &mut buf)?;
        if read == 0 {
            break;
        }
        lineno += 1;
        let complete = buf.ends_with(b"\n");
        let text = buf.trim_ascii_end();
        if text.is_empty() {
            continue;
        }
        if !complete {
            // only the last line can lack its newline
            log::warn!("{}: dropping unterminated final line {lineno}", path.display());
            break;
        }
        match serde_json::from_slice(text) {
            Ok(v) => out.push(v),
            Err(e) => {
                let mut rest = Vec::new();
                if reader.read_until(b'\n', &mut rest)? == 0 {
                    log::warn!("{}: dropping unparsable final line {lineno}: {e}", path.display());
                } else {
                    return Err(anyhow!("{}: line {lineno}: {e}", path.display()));
                }
            }
        }
    }
    Ok(out)
}

/// `read_jsonl`, or an empty list when the file does not exist.
pub fn read_jsonl_or_empty<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if path.exists() {
        read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_land_in_sequence_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        let w = OrderedWriter::create(&path).unwrap();
        let s = w.sender();
        s.send(2, &[5, 6]).unwrap();
        s.send(0, &[1]).unwrap();
        s.send(1, &[2, 3, 4]).unwrap();
        drop(s);
        assert_eq!(w.finish().unwrap(), 6);
        assert_eq!(read_jsonl::<i32>(&path).unwrap(), vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn missing_batch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let w = OrderedWriter::create(&dir.path().join("x.jsonl")).unwrap();
        w.sender().send(1, &[1]).unwrap();
        assert!(w.finish().is_err());
    }

    #[test]
    fn torn_last_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        fs::write(&path, "{\"a\":1}\n{\"a\":2}\n{\"a\":").unwrap();
        let v: Vec<serde_json::Value> = read_jsonl(&path).unwrap();
        assert_eq!(v.len(), 2);
        // complete-looking but unterminated final line is also dropped
        fs::write(&path, "{\"a\":1}\n{\"a\":2}").unwrap();
        assert_eq!(read_jsonl::<serde_json::Value>(&path).unwrap().len(), 1);
        fs::write(&path, "{\"a\":1}\nbroken\n{\"a\":3}\n").unwrap();
        assert!(read_jsonl::<serde_json::Value>(&path).is_err());
        fs::write(&path, "{\"a\":1}\nbroken\n").unwrap();
        assert_eq!(read_jsonl::<serde_json::Value>(&path).unwrap().len(), 1);
    }
}
