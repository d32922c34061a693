//! Append-only NDJSON log, one file per session.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;

/// File name for a session: bytes outside `[A-Za-z0-9_-]` are hex-escaped.
pub fn log_file_name(sid: &str) -> String {
    let mut name = String::with_capacity(sid.len() + 7);
    for b in sid.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' {
            name.push(b as char);
        } else {
            name.push_str(&format!("%{b:02X}"));
        }
    }
    name.push_str(".ndjson");
    name
}

enum Msg {
    Line(String, Arc<str>),
    Sync(Sender<()>),
}

/// Handle to the writer thread.
#[derive(Debug)]
pub struct FrameLog {
    tx: Sender<Msg>,
    worker: Option<JoinHandle<()>>,
}

impl FrameLog {
    pub fn open(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let (tx, rx) = mpsc::channel();
        let dir = dir.to_path_buf();
        let worker = std::thread::Builder::new()
            .name("frame-log".into())
            .spawn(move || write_loop(dir, rx))?;
        Ok(Self {
            tx,
            worker: Some(worker),
        })
    }

    pub fn append(&self, sid: &str, line: Arc<str>) {
        let _ = self.tx.send(Msg::Line(sid.to_owned(), line));
    }

    /// Block until everything appended so far is flushed.
    pub fn sync(&self) {
        let (ack_tx, ack_rx) = mpsc::channel();
        if self.tx.send(Msg::Sync(ack_tx)).is_ok() {
            let _ = ack_rx.recv();
        }
    }

    /// Flush outstanding lines and stop the writer.
    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        let (dead, _) = mpsc::channel();
        drop(std::mem::replace(&mut self.tx, dead));
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

impl Drop for FrameLog {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl std::fmt::Debug for Msg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Msg::Line(sid, _) => write!(f, "Line({sid})"),
            Msg::Sync(_) => write!(f, "Sync"),
        }
    }
}

fn write_loop(dir: PathBuf, rx: Receiver<Msg>) {
    let mut files: HashMap<String, BufWriter<File>> = HashMap::new();
    let write = |files: &mut HashMap<String, BufWriter<File>>, sid: String, line: Arc<str>| {
        if !files.contains_key(&sid) {
            let path = dir.join(log_file_name(&sid));
            match OpenOptions::new().create(true).append(true).open(&path) {
                Ok(f) => {
                    files.insert(sid.clone(), BufWriter::new(f));
                }
                Err(e) => {
                    tracing::warn!("cannot open {}: {e}", path.display());
                    return;
                }
            }
        }
        let out = files.get_mut(&sid).expect("opened above");
        if let Err(e) = out
            .write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
        {
            tracing::warn!("log write for {sid} failed: {e}");
        }
    };
    let handle = |files: &mut HashMap<String, BufWriter<File>>, msg: Msg| match msg {
        Msg::Line(sid, line) => write(files, sid, line),
        Msg::Sync(ack) => {
            flush_all(files);
            let _ = ack.send(());
        }
    };
    while let Ok(msg) = rx.recv() {
        handle(&mut files, msg);
        loop {
            match rx.try_recv() {
                Ok(msg) => handle(&mut files, msg),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    flush_all(&mut files);
                    return;
                }
            }
        }
        flush_all(&mut files);
    }
    flush_all(&mut files);
}

fn flush_all(files: &mut HashMap<String, BufWriter<File>>) {
    for out in files.values_mut() {
        let _ = out.flush();
    }
}
