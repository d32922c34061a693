//! Frame intake shared by the TCP listener and `POST /ingest`.

use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pulsemon_core::wire::{decode_frame, encode_frame, MAX_LINE_BYTES};
use serde::Serialize;
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncReadExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;

use crate::store::Accept;
use crate::Shared;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineOutcome {
    Accepted,
    Duplicate,
    Rejected,
    Blank,
}

/// Per-request tally returned by `POST /ingest`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestCounts {
    pub accepted: u64,
    pub rejected: u64,
    pub duplicates: u64,
}

impl IngestCounts {
    pub fn add(&mut self, outcome: LineOutcome) {
        match outcome {
            LineOutcome::Accepted => self.accepted += 1,
            LineOutcome::Duplicate => self.duplicates += 1,
            LineOutcome::Rejected => self.rejected += 1,
            LineOutcome::Blank => {}
        }
    }
}

pub(crate) fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Decode and store one NDJSON line.
pub fn ingest_line(shared: &Shared, line: &[u8]) -> LineOutcome {
    if line.iter().all(u8::is_ascii_whitespace) {
        return LineOutcome::Blank;
    }
    let frame = match decode_frame(line) {
        Ok(f) => f,
        Err(e) => {
            tracing::debug!("rejected line: {e}");
            shared
                .counts
                .lock()
                .expect("counts")
                .add(LineOutcome::Rejected);
            return LineOutcome::Rejected;
        }
    };
    let encoded = encode_frame(&frame).expect("decoded frames re-encode");
    let canonical: Arc<str> = Arc::from(encoded.trim_end_matches('\n'));

    let accepted = {
        let mut store = shared.store.lock().expect("store");
        let accepted = store.ingest(&frame, &canonical, Instant::now(), unix_ms());
        if accepted == Accept::Accepted {
            if let Some(log) = &shared.log {
                log.append(&frame.sid, Arc::clone(&canonical));
            }
        }
        accepted
    };
    let outcome = match accepted {
        Accept::Accepted => LineOutcome::Accepted,
        Accept::Duplicate => LineOutcome::Duplicate,
    };
    shared.counts.lock().expect("counts").add(outcome);
    outcome
}

/// Feed every line of `body` through [`ingest_line`].
pub fn ingest_body(shared: &Shared, body: &[u8]) -> IngestCounts {
    let mut counts = IngestCounts::default();
    for line in body.split(|&b| b == b'\n') {
        counts.add(ingest_line(shared, line));
    }
    counts
}

#[derive(Debug, PartialEq, Eq)]
enum ReadLine {
    Line,
    Overlong,
    Eof,
}

/// Read one line of at most `MAX_LINE_BYTES` into `buf`. The remainder of a
/// longer line is consumed and discarded.
async fn read_bounded_line<R: AsyncBufRead + Unpin>(
    reader: &mut R,
    buf: &mut Vec<u8>,
) -> std::io::Result<ReadLine> {
    buf.clear();
    let limit = MAX_LINE_BYTES as u64 + 1;
    let n = (&mut *reader).take(limit).read_until(b'\n', buf).await?;
    if n == 0 {
        return Ok(ReadLine::Eof);
    }
    if buf.last() == Some(&b'\n') || buf.len() <= MAX_LINE_BYTES {
        return Ok(ReadLine::Line);
    }
    loop {
        buf.clear();
        let n = (&mut *reader).take(limit).read_until(b'\n', buf).await?;
        if n == 0 || buf.last() == Some(&b'\n') {
            buf.clear();
            return Ok(ReadLine::Overlong);
        }
    }
}

async fn handle_connection(shared: Arc<Shared>, stream: TcpStream) {
    let peer = stream.peer_addr().ok();
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::with_capacity(4096);
    let mut counts = IngestCounts::default();
    loop {
        match read_bounded_line(&mut reader, &mut buf).await {
            Ok(ReadLine::Line) => counts.add(ingest_line(&shared, &buf)),
            Ok(ReadLine::Overlong) => {
                shared
                    .counts
                    .lock()
                    .expect("counts")
                    .add(LineOutcome::Rejected);
                counts.add(LineOutcome::Rejected);
            }
            Ok(ReadLine::Eof) => break,
            Err(e) => {
                tracing::debug!("ingest connection {peer:?}: {e}");
                break;
            }
        }
    }
    tracing::debug!(
        "ingest connection {peer:?} closed: {} accepted, {} rejected, {} duplicates",
        counts.accepted,
        counts.rejected,
        counts.duplicates
    );
}

/// Accept NDJSON connections until `shutdown` flips.
pub(crate) async fn run_tcp(
    shared: Arc<Shared>,
    listener: TcpListener,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut conns = tokio::task::JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, _)) => {
                    let _ = stream.set_nodelay(true);
                    conns.spawn(handle_connection(Arc::clone(&shared), stream));
                }
                Err(e) => tracing::warn!("accept failed: {e}"),
            },
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
            _ = shutdown.changed() => break,
        }
    }
    conns.shutdown().await;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn overlong_lines_are_skipped() {
        let mut data = vec![b'x'; MAX_LINE_BYTES + 10];
        data.push(b'\n');
        data.extend_from_slice(b"ok\n");
        data.extend_from_slice(b"tail");
        let mut reader = BufReader::new(data.as_slice());
        let mut buf = Vec::new();
        let r = read_bounded_line(&mut reader, &mut buf).await.unwrap();
        assert_eq!(r, ReadLine::Overlong);
        let r = read_bounded_line(&mut reader, &mut buf).await.unwrap();
        assert_eq!((r, buf.as_slice()), (ReadLine::Line, &b"ok\n"[..]));
        let r = read_bounded_line(&mut reader, &mut buf).await.unwrap();
        assert_eq!((r, buf.as_slice()), (ReadLine::Line, &b"tail"[..]));
        let r = read_bounded_line(&mut reader, &mut buf).await.unwrap();
        assert_eq!(r, ReadLine::Eof);
    }
}
