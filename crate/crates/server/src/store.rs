//! In-memory session state.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use pulsemon_core::wire::{FrameKind, SamplePayload, StatusPayload, VitalsPayload};
use pulsemon_core::{CalibrationCommand, Payload, Sample, TelemetryFrame};
use serde::Serialize;
use tokio::sync::broadcast;

/// Sample rate assumed until a batch reveals the real one.
pub const DEFAULT_FS_HZ: f64 = 100.0;

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub ring_seconds: f64,
    pub history_len: usize,
    /// Frames a live subscriber may fall behind before it is cut off.
    pub subscriber_buffer: usize,
    pub idle_timeout: Duration,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            ring_seconds: 600.0,
            history_len: 1000,
            subscriber_buffer: 512,
            idle_timeout: Duration::from_secs(600),
        }
    }
}

/// Fixed-capacity waveform buffer with strictly increasing timestamps.
#[derive(Debug, Clone)]
pub struct Ring {
    capacity: usize,
    buf: VecDeque<Sample>,
}

impl Ring {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            buf: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn set_capacity(&mut self, capacity: usize) {
        self.capacity = capacity.max(1);
        while self.buf.len() > self.capacity {
            self.buf.pop_front();
        }
    }

    /// Append a sample; out-of-order samples are refused.
    pub fn push(&mut self, s: Sample) -> bool {
        if self.buf.back().is_some_and(|last| s.t_s <= last.t_s) {
            return false;
        }
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(s);
        true
    }

    pub fn latest_t(&self) -> Option<f64> {
        self.buf.back().map(|s| s.t_s)
    }

    pub fn oldest_t(&self) -> Option<f64> {
        self.buf.front().map(|s| s.t_s)
    }

    /// Samples with `t` in `(now - window_s, now]`, where `now` is the newest
    /// sample time.
    pub fn window(&self, window_s: f64) -> Vec<Sample> {
        let Some(now) = self.latest_t() else {
            return Vec::new();
        };
        if window_s <= 0.0 {
            return Vec::new();
        }
        let start = now - window_s;
        let (a, b) = self.buf.as_slices();
        let split_a = a.partition_point(|s| s.t_s <= start);
        let split_b = b.partition_point(|s| s.t_s <= start);
        a[split_a..].iter().chain(&b[split_b..]).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VitalsRecord {
    pub seq: u64,
    pub t_ms: u64,
    #[serde(flatten)]
    pub vitals: VitalsPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatusRecord {
    pub seq: u64,
    pub t_ms: u64,
    #[serde(flatten)]
    pub status: StatusPayload,
}

#[derive(Debug)]
pub struct Session {
    pub sid: String,
    pub ring: Ring,
    pub fs_hz: Option<f64>,
    pub latest_vitals: Option<VitalsRecord>,
    pub history: VecDeque<VitalsRecord>,
    pub status: Option<StatusRecord>,
    last_seq: [Option<u64>; 3],
    pub frames: u64,
    pub last_seen: Instant,
    pub last_seen_ms: u64,
}

fn kind_index(kind: FrameKind) -> usize {
    match kind {
        FrameKind::Sample => 0,
        FrameKind::Vitals => 1,
        FrameKind::Status => 2,
    }
}

impl Session {
    fn new(sid: String, capacity: usize, now: Instant, now_ms: u64) -> Self {
        Self {
            sid,
            ring: Ring::new(capacity),
            fs_hz: None,
            latest_vitals: None,
            history: VecDeque::new(),
            status: None,
            last_seq: [None; 3],
            frames: 0,
            last_seen: now,
            last_seen_ms: now_ms,
        }
    }

    pub fn latest_seq(&self) -> Option<u64> {
        self.last_seq.iter().flatten().copied().max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accept {
    Accepted,
    Duplicate,
}

/// Per-session row of `GET /api/sessions`.
#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub sid: String,
    pub last_seen_ms: u64,
    pub frames: u64,
    pub samples: usize,
    pub fs_hz: Option<f64>,
    pub latest_seq: Option<u64>,
    pub power_mode: Option<String>,
    pub watts: Option<f64>,
    pub calibration_pending: bool,
}

#[derive(Debug)]
pub struct Store {
    cfg: StoreConfig,
    sessions: HashMap<String, Session>,
    channels: HashMap<String, broadcast::Sender<Arc<str>>>,
    pending: HashMap<String, CalibrationCommand>,
}

impl Store {
    pub fn new(cfg: StoreConfig) -> Self {
        Self {
            cfg,
            sessions: HashMap::new(),
            channels: HashMap::new(),
            pending: HashMap::new(),
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.cfg
    }

    fn ring_capacity(&self, fs_hz: f64) -> usize {
        (self.cfg.ring_seconds * fs_hz).ceil() as usize
    }

    /// Apply a decoded frame and fan `line` out to subscribers of its session.
    pub fn ingest(
        &mut self,
        frame: &TelemetryFrame,
        line: &Arc<str>,
        now: Instant,
        now_ms: u64,
    ) -> Accept {
        let default_capacity = self.ring_capacity(DEFAULT_FS_HZ);
        let session = self
            .sessions
            .entry(frame.sid.clone())
            .or_insert_with(|| Session::new(frame.sid.clone(), default_capacity, now, now_ms));
        let slot = &mut session.last_seq[kind_index(frame.kind())];
        if slot.is_some_and(|last| frame.seq <= last) {
            return Accept::Duplicate;
        }
        *slot = Some(frame.seq);
        session.frames += 1;
        session.last_seen = now;
        session.last_seen_ms = now_ms;

        match &frame.payload {
            Payload::Sample(p) => {
                if let SamplePayload::Batch { dt_ms, .. } = p {
                    let fs = 1000.0 / dt_ms;
                    if session.fs_hz != Some(fs) {
                        session.fs_hz = Some(fs);
                        let cap = (self.cfg.ring_seconds * fs).ceil() as usize;
                        session.ring.set_capacity(cap);
                    }
                }
                let t0 = frame.t_ms as f64;
                for (offset_ms, v) in p.points() {
                    session.ring.push(Sample::new((t0 + offset_ms) / 1000.0, v));
                }
            }
            Payload::Vitals(v) => {
                let record = VitalsRecord {
                    seq: frame.seq,
                    t_ms: frame.t_ms,
                    vitals: v.clone(),
                };
                if session.history.len() >= self.cfg.history_len {
                    session.history.pop_front();
                }
                session.history.push_back(record.clone());
                session.latest_vitals = Some(record);
            }
            Payload::Status(s) => {
                session.status = Some(StatusRecord {
                    seq: frame.seq,
                    t_ms: frame.t_ms,
                    status: s.clone(),
                });
            }
        }

        if let Some(tx) = self.channels.get(&frame.sid) {
            let _ = tx.send(Arc::clone(line));
        }
        Accept::Accepted
    }

    pub fn session(&self, sid: &str) -> Option<&Session> {
        self.sessions.get(sid)
    }

    pub fn summaries(&self) -> Vec<SessionSummary> {
        let mut out: Vec<SessionSummary> = self
            .sessions
            .values()
            .map(|s| SessionSummary {
                sid: s.sid.clone(),
                last_seen_ms: s.last_seen_ms,
                frames: s.frames,
                samples: s.ring.len(),
                fs_hz: s.fs_hz,
                latest_seq: s.latest_seq(),
                power_mode: s.status.as_ref().map(|r| r.status.power_mode.to_string()),
                watts: s.status.as_ref().map(|r| r.status.watts),
                calibration_pending: self.pending.contains_key(&s.sid),
            })
            .collect();
        out.sort_by(|a, b| a.sid.cmp(&b.sid));
        out
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    /// Live feed for `sid`; the session need not exist yet.
    pub fn subscribe(&mut self, sid: &str) -> broadcast::Receiver<Arc<str>> {
        let buffer = self.cfg.subscriber_buffer;
        self.channels
            .entry(sid.to_owned())
            .or_insert_with(|| broadcast::channel(buffer).0)
            .subscribe()
    }

    /// Replace the pending command for `sid`.
    pub fn set_calibration(&mut self, sid: &str, cmd: CalibrationCommand) {
        self.pending.insert(sid.to_owned(), cmd);
    }

    /// Take the pending command, if any.
    pub fn take_calibration(&mut self, sid: &str) -> Option<CalibrationCommand> {
        self.pending.remove(sid)
    }

    /// Drop sessions idle longer than the timeout; returns the expired sids.
    pub fn expire(&mut self, now: Instant) -> Vec<String> {
        let timeout = self.cfg.idle_timeout;
        let expired: Vec<String> = self
            .sessions
            .values()
            .filter(|s| now.duration_since(s.last_seen) > timeout)
            .map(|s| s.sid.clone())
            .collect();
        for sid in &expired {
            self.sessions.remove(sid);
            self.pending.remove(sid);
        }
        let sessions = &self.sessions;
        self.channels
            .retain(|sid, tx| tx.receiver_count() > 0 || sessions.contains_key(sid));
        expired
    }

    /// End every live feed.
    pub fn close_channels(&mut self) {
        self.channels.clear();
    }
}
