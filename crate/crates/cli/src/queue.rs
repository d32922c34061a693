//! Bounded send queue between the acquisition loop and the network sender.

use std::collections::VecDeque;
use std::sync::Mutex;

use pulsemon_core::{Payload, TelemetryFrame};
use tokio::sync::Notify;

/// Frames waiting to be sent. Over capacity, the oldest sample frame is
/// dropped; vitals and status frames are never dropped.
#[derive(Debug)]
pub struct FrameQueue {
    state: Mutex<State>,
    capacity: usize,
    items: Notify,
    space: Notify,
}

#[derive(Debug, Default)]
struct State {
    frames: VecDeque<TelemetryFrame>,
    dropped_samples: u64,
    closed: bool,
}

impl FrameQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            state: Mutex::new(State::default()),
            capacity: capacity.max(1),
            items: Notify::new(),
            space: Notify::new(),
        }
    }

    /// Capacity for about `seconds` of traffic from a device sampling at
    /// `fs_hz` in batches of `batch`, with one vitals and one status frame
    /// per display period plus one vitals frame per beat up to `max_bpm`.
    pub fn capacity_for(
        seconds: f64,
        fs_hz: f64,
        batch: usize,
        lcd_period_s: f64,
        max_bpm: f64,
    ) -> usize {
        let per_s = fs_hz / batch.max(1) as f64 + 2.0 / lcd_period_s + max_bpm / 60.0;
        ((seconds * per_s).ceil() as usize).max(8)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("queue lock poisoned")
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.lock().frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped_samples(&self) -> u64 {
        self.lock().dropped_samples
    }

    /// Enqueue `frame`, evicting old sample frames if over capacity.
    pub fn push(&self, frame: TelemetryFrame) {
        let mut st = self.lock();
        st.frames.push_back(frame);
        while st.frames.len() > self.capacity {
            let oldest_sample = st
                .frames
                .iter()
                .position(|f| matches!(f.payload, Payload::Sample(_)));
            match oldest_sample {
                Some(i) => {
                    st.frames.remove(i);
                    st.dropped_samples += 1;
                }
                None => break,
            }
        }
        drop(st);
        self.items.notify_one();
    }

    /// Next frame, or `None` once closed and empty.
    pub async fn pop(&self) -> Option<TelemetryFrame> {
        loop {
            let notified = self.items.notified();
            {
                let mut st = self.lock();
                if let Some(f) = st.frames.pop_front() {
                    drop(st);
                    self.space.notify_waiters();
                    return Some(f);
                }
                if st.closed {
                    return None;
                }
            }
            notified.await;
        }
    }

    /// Wait until the queue is below capacity.
    pub async fn wait_for_space(&self) {
        loop {
            let notified = self.space.notified();
            if self.len() < self.capacity {
                return;
            }
            notified.await;
        }
    }

    /// No more frames will be pushed; `pop` drains what is left.
    pub fn close(&self) {
        self.lock().closed = true;
        self.items.notify_waiters();
        self.items.notify_one();
    }
}
