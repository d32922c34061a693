//! Device agent: runs one simulated device and ships its frames to a
//! monitor server.

use std::future::Future;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Parser;
use pulsemon_core::{encode_frame, CalibrationCommand, Device, DeviceConfig, Payload, PowerMode};
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncWriteExt, BufWriter};
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio::time::Instant;

use crate::queue::FrameQueue;

/// Seconds of traffic the send queue holds.
pub const QUEUE_SECONDS: f64 = 2.0;
const DRAIN_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Parser)]
#[command(
    name = "device-agent",
    about = "Simulated heart-rate and temperature monitor"
)]
pub struct AgentArgs {
    /// Monitor server ingest address, HOST:PORT.
    #[arg(long)]
    pub server: Option<String>,
    /// Monitor server HTTP base URL for calibration polling.
    /// Defaults to port 8080 on the ingest host.
    #[arg(long)]
    pub http: Option<String>,
    #[arg(long)]
    pub sid: Option<String>,
    #[arg(long)]
    pub bpm: Option<f64>,
    #[arg(long = "temp-c")]
    pub temp_c: Option<f64>,
    /// White noise on the raw PPG, volts.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Sample rate, Hz.
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_power_mode)]
    pub power_mode: Option<PowerMode>,
    /// Run without a server; the LCD still updates.
    #[arg(long)]
    pub offline: bool,
    #[arg(long)]
    pub faster_than_real_time: bool,
    /// JSON file mirroring DeviceConfig. Flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stop after this much device time, seconds.
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// Only print the final LCD and summary.
    #[arg(long)]
    pub quiet: bool,
}

pub fn parse_power_mode(s: &str) -> Result<PowerMode, String> {
    PowerMode::ALL
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| {
            let names: Vec<_> = PowerMode::ALL.iter().map(|m| m.as_str()).collect();
            format!(
                "unknown power mode `{s}` (expected one of {})",
                names.join(", ")
            )
        })
}

#[derive(Debug, Clone)]
pub struct AgentOptions {
    pub device: DeviceConfig,
    pub http_base: Option<String>,
    pub offline: bool,
    pub realtime: bool,
    pub duration_s: Option<f64>,
    pub reconnect_period: Duration,
    pub poll_period: Duration,
    pub print_lcd: bool,
}

impl AgentArgs {
    pub fn into_options(self) -> anyhow::Result<AgentOptions> {
        let mut device = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<DeviceConfig>(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => DeviceConfig::default(),
        };
        if let Some(server) = &self.server {
            device.server_addr = server.clone();
        }
        if let Some(sid) = &self.sid {
            device.sid = sid.clone();
        }
        if let Some(bpm) = self.bpm {
            device.profile.bpm_true = bpm;
        }
        if let Some(t) = self.temp_c {
            device.temp.temp_c_true = t;
        }
        if let Some(sigma) = self.noise_sigma {
            device.noise.white_sigma_v = sigma;
        }
        if let Some(seed) = self.seed {
            device.noise.seed = seed;
        }
        if let Some(fs) = self.fs {
            device.adc.fs_hz = fs;
        }
        if let Some(mode) = self.power_mode {
            device.power_mode = mode;
        }
        device.validate()?;
        if let Some(d) = self.duration_s {
            if !(d.is_finite() && d >= 0.0) {
                bail!("--duration-s must be finite and >= 0");
            }
        }
        let http_base = match (&self.http, self.offline) {
            (_, true) => None,
            (Some(url), false) => Some(url.trim_end_matches('/').to_owned()),
            (None, false) => Some(default_http_base(&device.server_addr)),
        };
        Ok(AgentOptions {
            device,
            http_base,
            offline: self.offline,
            realtime: !self.faster_than_real_time,
            duration_s: self.duration_s,
            reconnect_period: Duration::from_millis(500),
            poll_period: Duration::from_secs(1),
            print_lcd: !self.quiet,
        })
    }
}

fn default_http_base(server_addr: &str) -> String {
    let host = server_addr
        .rsplit_once(':')
        .map_or(server_addr, |(host, _)| host);
    format!("http://{host}:8080")
}

/// What the agent prints when it stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub sid: String,
    pub device_time_s: f64,
    pub frames_emitted: u64,
    pub frames_sent: u64,
    pub samples_dropped: u64,
    pub connects: u64,
    pub calibrations_applied: u64,
    pub power_mode: PowerMode,
    pub watts: f64,
    pub bpm: Option<f64>,
    pub temp_c: f64,
    pub temp_f: f64,
    pub valid: bool,
    pub lcd_line1: String,
    pub lcd_line2: String,
}

#[derive(Debug, Default)]
struct SendStats {
    sent: AtomicU64,
    connects: AtomicU64,
    connected: AtomicBool,
}

async fn send_loop(
    addr: String,
    queue: Arc<FrameQueue>,
    stats: Arc<SendStats>,
    first: Option<TcpStream>,
    reconnect_period: Duration,
) {
    let mut conn = first.map(BufWriter::new);
    while let Some(frame) = queue.pop().await {
        let line = match encode_frame(&frame) {
            Ok(line) => line,
            Err(e) => {
                tracing::warn!("dropping unencodable frame: {e}");
                continue;
            }
        };
        loop {
            if conn.is_none() {
                match TcpStream::connect(&addr).await {
                    Ok(s) => {
                        let _ = s.set_nodelay(true);
                        conn = Some(BufWriter::new(s));
                        stats.connects.fetch_add(1, Ordering::Relaxed);
                        stats.connected.store(true, Ordering::Relaxed);
                    }
                    Err(e) => {
                        tracing::debug!("connect to {addr} failed: {e}");
                        stats.connected.store(false, Ordering::Relaxed);
                        tokio::time::sleep(reconnect_period).await;
                        continue;
                    }
                }
            }
            let w = conn.as_mut().expect("connected");
            let mut ok = w.write_all(line.as_bytes()).await.is_ok();
            if ok && queue.is_empty() {
                ok = w.flush().await.is_ok();
            }
            if ok {
                stats.sent.fetch_add(1, Ordering::Relaxed);
                break;
            }
            tracing::warn!("lost connection to {addr}");
            conn = None;
            stats.connected.store(false, Ordering::Relaxed);
        }
    }
    if let Some(mut w) = conn {
        let _ = w.flush().await;
        let _ = w.get_mut().shutdown().await;
    }
}

fn calibration_url(base: &str, sid: &str) -> anyhow::Result<reqwest::Url> {
    let mut url = reqwest::Url::parse(base).with_context(|| format!("bad --http URL `{base}`"))?;
    url.path_segments_mut()
        .map_err(|()| anyhow::anyhow!("--http URL `{base}` cannot take a path"))?
        .pop_if_empty()
        .extend(["api", "sessions", sid, "calibration"]);
    Ok(url)
}

async fn poll_calibration(
    url: reqwest::Url,
    tx: mpsc::Sender<CalibrationCommand>,
    period: Duration,
) {
    let client = reqwest::Client::new();
    let mut tick = tokio::time::interval(period);
    loop {
        tick.tick().await;
        let resp = match client.get(url.clone()).send().await {
            Ok(r) => r,
            Err(e) => {
                tracing::debug!("calibration poll failed: {e}");
                continue;
            }
        };
        if resp.status() != reqwest::StatusCode::OK {
            continue;
        }
        match resp.json::<CalibrationCommand>().await {
            Ok(cmd) => {
                if tx.send(cmd).await.is_err() {
                    return;
                }
            }
            Err(e) => tracing::warn!("bad calibration body: {e}"),
        }
    }
}

/// Run the device until `stop` resolves or the configured duration elapses.
pub async fn run_agent(
    opts: AgentOptions,
    stop: impl Future<Output = ()>,
) -> anyhow::Result<AgentSummary> {
    let mut device = Device::new(opts.device.clone())?;
    let fs_hz = device.fs_hz();
    let cfg = device.config().clone();
    let max_bpm = cfg.chain.max_measurable_bpm()?;
    let queue = Arc::new(FrameQueue::new(FrameQueue::capacity_for(
        QUEUE_SECONDS,
        fs_hz,
        cfg.batch_size,
        cfg.lcd_period_s,
        max_bpm,
    )));
    let stats = Arc::new(SendStats::default());

    let sender = if opts.offline {
        None
    } else {
        let first = match TcpStream::connect(&cfg.server_addr).await {
            Ok(s) => {
                let _ = s.set_nodelay(true);
                stats.connects.fetch_add(1, Ordering::Relaxed);
                stats.connected.store(true, Ordering::Relaxed);
                Some(s)
            }
            Err(e) => {
                tracing::warn!(
                    "server {} unreachable ({e}); buffering and retrying",
                    cfg.server_addr
                );
                None
            }
        };
        Some(tokio::spawn(send_loop(
            cfg.server_addr.clone(),
            Arc::clone(&queue),
            Arc::clone(&stats),
            first,
            opts.reconnect_period,
        )))
    };

    let (cal_tx, mut cal_rx) = mpsc::channel(4);
    let poller = match &opts.http_base {
        Some(base) => Some(tokio::spawn(poll_calibration(
            calibration_url(base, &cfg.sid)?,
            cal_tx,
            opts.poll_period,
        ))),
        None => None,
    };

    let limit = opts.duration_s.map(|d| (d * fs_hz).round() as u64);
    let started = Instant::now();
    let mut tick: u64 = 0;
    let mut frames = Vec::new();
    let mut emitted = 0u64;
    let mut calibrations = 0u64;
    tokio::pin!(stop);

    let mut deliver = |frame, queue: &FrameQueue| {
        emitted += 1;
        if !opts.offline {
            queue.push(frame);
        }
    };

    loop {
        if limit.is_some_and(|l| tick >= l) {
            break;
        }
        if opts.realtime {
            let due = started + Duration::from_secs_f64(tick as f64 / fs_hz);
            tokio::select! {
                _ = &mut stop => break,
                _ = tokio::time::sleep_until(due) => {}
            }
        } else if tick.is_multiple_of(64) {
            tokio::select! {
                biased;
                _ = &mut stop => break,
                _ = tokio::task::yield_now() => {}
            }
        }
        device.step(&mut frames);
        tick += 1;
        for frame in frames.drain(..) {
            let is_vitals = matches!(frame.payload, Payload::Vitals(_));
            if matches!(frame.payload, Payload::Status(_)) && opts.print_lcd && opts.realtime {
                println!("{}", device.lcd().boxed());
            }
            // Without pacing, a connected sender sets the pace instead of
            // losing samples.
            if !opts.offline && !opts.realtime && stats.connected.load(Ordering::Relaxed) {
                queue.wait_for_space().await;
            }
            deliver(frame, &queue);
            if is_vitals {
                while let Ok(cmd) = cal_rx.try_recv() {
                    device.apply_calibration(&cmd);
                    calibrations += 1;
                    tracing::info!("applied calibration {cmd:?}");
                }
            }
        }
    }

    for frame in device.finish() {
        deliver(frame, &queue);
    }
    queue.close();
    if let Some(p) = poller {
        p.abort();
    }
    if let Some(sender) = sender {
        let abort = sender.abort_handle();
        if tokio::time::timeout(DRAIN_TIMEOUT, sender).await.is_err() {
            tracing::warn!("{} frames left unsent", queue.len());
            abort.abort();
        }
    }

    let reading = device.reading();
    let lcd = device.lcd();
    let mode = device.power_mode();
    Ok(AgentSummary {
        sid: cfg.sid,
        device_time_s: tick as f64 / fs_hz,
        frames_emitted: emitted,
        frames_sent: stats.sent.load(Ordering::Relaxed),
        samples_dropped: queue.dropped_samples(),
        connects: stats.connects.load(Ordering::Relaxed),
        calibrations_applied: calibrations,
        power_mode: mode,
        watts: mode.watts(),
        bpm: reading.bpm,
        temp_c: reading.temp_c,
        temp_f: reading.temp_f,
        valid: reading.valid,
        lcd_line1: lcd.line1.clone(),
        lcd_line2: lcd.line2.clone(),
    })
}
