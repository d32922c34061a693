//! Monitor server: NDJSON ingest over TCP and HTTP, per-session waveform and
//! vitals store, REST queries, live SSE feed and calibration mailbox.

pub mod http;
pub mod ingest;
pub mod log;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

pub use http::{VitalsView, WaveformView};
pub use ingest::{ingest_body, ingest_line, IngestCounts, LineOutcome};
pub use log::FrameLog;
pub use store::{Store, StoreConfig};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("cannot open log directory: {0}")]
    Log(std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub ingest_addr: SocketAddr,
    pub http_addr: SocketAddr,
    pub store: StoreConfig,
    pub log_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            ingest_addr: SocketAddr::from(([0, 0, 0, 0], 7070)),
            http_addr: SocketAddr::from(([0, 0, 0, 0], 8080)),
            store: StoreConfig::default(),
            log_dir: None,
            static_dir: None,
        }
    }
}

/// State shared by all connections.
#[derive(Debug)]
pub struct Shared {
    store: Mutex<Store>,
    log: Option<FrameLog>,
    counts: Mutex<IngestCounts>,
}

impl Shared {
    pub fn new(cfg: StoreConfig, log: Option<FrameLog>) -> Self {
        Self {
            store: Mutex::new(Store::new(cfg)),
            log,
            counts: Mutex::new(IngestCounts::default()),
        }
    }

    pub fn store(&self) -> MutexGuard<'_, Store> {
        self.store.lock().expect("store lock poisoned")
    }

    /// Lines handled since start.
    pub fn totals(&self) -> IngestCounts {
        *self.counts.lock().expect("counts lock poisoned")
    }

    /// Wait until logged frames are on disk.
    pub fn sync_log(&self) {
        if let Some(log) = &self.log {
            log.sync();
        }
    }
}

/// Handle to a started server.
#[derive(Debug)]
pub struct RunningServer {
    pub ingest_addr: SocketAddr,
    pub http_addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::Bind { addr, source })
}

/// Bind both listeners and start serving in the background.
pub async fn start(cfg: ServerConfig) -> Result<RunningServer, ServerError> {
    let log = match &cfg.log_dir {
        Some(dir) => Some(FrameLog::open(dir).map_err(ServerError::Log)?),
        None => None,
    };
    let ingest_listener = bind(cfg.ingest_addr).await?;
    let http_listener = bind(cfg.http_addr).await?;
    let ingest_addr = ingest_listener.local_addr().expect("bound");
    let http_addr = http_listener.local_addr().expect("bound");

    let idle_timeout = cfg.store.idle_timeout;
    let shared = Arc::new(Shared::new(cfg.store, log));
    let (shutdown, shutdown_rx) = watch::channel(false);

    let tcp = tokio::spawn(ingest::run_tcp(
        Arc::clone(&shared),
        ingest_listener,
        shutdown_rx.clone(),
    ));

    let app = http::router(Arc::clone(&shared), cfg.static_dir);
    let mut http_stop = shutdown_rx.clone();
    let web = tokio::spawn(async move {
        let stop = async move {
            let _ = http_stop.changed().await;
        };
        if let Err(e) = axum::serve(http_listener, app)
            .with_graceful_shutdown(stop)
            .await
        {
            tracing::error!("http server failed: {e}");
        }
    });

    let sweeper_shared = Arc::clone(&shared);
    let mut sweeper_stop = shutdown_rx;
    let period = (idle_timeout / 4).clamp(Duration::from_millis(10), Duration::from_secs(30));
    let sweeper = tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tokio::select! {
                _ = tick.tick() => {
                    let expired = sweeper_shared.store().expire(Instant::now());
                    for sid in expired {
                        tracing::info!("session {sid} expired");
                    }
                }
                _ = sweeper_stop.changed() => break,
            }
        }
    });

    Ok(RunningServer {
        ingest_addr,
        http_addr,
        shared,
        shutdown,
        tasks: vec![tcp, web, sweeper],
    })
}

impl RunningServer {
    pub fn shared(&self) -> &Arc<Shared> {
        &self.shared
    }

    /// Stop accepting, end live feeds and flush the frame log.
    pub async fn shutdown(self) {
        self.shared.store().close_channels();
        let _ = self.shutdown.send(true);
        for task in self.tasks {
            let abort = task.abort_handle();
            if tokio::time::timeout(Duration::from_secs(5), task)
                .await
                .is_err()
            {
                abort.abort();
            }
        }
        self.shared.sync_log();
    }
}
