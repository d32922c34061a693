use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use pulsemon_server::{start, ServerConfig, StoreConfig};

#[derive(Debug, Parser)]
#[command(
    name = "monitor-server",
    about = "Telemetry ingest and web API for pulse monitors"
)]
struct Args {
    /// NDJSON ingest listener. Port 0 picks a free port.
    #[arg(long, default_value = "0.0.0.0:7070")]
    ingest: SocketAddr,
    /// HTTP listener. Port 0 picks a free port.
    #[arg(long, default_value = "0.0.0.0:8080")]
    http: SocketAddr,
    /// Append every accepted frame to <dir>/<sid>.ndjson.
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// Directory served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Waveform retained per session, seconds.
    #[arg(long, default_value_t = 600.0, value_parser = positive)]
    ring_seconds: f64,
    #[arg(long, default_value_t = 1000)]
    history: usize,
    /// Frames a live subscriber may lag before it is cut off.
    #[arg(long, default_value_t = 512)]
    subscriber_buffer: usize,
    /// Sessions idle this long are dropped, seconds.
    #[arg(long, default_value_t = 600.0, value_parser = positive)]
    idle_timeout_s: f64,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("`{s}` must be a number > 0")),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    pulsemon_cli::init_logging();
    let args = Args::parse();
    let cfg = ServerConfig {
        ingest_addr: args.ingest,
        http_addr: args.http,
        store: StoreConfig {
            ring_seconds: args.ring_seconds,
            history_len: args.history.max(1),
            subscriber_buffer: args.subscriber_buffer.max(1),
            idle_timeout: Duration::from_secs_f64(args.idle_timeout_s),
        },
        log_dir: args.log_dir,
        static_dir: args.static_dir,
    };
    let server = match start(cfg).await {
        Ok(s) => s,
        Err(e) => {
            eprintln!("monitor-server: {e}");
            return ExitCode::from(2);
        }
    };
    println!("ingest listening on {}", server.ingest_addr);
    println!("http listening on {}", server.http_addr);
    let _ = std::io::stdout().flush();

    let _ = tokio::signal::ctrl_c().await;
    let totals = server.shared().totals();
    server.shutdown().await;
    println!(
        "stopped: {} accepted, {} rejected, {} duplicates",
        totals.accepted, totals.rejected, totals.duplicates
    );
    ExitCode::SUCCESS
}
