use std::process::Command;
use std::time::Duration;

use clap::Parser;
use pulsemon_cli::agent::{run_agent, AgentArgs};
use pulsemon_server::{start, ServerConfig, StoreConfig};

fn local_server_config() -> ServerConfig {
    ServerConfig {
        ingest_addr: "127.0.0.1:0".parse().unwrap(),
        http_addr: "127.0.0.1:0".parse().unwrap(),
        store: StoreConfig::default(),
        log_dir: None,
        static_dir: None,
    }
}

#[test]
fn harness_sweep_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    let curve = dir.path().join("curve.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_accuracy-harness"))
        .args(["sweep", "--out"])
        .arg(&report)
        .args([
            "--bpm-grid",
            "60,90,160",
            "--temp-grid",
            "36:38:1",
            "--trials",
            "2",
            "--noise",
            "clean",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    let csv = std::fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("kind,actual,measured,rel_err_pct,noise,seed")
    );
    assert_eq!(lines.count(), 12);
    assert!(csv.lines().any(|l| l.starts_with("hr,160.0,,,clean")));

    let status = Command::new(env!("CARGO_BIN_EXE_accuracy-harness"))
        .args(["curve", "--in"])
        .arg(&report)
        .args(["--kind", "hr", "--out"])
        .arg(&curve)
        .output()
        .unwrap();
    assert!(status.status.success());
    let text = std::fs::read_to_string(&curve).unwrap();
    let rows: Vec<_> = text.lines().collect();
    assert_eq!(rows[0], "actual,measured");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("60,") && rows[2].starts_with("90,"));
}

#[test]
fn agent_rejects_bad_config() {
    let out = Command::new(env!("CARGO_BIN_EXE_device-agent"))
        .args(["--offline", "--temp-c", "300"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("temp"));
}

#[test]
fn offline_agent_prints_lcd_and_summary() {
    let out = Command::new(env!("CARGO_BIN_EXE_device-agent"))
        .args([
            "--offline",
            "--faster-than-real-time",
            "--duration-s",
            "35",
            "--bpm",
            "60",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<_> = stdout.lines().collect();
    assert_eq!(lines[0], "+----------------+");
    assert!(lines[1].starts_with("|HR:  60 bpm"));
    let summary: serde_json::Value = serde_json::from_str(lines.last().unwrap()).unwrap();
    assert_eq!(summary["frames_sent"], 0);
    assert_eq!(summary["watts"], 0.70);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn agent_consumes_calibration_once() {
    let server = start(local_server_config()).await.unwrap();
    let base = format!("http://{}", server.http_addr);
    let client = reqwest::Client::new();
    let url = format!("{base}/api/sessions/cal/calibration");
    let resp = client
        .post(&url)
        .json(&serde_json::json!({"threshold_v": 1.8, "refractory_s": null}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), reqwest::StatusCode::ACCEPTED);

    let mut opts = AgentArgs::try_parse_from([
        "device-agent",
        "--server",
        &server.ingest_addr.to_string(),
        "--http",
        &base,
        "--sid",
        "cal",
        "--duration-s",
        "2.5",
        "--quiet",
    ])
    .unwrap()
    .into_options()
    .unwrap();
    opts.poll_period = Duration::from_millis(50);
    let summary = run_agent(opts, std::future::pending()).await.unwrap();
    assert_eq!(summary.calibrations_applied, 1);
    let again = client.get(&url).send().await.unwrap();
    assert_eq!(again.status(), reqwest::StatusCode::NO_CONTENT);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn agent_reconnects_when_server_appears() {
    let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let ingest_addr = probe.local_addr().unwrap();
    drop(probe);

    let mut opts = AgentArgs::try_parse_from([
        "device-agent",
        "--server",
        &ingest_addr.to_string(),
        "--sid",
        "late",
        "--duration-s",
        "3",
        "--quiet",
    ])
    .unwrap()
    .into_options()
    .unwrap();
    opts.http_base = None;
    opts.reconnect_period = Duration::from_millis(100);
    let agent = tokio::spawn(run_agent(opts, std::future::pending()));

    tokio::time::sleep(Duration::from_millis(1200)).await;
    let server = start(ServerConfig {
        ingest_addr,
        ..local_server_config()
    })
    .await
    .unwrap();
    let summary = agent.await.unwrap().unwrap();
    assert!(summary.connects >= 1);
    assert!(summary.frames_sent > 0);
    // The outage is shorter than the send queue, so nothing is lost.
    assert_eq!(summary.samples_dropped, 0);
    assert_eq!(summary.frames_sent, summary.frames_emitted);

    tokio::time::sleep(Duration::from_millis(200)).await;
    {
        let store = server.shared().store();
        let session = store
            .session("late")
            .expect("session created after reconnect");
        assert_eq!(session.latest_seq(), Some(summary.frames_emitted));
    }
    server.shutdown().await;
}
