use std::process::ExitCode;

use clap::Parser;
use pulsemon_cli::agent::{run_agent, AgentArgs};

#[tokio::main]
async fn main() -> ExitCode {
    pulsemon_cli::init_logging();
    let opts = match AgentArgs::parse().into_options() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("device-agent: {e:#}");
            return ExitCode::from(2);
        }
    };
    let stop = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    match run_agent(opts, stop).await {
        Ok(summary) => {
            let lcd = pulsemon_core::LcdLines {
                line1: summary.lcd_line1.clone(),
                line2: summary.lcd_line2.clone(),
            };
            println!("{}", lcd.boxed());
            println!(
                "{}",
                serde_json::to_string(&summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("device-agent: {e:#}");
            ExitCode::from(2)
        }
    }
}
