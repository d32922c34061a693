//! Command-line front ends: `device-agent`, `monitor-server` and
//! `accuracy-harness`.

pub mod agent;
pub mod queue;

use tracing_subscriber::EnvFilter;

/// Parse `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let num = |p: &str| {
        p.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("`{p}` is not a number"))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if step <= 0.0 || stop < start {
                return Err(format!("grid `{s}` needs step > 0 and stop >= start"));
            }
            Ok(pulsemon_core::harness::grid(start, stop, step))
        }
        [_] => s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(num)
            .collect(),
        _ => Err(format!(
            "grid `{s}` must be start:stop:step or a comma list"
        )),
    }
}

/// A value grid given on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

impl std::str::FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_grid(s).map(Grid)
    }
}

/// Log to stderr, filtered by `RUST_LOG` (default `info`).
pub fn init_logging() {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("40:140:10").unwrap().len(), 11);
        assert_eq!(parse_grid("30:45:0.5").unwrap().len(), 31);
        assert_eq!(parse_grid("60, 90,160").unwrap(), [60.0, 90.0, 160.0]);
        assert!(parse_grid("1:2").is_err());
        assert!(parse_grid("5:1:1").is_err());
        assert!(parse_grid("a,b").is_err());
    }
}
