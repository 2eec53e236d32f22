//! Command-line front end: run configuration, subcommands, overlay
//! rendering and the seeded end-to-end demo.

pub mod commands;
pub mod config;
pub mod demo;
pub mod render;

pub use config::RunConfig;
pub use demo::{demo_end_to_end, DemoReport};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SPINESURF_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] spinesurf::Error),

    #[error("{path}: {msg}")]
    Config { path: String, msg: String },

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses the thread cap; unset or empty means available parallelism.
pub fn thread_cap(value: Option<&str>) -> Result<Option<usize>, String> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(format!("{THREADS_ENV} must be a positive integer, got {v:?}")),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_cap_parsing() {
        assert_eq!(thread_cap(None), Ok(None));
        assert_eq!(thread_cap(Some("")), Ok(None));
        assert_eq!(thread_cap(Some(" 3 ")), Ok(Some(3)));
        assert!(thread_cap(Some("0")).is_err());
        assert!(thread_cap(Some("many")).is_err());
    }
}
