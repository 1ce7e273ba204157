//! Command-line pipeline: synthesis, featurization, training, evaluation,
//! kernel fusion, FLOPs accounting and ablation.

pub mod commands;
pub mod config;
pub mod plot;

use skanet::Error;

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "SKANET_OUT";

/// Exit status for a failed command: 1 config, 2 I/O, 3 numeric failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } | Error::Corrupt { .. } => 2,
                Error::NonFinite(_) => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}
