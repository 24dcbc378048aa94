//! Command-line harness for machine unlearning experiments on synthetic data.

pub mod commands;
pub mod config;
pub mod modelio;
pub mod report;
pub mod run;

pub use config::RunConfig;
pub use report::RunReport;

use unlearn_core::ErrorKind;

/// Process exit status for an error class.
pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Domain => 3,
        ErrorKind::Solver => 4,
    }
}

/// One-line JSON error for stderr.
pub fn error_line(err: &unlearn_core::Error) -> String {
    let kind = match err.kind() {
        ErrorKind::Config => "config",
        ErrorKind::Domain => "domain",
        ErrorKind::Solver => "solver",
    };
    serde_json::json!({ "error": { "kind": kind, "message": err.to_string() } }).to_string()
}
