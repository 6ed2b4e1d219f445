//! Command implementations behind the `hsiseg` binary.

pub mod config;
pub mod pipeline;
pub mod render;

use hsiseg::{Error, ErrorCategory};

/// Process exit status for an error: 1 contract or configuration, 2 I/O, 3 numerical.
pub fn exit_code(err: &Error) -> u8 {
    match err.category() {
        ErrorCategory::Contract => 1,
        ErrorCategory::Io => 2,
        ErrorCategory::Numerical => 3,
    }
}

pub fn category_name(err: &Error) -> &'static str {
    match err.category() {
        ErrorCategory::Contract => "contract",
        ErrorCategory::Io => "io",
        ErrorCategory::Numerical => "numerical",
    }
}
