//! Command-line front end for `attnflow`.
//!
//! Exit codes: 0 on success, 1 for domain findings or failures (invalid
//! bundle contents, unbounded or malformed networks, failed normalization),
//! 2 for usage and I/O errors.

pub mod args;
pub mod commands;
pub mod emit;

use std::fmt;

pub use commands::run;

/// A flag combination or flag value the subcommand cannot honour.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Process exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use attnflow::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(
            E::InvalidBundle(_)
            | E::MalformedNetwork(_)
            | E::UnknownNode(_)
            | E::Unbounded
            | E::Normalization(_),
        ) => 1,
        _ => 2,
    }
}
