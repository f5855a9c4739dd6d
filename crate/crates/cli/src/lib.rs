//! Library side of the `mxp` binary: command implementations and the HTTP
//! steering service.

pub mod commands;
pub mod server;

use manifold_explore::Error;

/// A problem with how the command was invoked; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// 2 for usage and configuration errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(Error::Config { .. } | Error::Environment(_)) = cause.downcast_ref::<Error>() {
            return 2;
        }
    }
    1
}
