mod args;
mod batch;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Optimal = 0,
    /// Bad usage, unreadable input or an I/O failure.
    Usage = 1,
    /// Infeasible, or the solver gave up without a certificate.
    Infeasible = 2,
    Timeout = 3,
}

/// Writes to standard output; a closed pipe is not an error.
pub fn emit(text: &str) -> std::io::Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Usage as u8 } else { 0 });
        }
    };
    let res = match &cli.command {
        Command::Obfuscate(a) => commands::obfuscate(a),
        Command::Solve(a) => commands::solve(a),
        Command::Batch(a) => batch::batch(a),
    };
    let code = res.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        Exit::Usage
    });
    ExitCode::from(code as u8)
}
