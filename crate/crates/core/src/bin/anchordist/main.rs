//! Command-line front end.
//!
//! Standard output carries `key=value` lines only. Failures print one line
//! `error=<class> message=<text>` on standard error and exit with
//!
//! | code | class       |
//! |------|-------------|
//! | 2    | `config`    |
//! | 3    | `io`        |
//! | 4    | `algorithm` |
//! | 5    | `diverged`  |
//! | 6    | `predictor` |

mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use anchordist::Error;
use args::Cli;

/// Failure classes and their exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Config = 2,
    Io = 3,
    Algorithm = 4,
    Diverged = 5,
    Predictor = 6,
}

impl Failure {
    fn name(self) -> &'static str {
        match self {
            Failure::Config => "config",
            Failure::Io => "io",
            Failure::Algorithm => "algorithm",
            Failure::Diverged => "diverged",
            Failure::Predictor => "predictor",
        }
    }

    pub fn classify(err: &Error) -> Failure {
        if let Error::Stage { stage: "config", .. } = err {
            return Failure::Config;
        }
        match err.root() {
            Error::InvalidArgument(_) => Failure::Config,
            Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } => Failure::Io,
            Error::ExternalFailed { .. } | Error::BadExternalOutput(_) => Failure::Predictor,
            _ => Failure::Algorithm,
        }
    }
}

fn report(class: Failure, message: &str) -> ExitCode {
    let one_line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error={} message={one_line}", class.name());
    ExitCode::from(class as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Keep clap's message, drop the usage block.
            let text = e.to_string();
            let message: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.trim().is_empty() && !l.contains("--help"))
                .collect();
            return report(Failure::Config, message.join(" ").trim_start_matches("error: "));
        }
    };
    match commands::run(cli) {
        Ok(commands::Outcome::Ok) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Diverged(message)) => report(Failure::Diverged, &message),
        Err(e) => report(Failure::classify(&e), &e.to_string()),
    }
}
