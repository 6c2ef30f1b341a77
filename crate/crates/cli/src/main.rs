mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use noma_core::Error;

use crate::args::Cli;

/// Exit statuses, one per failure class. Usage errors exit with 2 (clap).
pub mod exit {
    pub const CONFIG: u8 = 3;
    pub const IO: u8 = 4;
    pub const FORMAT: u8 = 5;
    pub const DIMENSION: u8 = 6;
    pub const NUMERICAL: u8 = 7;
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: exit::CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidConfig(_) | Error::UnknownDetector(_) | Error::UnknownAblation(_) => exit::CONFIG,
            Error::Io(_) => exit::IO,
            Error::Format(_) | Error::Truncated { .. } => exit::FORMAT,
            Error::Dimension(_) => exit::DIMENSION,
            Error::IllConditioned { .. } | Error::EmptyTrainingSet | Error::EquivalenceFailed(_) => exit::NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
