//! Command-line front end: each subcommand resolves a [`RunConfig`], runs
//! the corresponding library operation and writes its data files plus a
//! JSON manifest into the output directory.

// Negated float comparisons such as `!(x > 0.0)` are used on purpose so
// that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

pub use config::{resolve, Cli, Command, ConfigFile, RunConfig};

/// Version tag written into every manifest.
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or config; reported before any file is written.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] subrad::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Parses nothing itself; runs a parsed command line with the given value
/// of the worker environment variable.
pub fn run(cli: &Cli, env_workers: Option<String>) -> Result<Vec<String>, CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let config = resolve(&cli.command, &file, env_workers)?;
    commands::execute(&config)
}
