// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use steerkit::autotester::{AutotesterError, ClientError};
use steerkit::builder::BuildError;
use steerkit::eval::EvalError;
use steerkit::runtime::{ModelError, RuntimeError};
use steerkit::store::StoreError;
use steerkit::toy::ToyExportError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Export(#[from] ToyExportError),
    #[error(transparent)]
    Autotester(#[from] AutotesterError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{0}")]
    Replay(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable label printed before the message.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Store(_) => "store",
            CliError::Build(_) => "build",
            CliError::Runtime(_) => "runtime",
            CliError::Model(_) => "model",
            CliError::Eval(_) => "eval",
            CliError::Export(_) => "extract",
            CliError::Autotester(AutotesterError::Client(_)) | CliError::Client(_) => "client",
            CliError::Autotester(_) => "autotester",
            CliError::Replay(_) => "replay",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// `error: <category>: <message>` on one line.
    pub fn line(&self) -> String {
        let mut msg = self.to_string();
        let mut src = std::error::Error::source(self);
        while let Some(s) = src {
            let s_msg = s.to_string();
            if !msg.contains(&s_msg) {
                msg.push_str(": ");
                msg.push_str(&s_msg);
            }
            src = s.source();
        }
        let flat: String = msg.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error: {}: {flat}", self.category())
    }
}
