//! Command-line front end: `run`, `inspect`, `eval` and `align`.

pub mod args;
pub mod backend;
pub mod eval;
pub mod inspect;
pub mod run;
pub mod tasks;

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use guidedec::{CaseFold, LemmaTable, WordNormalizer};

use crate::args::{AlignArgs, Cli, Command};
use crate::backend::Selection;

/// A command failure with its process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const IO: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const BACKEND: u8 = 3;

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: Self::IO,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        Self {
            code: Self::BACKEND,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

/// Case folding, plus a lemma table when a file is given.
pub fn normalizer(lemmas: Option<&Path>) -> Result<Box<dyn WordNormalizer>, Failure> {
    let Some(path) = lemmas else {
        return Ok(Box::new(CaseFold));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let table: HashMap<String, String> = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok(Box::new(LemmaTable::new(table)))
}

fn cmd_align(args: &AlignArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let models = backend::load(&Selection {
        ar: args
            .backends
            .ar_backend
            .clone()
            .or_else(|| args.backends.backend.clone()),
        mlm: args
            .backends
            .mlm_backend
            .clone()
            .or_else(|| args.backends.backend.clone()),
        scorer: None,
        default_url: args.backends.backend_url.clone(),
        need_mlm: true,
    })?;
    let Some(a) = &models.alignment else {
        return Err(Failure::usage("no masked model loaded"));
    };
    writeln!(
        stdout,
        "ar_vocab_size={} mlm_vocab_size={} shared_count={} shared_fraction={:.4}",
        a.ar_size,
        a.mlm_size,
        a.shared_count,
        a.shared_fraction()
    )
    .map_err(|e| Failure::io(e.to_string()))
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Run(a) => run::cmd_run(a, stdout),
        Command::Inspect(a) => inspect::cmd_inspect(a, stdout),
        Command::Eval(a) => eval::cmd_eval(a, stdout),
        Command::Align(a) => cmd_align(a, stdout),
    }
}
