//! `caap`: generate toy models, attribute, evaluate, ablate, and inspect
//! attention. See the README for the exit-code table.

mod args;
mod commands;
mod exit;

use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use args::{Cli, Command, FileConfig};
use exit::{classify, config_err, error_line, Code};

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(config_err("--threads must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| match &cli.command {
        Command::GenModel(a) => commands::gen_model_cmd(a, &file),
        Command::GenPlanted(a) => commands::gen_planted_cmd(a, &file),
        Command::Attribute(a) => commands::attribute_cmd(a, &file),
        Command::Eval(a) => commands::eval_cmd(a, &file),
        Command::Ablate(a) => commands::ablate_cmd(a, &file),
        Command::AttnStats(a) => commands::attn_stats_cmd(a, &file),
    })
}

/// Causes joined by `: `, skipping any already spelled out by the one
/// above it.
fn chain_message(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let s = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&s)) {
            parts.push(s);
        }
    }
    parts.join(": ").replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            let msg = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("{}", error_line(Code::Usage, msg));
            return ExitCode::from(Code::Usage as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = classify(&e);
            let msg = chain_message(&e);
            eprintln!("{}", error_line(code, &msg));
            ExitCode::from(code as u8)
        }
    }
}
