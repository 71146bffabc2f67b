use std::path::PathBuf;

use anyhow::Context;
use chacha_core::analytics::{ReportFormat, SyllableRule};
use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    #[value(name = "korean_letters_only")]
    KoreanLettersOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

/// Dialogue statistics from exported JSONL session logs.
#[derive(Parser)]
#[command(name = "chacha-stats", version)]
struct Args {
    /// Log files, or directories searched for *.jsonl.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Which characters count as syllables.
    #[arg(long, value_enum, default_value = "korean_letters_only")]
    rule: Rule,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let rule = match args.rule {
        Rule::KoreanLettersOnly => SyllableRule::KoreanLettersOnly,
    };
    let format = match args.format {
        Format::Table => ReportFormat::Table,
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    let (report, text) = chacha_cli::stats::run(&args.input, rule, format)?;
    match &args.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    let c = &report.corpus;
    eprintln!(
        "{} sessions, {} turns ({} user, {} system), mean {} turns per session",
        c.sessions,
        c.total_turns,
        c.user_turns,
        c.system_turns,
        c.turns_per_session.mean.map(|m| format!("{m:.2}")).unwrap_or_else(|| "-".into())
    );
    Ok(())
}
