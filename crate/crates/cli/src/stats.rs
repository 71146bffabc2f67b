//! Batch statistics over exported JSONL logs.

use std::path::{Path, PathBuf};

use anyhow::Context;
use chacha_core::analytics::{compute_stats, emit_report, parse_jsonl, Report, ReportFormat, SyllableRule};
use walkdir::WalkDir;

/// Expands directories into the `.jsonl` files beneath them. Explicit file
/// arguments are kept whatever their extension. The result is sorted and
/// deduplicated so output does not depend on argument or directory order.
pub fn collect_inputs(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            for entry in WalkDir::new(input) {
                let entry = entry.with_context(|| format!("walking {}", input.display()))?;
                let p = entry.path();
                if entry.file_type().is_file() && p.extension().is_some_and(|e| e == "jsonl") {
                    files.push(p.to_path_buf());
                }
            }
        } else if input.is_file() {
            files.push(input.clone());
        } else {
            anyhow::bail!("input {} does not exist", input.display());
        }
    }
    files.sort();
    files.dedup();
    Ok(files)
}

pub fn report(files: &[PathBuf], rule: SyllableRule) -> anyhow::Result<Report> {
    let mut records = Vec::new();
    for f in files {
        records.extend(read(f)?);
    }
    Ok(compute_stats(records, rule)?)
}

fn read(path: &Path) -> anyhow::Result<Vec<chacha_core::analytics::Located>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_jsonl(&path.display().to_string(), &text)?)
}

/// Reads, computes, and renders in one call.
pub fn run(inputs: &[PathBuf], rule: SyllableRule, format: ReportFormat) -> anyhow::Result<(Report, String)> {
    let files = collect_inputs(inputs)?;
    let report = report(&files, rule)?;
    let text = emit_report(&report, format);
    Ok((report, text))
}
