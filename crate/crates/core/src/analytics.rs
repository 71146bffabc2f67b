//! Descriptive statistics over exported dialogue logs.
//!
//! Syllable and latency aggregates are unweighted means of per-session
//! means. Latency is the gap between a system turn and the user turn that
//! follows it, and is left out when either timestamp is missing.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::dialogue::{Phase, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyllableRule {
    /// Precomposed Hangul syllables (U+AC00..=U+D7A3) only.
    KoreanLettersOnly,
}

impl SyllableRule {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "korean_letters_only" => Some(SyllableRule::KoreanLettersOnly),
            _ => None,
        }
    }
}

pub fn count_syllables(text: &str, rule: SyllableRule) -> usize {
    match rule {
        SyllableRule::KoreanLettersOnly => text
            .chars()
            .filter(|c| ('\u{AC00}'..='\u{D7A3}').contains(c))
            .count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

/// The subset of a log record the statistics need. Timestamps may be absent.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct StatsRecord {
    pub session_id: String,
    pub turn_index: usize,
    pub role: Role,
    pub content: String,
    pub phase: Phase,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default)]
    pub codes: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
}

/// A record with where it came from.
#[derive(Debug, Clone)]
pub struct Located {
    pub file: String,
    pub line: usize,
    pub record: StatsRecord,
}

/// Parses one JSONL document; blank lines are skipped.
pub fn parse_jsonl(file: &str, text: &str) -> Result<Vec<Located>, StatsError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: StatsRecord =
            serde_json::from_str(line).map_err(|e| StatsError::Malformed {
                file: file.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        out.push(Located {
            file: file.to_string(),
            line: i + 1,
            record,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub session_id: String,
    pub total_turns: usize,
    pub user_turns: usize,
    pub system_turns: usize,
    pub mean_user_syllables: Option<f64>,
    pub mean_system_syllables: Option<f64>,
    pub mean_user_latency_seconds: Option<f64>,
    pub phase_turn_histogram: BTreeMap<Phase, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub code_counts: BTreeMap<String, usize>,
}

/// Mean, sample standard deviation, and range of a set of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Summary {
                n,
                mean: None,
                sd: None,
                min: None,
                max: None,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Summary {
            n,
            mean: Some(mean),
            sd,
            min: values.iter().copied().reduce(f64::min),
            max: values.iter().copied().reduce(f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sessions: usize,
    pub total_turns: usize,
    pub user_turns: usize,
    pub system_turns: usize,
    pub turns_per_session: Summary,
    pub user_syllables: Summary,
    pub system_syllables: Summary,
    pub user_latency_seconds: Summary,
    pub phase_turn_histogram: BTreeMap<Phase, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub code_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rule: SyllableRule,
    pub sessions: Vec<SessionStats>,
    pub corpus: CorpusStats,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Groups records by session (across files), orders each session by turn
/// index, and computes the statistics.
pub fn compute_stats(records: Vec<Located>, rule: SyllableRule) -> Result<Report, StatsError> {
    let mut by_session: BTreeMap<String, Vec<Located>> = BTreeMap::new();
    for r in records {
        by_session.entry(r.record.session_id.clone()).or_default().push(r);
    }

    let mut sessions = Vec::with_capacity(by_session.len());
    for (id, mut recs) in by_session {
        recs.sort_by_key(|r| r.record.turn_index);
        if let Some(w) = recs.windows(2).find(|w| w[0].record.turn_index == w[1].record.turn_index) {
            return Err(StatsError::Malformed {
                file: w[1].file.clone(),
                line: w[1].line,
                message: format!("duplicate turn_index {} in session {id}", w[1].record.turn_index),
            });
        }
        sessions.push(session_stats(id, &recs, rule));
    }

    let col = |f: fn(&SessionStats) -> Option<f64>| -> Vec<f64> {
        sessions.iter().filter_map(f).collect()
    };
    let mut histogram = BTreeMap::new();
    let mut codes = BTreeMap::new();
    for s in &sessions {
        for (p, n) in &s.phase_turn_histogram {
            *histogram.entry(*p).or_insert(0) += n;
        }
        for (c, n) in &s.code_counts {
            *codes.entry(c.clone()).or_insert(0) += n;
        }
    }
    let corpus = CorpusStats {
        sessions: sessions.len(),
        total_turns: sessions.iter().map(|s| s.total_turns).sum(),
        user_turns: sessions.iter().map(|s| s.user_turns).sum(),
        system_turns: sessions.iter().map(|s| s.system_turns).sum(),
        turns_per_session: Summary::of(&col(|s| Some(s.total_turns as f64))),
        user_syllables: Summary::of(&col(|s| s.mean_user_syllables)),
        system_syllables: Summary::of(&col(|s| s.mean_system_syllables)),
        user_latency_seconds: Summary::of(&col(|s| s.mean_user_latency_seconds)),
        phase_turn_histogram: histogram,
        code_counts: codes,
    };
    Ok(Report {
        rule,
        sessions,
        corpus,
    })
}

fn session_stats(session_id: String, recs: &[Located], rule: SyllableRule) -> SessionStats {
    let mut user_syl = Vec::new();
    let mut sys_syl = Vec::new();
    let mut latency = Vec::new();
    let mut histogram = BTreeMap::new();
    let mut codes = BTreeMap::new();
    for (i, r) in recs.iter().enumerate() {
        let r = &r.record;
        let syl = count_syllables(&r.content, rule) as f64;
        *histogram.entry(r.phase).or_insert(0) += 1;
        for c in &r.codes {
            *codes.entry(c.clone()).or_insert(0) += 1;
        }
        match r.role {
            Role::System => sys_syl.push(syl),
            Role::User => {
                user_syl.push(syl);
                let prev = i.checked_sub(1).map(|j| &recs[j].record);
                if let Some(prev) = prev.filter(|p| p.role == Role::System) {
                    if let (Some(a), Some(b)) = (prev.timestamp, r.timestamp) {
                        latency.push((b - a).num_milliseconds() as f64 / 1000.0);
                    }
                }
            }
        }
    }
    SessionStats {
        session_id,
        total_turns: recs.len(),
        user_turns: user_syl.len(),
        system_turns: sys_syl.len(),
        mean_user_syllables: mean(&user_syl),
        mean_system_syllables: mean(&sys_syl),
        mean_user_latency_seconds: mean(&latency),
        phase_turn_histogram: histogram,
        code_counts: codes,
    }
}

pub const CSV_HEADER: [&str; 7] = [
    "session_id",
    "total_turns",
    "user_turns",
    "system_turns",
    "mean_user_syllables",
    "mean_system_syllables",
    "mean_user_latency_seconds",
];

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn opt_fixed(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into())
}

pub fn emit_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER).expect("in-memory write");
            for s in &report.sessions {
                w.write_record([
                    s.session_id.clone(),
                    s.total_turns.to_string(),
                    s.user_turns.to_string(),
                    s.system_turns.to_string(),
                    opt(s.mean_user_syllables),
                    opt(s.mean_system_syllables),
                    opt(s.mean_user_latency_seconds),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
        ReportFormat::Table => table(report),
    }
}

fn table(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>6} {:>6} {:>6} {:>10} {:>10} {:>11}",
        "session", "turns", "user", "system", "user_syl", "sys_syl", "latency_s"
    );
    for s in &report.sessions {
        let id: String = if s.session_id.chars().count() > 24 {
            s.session_id.chars().take(23).chain(['…']).collect()
        } else {
            s.session_id.clone()
        };
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>6} {:>6} {:>10} {:>10} {:>11}",
            id,
            s.total_turns,
            s.user_turns,
            s.system_turns,
            opt_fixed(s.mean_user_syllables),
            opt_fixed(s.mean_system_syllables),
            opt_fixed(s.mean_user_latency_seconds)
        );
    }
    let c = &report.corpus;
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "sessions {}  turns {} (user {}, system {})",
        c.sessions, c.total_turns, c.user_turns, c.system_turns
    );
    for (name, s) in [
        ("turns/session", &c.turns_per_session),
        ("user syllables", &c.user_syllables),
        ("system syllables", &c.system_syllables),
        ("user latency s", &c.user_latency_seconds),
    ] {
        let _ = writeln!(
            out,
            "{name:<17} mean {:>8}  sd {:>8}  min {:>8}  max {:>8}",
            opt_fixed(s.mean),
            opt_fixed(s.sd),
            opt_fixed(s.min),
            opt_fixed(s.max)
        );
    }
    let _ = writeln!(out, "syllable and latency rows are unweighted means of per-session means");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: SyllableRule = SyllableRule::KoreanLettersOnly;

    fn rec(sid: &str, i: usize, role: &str, content: &str, ts: Option<i64>) -> String {
        let ts = ts
            .map(|s| format!("\"{}\"", DateTime::from_timestamp(s, 0).unwrap().to_rfc3339()))
            .unwrap_or_else(|| "null".into());
        format!(
            "{{\"session_id\":\"{sid}\",\"turn_index\":{i},\"role\":\"{role}\",\"content\":\"{content}\",\"phase\":\"explore\",\"attachments\":null,\"timestamp\":{ts},\"prompt_digest\":null,\"usage\":null}}"
        )
    }

    #[test]
    fn syllable_examples() {
        assert_eq!(count_syllables("hello 😀!", K), 0);
        assert_eq!(count_syllables("안녕하세요", K), 5);
        assert_eq!(count_syllables("나는 soccer를 좋아해", K), 6);
        assert_eq!(count_syllables("\u{1100}\u{1161}", K), 0);
        assert_eq!(count_syllables("", K), 0);
    }

    #[test]
    fn single_system_turn() {
        let recs = parse_jsonl("a.jsonl", &rec("s", 0, "system", "안녕", Some(0))).unwrap();
        let r = compute_stats(recs, K).unwrap();
        let s = &r.sessions[0];
        assert_eq!((s.total_turns, s.user_turns, s.system_turns), (1, 0, 1));
        assert_eq!(s.mean_user_syllables, None);
        assert_eq!(s.mean_system_syllables, Some(2.0));
        assert_eq!(s.mean_user_latency_seconds, None);
        let json = emit_report(&r, ReportFormat::Json);
        assert!(json.contains("\"mean_user_syllables\": null"));
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn latency_needs_both_timestamps() {
        let text = [
            rec("s", 0, "system", "a", Some(100)),
            rec("s", 1, "user", "b", Some(130)),
            rec("s", 2, "system", "c", None),
            rec("s", 3, "user", "d", Some(200)),
        ]
        .join("\n");
        let r = compute_stats(parse_jsonl("f", &text).unwrap(), K).unwrap();
        assert_eq!(r.sessions[0].mean_user_latency_seconds, Some(30.0));
    }

    #[test]
    fn malformed_line_is_located() {
        let text = format!("{}\n{{\"session_id\": 3}}\n", rec("s", 0, "system", "a", None));
        match parse_jsonl("logs/x.jsonl", &text) {
            Err(StatsError::Malformed { file, line, .. }) => {
                assert_eq!(file, "logs/x.jsonl");
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
        let dup = [rec("s", 0, "system", "a", None), rec("s", 0, "system", "b", None)].join("\n");
        assert!(compute_stats(parse_jsonl("d", &dup).unwrap(), K).is_err());
    }

    #[test]
    fn empty_corpus() {
        let r = compute_stats(Vec::new(), K).unwrap();
        assert_eq!(r.corpus.sessions, 0);
        assert_eq!(r.corpus.turns_per_session.mean, None);
        assert_eq!(emit_report(&r, ReportFormat::Csv), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn min_max_and_sample_sd() {
        let s = Summary::of(&[27.0, 87.0]);
        assert_eq!(s.min, Some(27.0));
        assert_eq!(s.max, Some(87.0));
        assert_eq!(s.mean, Some(57.0));
        assert!((s.sd.unwrap() - 1800f64.sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[5.0]).sd, None);
    }

    #[test]
    fn table_fits_100_columns() {
        let text = [
            rec("a-very-long-session-identifier-that-overflows", 0, "system", "안녕", Some(0)),
            rec("a-very-long-session-identifier-that-overflows", 1, "user", "응", Some(5)),
        ]
        .join("\n");
        let r = compute_stats(parse_jsonl("f", &text).unwrap(), K).unwrap();
        for line in emit_report(&r, ReportFormat::Table).lines() {
            assert!(line.chars().count() <= 100, "{line}");
        }
    }

    proptest::proptest! {
        #[test]
        fn matches_codepoint_oracle(s in "\\PC{0,40}") {
            let oracle = s.chars().filter(|&c| (0xAC00..=0xD7A3).contains(&(c as u32))).count();
            proptest::prop_assert_eq!(count_syllables(&s, K), oracle);
        }

        #[test]
        fn record_order_does_not_matter(seed in 0u64..1000) {
            let lines: Vec<String> = (0..10)
                .map(|i| rec("s", i, if i % 2 == 0 { "system" } else { "user" }, "가나다", Some(i as i64 * 10)))
                .collect();
            let mut shuffled = lines.clone();
            let n = shuffled.len();
            for i in 0..n {
                let j = ((seed as usize).wrapping_mul(31).wrapping_add(i * 7)) % n;
                shuffled.swap(i, j);
            }
            let a = compute_stats(parse_jsonl("f", &lines.join("\n")).unwrap(), K).unwrap();
            let b = compute_stats(parse_jsonl("f", &shuffled.join("\n")).unwrap(), K).unwrap();
            proptest::prop_assert_eq!(a, b);
        }
    }
}
