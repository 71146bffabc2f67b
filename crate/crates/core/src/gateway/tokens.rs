//! Token estimation for budget gating.
//!
//! The default estimator is a character-class heuristic calibrated to stay at
//! or above cl100k-style BPE counts for mixed Korean/English chat text.
//! Exact tokenizers can be plugged in per model through [`TokenEstimator`].

use std::collections::HashMap;
use std::sync::Arc;

pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// Standalone BPE token count for each precomposed Hangul syllable
/// U+AC00..=U+D7A3, one byte per syllable.
static HANGUL_COST: &[u8; 11172] = include_bytes!("../../assets/hangul_token_cost.bin");

const HANGUL_BASE: u32 = 0xAC00;
const HANGUL_SURCHARGE: f64 = 0.1;
const WORD_MIN: f64 = 1.1;
const WORD_CHARS_PER_TOKEN: f64 = 6.0;
const EMOJI_CHAR: f64 = 3.0;
const ASTRAL_CHAR: f64 = 4.0;

/// Character-class heuristic.
///
/// Costs in tokens: Hangul syllable its standalone BPE cost plus 0.1; ASCII
/// word max(1.1, len/6); short contraction suffix (`'s`, `'ll`) 1; digit run
/// and ASCII punctuation run 1 per 3 chars; newline 1; emoji block
/// (U+1F000..=U+1FAFF) 3; other astral-plane chars 4; remaining non-ASCII
/// chars their UTF-8 length.
/// Spaces are free. The sum is rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicEstimator;

#[derive(Clone, Copy, PartialEq)]
enum Run {
    None,
    Word,
    Digits,
    Punct,
}

impl TokenEstimator for HeuristicEstimator {
    fn estimate(&self, text: &str) -> usize {
        let chars: Vec<char> = text.chars().collect();
        let mut total = 0.0f64;
        let mut run = Run::None;
        let mut run_len = 0usize;

        let close = |run: Run, len: usize| -> f64 {
            match run {
                Run::None => 0.0,
                Run::Word => (len as f64 / WORD_CHARS_PER_TOKEN).max(WORD_MIN),
                Run::Digits | Run::Punct => len.div_ceil(3) as f64,
            }
        };

        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c == '\'' {
                if let Some(n) = contraction_len(&chars[i + 1..]) {
                    total += close(run, run_len);
                    run = Run::None;
                    run_len = 0;
                    total += 1.0;
                    i += 1 + n;
                    continue;
                }
            }
            let kind = if c.is_ascii_alphabetic() {
                Run::Word
            } else if c.is_ascii_digit() {
                Run::Digits
            } else if c.is_ascii_punctuation() {
                Run::Punct
            } else {
                Run::None
            };
            if kind != Run::None {
                if kind != run {
                    total += close(run, run_len);
                    run = kind;
                    run_len = 0;
                }
                run_len += 1;
                i += 1;
                continue;
            }
            total += close(run, run_len);
            run = Run::None;
            run_len = 0;
            total += char_cost(c);
            i += 1;
        }
        total += close(run, run_len);
        total.ceil() as usize
    }
}

/// Letters following an apostrophe that form a 1-2 letter contraction suffix.
fn contraction_len(rest: &[char]) -> Option<usize> {
    let n = rest.iter().take_while(|c| c.is_ascii_alphabetic()).count();
    let boundary = rest
        .get(n)
        .is_none_or(|c| !(c.is_alphanumeric() || *c == '_'));
    ((1..=2).contains(&n) && boundary).then_some(n)
}

fn char_cost(c: char) -> f64 {
    let cp = c as u32;
    match c {
        ' ' | '\t' | '\r' => 0.0,
        '\n' => 1.0,
        _ if (HANGUL_BASE..HANGUL_BASE + 11172).contains(&cp) => {
            HANGUL_COST[(cp - HANGUL_BASE) as usize] as f64 + HANGUL_SURCHARGE
        }
        _ if c.is_ascii() => 1.0,
        _ if ('\u{1F000}'..='\u{1FAFF}').contains(&c) => EMOJI_CHAR,
        _ if c.len_utf8() == 4 => ASTRAL_CHAR,
        _ => c.len_utf8() as f64,
    }
}

/// Per-model estimator registry with the heuristic as fallback.
#[derive(Clone, Default)]
pub struct EstimatorRegistry {
    by_model: HashMap<String, Arc<dyn TokenEstimator>>,
}

impl EstimatorRegistry {
    pub fn register(&mut self, model_id: impl Into<String>, estimator: Arc<dyn TokenEstimator>) {
        self.by_model.insert(model_id.into(), estimator);
    }

    pub fn estimate(&self, text: &str, model_id: &str) -> usize {
        match self.by_model.get(model_id) {
            Some(e) => e.estimate(text),
            None => HeuristicEstimator.estimate(text),
        }
    }
}

impl std::fmt::Debug for EstimatorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EstimatorRegistry")
            .field("models", &self.by_model.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Default estimate for `model_id`. No model ships an exact tokenizer by
/// default, so this is the heuristic for every model.
pub fn estimate_tokens(text: &str, model_id: &str) -> usize {
    EstimatorRegistry::default().estimate(text, model_id)
}
