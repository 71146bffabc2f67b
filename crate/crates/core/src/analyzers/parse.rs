//! Pulls the machine-readable JSON object out of a chain-of-thought answer.

use serde::de::DeserializeOwned;

/// Finds the last line that parses as a JSON object of type `T`. Falls back
/// to the whole text (minus code fences) for single-object answers that span
/// several lines.
pub fn extract_final_json<T: DeserializeOwned>(raw: &str) -> Option<T> {
    for line in raw.lines().rev() {
        let line = line.trim().trim_matches('`').trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('{') {
            if let Ok(v) = serde_json::from_str::<T>(line) {
                return Some(v);
            }
        }
        // Only the final non-empty line counts as the answer line.
        break;
    }
    let stripped = raw
        .trim()
        .trim_start_matches("```json")
        .trim_start_matches("```")
        .trim_end_matches("```")
        .trim();
    if let Ok(v) = serde_json::from_str::<T>(stripped) {
        return Some(v);
    }
    // Reasoning followed by a multi-line object: try from the last line that
    // opens one.
    let starts: Vec<usize> = stripped
        .match_indices('\n')
        .map(|(i, _)| i + 1)
        .filter(|&i| stripped[i..].trim_start().starts_with('{'))
        .collect();
    starts
        .into_iter()
        .rev()
        .find_map(|i| serde_json::from_str::<T>(stripped[i..].trim()).ok())
}
