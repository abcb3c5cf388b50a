//! Transcript normalization: random byte strings and DIDs are replaced by
//! per-run aliases in order of first appearance, so two runs (or two seeds)
//! of the same script diff cleanly.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::crypto;

#[derive(Debug, Default)]
pub struct Aliaser {
    seen: BTreeMap<String, String>,
    counters: BTreeMap<&'static str, usize>,
}

fn alias_prefix(text: &str) -> Option<&'static str> {
    if text.starts_with("did:rx:") {
        return Some("D");
    }
    // 16/32/64-byte values in unpadded base64url have these exact lengths
    if !matches!(text.len(), 22 | 43 | 86) {
        return None;
    }
    match crypto::unb64(text).ok()?.len() {
        16 => Some("S"),
        32 => Some("K"),
        64 => Some("G"),
        _ => None,
    }
}

impl Aliaser {
    pub fn new() -> Self {
        Self::default()
    }

    fn alias(&mut self, text: &str) -> Option<String> {
        let prefix = alias_prefix(text)?;
        if let Some(a) = self.seen.get(text) {
            return Some(a.clone());
        }
        let n = self.counters.entry(prefix).or_insert(0);
        *n += 1;
        let alias = format!("{prefix}{n}");
        self.seen.insert(text.to_string(), alias.clone());
        Some(alias)
    }

    /// Rewrite `value` in place. Object keys are visited in sorted order,
    /// so aliases depend only on content.
    pub fn normalize(&mut self, value: &mut Value) {
        match value {
            Value::String(s) => {
                if let Some(a) = self.alias(s) {
                    *s = a;
                }
            }
            Value::Array(items) => items.iter_mut().for_each(|v| self.normalize(v)),
            Value::Object(map) => {
                let old = std::mem::take(map);
                let mut fresh = Map::new();
                for (k, mut v) in old {
                    let key = self.alias(&k).unwrap_or(k);
                    self.normalize(&mut v);
                    fresh.insert(key, v);
                }
                *map = fresh;
            }
            _ => {}
        }
    }
}

/// Normalize a whole transcript and render it as pretty JSON with sorted
/// keys and a trailing newline.
pub fn render(mut transcript: Value) -> String {
    Aliaser::new().normalize(&mut transcript);
    let mut text = serde_json::to_string_pretty(&transcript).expect("transcripts serialize");
    text.push('\n');
    text
}
