//! Keyword-anchored line retrieval with near-duplicate suppression, plus
//! mobile number extraction.
//!
//! For every keyword, in lexicon order, the rendered text is searched for
//! occurrences. Each hit is widened to its enclosing line (bounded by the
//! nearest newline on either side, or the buffer edges). A line is kept
//! unless it is more similar than the threshold to a line already kept.
//! With `s` keywords, `l` bytes of text and `m` kept lines the cost is
//! `O(s * l * m)` comparisons.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SIM_THRESHOLD: f64 = 0.90;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("keyword lexicon is empty")]
    EmptyLexicon,
    #[error("similarity threshold must be in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Case-insensitive set of sensitive keywords and phrases, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordLexicon {
    keywords: Vec<String>,
}

impl KeywordLexicon {
    /// Keywords are trimmed and lowercased; blanks are skipped and repeats
    /// collapse onto their first occurrence.
    pub fn new<I, S>(keywords: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for k in keywords {
            let k = k.as_ref().trim().to_lowercase();
            if !k.is_empty() && !out.contains(&k) {
                out.push(k);
            }
        }
        if out.is_empty() {
            return Err(RetrievalError::EmptyLexicon);
        }
        Ok(Self { keywords: out })
    }

    /// One keyword or phrase per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, RetrievalError> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self, RetrievalError> {
        let text = fs::read_to_string(path).map_err(|source| RetrievalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The lexicon shipped with the crate (military use case).
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/default_lexicon.txt")).expect("bundled lexicon")
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    /// Keywords occurring in `text`, in lexicon order.
    pub fn matches(&self, text: &str, word_boundary: bool) -> Vec<String> {
        self.keywords
            .iter()
            .filter(|k| find_keyword(text.as_bytes(), k.as_bytes(), 0, word_boundary).is_some())
            .cloned()
            .collect()
    }

    pub fn contains_any(&self, text: &str, word_boundary: bool) -> bool {
        self.keywords
            .iter()
            .any(|k| find_keyword(text.as_bytes(), k.as_bytes(), 0, word_boundary).is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalOptions {
    /// Lines strictly more similar than this to a kept line are dropped.
    pub sim_threshold: f64,
    /// Require keywords to sit on ASCII word boundaries.
    pub word_boundary: bool,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        Self {
            sim_threshold: DEFAULT_SIM_THRESHOLD,
            word_boundary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateMessage {
    pub text: String,
    pub matched_keywords: Vec<String>,
    /// Byte range of the line within the searched text.
    pub line_span: (usize, usize),
}

pub fn retrieve(
    complete_text: &str,
    lexicon: &KeywordLexicon,
    options: &RetrievalOptions,
) -> Result<Vec<CandidateMessage>, RetrievalError> {
    let t = options.sim_threshold;
    if !(t > 0.0 && t <= 1.0) {
        return Err(RetrievalError::InvalidThreshold(t));
    }
    if lexicon.is_empty() {
        return Err(RetrievalError::EmptyLexicon);
    }

    let hay = complete_text.as_bytes();
    let mut kept: Vec<CandidateMessage> = Vec::new();
    for keyword in lexicon.keywords() {
        let mut from = 0;
        while hay.len() - from >= keyword.len() {
            let Some(i) = find_keyword(hay, keyword.as_bytes(), from, options.word_boundary) else {
                break;
            };
            let start = hay[..i].iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            let end = hay[i..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(hay.len(), |p| i + p);
            let mut chat = &complete_text[start..end];
            if let Some(stripped) = chat.strip_suffix('\r') {
                chat = stripped;
            }
            let duplicate = kept
                .iter()
                .any(|c| similarity(chat, &c.text) > options.sim_threshold);
            if !duplicate {
                kept.push(CandidateMessage {
                    text: chat.to_string(),
                    matched_keywords: lexicon.matches(chat, options.word_boundary),
                    line_span: (start, start + chat.len()),
                });
            }
            // the rest of this line can only yield the same chat again
            from = (end + 1).min(hay.len());
        }
    }
    Ok(kept)
}

/// ASCII case-insensitive search for `needle` in `hay[from..]`.
fn find_keyword(hay: &[u8], needle: &[u8], from: usize, word_boundary: bool) -> Option<usize> {
    if needle.is_empty() || hay.len() < needle.len() {
        return None;
    }
    let last = hay.len() - needle.len();
    let mut i = from;
    while i <= last {
        if hay[i..i + needle.len()].eq_ignore_ascii_case(needle)
            && (!word_boundary || on_boundary(hay, i, i + needle.len()))
        {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn on_boundary(hay: &[u8], start: usize, end: usize) -> bool {
    let word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    (start == 0 || !word(hay[start - 1])) && (end == hay.len() || !word(hay[end]))
}

/// `1 - levenshtein(a, b) / max(|a|, |b|)` over lowercased characters.
/// Two empty strings are identical.
pub fn similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().flat_map(char::to_lowercase).collect();
    let b: Vec<char> = b.chars().flat_map(char::to_lowercase).collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsisdnRecord {
    /// Digits only; separators and any leading `+` are removed.
    pub number: String,
    /// Byte offset of the first character (the `+` or first digit).
    pub context_offset: usize,
}

const MSISDN_MIN_DIGITS: usize = 10;
const MSISDN_MAX_DIGITS: usize = 15;

/// Finds maximal digit sequences of 10 to 15 digits. A sequence may start
/// with `+` and may contain single spaces or dashes between digits. Numbers
/// are reported once, at their first occurrence.
pub fn extract_msisdns(complete_text: &str) -> Vec<MsisdnRecord> {
    let b = complete_text.as_bytes();
    let mut out: Vec<MsisdnRecord> = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let plus = b[i] == b'+' && b.get(i + 1).is_some_and(u8::is_ascii_digit);
        if !(plus || b[i].is_ascii_digit()) {
            i += 1;
            continue;
        }
        let start = i;
        if plus {
            i += 1;
        }
        let mut digits = String::new();
        while i < b.len() {
            if b[i].is_ascii_digit() {
                digits.push(b[i] as char);
                i += 1;
            } else if matches!(b[i], b' ' | b'-') && b.get(i + 1).is_some_and(u8::is_ascii_digit) {
                i += 1;
            } else {
                break;
            }
        }
        if (MSISDN_MIN_DIGITS..=MSISDN_MAX_DIGITS).contains(&digits.len())
            && !out.iter().any(|r| r.number == digits)
        {
            out.push(MsisdnRecord {
                number: digits,
                context_offset: start,
            });
        }
    }
    out
}
