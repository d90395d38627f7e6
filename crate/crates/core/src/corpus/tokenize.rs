use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizeOptions {
    pub lowercase: bool,
    /// Drop punctuation; otherwise every punctuation character is its own token.
    pub strip_punct: bool,
}

impl Default for TokenizeOptions {
    fn default() -> Self {
        TokenizeOptions {
            lowercase: true,
            strip_punct: true,
        }
    }
}

/// Split UTF-8 text into maximal runs of letters and digits.
pub fn tokenize(text: &[u8], options: TokenizeOptions) -> Result<Vec<String>> {
    let text = std::str::from_utf8(text).map_err(|e| Error::Decode {
        offset: e.valid_up_to(),
    })?;
    Ok(tokenize_str(text, options))
}

pub fn tokenize_str(text: &str, options: TokenizeOptions) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        if !current.is_empty() {
            tokens.push(std::mem::take(current));
        }
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            if options.lowercase {
                current.extend(c.to_lowercase());
            } else {
                current.push(c);
            }
        } else {
            flush(&mut current, &mut tokens);
            if !options.strip_punct && !c.is_whitespace() && !c.is_control() {
                tokens.push(c.to_string());
            }
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

/// Order-preserving filter dropping every token in `stoplist`.
pub fn remove_stopwords<S: AsRef<str>>(tokens: &[S], stoplist: &HashSet<String>) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !stoplist.contains(*t))
        .map(str::to_string)
        .collect()
}

const ENGLISH_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// The classic 318-word English stop list.
pub fn english_stopwords() -> HashSet<String> {
    ENGLISH_STOPWORDS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}
