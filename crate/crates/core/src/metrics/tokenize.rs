use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub original: String,
}

impl TokenizedText {
    pub fn new(text: &str) -> Self {
        Self {
            tokens: tokenize(text),
            original: text.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Han ideographs, kana and CJK punctuation-free symbol blocks; each such
/// code point is a token of its own.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x309F     // Hiragana
        | 0x30A0..=0x30FF   // Katakana
        | 0x3400..=0x4DBF   // CJK Extension A
        | 0x4E00..=0x9FFF   // CJK Unified Ideographs
        | 0xF900..=0xFAFF   // CJK Compatibility Ideographs
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x30000..=0x3134F)
}

/// Lowercased word tokens. Alphanumeric runs form words; everything else
/// separates them; CJK code points are single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latin_words_lowercased() {
        assert_eq!(tokenize("Poorly-differentiated, LVI+"), vec!["poorly", "differentiated", "lvi"]);
    }

    #[test]
    fn mixed_script() {
        assert_eq!(tokenize("胃腺癌 stage II。"), vec!["胃", "腺", "癌", "stage", "ii"]);
        assert_eq!(tokenize("HE染色"), vec!["he", "染", "色"]);
    }

    #[test]
    fn empty_and_punctuation_only() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" .,;!? ").is_empty());
    }
}
