use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::QcError;

pub const DEFAULT_QUERY_TEMPLATE: &str = "Histopathological evidence for {field} in {context}.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldCategory {
    ImageRelated,
    AdminRequired,
}

/// Case-insensitive regular expression, serialized as its source text.
#[derive(Clone)]
pub struct RegexPattern {
    source: String,
    compiled: Regex,
}

impl RegexPattern {
    pub fn new(source: &str) -> Result<Self, regex::Error> {
        let compiled = RegexBuilder::new(source).case_insensitive(true).build()?;
        Ok(Self {
            source: source.to_string(),
            compiled,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }
}

impl fmt::Debug for RegexPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/{}/i", self.source)
    }
}

impl PartialEq for RegexPattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Serialize for RegexPattern {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for RegexPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let src = String::deserialize(d)?;
        RegexPattern::new(&src).map_err(D::Error::custom)
    }
}

/// A plain string matches as a case-insensitive substring; `{"regex": "..."}`
/// matches as a case-insensitive regular expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Pattern {
    Substring(String),
    Regex { regex: RegexPattern },
}

impl Pattern {
    /// `lowered` must be `text.to_lowercase()`.
    fn is_match(&self, text: &str, lowered: &str) -> bool {
        match self {
            Pattern::Substring(s) => {
                let needle = s.to_lowercase();
                !needle.is_empty() && lowered.contains(&needle)
            }
            Pattern::Regex { regex } => regex.compiled.is_match(text),
        }
    }
}

fn default_template() -> String {
    DEFAULT_QUERY_TEMPLATE.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub category: FieldCategory,
    pub patterns: Vec<Pattern>,
    #[serde(default = "default_template")]
    pub query_template: String,
}

impl FieldSpec {
    pub fn new(name: &str, category: FieldCategory, patterns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            category,
            patterns: patterns
                .iter()
                .map(|p| Pattern::Substring(p.to_string()))
                .collect(),
            query_template: default_template(),
        }
    }

    pub fn is_image_related(&self) -> bool {
        self.category == FieldCategory::ImageRelated
    }

    pub fn matches(&self, text: &str) -> bool {
        let lowered = text.to_lowercase();
        self.patterns.iter().any(|p| p.is_match(text, &lowered))
    }

    pub fn query(&self, context: &str) -> String {
        self.query_template
            .replace("{field}", &self.name)
            .replace("{context}", context)
    }

    /// Text of the first sentence in `text` that mentions this field.
    pub fn extract_sentence(&self, text: &str) -> Option<String> {
        split_sentences(text)
            .into_iter()
            .find(|s| self.matches(s))
            .map(str::to_string)
    }
}

/// Splits on sentence punctuation and newlines. A period only ends a sentence
/// when followed by whitespace or the end of text, so "3.5 cm" stays whole.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        let ends = match c {
            '\n' | '!' | '?' | ';' | '。' | '；' | '！' | '？' => true,
            '.' => iter.peek().map(|(_, n)| n.is_whitespace()).unwrap_or(true),
            _ => false,
        };
        if ends {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// The user-defined quality criteria: required fields with their category,
/// match patterns and retrieval query templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checklist {
    #[serde(default)]
    pub dataset_context: String,
    pub fields: Vec<FieldSpec>,
}

impl Checklist {
    pub fn new(dataset_context: &str, fields: Vec<FieldSpec>) -> Result<Self, QcError> {
        let c = Self {
            dataset_context: dataset_context.to_string(),
            fields,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn empty() -> Self {
        Self {
            dataset_context: String::new(),
            fields: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), QcError> {
        let mut names = HashSet::new();
        for f in &self.fields {
            if f.name.trim().is_empty() {
                return Err(QcError::InvalidChecklist("field with empty name".into()));
            }
            if !names.insert(f.name.as_str()) {
                return Err(QcError::InvalidChecklist(format!(
                    "duplicate field name {:?}",
                    f.name
                )));
            }
            if f.patterns.is_empty() {
                return Err(QcError::InvalidChecklist(format!(
                    "field {:?} has no patterns",
                    f.name
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, QcError> {
        let c: Checklist =
            serde_json::from_str(text).map_err(|e| QcError::InvalidChecklist(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, QcError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QcError::InvalidChecklist(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The bundled 12-field gastric cancer checklist.
    pub fn gastric_default() -> Self {
        Self::from_json(include_str!("../../fixtures/gastric_checklist.json"))
            .expect("bundled checklist is valid")
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }

    /// Names of the fields whose patterns match `text`, in checklist order.
    pub fn fields_in(&self, text: &str) -> Vec<&str> {
        self.fields
            .iter()
            .filter(|f| f.matches(text))
            .map(|f| f.name.as_str())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substring_is_case_insensitive() {
        let f = FieldSpec::new("lymphovascular invasion", FieldCategory::ImageRelated, &["lymphovascular"]);
        assert!(f.matches("No LYMPHOVASCULAR invasion identified."));
        assert!(!f.matches("perineural invasion present"));
    }

    #[test]
    fn regex_patterns() {
        let json = r#"{"dataset_context":"x","fields":[{"name":"tumor size","category":"image_related","patterns":[{"regex":"\\d+(\\.\\d+)?\\s*cm"}]}]}"#;
        let c = Checklist::from_json(json).unwrap();
        assert!(c.fields[0].matches("Tumor measures 3.5 CM."));
        assert!(!c.fields[0].matches("Tumor measures large."));
        assert_eq!(c.fields[0].query_template, DEFAULT_QUERY_TEMPLATE);
    }

    #[test]
    fn invalid_regex_rejected() {
        let json = r#"{"fields":[{"name":"a","category":"image_related","patterns":[{"regex":"("}]}]}"#;
        assert!(Checklist::from_json(json).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let f = FieldSpec::new("a", FieldCategory::ImageRelated, &["a"]);
        assert!(Checklist::new("", vec![f.clone(), f]).is_err());
    }

    #[test]
    fn empty_patterns_rejected() {
        let mut f = FieldSpec::new("a", FieldCategory::ImageRelated, &["a"]);
        f.patterns.clear();
        assert!(Checklist::new("", vec![f]).is_err());
    }

    #[test]
    fn lvi_query_from_template() {
        let f = FieldSpec::new("lymphovascular invasion", FieldCategory::ImageRelated, &["lymphovascular"]);
        assert_eq!(
            f.query("gastric adenocarcinoma"),
            "Histopathological evidence for lymphovascular invasion in gastric adenocarcinoma."
        );
    }

    #[test]
    fn sentences_keep_decimals() {
        assert_eq!(
            split_sentences("Tumor size 3.5 cm. Margins clear; no LVI\n胃腺癌。"),
            vec!["Tumor size 3.5 cm.", "Margins clear;", "no LVI", "胃腺癌。"]
        );
    }

    #[test]
    fn cjk_substring() {
        let f = FieldSpec::new("脉管侵犯", FieldCategory::ImageRelated, &["脉管"]);
        assert!(f.matches("未见脉管侵犯。"));
        assert_eq!(f.extract_sentence("胃腺癌。未见脉管侵犯。").as_deref(), Some("未见脉管侵犯。"));
    }

    #[test]
    fn bundled_checklist_has_twelve_fields() {
        let c = Checklist::gastric_default();
        assert_eq!(c.len(), 12);
        assert_eq!(
            c.fields
                .iter()
                .filter(|f| f.category == FieldCategory::AdminRequired)
                .count(),
            2
        );
    }
}
