//! Whole-word vocabulary: one token per line, id = zero-based line index.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Generator names reserved in the default vocabulary alongside the
/// synthetic pseudo-generators.
const GENERATOR_TOKENS: [&str; 22] = [
    "progan", "stylegan", "stylegan2", "biggan", "cyclegan", "stargan", "gaugan", "deepfake",
    "faceswap", "whichfaceisreal", "san", "crn", "imle", "seeingdark", "glide", "ldm", "guided",
    "dalle", "midjourney", "sdxl", "wukong", "vqdm",
];

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(['\n', '\r']) {
                return Err(Error::Data(format!("vocab line {}: empty or malformed token", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("vocab line {}: duplicate token `{t}`", i + 1)));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Default desk vocabulary: special tokens, prompt words, 22 named
    /// generators and the synthetic pseudo-generator names.
    pub fn default_tokens() -> Vec<String> {
        let mut t: Vec<String> = [BOS, EOS, "a", "photo", "of", "image", "real", "fake"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        t.extend(GENERATOR_TOKENS.iter().map(|s| s.to_string()));
        t.extend(
            ["periodic_a", "periodic_b", "periodic_c", "broadband_a", "broadband_b", "broadband_c"]
                .iter()
                .map(|s| s.to_string()),
        );
        t
    }

    pub fn default_vocab() -> Self {
        Self::new(Self::default_tokens()).expect("default tokens are unique")
    }

    pub fn generator_tokens() -> &'static [&'static str] {
        &GENERATOR_TOKENS
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.contains('\r') {
            return Err(Error::Data("vocab must use LF line endings".into()));
        }
        let body = text.strip_suffix('\n').unwrap_or(text);
        if body.is_empty() {
            return Self::new(Vec::new());
        }
        Self::new(body.split('\n').map(str::to_string).collect())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    /// Maps a class name to its single token id.
    pub fn tokenize_class(&self, name: &str) -> Result<usize> {
        self.id(name)
    }

    pub fn tokenize_words(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn lookup_and_unknown() {
        let v = Vocab::default_vocab();
        assert_eq!(v.tokenize_class("real").unwrap(), 6);
        let err = v.tokenize_class("realistic").unwrap_err().to_string();
        assert!(err.contains("realistic"), "{err}");
    }

    #[test]
    fn generator_names_get_distinct_ids() {
        let v = Vocab::default_vocab();
        let ids: HashSet<usize> = Vocab::generator_tokens()
            .iter()
            .map(|g| v.tokenize_class(g).unwrap())
            .collect();
        assert_eq!(ids.len(), 22);
    }

    #[test]
    fn text_round_trip_and_format() {
        let v = Vocab::default_vocab();
        let text = v.to_text();
        assert!(text.starts_with("<bos>\n<eos>\n"));
        assert_eq!(Vocab::parse(&text).unwrap(), v);
        assert!(Vocab::parse("a\r\nb\n").is_err());
        assert!(Vocab::parse("a\nb\na\n").is_err());
        assert!(Vocab::parse("").unwrap().is_empty());
    }
}
