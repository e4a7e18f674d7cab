//! Character-level vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bidirectional character/id mapping. Ids are assigned in ascending code
/// point order, so the same text always yields the same vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    char_to_id: HashMap<char, usize>,
}

/// Standalone JSON export: `{"chars": "<sorted chars>"}`.
#[derive(Serialize, Deserialize)]
struct VocabularyJson {
    chars: String,
}

impl Vocabulary {
    pub fn build(text: &str) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        let mut chars: Vec<char> = text.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        Ok(Self::from_sorted(chars))
    }

    /// Rebuilds a vocabulary from its concatenated character string.
    pub fn from_chars(chars: &str) -> Result<Self> {
        let list: Vec<char> = chars.chars().collect();
        if list.is_empty() {
            return Err(Error::EmptyText);
        }
        if list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("vocabulary chars must be strictly ascending".into()));
        }
        Ok(Self::from_sorted(list))
    }

    fn from_sorted(chars: Vec<char>) -> Self {
        let char_to_id = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Vocabulary { chars, char_to_id }
    }

    pub fn size(&self) -> usize {
        self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn chars_string(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.char_to_id.get(&c).copied()
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        self.chars.get(id).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .enumerate()
            .map(|(position, ch)| self.id_of(ch).ok_or(Error::UnknownChar { ch, position }))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter().map(|&id| self.char_of(id).ok_or(Error::IdOutOfRange { id, vocab_size: self.size() })).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabularyJson { chars: self.chars_string() }).expect("string serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let parsed: VocabularyJson =
            serde_json::from_str(json).map_err(|e| Error::InvalidArgument(format!("vocabulary json: {e}")))?;
        Self::from_chars(&parsed.chars)
    }
}
