use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Casefolded words of `text`; any non-alphanumeric character separates words.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Word-level vocabulary. Ids 0..4 are reserved for the special tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Every word occurring in `questions`, sorted, after the special tokens.
    pub fn build<'a>(questions: impl IntoIterator<Item = &'a str>) -> Self {
        let distinct: BTreeSet<String> = questions.into_iter().flat_map(words).collect();
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(distinct)
            .collect::<Vec<_>>();
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Token ids of `question`, truncated or padded with [`PAD`] to `max_len`.
    pub fn tokenize(&self, question: &str, max_len: usize) -> Result<Vec<u32>, ModelError> {
        let mut ids: Vec<u32> = words(question).take(max_len).map(|w| self.id(&w)).collect();
        if ids.is_empty() {
            return Err(ModelError::EmptyQuestion);
        }
        ids.resize(max_len, PAD);
        Ok(ids)
    }
}
