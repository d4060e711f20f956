//! Closed word-level vocabulary with a stable token ↔ id bijection.

use std::collections::BTreeSet;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::WorldError;

pub const PAD: &str = "<pad>";
pub const BEGIN: &str = "<s>";
pub const END: &str = "</s>";
pub const BLANK: &str = "<blank>";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenVocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl TokenVocab {
    /// Build from a word set: special tokens first, then the words in sorted
    /// order. Sorted order makes the mapping independent of insertion order.
    pub fn build(words: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = words.into_iter().collect();
        let mut tokens: Vec<String> =
            vec![PAD.to_owned(), BEGIN.to_owned(), END.to_owned(), BLANK.to_owned()];
        for w in set {
            if !tokens.iter().any(|t| *t == w) {
                tokens.push(w);
            }
        }
        let mut v = TokenVocab {
            tokens,
            index: HashMap::new(),
        };
        v.rebuild_index();
        v
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<u32, WorldError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| WorldError::UnknownToken(token.to_owned()))
    }

    pub fn token(&self, id: u32) -> Result<&str, WorldError> {
        self.tokens
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or(WorldError::UnknownTokenId(id))
    }

    pub fn begin_id(&self) -> u32 {
        self.index[BEGIN]
    }

    pub fn pad_id(&self) -> u32 {
        self.index[PAD]
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, WorldError> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, WorldError> {
        let words: Result<Vec<&str>, _> = ids.iter().map(|&i| self.token(i)).collect();
        Ok(words?.join(" "))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bijective_and_sorted() {
        let v = TokenVocab::build(["zeta", "alpha", "alpha", "mid"].map(String::from));
        assert_eq!(v.len(), 4 + 3);
        let a = v.id("alpha").unwrap();
        assert_eq!(v.token(a).unwrap(), "alpha");
        // sorted after specials
        assert!(v.id("alpha").unwrap() < v.id("mid").unwrap());
        assert!(v.id("mid").unwrap() < v.id("zeta").unwrap());
    }

    #[test]
    fn unknown_token_errors() {
        let v = TokenVocab::build(["a"].map(String::from));
        assert!(v.id("missing").is_err());
        assert!(v.token(999).is_err());
    }

    #[test]
    fn roundtrip_encode_decode() {
        let v = TokenVocab::build(["the", "cat", "sat"].map(String::from));
        let ids = v.encode("the cat sat").unwrap();
        assert_eq!(v.decode(&ids).unwrap(), "the cat sat");
    }
}
