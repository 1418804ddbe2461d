//! Word-level vocabulary with reserved special tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const N_SPECIAL: usize = 4;

const SPECIAL_NAMES: [&str; N_SPECIAL] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from words in first-seen order, after the
    /// reserved tokens.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Vocab {
            words: SPECIAL_NAMES.iter().map(|s| s.to_string()).collect(),
            index: BTreeMap::new(),
        };
        vocab.rebuild_index();
        for w in words {
            vocab.insert(w);
        }
        vocab
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
    }

    pub fn insert(&mut self, word: &str) -> TokenId {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len() as TokenId;
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: TokenId) -> &str {
        self.words
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(SPECIAL_NAMES[UNK as usize])
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<TokenId> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Maps ids back to words, dropping bos/eos/pad.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.word(id).to_string())
            .collect()
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(mut self) -> Self {
        self.rebuild_index();
        self
    }
}
