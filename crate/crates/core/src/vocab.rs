use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Reserved id for out-of-vocabulary tokens and padding.
pub const UNK: usize = 0;
pub const UNK_TOKEN: &str = "<unk>";

/// Token to row-index map. Id 0 is always [`UNK`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_words(core::iter::empty::<&str>())
    }
}

impl Vocabulary {
    /// Builds a vocabulary from distinct words, keeping first-seen order.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self {
            words: Vec::new(),
            index: BTreeMap::new(),
        };
        v.insert(UNK_TOKEN);
        for w in words {
            v.insert(w);
        }
        v
    }

    /// Sorted union of all tokens accepted by `keep`.
    pub fn from_tokens<'a>(
        tokens: impl IntoIterator<Item = &'a str>,
        mut keep: impl FnMut(&str) -> bool,
    ) -> Self {
        let set: BTreeSet<&str> = tokens.into_iter().filter(|t| keep(t)).collect();
        Self::from_words(set)
    }

    fn insert(&mut self, w: &str) -> usize {
        if let Some(&i) = self.index.get(w) {
            return i;
        }
        let i = self.words.len();
        self.words.push(w.to_string());
        self.index.insert(w.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocabulary::from_words(["a", "b", "a"]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("<unk>"), UNK);
        assert_eq!(v.encode(&["b", "zzz"]), [2, UNK]);
    }

    #[test]
    fn filtered_tokens_are_sorted() {
        let v = Vocabulary::from_tokens(["z", "a", "q", "a"], |w| w != "q");
        assert_eq!(v.words(), ["<unk>", "a", "z"]);
    }
}
