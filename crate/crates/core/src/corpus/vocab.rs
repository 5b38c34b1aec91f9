use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const MASK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const NUM_SPECIALS: usize = 4;

const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<mask>", "<cls>", "<unk>"];

/// Character-level vocabulary. Specials take ids 0..4, observed characters
/// follow in codepoint order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, TokenId>,
}

impl Vocab {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        Self::from_chars(set.into_iter().collect())
    }

    fn from_chars(chars: Vec<char>) -> Self {
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, (i + NUM_SPECIALS) as TokenId))
            .collect();
        Vocab { chars, index }
    }

    pub fn size(&self) -> usize {
        self.chars.len() + NUM_SPECIALS
    }

    pub fn id(&self, c: char) -> TokenId {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.chars().map(|c| self.id(c)).collect()
    }

    pub fn token_str(&self, id: TokenId) -> String {
        let i = id as usize;
        if i < NUM_SPECIALS {
            SPECIAL_NAMES[i].to_string()
        } else {
            self.chars.get(i - NUM_SPECIALS).map_or_else(|| SPECIAL_NAMES[UNK as usize].to_string(), |c| c.to_string())
        }
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_chars(self.chars)
    }
}
