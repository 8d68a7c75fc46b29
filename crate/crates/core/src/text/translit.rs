use std::collections::HashMap;

use crate::error::{Error, Result};

/// Word-level romanized to Devanagari conversion.
pub trait Transliterator {
    fn transliterate(&self, roman_word: &str) -> String;
}

const DEFAULT_TABLE: &str = include_str!("../../data/translit.tsv");

/// Greedy longest-match substitution over a `latin<TAB>devanagari` table.
/// Characters with no table entry are copied through unchanged.
#[derive(Clone, Debug)]
pub struct TableTransliterator {
    table: HashMap<String, String>,
    max_key_chars: usize,
}

impl TableTransliterator {
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let Some((latin, deva)) = line.split_once('\t') else {
                return Err(Error::Data(format!("transliteration table line {}: missing tab", i + 1)));
            };
            table.insert(latin.to_string(), deva.to_string());
        }
        let max_key_chars = table.keys().map(|k| k.chars().count()).max().unwrap_or(0);
        Ok(Self { table, max_key_chars })
    }

    pub fn table_size(&self) -> usize {
        self.table.len()
    }
}

impl Default for TableTransliterator {
    /// The table shipped in `data/translit.tsv`.
    fn default() -> Self {
        Self::from_tsv(DEFAULT_TABLE).expect("shipped table parses")
    }
}

impl Transliterator for TableTransliterator {
    fn transliterate(&self, roman_word: &str) -> String {
        let chars: Vec<char> = roman_word.chars().collect();
        let mut out = String::new();
        let mut i = 0;
        let mut key = String::new();
        while i < chars.len() {
            let longest = self.max_key_chars.min(chars.len() - i);
            let hit = (1..=longest).rev().find_map(|len| {
                key.clear();
                key.extend(&chars[i..i + len]);
                self.table.get(&key).map(|d| (len, d))
            });
            match hit {
                Some((len, deva)) => {
                    out.push_str(deva);
                    i += len;
                }
                None => {
                    out.push(chars[i]);
                    i += 1;
                }
            }
        }
        out
    }
}
