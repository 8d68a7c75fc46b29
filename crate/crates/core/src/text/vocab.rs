use std::collections::HashMap;
use std::path::Path;

use super::{Script, ScriptPairExample};
use crate::error::{Error, Result};

pub const CLS: usize = 0;
pub const PAD: usize = 1;
pub const UNK: usize = 2;

const SPECIALS: [&str; 3] = ["[CLS]", "[PAD]", "[UNK]"];

/// Token to id map with CLS=0, PAD=1, UNK=2 reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Ids are assigned in the given order, starting after the specials.
    pub fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.get(token).is_some_and(|&i| i >= SPECIALS.len())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// One non-special token per line; line `k` (0-based) holds id `k + 3`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens[SPECIALS.len()..] {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_tokens(text.lines().map(str::to_string)))
    }
}

/// Builds one vocabulary per script from whitespace tokens. Tokens seen fewer
/// than `min_frequency` times are left out (they encode as UNK). Ids follow
/// count descending, then token order.
pub fn build_vocab(examples: &[ScriptPairExample], min_frequency: usize) -> Result<(Vocabulary, Vocabulary)> {
    if min_frequency == 0 {
        return Err(Error::Config("min_frequency must be at least 1".into()));
    }
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let build = |script: Script| {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for ex in examples {
            for w in ex.words(script) {
                *counts.entry(w.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_frequency)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
    };
    Ok((build(Script::Roman), build(Script::Deva)))
}
