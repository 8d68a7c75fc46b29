//! Paired-script text: datasets, vocabularies, encoding and synthetic corpora.

mod batch;
mod dataset;
pub mod synthetic;
mod translit;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{decode, encode, encode_masked, Batch, EncodedPair, EncodedSeq};
pub use dataset::{load_dataset, load_tsv, write_tsv, Split};
pub use translit::{TableTransliterator, Transliterator};
pub use vocab::{build_vocab, Vocabulary, CLS, PAD, UNK};

pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Label(i.to_string()))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(Sentiment::Negative),
            "neutral" => Ok(Sentiment::Neutral),
            "positive" => Ok(Sentiment::Positive),
            other => Err(Error::Label(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Script {
    Roman,
    Deva,
}

impl Script {
    pub fn prefix(self) -> &'static str {
        match self {
            Script::Roman => "roman",
            Script::Deva => "deva",
        }
    }

    pub fn other(self) -> Script {
        match self {
            Script::Roman => Script::Deva,
            Script::Deva => Script::Roman,
        }
    }
}

impl FromStr for Script {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roman" => Ok(Script::Roman),
            "deva" => Ok(Script::Deva),
            other => Err(Error::Config(format!("unknown script {other:?}"))),
        }
    }
}

/// One sentence in romanized and Devanagari form, aligned word by word.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScriptPairExample {
    roman: Vec<String>,
    deva: Vec<String>,
    pub label: Sentiment,
}

impl ScriptPairExample {
    pub fn new(roman: Vec<String>, deva: Vec<String>, label: Sentiment) -> Result<Self> {
        if roman.len() != deva.len() {
            return Err(Error::Data(format!(
                "word counts differ: {} romanized vs {} Devanagari",
                roman.len(),
                deva.len()
            )));
        }
        Ok(Self { roman, deva, label })
    }

    /// Splits both texts on whitespace.
    pub fn from_text(roman: &str, deva: &str, label: Sentiment) -> Result<Self> {
        let words = |s: &str| s.split_whitespace().map(str::to_string).collect();
        Self::new(words(roman), words(deva), label)
    }

    pub fn words(&self, script: Script) -> &[String] {
        match script {
            Script::Roman => &self.roman,
            Script::Deva => &self.deva,
        }
    }

    pub fn roman(&self) -> &[String] {
        &self.roman
    }

    pub fn deva(&self) -> &[String] {
        &self.deva
    }

    pub fn len(&self) -> usize {
        self.roman.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roman.is_empty()
    }

    pub fn roman_text(&self) -> String {
        self.roman.join(" ")
    }

    pub fn deva_text(&self) -> String {
        self.deva.join(" ")
    }
}
