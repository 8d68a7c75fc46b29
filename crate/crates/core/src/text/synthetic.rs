//! Seeded code-mixed sentiment corpora with script-dependent ambiguity.
//!
//! Every sentence holds exactly one sentiment cue among neutral filler words.
//! Some cue pairs share a romanized spelling but differ in Devanagari (the
//! romanized stream cannot tell them apart); others share a Devanagari form
//! but differ when romanized (English loanwords colliding with native words
//! after transliteration). How often each kind is drawn is set by
//! [`CuePlacement`], which fixes how much of the label each script carries.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Script, ScriptPairExample, Sentiment, TableTransliterator, Transliterator};
use crate::error::{Error, Result};

pub const MIN_SPLIT_SIZE: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueKind {
    Filler,
    Plain,
    RomanAmbiguous,
    DevaAmbiguous,
}

impl CueKind {
    fn as_str(self) -> &'static str {
        match self {
            CueKind::Filler => "filler",
            CueKind::Plain => "plain",
            CueKind::RomanAmbiguous => "roman_ambiguous",
            CueKind::DevaAmbiguous => "deva_ambiguous",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CuePlacement {
    /// No romanized ambiguity: the romanized stream alone determines the label.
    RomanOnly,
    /// Romanized ambiguity dominates; some Devanagari ambiguity remains.
    DevaAdvantaged,
    /// Both kinds in equal measure.
    Mixed,
}

impl CuePlacement {
    /// Probabilities of drawing a plain, romanized-ambiguous or
    /// Devanagari-ambiguous cue.
    fn mixture(self) -> [f64; 3] {
        match self {
            CuePlacement::RomanOnly => [0.6, 0.0, 0.4],
            CuePlacement::DevaAdvantaged => [0.4, 0.4, 0.2],
            CuePlacement::Mixed => [0.5, 0.25, 0.25],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CuePlacement::RomanOnly => "roman_only",
            CuePlacement::DevaAdvantaged => "deva_advantaged",
            CuePlacement::Mixed => "mixed",
        }
    }
}

impl fmt::Display for CuePlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CuePlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roman_only" => Ok(CuePlacement::RomanOnly),
            "deva_advantaged" => Ok(CuePlacement::DevaAdvantaged),
            "mixed" => Ok(CuePlacement::Mixed),
            other => Err(Error::Config(format!("unknown cue placement {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexEntry {
    pub roman: String,
    pub deva: String,
    pub class: Option<Sentiment>,
    pub kind: CueKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub entries: Vec<LexEntry>,
}

const FILLERS: &[&str] = &[
    "ma", "timi", "hami", "yo", "tyo", "aaja", "bholi", "ghar", "kaam", "gaana", "video", "dada",
    "didi", "sathi", "sabai", "ekdam", "pani", "ni", "ko", "lai", "le", "ra", "pheri", "hera",
];

const PLAIN: &[(&str, Sentiment)] = &[
    ("ramro", Sentiment::Positive),
    ("khusi", Sentiment::Positive),
    ("best", Sentiment::Positive),
    ("maja", Sentiment::Positive),
    ("sundar", Sentiment::Positive),
    ("naramro", Sentiment::Negative),
    ("worst", Sentiment::Negative),
    ("dukha", Sentiment::Negative),
    ("chudel", Sentiment::Negative),
    ("bekar", Sentiment::Negative),
    ("thikai", Sentiment::Neutral),
    ("samanya", Sentiment::Neutral),
    ("khabar", Sentiment::Neutral),
    ("suchana", Sentiment::Neutral),
];

/// Same romanized spelling, distinct native spellings.
const ROMAN_AMBIGUOUS: &[(&str, [(&str, Sentiment); 2])] = &[
    ("sital", [("शीतल", Sentiment::Positive), ("सितल", Sentiment::Negative)]),
    ("dhan", [("ढन", Sentiment::Negative), ("धन", Sentiment::Neutral)]),
    ("tala", [("ताला", Sentiment::Positive), ("तल", Sentiment::Neutral)]),
];

/// Distinct romanized spellings, one shared native form.
const DEVA_AMBIGUOUS: &[(&str, [(&str, Sentiment); 2])] = &[
    ("बाद", [("bad", Sentiment::Negative), ("baad", Sentiment::Neutral)]),
    ("हिट", [("hit", Sentiment::Positive), ("heet", Sentiment::Negative)]),
    ("प्योर", [("pure", Sentiment::Positive), ("pyor", Sentiment::Neutral)]),
];

impl Lexicon {
    /// The built-in lexicon; unambiguous words get their Devanagari form from
    /// `translit`, ambiguous ones carry fixed native spellings.
    pub fn shipped(translit: &dyn Transliterator) -> Self {
        let mut entries = Vec::new();
        for &w in FILLERS {
            entries.push(LexEntry {
                roman: w.into(),
                deva: translit.transliterate(w),
                class: None,
                kind: CueKind::Filler,
            });
        }
        for &(w, class) in PLAIN {
            entries.push(LexEntry {
                roman: w.into(),
                deva: translit.transliterate(w),
                class: Some(class),
                kind: CueKind::Plain,
            });
        }
        for &(roman, pair) in ROMAN_AMBIGUOUS {
            for (deva, class) in pair {
                entries.push(LexEntry {
                    roman: roman.into(),
                    deva: deva.into(),
                    class: Some(class),
                    kind: CueKind::RomanAmbiguous,
                });
            }
        }
        for &(deva, pair) in DEVA_AMBIGUOUS {
            for (roman, class) in pair {
                entries.push(LexEntry {
                    roman: roman.into(),
                    deva: deva.into(),
                    class: Some(class),
                    kind: CueKind::DevaAmbiguous,
                });
            }
        }
        Self { entries }
    }

    /// Surface forms of sentiment cues in one script.
    pub fn cue_forms(&self, script: Script) -> HashSet<&str> {
        self.entries
            .iter()
            .filter(|e| e.kind != CueKind::Filler)
            .map(|e| match script {
                Script::Roman => e.roman.as_str(),
                Script::Deva => e.deva.as_str(),
            })
            .collect()
    }

    /// Distinct romanized words.
    pub fn roman_words(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .map(|e| e.roman.as_str())
            .filter(|w| seen.insert(*w))
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let class = e.class.map_or("none", Sentiment::as_str);
            s.push_str(&format!("{}\t{}\t{}\t{}\n", e.roman, e.deva, class, e.kind.as_str()));
        }
        s
    }

    fn of_kind(&self, kind: CueKind, class: Sentiment) -> Vec<&LexEntry> {
        self.entries
            .iter()
            .filter(|e| e.kind == kind && e.class == Some(class))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Training split size; validation and test get `max(size / 5, 30)`.
    pub size: usize,
    pub seed: u64,
    pub placement: CuePlacement,
    pub min_words: usize,
    pub max_words: usize,
}

impl SynthConfig {
    pub fn new(size: usize, seed: u64, placement: CuePlacement) -> Self {
        Self {
            size,
            seed,
            placement,
            min_words: 3,
            max_words: 7,
        }
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        let held_out = (self.size / 5).max(MIN_SPLIT_SIZE);
        [self.size, held_out, held_out]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<ScriptPairExample>,
    pub validation: Vec<ScriptPairExample>,
    pub test: Vec<ScriptPairExample>,
    pub lexicon: Lexicon,
}

/// Bag-of-cue-words ceilings for each script on one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub roman_oracle: f64,
    pub deva_oracle: f64,
    pub gap: f64,
}

pub fn gen_synthetic(config: &SynthConfig) -> Result<SyntheticCorpus> {
    if config.size < MIN_SPLIT_SIZE {
        return Err(Error::Config(format!(
            "synthetic size {} is below the minimum of {MIN_SPLIT_SIZE} per split",
            config.size
        )));
    }
    if config.min_words == 0 || config.min_words > config.max_words {
        return Err(Error::Config("need 1 <= min_words <= max_words".into()));
    }
    let translit = TableTransliterator::default();
    let lexicon = Lexicon::shipped(&translit);
    let fillers: Vec<&LexEntry> = lexicon.entries.iter().filter(|e| e.kind == CueKind::Filler).collect();
    let mixture = config.placement.mixture();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen: HashSet<String> = HashSet::new();
    let mut splits: Vec<Vec<ScriptPairExample>> = Vec::new();

    for size in config.split_sizes() {
        let mut split = Vec::with_capacity(size);
        while split.len() < size {
            let class = Sentiment::ALL[rng.random_range(0..3)];
            let u: f64 = rng.random();
            let kind = if u < mixture[0] {
                CueKind::Plain
            } else if u < mixture[0] + mixture[1] {
                CueKind::RomanAmbiguous
            } else {
                CueKind::DevaAmbiguous
            };
            let cue = *lexicon
                .of_kind(kind, class)
                .choose(&mut rng)
                .expect("every class has cues of every kind");
            let len = rng.random_range(config.min_words..=config.max_words);
            let cue_pos = rng.random_range(0..len);
            let (mut roman, mut deva) = (Vec::with_capacity(len), Vec::with_capacity(len));
            for k in 0..len {
                let e = if k == cue_pos {
                    cue
                } else {
                    *fillers.choose(&mut rng).expect("fillers")
                };
                roman.push(e.roman.clone());
                deva.push(e.deva.clone());
            }
            let ex = ScriptPairExample::new(roman, deva, class)?;
            if seen.insert(ex.roman_text()) {
                split.push(ex);
            }
        }
        splits.push(split);
    }
    let test = splits.pop().expect("three splits");
    let validation = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(SyntheticCorpus {
        train,
        validation,
        test,
        lexicon,
    })
}

/// Best achievable accuracy of any classifier that sees only which cue forms
/// of `script` a sentence contains: sentences are grouped by their sorted cue
/// bag and each group predicts its majority label (ties to the lowest class).
pub fn oracle_accuracy(examples: &[ScriptPairExample], script: Script, lexicon: &Lexicon) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let cues = lexicon.cue_forms(script);
    let mut groups: BTreeMap<Vec<&str>, [usize; 3]> = BTreeMap::new();
    for ex in examples {
        let mut bag: Vec<&str> = ex
            .words(script)
            .iter()
            .map(String::as_str)
            .filter(|w| cues.contains(w))
            .collect();
        bag.sort_unstable();
        groups.entry(bag).or_default()[ex.label.index()] += 1;
    }
    let correct: usize = groups.values().map(|c| *c.iter().max().expect("3 classes")).sum();
    correct as f64 / examples.len() as f64
}

pub fn oracle_report(examples: &[ScriptPairExample], lexicon: &Lexicon) -> OracleReport {
    let roman_oracle = oracle_accuracy(examples, Script::Roman, lexicon);
    let deva_oracle = oracle_accuracy(examples, Script::Deva, lexicon);
    OracleReport {
        roman_oracle,
        deva_oracle,
        gap: deva_oracle - roman_oracle,
    }
}
