use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ScriptPairExample, Sentiment};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.tsv", self.as_str())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Reads `<dir>/<split>.tsv`.
pub fn load_dataset(dir: &Path, split: Split) -> Result<Vec<ScriptPairExample>> {
    load_tsv(&dir.join(split.file_name()))
}

/// Parses `roman<TAB>deva<TAB>label` lines, preserving file order.
pub fn load_tsv(path: &Path) -> Result<Vec<ScriptPairExample>> {
    let text = std::fs::read_to_string(path)?;
    parse_tsv(&text, path)
}

pub(crate) fn parse_tsv(text: &str, path: &Path) -> Result<Vec<ScriptPairExample>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let label = Sentiment::from_str(fields[2].trim())?;
        let ex = ScriptPairExample::from_text(fields[0], fields[1], label)
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_tsv(path: &Path, examples: &[ScriptPairExample]) -> Result<()> {
    let mut s = String::new();
    for ex in examples {
        s.push_str(&ex.roman_text());
        s.push('\t');
        s.push_str(&ex.deva_text());
        s.push('\t');
        s.push_str(ex.label.as_str());
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}
