use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Part-of-speech classes used to partition the codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PosTag {
    Noun,
    Adjective,
    Verb,
    Adverb,
    Other,
}

impl PosTag {
    pub const CODEBOOK: [PosTag; 4] = [Self::Noun, Self::Adjective, Self::Verb, Self::Adverb];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Noun => "NOUN",
            Self::Adjective => "ADJ",
            Self::Verb => "VERB",
            Self::Adverb => "ADV",
            Self::Other => "OTHER",
        }
    }

    /// Nouns and adjectives describe appearance.
    pub fn is_spatial(self) -> bool {
        matches!(self, Self::Noun | Self::Adjective)
    }

    /// Verbs and adverbs describe motion.
    pub fn is_temporal(self) -> bool {
        matches!(self, Self::Verb | Self::Adverb)
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NOUN" => Ok(Self::Noun),
            "ADJ" | "ADJECTIVE" => Ok(Self::Adjective),
            "VERB" => Ok(Self::Verb),
            "ADV" | "ADVERB" => Ok(Self::Adverb),
            "OTHER" | "X" => Ok(Self::Other),
            _ => Err(Error::format("POS tag", format!("unknown tag {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaggedWord {
    pub word: String,
    pub pos: PosTag,
}

impl TaggedWord {
    pub fn new(word: &str, pos: PosTag) -> Self {
        Self {
            word: word.to_lowercase(),
            pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRecord {
    pub clip_id: String,
    pub words: Vec<TaggedWord>,
}

/// Tagged captions, one per clip. Text form: `clip_id<TAB>word/POS word/POS ...`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaptionCorpus {
    pub records: Vec<CaptionRecord>,
}

impl CaptionCorpus {
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (clip_id, caption) = line.split_once('\t').ok_or_else(|| {
                Error::format("caption file", format!("line {}: missing tab", lineno + 1))
            })?;
            let words = caption
                .split_whitespace()
                .map(|tok| {
                    let (word, pos) = tok.rsplit_once('/').ok_or_else(|| {
                        Error::format(
                            "caption file",
                            format!("line {}: token {tok:?} lacks a /POS tag", lineno + 1),
                        )
                    })?;
                    if word.is_empty() {
                        return Err(Error::format(
                            "caption file",
                            format!("line {}: empty word", lineno + 1),
                        ));
                    }
                    Ok(TaggedWord::new(word, pos.parse()?))
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(CaptionRecord {
                clip_id: clip_id.to_string(),
                words,
            });
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.clip_id);
            out.push('\t');
            let words: Vec<String> = r.words.iter().map(|w| format!("{}/{}", w.word, w.pos)).collect();
            out.push_str(&words.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_lowercases() {
        let c = CaptionCorpus::parse("c0\tRed/ADJ ball/NOUN rolls/VERB\n\nc1\tslowly/adverb\n").unwrap();
        assert_eq!(c.records.len(), 2);
        assert_eq!(c.records[0].words[0], TaggedWord::new("red", PosTag::Adjective));
        assert_eq!(c.records[1].words[0].pos, PosTag::Adverb);
    }

    #[test]
    fn text_round_trip_is_stable() {
        let text = "c0\tred/ADJ ball/NOUN rolls/VERB quickly/ADV left/OTHER\n";
        let c = CaptionCorpus::parse(text).unwrap();
        assert_eq!(c.to_text(), text);
        assert_eq!(CaptionCorpus::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(CaptionCorpus::parse("no tab here").is_err());
        assert!(CaptionCorpus::parse("c\tword").is_err());
        assert!(CaptionCorpus::parse("c\tword/PRONOUN").is_err());
    }
}
