use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::videodata::{CaptionCorpus, PosTag};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub word: String,
    pub pos: PosTag,
    pub frequency: usize,
}

/// Codebook vocabulary ordered by POS class (noun, adjective, verb, adverb)
/// and then lexicographically, so each sub-book is a contiguous span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<(String, PosTag), usize>,
    n_spatial: usize,
}

fn class_rank(pos: PosTag) -> usize {
    PosTag::CODEBOOK
        .iter()
        .position(|&p| p == pos)
        .expect("codebook POS")
}

impl Vocabulary {
    /// Accepts entries in any order; rejects non-codebook tags and duplicates.
    pub fn from_entries(mut entries: Vec<VocabEntry>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| e.pos == PosTag::Other) {
            return Err(Error::validation(
                "vocabulary",
                format!("{:?} has a non-codebook POS tag", e.word),
            ));
        }
        entries.sort_by(|a, b| {
            (class_rank(a.pos), &a.word).cmp(&(class_rank(b.pos), &b.word))
        });
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert((e.word.clone(), e.pos), i).is_some() {
                return Err(Error::validation(
                    "vocabulary",
                    format!("duplicate entry {}/{}", e.word, e.pos),
                ));
            }
        }
        let n_spatial = entries.iter().filter(|e| e.pos.is_spatial()).count();
        Ok(Self {
            entries,
            index,
            n_spatial,
        })
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Nouns then adjectives.
    pub fn spatial_range(&self) -> Range<usize> {
        0..self.n_spatial
    }

    /// Verbs then adverbs.
    pub fn temporal_range(&self) -> Range<usize> {
        self.n_spatial..self.entries.len()
    }

    pub fn count(&self, pos: PosTag) -> usize {
        self.entries.iter().filter(|e| e.pos == pos).count()
    }

    pub fn lookup(&self, word: &str, pos: PosTag) -> Option<usize> {
        self.index.get(&(word.to_string(), pos)).copied()
    }

    pub fn get(&self, index: usize) -> Option<&VocabEntry> {
        self.entries.get(index)
    }

    /// `word<TAB>pos<TAB>frequency`, one entry per line.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.word, e.pos, e.frequency))
            .collect()
    }

    /// Parses the text form; the file must already be in canonical order so
    /// that embedding rows line up with it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [word, pos, freq] = fields[..] else {
                return Err(Error::format(
                    "vocabulary file",
                    format!("line {}: expected 3 tab-separated fields", lineno + 1),
                ));
            };
            let frequency = freq.parse().map_err(|_| {
                Error::format("vocabulary file", format!("line {}: bad frequency {freq:?}", lineno + 1))
            })?;
            entries.push(VocabEntry {
                word: word.to_string(),
                pos: pos.parse()?,
                frequency,
            });
        }
        let vocab = Self::from_entries(entries.clone())?;
        if vocab.entries != entries {
            return Err(Error::format(
                "vocabulary file",
                "entries are not in (POS class, word) order",
            ));
        }
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Counts every noun/adjective/verb/adverb occurrence and keeps the words
/// seen at least `min_freq` times.
pub fn build_vocabulary(corpus: &CaptionCorpus, min_freq: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::validation("captions", "corpus is empty"));
    }
    let mut counts: BTreeMap<(String, PosTag), usize> = BTreeMap::new();
    for record in &corpus.records {
        for w in record.words.iter().filter(|w| w.pos != PosTag::Other) {
            *counts.entry((w.word.clone(), w.pos)).or_default() += 1;
        }
    }
    let entries: Vec<VocabEntry> = counts
        .into_iter()
        .filter(|(_, n)| *n >= min_freq)
        .map(|((word, pos), frequency)| VocabEntry { word, pos, frequency })
        .collect();
    if entries.is_empty() {
        return Err(Error::validation(
            "vocabulary",
            format!("no word reaches min_freq={min_freq}"),
        ));
    }
    Vocabulary::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_caption_counts() {
        let corpus = CaptionCorpus::parse("c\tred/ADJ ball/NOUN rolls/VERB\n").unwrap();
        let v = build_vocabulary(&corpus, 1).unwrap();
        assert_eq!(v.spatial_range().len(), 2);
        assert_eq!(v.temporal_range().len(), 1);
        let words: Vec<_> = v.entries().iter().map(|e| e.word.as_str()).collect();
        assert_eq!(words, ["ball", "red", "rolls"]);
    }

    #[test]
    fn min_freq_filters() {
        let corpus = CaptionCorpus::parse("a\tred/ADJ ball/NOUN\nb\tred/ADJ cube/NOUN\n").unwrap();
        let v = build_vocabulary(&corpus, 2).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.entries()[0].frequency, 2);
        assert!(build_vocabulary(&corpus, 3).is_err());
    }

    #[test]
    fn other_tags_excluded() {
        let corpus = CaptionCorpus::parse("a\tthe/OTHER ball/NOUN\n").unwrap();
        let v = build_vocabulary(&corpus, 1).unwrap();
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(build_vocabulary(&CaptionCorpus::default(), 1).is_err());
    }

    #[test]
    fn text_round_trip() {
        let corpus = CaptionCorpus::parse("a\tquickly/ADV red/ADJ ball/NOUN rolls/VERB ball/NOUN\n").unwrap();
        let v = build_vocabulary(&corpus, 1).unwrap();
        assert_eq!(Vocabulary::parse(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn unsorted_file_rejected() {
        assert!(Vocabulary::parse("rolls\tVERB\t1\nball\tNOUN\t1\n").is_err());
        assert!(Vocabulary::parse("ball\tNOUN\t1\nball\tNOUN\t2\n").is_err());
    }
}
