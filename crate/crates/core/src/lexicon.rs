//! Bilingual lexicons in the MUSE ground-truth format (`src tgt` per line)
//! and corpus coverage statistics.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LanguageTag};
use crate::error::{Error, Result};
use crate::tokenizer;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BilingualLexicon {
    pub source_language: LanguageTag,
    pub target_language: LanguageTag,
    entries: Vec<(String, Vec<String>)>,
    index: HashMap<String, usize>,
}

impl BilingualLexicon {
    pub fn new(source_language: LanguageTag, target_language: LanguageTag) -> Self {
        BilingualLexicon {
            source_language,
            target_language,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Adds one source/target pair. Keys are lower-cased; repeated
    /// candidates are ignored.
    pub fn insert(&mut self, source: &str, target: &str) {
        let key = source.to_lowercase();
        let slot = match self.index.get(&key) {
            Some(&i) => i,
            None => {
                self.entries.push((key.clone(), Vec::new()));
                self.index.insert(key, self.entries.len() - 1);
                self.entries.len() - 1
            }
        };
        let cands = &mut self.entries[slot].1;
        if !cands.iter().any(|c| c == target) {
            cands.push(target.to_string());
        }
    }

    pub fn parse(text: &str, origin: &Path, src: LanguageTag, tgt: LanguageTag) -> Result<Self> {
        let mut lex = BilingualLexicon::new(src, tgt);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!("expected 2 whitespace-separated fields, found {}", fields.len()),
                ));
            }
            lex.insert(fields[0], fields[1]);
        }
        Ok(lex)
    }

    pub fn lookup(&self, token: &str) -> Option<&[String]> {
        let hit = match self.index.get(token) {
            Some(&i) => Some(i),
            None => self.index.get(&token.to_lowercase()).copied(),
        };
        hit.map(|i| self.entries[i].1.as_slice())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.lookup(token).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in order of first appearance.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Every distinct target token, in order of first appearance.
    pub fn target_tokens(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .flat_map(|(_, v)| v.iter())
            .filter(|t| seen.insert(t.as_str()))
            .map(String::as_str)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, cands) in &self.entries {
            for c in cands {
                out.push_str(k);
                out.push(' ');
                out.push_str(c);
                out.push('\n');
            }
        }
        out
    }
}

pub fn load_lexicon(path: &Path, src: LanguageTag, tgt: LanguageTag) -> Result<BilingualLexicon> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BilingualLexicon::parse(&text, path, src, tgt)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

const ENGLISH_STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "all", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can",
    "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for", "from",
    "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself", "him",
    "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "me",
    "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once", "only",
    "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she", "should", "so",
    "some", "such", "than", "that", "the", "their", "theirs", "them", "themselves", "then",
    "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up",
    "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why",
    "will", "with", "would", "you", "your", "yours", "yourself", "yourselves",
];

impl StopWords {
    pub fn none() -> Self {
        StopWords(HashSet::new())
    }

    pub fn english() -> Self {
        StopWords(ENGLISH_STOP_WORDS.iter().map(|s| s.to_string()).collect())
    }

    /// Built-in list for the language; only English ships one.
    pub fn for_language(tag: LanguageTag) -> Self {
        match tag {
            LanguageTag::En => Self::english(),
            _ => Self::none(),
        }
    }

    /// One word per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(StopWords(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        ))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }
}

impl<S: Into<String>> FromIterator<S> for StopWords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        StopWords(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: usize,
    pub total: usize,
    pub f: f64,
}

impl CoverageReport {
    pub fn to_kv(&self) -> String {
        format!("covered = {}\ntotal = {}\nf = {}\n", self.covered, self.total, self.f)
    }
}

fn is_content_token(token: &str) -> bool {
    !tokenizer::is_special(token) && token.chars().any(char::is_alphanumeric)
}

/// Fraction of distinct corpus tokens (stop words, punctuation and special
/// tokens removed, lower-cased) that are keys of the lexicon.
pub fn coverage(lex: &BilingualLexicon, corpus: &Corpus, stopwords: &StopWords) -> Result<CoverageReport> {
    let mut distinct: HashSet<String> = HashSet::new();
    for ex in &corpus.examples {
        for tok in ex.history.iter().chain(ex.response.iter()) {
            if !is_content_token(tok) {
                continue;
            }
            let norm = tok.to_lowercase();
            if !stopwords.contains(&norm) {
                distinct.insert(norm);
            }
        }
    }
    if distinct.is_empty() {
        return Err(Error::Degenerate(
            "corpus has no tokens left after stop-word and punctuation filtering".into(),
        ));
    }
    let covered = distinct.iter().filter(|t| lex.contains(t)).count();
    Ok(CoverageReport {
        covered,
        total: distinct.len(),
        f: covered as f64 / distinct.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DialogueExample, Limits, Split};
    use proptest::prelude::*;

    fn lex(text: &str) -> BilingualLexicon {
        BilingualLexicon::parse(text, Path::new("lex.txt"), LanguageTag::En, LanguageTag::De).unwrap()
    }

    fn corpus(rows: &[(&str, &str)]) -> Corpus {
        Corpus::new(
            Split::Train,
            rows.iter()
                .enumerate()
                .map(|(i, (h, r))| {
                    DialogueExample::from_turns(format!("{i}"), &[*h], r, LanguageTag::En, Limits::default())
                        .unwrap()
                })
                .collect(),
        )
    }

    #[test]
    fn two_entries() {
        let l = lex("here hier\nexample beispiel\n");
        assert_eq!(l.len(), 2);
        assert_eq!(l.lookup("here").unwrap(), ["hier"]);
        assert_eq!(l.lookup("example").unwrap(), ["beispiel"]);
    }

    #[test]
    fn repeated_keys_merge_in_file_order() {
        let l = lex("bank bank\nbank ufer\nbank bank\n");
        assert_eq!(l.len(), 1);
        assert_eq!(l.lookup("bank").unwrap(), ["bank", "ufer"]);
    }

    #[test]
    fn wrong_field_count_reports_line() {
        let err = BilingualLexicon::parse("a b\nc d e\n", Path::new("l"), LanguageTag::En, LanguageTag::De)
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = BilingualLexicon::parse("lonely\n", Path::new("l"), LanguageTag::En, LanguageTag::De)
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn lookup_is_case_normalized() {
        let l = lex("Here hier\nbank ufer\n");
        assert_eq!(l.lookup("Here"), l.lookup("here"));
        assert_eq!(l.lookup("HERE").unwrap(), ["hier"]);
        assert!(l.lookup("zzz").is_none());
    }

    #[test]
    fn distinct_key_count_matches_file() {
        let text = "the der\nthe die\nthe das\ncat katze\ndog hund\ndog köter\nhouse haus\n";
        let l = lex(text);
        let distinct: HashSet<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
        assert_eq!(l.len(), distinct.len());
        assert_eq!(l.lookup("the").unwrap(), ["der", "die", "das"]);
    }

    #[test]
    fn half_coverage() {
        let c = corpus(&[("hello", "world")]);
        let r = coverage(&lex("hello hallo\n"), &c, &StopWords::none()).unwrap();
        assert_eq!((r.covered, r.total), (1, 2));
        assert_eq!(r.f, 0.5);
    }

    #[test]
    fn full_coverage_and_filtering() {
        let c = corpus(&[("hello, the world!", "the hello")]);
        let r = coverage(&lex("hello hallo\nworld welt\n"), &c, &StopWords::english()).unwrap();
        assert_eq!(r.f, 1.0);
        assert_eq!(r.total, 2);
    }

    #[test]
    fn only_stop_words_is_degenerate() {
        let c = corpus(&[("the", "a ,")]);
        assert!(matches!(
            coverage(&lex("x y\n"), &c, &StopWords::english()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn report_serializes_as_kv() {
        let r = CoverageReport { covered: 1, total: 2, f: 0.5 };
        assert_eq!(r.to_kv(), "covered = 1\ntotal = 2\nf = 0.5\n");
    }

    proptest! {
        #[test]
        fn coverage_monotone_and_repeat_invariant(
            words in proptest::collection::vec("[a-h]{1,2}", 2..20),
            keys in proptest::collection::vec("[a-h]{1,2}", 0..10),
            extra in "[a-h]{1,2}",
        ) {
            let text = words.join(" ");
            let c = corpus(&[(&text, "zz")]);
            let mut l = BilingualLexicon::new(LanguageTag::En, LanguageTag::De);
            for k in &keys { l.insert(k, "t"); }
            let before = coverage(&l, &c, &StopWords::none()).unwrap();
            prop_assert!((0.0..=1.0).contains(&before.f));
            prop_assert_eq!(before.f, before.covered as f64 / before.total as f64);

            let mut bigger = l.clone();
            bigger.insert(&extra, "t");
            let after = coverage(&bigger, &c, &StopWords::none()).unwrap();
            prop_assert!(after.f >= before.f);

            let doubled = corpus(&[(&text, "zz"), (&text, "zz")]);
            prop_assert_eq!(coverage(&l, &doubled, &StopWords::none()).unwrap(), before);

            for k in &keys {
                prop_assert!(l.lookup(k).is_some());
            }
            for w in &words {
                prop_assert_eq!(l.lookup(w).is_some(), keys.contains(&w.to_lowercase()));
            }
        }
    }
}
