//! Synthetic two-language dialogue data for end-to-end runs.
//!
//! The source language is an invented vocabulary of syllable words. Each
//! dialogue belongs to a topic; history turns and the response mix topic
//! words with frequent function words. The target language is a word-for-word
//! relabelling of the source vocabulary, and the released lexicon covers
//! only part of it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_atomic, Corpus, DialogueExample, LanguageTag, Split};
use crate::error::{Error, Result};
use crate::lexicon::BilingualLexicon;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub train_size: usize,
    pub valid_size: usize,
    pub test_size: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub function_words: usize,
    /// Share of source word types that receive a lexicon entry.
    pub coverage: f64,
    pub max_turns: usize,
    /// Inclusive token-count range of a turn or response.
    pub turn_len: (usize, usize),
    /// Probability that a sampled token is a topic word.
    pub topic_share: f64,
    pub source: LanguageTag,
    pub target: LanguageTag,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            train_size: 2048,
            valid_size: 128,
            test_size: 128,
            topics: 8,
            words_per_topic: 12,
            function_words: 12,
            coverage: 0.7,
            max_turns: 2,
            turn_len: (3, 6),
            topic_share: 0.5,
            source: LanguageTag::En,
            target: LanguageTag::De,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Corpus,
    pub valid: Corpus,
    /// Test dialogues in the source language.
    pub test_source: Corpus,
    /// The same test dialogues translated into the target language.
    pub test_target: Corpus,
    pub lexicon: BilingualLexicon,
    /// Complete source-to-target word mapping.
    pub mapping: BTreeMap<String, String>,
}

impl SyntheticData {
    /// Target-language word types.
    pub fn target_vocabulary(&self) -> Vec<String> {
        self.mapping.values().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Writes `train.jsonl`, `valid.jsonl`, `test.<src>.jsonl`,
    /// `test.<tgt>.jsonl` and `lexicon.<src>-<tgt>.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (s, t) = (lang_code(self.lexicon.source_language), lang_code(self.lexicon.target_language));
        let files = [
            (dir.join("train.jsonl"), self.train.to_jsonl()),
            (dir.join("valid.jsonl"), self.valid.to_jsonl()),
            (dir.join(format!("test.{s}.jsonl")), self.test_source.to_jsonl()),
            (dir.join(format!("test.{t}.jsonl")), self.test_target.to_jsonl()),
            (dir.join(format!("lexicon.{s}-{t}.txt")), self.lexicon.to_text()),
        ];
        let mut out = Vec::new();
        for (path, text) in files {
            write_atomic(&path, text.as_bytes())?;
            out.push(path);
        }
        Ok(out)
    }
}

fn lang_code(tag: LanguageTag) -> String {
    tag.as_str().trim_matches(|c| c == '<' || c == '>' || c == '[' || c == ']').to_lowercase()
}

const SOURCE_SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "ne", "pu", "ra", "se", "ti", "vo", "zu", "bi", "do"];
const TARGET_SYLLABLES: [&str; 12] = ["ba", "de", "fi", "go", "hu", "ja", "ke", "ly", "mo", "ny", "po", "wa"];

fn invent_words(n: usize, syllables: &[&str], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(2..=3);
        let w: String = (0..len).map(|_| *syllables.choose(rng).unwrap()).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Index drawn with weight `1 / (rank + 1)`.
fn zipf(n: usize, rng: &mut ChaCha8Rng) -> usize {
    let z: f64 = (1..=n).map(|r| 1.0 / r as f64).sum();
    let mut u = rng.random::<f64>() * z;
    for r in 0..n {
        u -= 1.0 / (r + 1) as f64;
        if u <= 0.0 {
            return r;
        }
    }
    n - 1
}

struct Language {
    function: Vec<String>,
    topics: Vec<Vec<String>>,
}

fn sample_turn(lang: &Language, topic: usize, cfg: &SyntheticConfig, lead: bool, rng: &mut ChaCha8Rng) -> Vec<String> {
    let len = rng.random_range(cfg.turn_len.0..=cfg.turn_len.1);
    let words = &lang.topics[topic];
    let mut out = Vec::with_capacity(len);
    if lead {
        // responses open with the topic's most frequent word
        out.push(words[0].clone());
    }
    while out.len() < len {
        if rng.random::<f64>() < cfg.topic_share {
            out.push(words[zipf(words.len(), rng)].clone());
        } else {
            out.push(lang.function[zipf(lang.function.len(), rng)].clone());
        }
    }
    out
}

fn dialogue(lang: &Language, cfg: &SyntheticConfig, id: String, rng: &mut ChaCha8Rng) -> DialogueExample {
    let topic = rng.random_range(0..lang.topics.len());
    let turns = rng.random_range(1..=cfg.max_turns);
    let mut history = Vec::new();
    for i in 0..turns {
        if i > 0 {
            history.push(crate::tokenizer::TURN.to_string());
        }
        history.extend(sample_turn(lang, topic, cfg, false, rng));
    }
    DialogueExample {
        id,
        history,
        response: sample_turn(lang, topic, cfg, true, rng),
        language_tag: cfg.source,
    }
}

fn translate(ex: &DialogueExample, mapping: &BTreeMap<String, String>, tag: LanguageTag) -> DialogueExample {
    let tr = |t: &String| mapping.get(t).cloned().unwrap_or_else(|| t.clone());
    DialogueExample {
        id: ex.id.clone(),
        history: ex.history.iter().map(tr).collect(),
        response: ex.response.iter().map(tr).collect(),
        language_tag: tag,
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.topics == 0 || cfg.words_per_topic == 0 || cfg.function_words == 0 {
        return Err(Error::Config("synthetic vocabulary sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.coverage) || cfg.turn_len.0 == 0 || cfg.turn_len.0 > cfg.turn_len.1 || cfg.max_turns == 0 {
        return Err(Error::Config("invalid synthetic corpus shape".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_types = cfg.function_words + cfg.topics * cfg.words_per_topic;
    let src_words = invent_words(n_types, &SOURCE_SYLLABLES, &mut rng);
    let tgt_words = invent_words(n_types, &TARGET_SYLLABLES, &mut rng);
    let lang = Language {
        function: src_words[..cfg.function_words].to_vec(),
        topics: src_words[cfg.function_words..]
            .chunks(cfg.words_per_topic)
            .map(<[String]>::to_vec)
            .collect(),
    };
    let mapping: BTreeMap<String, String> = src_words.iter().cloned().zip(tgt_words.iter().cloned()).collect();

    let mut covered = src_words.clone();
    covered.shuffle(&mut rng);
    covered.truncate((cfg.coverage * n_types as f64).round() as usize);
    covered.sort();
    let mut lexicon = BilingualLexicon::new(cfg.source, cfg.target);
    for w in &covered {
        lexicon.insert(w, &mapping[w]);
    }

    let mut make = |split: Split, n: usize, prefix: &str| {
        let examples = (0..n)
            .map(|i| dialogue(&lang, cfg, format!("{prefix}-{i:05}"), &mut rng))
            .collect();
        Corpus::new(split, examples)
    };
    let train = make(Split::Train, cfg.train_size, "train");
    let valid = make(Split::Valid, cfg.valid_size, "valid");
    let test_source = make(Split::Test, cfg.test_size, "test");
    let test_target = Corpus::new(
        Split::Test,
        test_source
            .examples
            .iter()
            .map(|e| translate(e, &mapping, cfg.target))
            .collect(),
    );
    Ok(SyntheticData {
        train,
        valid,
        test_source,
        test_target,
        lexicon,
        mapping,
    })
}
