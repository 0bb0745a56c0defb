//! Dialogue corpora: language tags, examples, and the JSON-lines record
//! format.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{self, TURN};

pub const DEFAULT_MAX_HISTORY_LEN: usize = 512;
pub const DEFAULT_MAX_RESPONSE_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LanguageTag {
    En,
    Zh,
    De,
    Es,
    Fr,
    It,
    Ru,
    /// Code-switched source/target mixture.
    Cs,
    /// Pseudo-target language: target tokens plus placeholders.
    Pt,
}

impl LanguageTag {
    pub const ALL: [LanguageTag; 9] = [
        LanguageTag::En,
        LanguageTag::Zh,
        LanguageTag::De,
        LanguageTag::Es,
        LanguageTag::Fr,
        LanguageTag::It,
        LanguageTag::Ru,
        LanguageTag::Cs,
        LanguageTag::Pt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LanguageTag::En => "<En>",
            LanguageTag::Zh => "<Zh>",
            LanguageTag::De => "<De>",
            LanguageTag::Es => "<Es>",
            LanguageTag::Fr => "<Fr>",
            LanguageTag::It => "<It>",
            LanguageTag::Ru => "<Ru>",
            LanguageTag::Cs => "[Cs]",
            LanguageTag::Pt => "<Pt>",
        }
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageTag {
    type Err = String;

    /// Accepts the token form (`<De>`, `[Cs]`) or a bare code (`de`, `cs`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bare = s.trim_start_matches(['<', '[']).trim_end_matches(['>', ']']);
        let tag = match bare.to_ascii_lowercase().as_str() {
            "en" => LanguageTag::En,
            "zh" => LanguageTag::Zh,
            "de" => LanguageTag::De,
            "es" => LanguageTag::Es,
            "fr" => LanguageTag::Fr,
            "it" => LanguageTag::It,
            "ru" => LanguageTag::Ru,
            "cs" => LanguageTag::Cs,
            "pt" => LanguageTag::Pt,
            _ => return Err(format!("unknown language tag `{s}`")),
        };
        Ok(tag)
    }
}

/// Prefixes `tokens` with `tag`. Fails if the sequence already starts with a
/// language tag.
pub fn attach_language_tag<S: AsRef<str>>(tokens: &[S], tag: LanguageTag) -> Result<Vec<String>> {
    if let Some(first) = tokens.first() {
        let first = first.as_ref();
        if LanguageTag::ALL.iter().any(|t| t.as_str() == first) {
            return Err(Error::DoubleTag(first.to_string()));
        }
    }
    let mut out = Vec::with_capacity(tokens.len() + 1);
    out.push(tag.as_str().to_string());
    out.extend(tokens.iter().map(|t| t.as_ref().to_string()));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueExample {
    pub id: String,
    /// All turns joined with `[TURN]`.
    pub history: Vec<String>,
    pub response: Vec<String>,
    pub language_tag: LanguageTag,
}

impl DialogueExample {
    /// Tokenizes and truncates raw turns. History keeps its most recent
    /// tokens; the response keeps its first tokens.
    pub fn from_turns<S: AsRef<str>>(
        id: impl Into<String>,
        turns: &[S],
        response: &str,
        language_tag: LanguageTag,
        limits: Limits,
    ) -> std::result::Result<Self, String> {
        let mut history = Vec::new();
        for (i, turn) in turns.iter().enumerate() {
            if i > 0 {
                history.push(TURN.to_string());
            }
            history.extend(tokenizer::split_text(turn.as_ref()));
        }
        let mut response = tokenizer::split_text(response);
        if history.iter().all(|t| t == TURN) {
            return Err("history is empty after tokenization".into());
        }
        if response.is_empty() {
            return Err("response is empty after tokenization".into());
        }
        if history.len() > limits.max_history_len {
            history.drain(..history.len() - limits.max_history_len);
        }
        response.truncate(limits.max_response_len);
        Ok(DialogueExample {
            id: id.into(),
            history,
            response,
            language_tag,
        })
    }

    /// Splits the history back into turn texts.
    pub fn turns(&self) -> Vec<String> {
        self.history
            .split(|t| t == TURN)
            .map(tokenizer::detokenize)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_history_len: usize,
    pub max_response_len: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_history_len: DEFAULT_MAX_HISTORY_LEN,
            max_response_len: DEFAULT_MAX_RESPONSE_LEN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub split: Split,
    pub examples: Vec<DialogueExample>,
}

/// One line of a dialogue file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub id: String,
    pub history: Vec<String>,
    pub response: String,
    #[serde(alias = "tag")]
    pub lang: String,
}

impl From<&DialogueExample> for DialogueRecord {
    fn from(ex: &DialogueExample) -> Self {
        DialogueRecord {
            id: ex.id.clone(),
            history: ex.turns(),
            response: tokenizer::detokenize(&ex.response),
            lang: ex.language_tag.as_str().to_string(),
        }
    }
}

impl Corpus {
    pub fn new(split: Split, examples: Vec<DialogueExample>) -> Self {
        Corpus { split, examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Serializes to the JSON-lines dialogue format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(&DialogueRecord::from(ex)).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

pub fn load_corpus(path: &Path, split: Split) -> Result<Corpus> {
    load_corpus_with(path, split, Limits::default())
}

pub fn load_corpus_with(path: &Path, split: Split, limits: Limits) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path, split, limits)
}

pub fn parse_corpus(text: &str, path: &Path, split: Split, limits: Limits) -> Result<Corpus> {
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DialogueRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let tag: LanguageTag = rec.lang.parse().map_err(|e: String| Error::parse(path, lineno, e))?;
        let ex = DialogueExample::from_turns(rec.id, &rec.history, &rec.response, tag, limits)
            .map_err(|e| Error::parse(path, lineno, e))?;
        if !seen.insert(ex.id.clone()) {
            return Err(Error::parse(path, lineno, format!("duplicate id `{}`", ex.id)));
        }
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(Error::EmptyCorpus(path.to_path_buf()));
    }
    Ok(Corpus { split, examples })
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
