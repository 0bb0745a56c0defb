//! Whitespace/punctuation tokenization, a greedy word-piece mode, and the
//! token vocabulary shared by the model and the switcher.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::LanguageTag;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
/// Joins the turns of a dialogue history into one sequence.
pub const TURN: &str = "[TURN]";

/// Reserved tokens in id order. Language tags follow immediately after.
pub const RESERVED: [&str; 6] = [PAD, UNK, CLS, SEP, MASK, TURN];

/// Every token the tokenizer must never split.
pub fn special_tokens() -> Vec<&'static str> {
    RESERVED
        .iter()
        .copied()
        .chain(LanguageTag::ALL.iter().map(|t| t.as_str()))
        .collect()
}

pub fn is_special(token: &str) -> bool {
    RESERVED.contains(&token) || token.parse::<LanguageTag>().is_ok_and(|t| t.as_str() == token)
}

/// Splits on Unicode whitespace, keeps runs of alphanumeric characters
/// together and emits every other character as its own token. Special
/// tokens such as `[MASK]` or `<En>` are kept whole.
pub fn split_text(text: &str) -> Vec<String> {
    let specials = special_tokens();
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        let mut rest = chunk;
        while let Some(c) = rest.chars().next() {
            if let Some(sp) = specials.iter().find(|s| rest.starts_with(**s)) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push((*sp).to_string());
                rest = &rest[sp.len()..];
                continue;
            }
            if c.is_alphanumeric() {
                word.push(c);
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
            rest = &rest[c.len_utf8()..];
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(t.as_ref());
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    Whitespace,
    Subword,
}

impl std::str::FromStr for TokenizerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace" => Ok(TokenizerMode::Whitespace),
            "subword" => Ok(TokenizerMode::Subword),
            other => Err(format!("unknown tokenizer mode `{other}`")),
        }
    }
}

/// Token ↔ id table. Reserved tokens and all language tags occupy the first
/// ids, in a fixed order, so every vocabulary agrees on them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in special_tokens() {
            v.insert(t);
        }
        v
    }

    /// Builds a vocabulary from the specials plus `tokens` in first-seen order.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab::new();
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Id of `token`, or the unknown-token id.
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(self.unk_id())
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(UNK)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn pad_id(&self) -> u32 {
        0
    }
    pub fn unk_id(&self) -> u32 {
        1
    }
    pub fn cls_id(&self) -> u32 {
        2
    }
    pub fn sep_id(&self) -> u32 {
        3
    }
    pub fn mask_id(&self) -> u32 {
        4
    }
    pub fn turn_id(&self) -> u32 {
        5
    }

    pub fn tag_id(&self, tag: LanguageTag) -> u32 {
        self.id(tag.as_str())
    }

    /// Number of ids reserved for specials and tags.
    pub fn num_special(&self) -> usize {
        special_tokens().len()
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// One token per line.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Self {
        Vocab::from_tokens(text.lines().filter(|l| !l.is_empty()))
    }
}

/// Tokenizer configuration: the splitting mode plus the vocabulary used to
/// resolve ids.
#[derive(Debug, Clone)]
pub struct TokenizerSpec {
    pub mode: TokenizerMode,
    pub vocab: Vocab,
}

impl TokenizerSpec {
    pub fn whitespace(vocab: Vocab) -> Self {
        TokenizerSpec {
            mode: TokenizerMode::Whitespace,
            vocab,
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let words = split_text(text);
        match self.mode {
            TokenizerMode::Whitespace => words,
            TokenizerMode::Subword => words
                .iter()
                .flat_map(|w| wordpiece(w, &self.vocab))
                .collect(),
        }
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.vocab.ids(&self.tokenize(text))
    }
}

/// Greedy longest-match-first word-piece split; continuation pieces carry a
/// `##` prefix. Words that cannot be fully covered become `[UNK]`.
pub fn wordpiece(word: &str, vocab: &Vocab) -> Vec<String> {
    if vocab.contains(word) || is_special(word) {
        return vec![word.to_string()];
    }
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let body: String = chars[start..end].iter().collect();
            let cand = if start == 0 { body } else { format!("##{body}") };
            if vocab.contains(&cand) {
                found = Some(cand);
                break;
            }
            end -= 1;
        }
        match found {
            Some(p) => {
                pieces.push(p);
                start = end;
            }
            None => return vec![UNK.to_string()],
        }
    }
    pieces
}
