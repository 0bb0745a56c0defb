//! Beam-search decoding, placeholder re-prediction and placeholder
//! statistics.

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::corpus::{attach_language_tag, DialogueExample, LanguageTag};
use crate::error::{Error, Result};
use crate::model::{EncodedBatch, Seq2Seq};
use crate::tokenizer::{is_special, SEP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub beam_size: usize,
    /// Maximum number of response tokens, end marker excluded.
    pub max_len: usize,
    /// Scores are `log p / len^alpha`; 0 disables normalization.
    pub length_alpha: f64,
    /// The end marker is suppressed until the response has this many tokens.
    pub min_len: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            beam_size: 6,
            max_len: 50,
            length_alpha: 0.0,
            min_len: 1,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "min_len {} exceeds max_len {}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Next-token log-probabilities for a set of response prefixes.
pub trait StepScorer {
    fn next_log_probs(&self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>>;
    fn end_id(&self) -> u32;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Response tokens without the end marker.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// Ranking score after length normalization.
    pub score: f64,
    /// Whether the end marker was produced before `max_len`.
    pub finished: bool,
}

fn normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        log_prob
    } else {
        log_prob / (len.max(1) as f64).powf(alpha)
    }
}

/// Higher score first, then lexicographically smaller token ids.
fn rank(a: &(f64, Vec<u32>), b: &(f64, Vec<u32>)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
}

fn finish(tokens: Vec<u32>, log_prob: f64, finished: bool, cfg: &GenerationConfig) -> Candidate {
    let len = tokens.len() + finished as usize;
    Candidate {
        score: normalized(log_prob, len, cfg.length_alpha),
        tokens,
        log_prob,
        finished,
    }
}

/// Scorer rows with the end marker banned for prefixes shorter than
/// `min_len`.
fn step_rows<S: StepScorer + ?Sized>(scorer: &S, prefixes: &[Vec<u32>], cfg: &GenerationConfig) -> Result<Vec<Vec<f64>>> {
    let mut rows = scorer.next_log_probs(prefixes)?;
    let end = scorer.end_id() as usize;
    for (row, prefix) in rows.iter_mut().zip(prefixes) {
        if prefix.len() < cfg.min_len && end < row.len() {
            row[end] = f64::NEG_INFINITY;
        }
    }
    Ok(rows)
}

fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
}

/// Picks the highest-probability token at each step.
pub fn greedy<S: StepScorer + ?Sized>(scorer: &S, cfg: &GenerationConfig) -> Result<Candidate> {
    let end = scorer.end_id();
    let mut tokens = Vec::new();
    let mut lp = 0.0;
    while tokens.len() < cfg.max_len {
        let row = step_rows(scorer, std::slice::from_ref(&tokens), cfg)?.remove(0);
        let (best, &p) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(&a.0)))
            .ok_or_else(|| Error::Shape("empty vocabulary".into()))?;
        lp += p;
        if best as u32 == end {
            return Ok(finish(tokens, lp, true, cfg));
        }
        tokens.push(best as u32);
    }
    Ok(finish(tokens, lp, false, cfg))
}

/// Beam search returning up to `beam_size` candidates, best first. Ties are
/// broken by token-id order. The greedy hypothesis is always part of the
/// final pool, so the top score is never below the greedy score.
pub fn beam_search<S: StepScorer + ?Sized>(scorer: &S, cfg: &GenerationConfig) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    let end = scorer.end_id();
    let mut active: Vec<(f64, Vec<u32>)> = vec![(0.0, Vec::new())];
    let mut done: Vec<Candidate> = Vec::new();
    for _ in 0..cfg.max_len {
        let prefixes: Vec<Vec<u32>> = active.iter().map(|a| a.1.clone()).collect();
        let rows = step_rows(scorer, &prefixes, cfg)?;
        let mut expanded: Vec<(f64, Vec<u32>)> = Vec::new();
        for ((lp, toks), row) in active.iter().zip(&rows) {
            for (j, &p) in row.iter().enumerate() {
                if p == f64::NEG_INFINITY {
                    continue;
                }
                let mut next = toks.clone();
                next.push(j as u32);
                expanded.push((lp + p, next));
            }
        }
        expanded.sort_by(rank);
        active.clear();
        for (lp, toks) in expanded {
            if active.len() >= cfg.beam_size {
                break;
            }
            if *toks.last().unwrap() == end {
                let mut t = toks;
                t.pop();
                done.push(finish(t, lp, true, cfg));
            } else {
                active.push((lp, toks));
            }
        }
        if active.is_empty() {
            break;
        }
        if cfg.length_alpha == 0.0 && done.len() >= cfg.beam_size {
            sort_candidates(&mut done);
            let worst_kept = done[cfg.beam_size - 1].score;
            if active[0].0 <= worst_kept {
                break;
            }
        }
    }
    for (lp, toks) in active {
        if toks.len() >= cfg.max_len {
            done.push(finish(toks, lp, false, cfg));
        }
    }
    let g = greedy(scorer, cfg)?;
    if !done.iter().any(|c| c.tokens == g.tokens && c.finished == g.finished) {
        done.push(g);
    }
    sort_candidates(&mut done);
    done.truncate(cfg.beam_size);
    Ok(done)
}

/// Decodes against one encoded history with a fixed language tag as the
/// first decoder token. Padding, start and tag tokens are never proposed.
pub struct ModelStepper<'a> {
    model: &'a Seq2Seq,
    enc: EncodedBatch,
    tag_id: u32,
    banned: Vec<u32>,
}

impl<'a> ModelStepper<'a> {
    pub fn new(model: &'a Seq2Seq, tagged_history: &[u32], decode_tag: LanguageTag) -> Result<Self> {
        let vocab = model.vocab();
        let mut banned = vec![vocab.pad_id(), vocab.cls_id(), vocab.turn_id()];
        banned.extend(LanguageTag::ALL.iter().map(|t| vocab.tag_id(*t)));
        Ok(ModelStepper {
            model,
            enc: model.encode_batch(&[tagged_history.to_vec()])?,
            tag_id: vocab.tag_id(decode_tag),
            banned,
        })
    }
}

impl StepScorer for ModelStepper<'_> {
    fn next_log_probs(&self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        let full: Vec<Vec<u32>> = prefixes
            .iter()
            .map(|p| std::iter::once(self.tag_id).chain(p.iter().copied()).collect())
            .collect();
        let rows = self.model.next_log_probs(&self.enc, &full)?;
        Ok(rows
            .into_iter()
            .map(|r| {
                let mut r: Vec<f64> = r.into_iter().map(f64::from).collect();
                for &b in &self.banned {
                    r[b as usize] = f64::NEG_INFINITY;
                }
                r
            })
            .collect())
    }

    fn end_id(&self) -> u32 {
        self.model.vocab().sep_id()
    }
}

/// Replaces placeholders in a response. Implementations return one entry per
/// requested position; `None` leaves that placeholder in place.
pub trait MaskFiller {
    fn name(&self) -> &str;
    fn predict(&self, context: &[String], response: &[String], positions: &[usize]) -> Result<Vec<Option<String>>>;
}

/// Leaves every placeholder untouched.
#[derive(Debug, Clone, Default)]
pub struct IdentityFiller;

impl MaskFiller for IdentityFiller {
    fn name(&self) -> &str {
        "identity"
    }

    fn predict(&self, _: &[String], _: &[String], positions: &[usize]) -> Result<Vec<Option<String>>> {
        Ok(vec![None; positions.len()])
    }
}

/// Fills each slot with the most frequent token seen at that position in a
/// reference corpus, falling back to the most frequent token overall. Ties
/// go to the lexicographically smallest token.
#[derive(Debug, Clone, Default)]
pub struct UnigramFiller {
    by_position: Vec<String>,
    global: Option<String>,
}

fn most_frequent(counts: &HashMap<&str, usize>) -> Option<String> {
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(t, _)| t.to_string())
}

impl UnigramFiller {
    /// Counts tokens of `sequences`, skipping special tokens (placeholders
    /// included).
    pub fn from_sequences<S: AsRef<str>>(sequences: &[Vec<S>]) -> Self {
        let mut global: HashMap<&str, usize> = HashMap::new();
        let mut pos: Vec<HashMap<&str, usize>> = Vec::new();
        for seq in sequences {
            for (i, t) in seq.iter().enumerate() {
                let t = t.as_ref();
                if is_special(t) {
                    continue;
                }
                *global.entry(t).or_insert(0) += 1;
                if pos.len() <= i {
                    pos.resize_with(i + 1, HashMap::new);
                }
                *pos[i].entry(t).or_insert(0) += 1;
            }
        }
        let global_best = most_frequent(&global);
        let by_position = pos
            .iter()
            .map(|m| most_frequent(m).or_else(|| global_best.clone()).unwrap_or_default())
            .collect();
        UnigramFiller {
            by_position,
            global: global_best,
        }
    }

    pub fn at(&self, position: usize) -> Option<&str> {
        self.by_position
            .get(position)
            .filter(|s| !s.is_empty())
            .map(String::as_str)
            .or(self.global.as_deref())
    }
}

impl MaskFiller for UnigramFiller {
    fn name(&self) -> &str {
        "unigram"
    }

    fn predict(&self, _: &[String], _: &[String], positions: &[usize]) -> Result<Vec<Option<String>>> {
        Ok(positions.iter().map(|&p| self.at(p).map(str::to_string)).collect())
    }
}

/// A masked language model: predicts tokens at the given positions of a
/// sequence containing placeholders.
pub trait MaskedLm {
    fn predict_masked(&self, tokens: &[String], positions: &[usize]) -> Result<Vec<Option<String>>>;
}

/// Runs history and response through a masked LM as one sequence,
/// `history [SEP] response`, and reads back predictions at the response's
/// placeholder positions.
pub struct MlmFiller<M> {
    pub mlm: M,
}

impl<M: MaskedLm> MaskFiller for MlmFiller<M> {
    fn name(&self) -> &str {
        "mlm"
    }

    fn predict(&self, context: &[String], response: &[String], positions: &[usize]) -> Result<Vec<Option<String>>> {
        let mut seq: Vec<String> = context.to_vec();
        seq.push(SEP.to_string());
        let offset = seq.len();
        seq.extend(response.iter().cloned());
        let shifted: Vec<usize> = positions.iter().map(|p| p + offset).collect();
        self.mlm.predict_masked(&seq, &shifted)
    }
}

/// A masked LM behind an external command. Each request is one JSON line
/// on stdin, `{"tokens": [...], "positions": [...]}`, answered by one JSON
/// line `{"predictions": [token or null, ...]}` on stdout.
#[derive(Debug, Clone)]
pub struct CommandMlm {
    pub program: String,
    pub args: Vec<String>,
}

#[derive(Serialize)]
struct MlmRequest<'a> {
    tokens: &'a [String],
    positions: &'a [usize],
}

#[derive(Deserialize)]
struct MlmResponse {
    predictions: Vec<Option<String>>,
}

impl MaskedLm for CommandMlm {
    fn predict_masked(&self, tokens: &[String], positions: &[usize]) -> Result<Vec<Option<String>>> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(&self.program, e))?;
        let req = serde_json::to_string(&MlmRequest { tokens, positions })?;
        {
            let stdin = child.stdin.as_mut().expect("piped stdin");
            writeln!(stdin, "{req}").map_err(|e| Error::io(&self.program, e))?;
        }
        let out = child.wait_with_output().map_err(|e| Error::io(&self.program, e))?;
        if !out.status.success() {
            return Err(Error::Config(format!("`{}` exited with {}", self.program, out.status)));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let resp: MlmResponse = serde_json::from_str(text.trim())?;
        if resp.predictions.len() != positions.len() {
            return Err(Error::Shape(format!(
                "masked LM returned {} predictions for {} positions",
                resp.predictions.len(),
                positions.len()
            )));
        }
        Ok(resp.predictions)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filled {
    pub tokens: Vec<String>,
    /// Positions that held a placeholder before filling.
    pub placeholder_positions: Vec<usize>,
    /// Positions still holding a placeholder.
    pub unfilled: Vec<usize>,
}

/// Replaces placeholders with the filler's predictions. Positions the filler
/// cannot fill keep the placeholder and produce a warning.
pub fn fill_placeholders<F: MaskFiller + ?Sized>(filler: &F, context: &[String], response: &[String], placeholder: &str) -> Filled {
    let positions: Vec<usize> = response
        .iter()
        .enumerate()
        .filter(|(_, t)| *t == placeholder)
        .map(|(i, _)| i)
        .collect();
    let mut tokens = response.to_vec();
    let mut unfilled = Vec::new();
    if positions.is_empty() {
        return Filled {
            tokens,
            placeholder_positions: positions,
            unfilled,
        };
    }
    let preds = match filler.predict(context, response, &positions) {
        Ok(p) if p.len() == positions.len() => p,
        Ok(p) => {
            log::warn!("{} filler returned {} predictions for {} slots", filler.name(), p.len(), positions.len());
            vec![None; positions.len()]
        }
        Err(e) => {
            log::warn!("{} filler failed: {e}", filler.name());
            vec![None; positions.len()]
        }
    };
    for (&pos, pred) in positions.iter().zip(preds) {
        match pred {
            Some(tok) if !tok.is_empty() && tok != placeholder => tokens[pos] = tok,
            _ => unfilled.push(pos),
        }
    }
    if !unfilled.is_empty() && filler.name() != "identity" {
        log::warn!("{} placeholder(s) left unfilled", unfilled.len());
    }
    Filled {
        tokens,
        placeholder_positions: positions,
        unfilled,
    }
}

/// Placeholders over all tokens across the responses.
pub fn placeholder_ratio<S: AsRef<str>>(responses: &[Vec<S>], placeholder: &str) -> Result<f64> {
    let total: usize = responses.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Degenerate("no tokens to count placeholders over".into()));
    }
    let masks = responses
        .iter()
        .flat_map(|r| r.iter())
        .filter(|t| t.as_ref() == placeholder)
        .count();
    Ok(masks as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredText {
    pub text: String,
    pub score: f64,
}

/// One line of a generation output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub input_tag: String,
    pub candidates: Vec<ScoredText>,
    /// Top candidate before filling.
    pub response: String,
    pub filled: String,
    pub placeholder_positions: Vec<usize>,
    pub reference: String,
}

/// Generates a response for each example. Histories are tagged with
/// `tag`, which also starts decoding.
pub fn generate<F: MaskFiller + ?Sized>(
    model: &Seq2Seq,
    examples: &[DialogueExample],
    tag: LanguageTag,
    cfg: &GenerationConfig,
    filler: &F,
    placeholder: &str,
) -> Result<Vec<GenerationRecord>> {
    cfg.validate()?;
    let vocab = model.vocab();
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let tagged = attach_language_tag(&ex.history, tag)?;
        let stepper = ModelStepper::new(model, &vocab.ids(&tagged), tag)?;
        let cands = beam_search(&stepper, cfg)?;
        let texts: Vec<Vec<String>> = cands.iter().map(|c| vocab.decode(&c.tokens)).collect();
        let top = texts.first().cloned().unwrap_or_default();
        let filled = fill_placeholders(filler, &ex.history, &top, placeholder);
        out.push(GenerationRecord {
            id: ex.id.clone(),
            input_tag: tag.as_str().to_string(),
            candidates: cands
                .iter()
                .zip(&texts)
                .map(|(c, t)| ScoredText {
                    text: t.join(" "),
                    score: c.score,
                })
                .collect(),
            response: top.join(" "),
            filled: filled.tokens.join(" "),
            placeholder_positions: filled.placeholder_positions,
            reference: ex.response.join(" "),
        });
    }
    Ok(out)
}

/// Token sequences of a field across generation records.
pub fn record_tokens(records: &[GenerationRecord], filled: bool) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| {
            let s = if filled { &r.filled } else { &r.response };
            s.split_whitespace().map(str::to_string).collect()
        })
        .collect()
}

/// Placeholder counts by response position, for diagnostics.
pub fn placeholder_histogram(records: &[GenerationRecord]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for r in records {
        for &p in &r.placeholder_positions {
            *h.entry(p).or_insert(0) += 1;
        }
    }
    h
}
