//! Automatic evaluation: perplexity, Distinct-n, BLEU, ROUGE-L, word-vector
//! similarity (Average, Extrema, Greedy) and zero-shot/supervised ratios.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{attach_language_tag, DialogueExample, LanguageTag};
use crate::error::{Error, Result};
use crate::model::Seq2Seq;
use crate::objective::sequence_nll;
use crate::tokenizer::Vocab;

/// Scores gold responses under teacher forcing.
pub trait SequenceScorer {
    /// For each `(tagged history, tagged response)` pair: the summed negative
    /// log-likelihood of the response body plus the end marker, and the
    /// number of scored tokens.
    fn score(&self, pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<Vec<(f64, usize)>>;
}

impl SequenceScorer for Seq2Seq {
    fn score(&self, pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<Vec<(f64, usize)>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let vocab = self.vocab();
        let hist: Vec<Vec<u32>> = pairs.iter().map(|p| p.0.clone()).collect();
        let inputs: Vec<Vec<u32>> = pairs
            .iter()
            .map(|p| std::iter::once(vocab.cls_id()).chain(p.1.iter().copied()).collect())
            .collect();
        let targets: Vec<Vec<u32>> = pairs
            .iter()
            .map(|p| p.1[1..].iter().copied().chain(std::iter::once(vocab.sep_id())).collect())
            .collect();
        let enc = self.encode_batch(&hist)?;
        let logits = self.decode_batch(&enc, &inputs)?;
        let nll = sequence_nll(&logits, &targets, 1)?
            .to_dtype(candle_core::DType::F64)?
            .to_vec1::<f64>()?;
        Ok(nll.into_iter().zip(targets.iter().map(Vec::len)).collect())
    }
}

/// Tagged id pairs for scoring. `tag` overrides the examples' own tag.
pub fn scoring_pairs(examples: &[DialogueExample], vocab: &Vocab, tag: Option<LanguageTag>) -> Vec<(Vec<u32>, Vec<u32>)> {
    examples
        .iter()
        .map(|e| {
            let t = tag.unwrap_or(e.language_tag);
            let h = attach_language_tag(&e.history, t).unwrap_or_else(|_| e.history.clone());
            let r = attach_language_tag(&e.response, t).unwrap_or_else(|_| e.response.clone());
            (vocab.ids(&h), vocab.ids(&r))
        })
        .collect()
}

/// `exp` of the mean per-token negative log-likelihood, scored in chunks of
/// `batch` pairs.
pub fn perplexity<S: SequenceScorer + ?Sized>(scorer: &S, pairs: &[(Vec<u32>, Vec<u32>)], batch: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Degenerate("perplexity of an empty split".into()));
    }
    let (mut nll, mut count) = (0.0, 0usize);
    for chunk in pairs.chunks(batch.max(1)) {
        for (s, c) in scorer.score(chunk)? {
            nll += s;
            count += c;
        }
    }
    if count == 0 {
        return Err(Error::Degenerate("no tokens to score".into()));
    }
    Ok((nll / count as f64).exp())
}

/// Distinct n-grams over all n-grams in the response set.
pub fn distinct_n<S: AsRef<str>>(responses: &[Vec<S>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("n-gram order must be positive".into()));
    }
    let mut seen: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        let toks: Vec<&str> = r.iter().map(AsRef::as_ref).collect();
        for g in toks.windows(n) {
            seen.insert(g.to_vec());
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Degenerate(format!("no {n}-grams in the response set")));
    }
    Ok(seen.len() as f64 / total as f64)
}

fn ngram_counts<'a>(toks: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut m = HashMap::new();
    for g in toks.windows(n) {
        *m.entry(g.to_vec()).or_insert(0) += 1;
    }
    m
}

fn check_pairs<A, B>(cands: &[A], refs: &[B]) -> Result<()> {
    if cands.is_empty() {
        return Err(Error::Degenerate("no candidates to score".into()));
    }
    if cands.len() != refs.len() {
        return Err(Error::Shape(format!("{} candidates for {} references", cands.len(), refs.len())));
    }
    Ok(())
}

/// Corpus-level BLEU up to `max_n` with clipped n-gram precision, uniform
/// weights and a brevity penalty. With `smoothing`, orders above one add one
/// to their matched and total counts.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(cands: &[Vec<S>], refs: &[Vec<T>], max_n: usize, smoothing: bool) -> Result<f64> {
    check_pairs(cands, refs)?;
    if max_n == 0 {
        return Err(Error::Config("BLEU order must be positive".into()));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in cands.iter().zip(refs) {
        let c: Vec<&str> = c.iter().map(AsRef::as_ref).collect();
        let r: Vec<&str> = r.iter().map(AsRef::as_ref).collect();
        c_len += c.len();
        r_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(&r, n);
            for (g, cnt) in ngram_counts(&c, n) {
                matched[n - 1] += cnt.min(rc.get(&g).copied().unwrap_or(0));
            }
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    let mut log_p = 0.0;
    for n in 0..max_n {
        let (m, t) = if smoothing && n > 0 {
            (matched[n] + 1, total[n] + 1)
        } else {
            (matched[n], total[n])
        };
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_p += (m as f64 / t as f64).ln() / max_n as f64;
    }
    let bp = if c_len >= r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(bp * log_p.exp())
}

/// Length of the longest common subsequence.
pub fn lcs_len<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean over pairs of the LCS F1 score.
pub fn rouge_l<S: AsRef<str>, T: AsRef<str>>(cands: &[Vec<S>], refs: &[Vec<T>]) -> Result<f64> {
    check_pairs(cands, refs)?;
    let mut sum = 0.0;
    for (c, r) in cands.iter().zip(refs) {
        let l = lcs_len(c, r);
        if l == 0 {
            continue;
        }
        let p = l as f64 / c.len() as f64;
        let rec = l as f64 / r.len() as f64;
        sum += 2.0 * p * rec / (p + rec);
    }
    Ok(sum / cands.len() as f64)
}

/// Word vectors read from `token v1 ... vd` lines.
#[derive(Debug, Clone, Default)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        WordVectorTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: &str, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!("vector for `{token}` has {} values, expected {}", v.len(), self.dim)));
        }
        self.vectors.insert(token.to_string(), v);
        Ok(())
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut table: Option<WordVectorTable> = None;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let v: Vec<f64> = parts
                .map(|x| x.parse::<f64>().map_err(|e| Error::parse(origin, i + 1, format!("bad number `{x}`: {e}"))))
                .collect::<Result<_>>()?;
            if v.is_empty() {
                return Err(Error::parse(origin, i + 1, "token without a vector"));
            }
            let t = table.get_or_insert_with(|| WordVectorTable::new(v.len()));
            if v.len() != t.dim {
                return Err(Error::parse(origin, i + 1, format!("expected {} values, found {}", t.dim, v.len())));
            }
            t.vectors.insert(tok.to_string(), v);
        }
        table.ok_or_else(|| Error::EmptyCorpus(origin.to_path_buf()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// The token's vector, or zeros when unknown.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        self.get(token).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; self.dim])
    }

    /// Vectors of the known tokens of a sentence, in order.
    pub fn known<'a, S: AsRef<str>>(&'a self, sentence: &[S]) -> Vec<&'a [f64]> {
        sentence.iter().filter_map(|t| self.get(t.as_ref())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Average,
    Extrema,
    Greedy,
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn mean_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let n = vs.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn extrema_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; dim];
    for v in vs {
        for (o, &x) in out.iter_mut().zip(v.iter()) {
            if x.abs() > o.abs() {
                *o = x;
            }
        }
    }
    out
}

fn greedy_one_way(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let sum: f64 = a
        .iter()
        .map(|x| b.iter().map(|y| cosine(x, y)).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    sum / a.len() as f64
}

/// Similarity of one candidate/reference pair. Unknown tokens are dropped;
/// a sentence with no known tokens scores 0.
pub fn embedding_pair<S: AsRef<str>, T: AsRef<str>>(cand: &[S], reference: &[T], table: &WordVectorTable, mode: EmbeddingMode) -> f64 {
    let c = table.known(cand);
    let r = table.known(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    match mode {
        EmbeddingMode::Average => cosine(&mean_vector(&c, table.dim), &mean_vector(&r, table.dim)),
        EmbeddingMode::Extrema => cosine(&extrema_vector(&c, table.dim), &extrema_vector(&r, table.dim)),
        EmbeddingMode::Greedy => (greedy_one_way(&c, &r) + greedy_one_way(&r, &c)) / 2.0,
    }
}

/// Mean pair similarity over the corpus.
pub fn embedding_metric<S: AsRef<str>, T: AsRef<str>>(
    cands: &[Vec<S>],
    refs: &[Vec<T>],
    table: &WordVectorTable,
    mode: EmbeddingMode,
) -> Result<f64> {
    check_pairs(cands, refs)?;
    let mut empty = 0usize;
    let mut sum = 0.0;
    for (c, r) in cands.iter().zip(refs) {
        if table.known(c).is_empty() || table.known(r).is_empty() {
            empty += 1;
        }
        sum += embedding_pair(c, r, table, mode);
    }
    if empty > 0 {
        log::warn!("{empty} pairs had a sentence without known word vectors; scored 0");
    }
    Ok(sum / cands.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ppl: Option<f64>,
    pub bleu1: f64,
    pub bleu2: f64,
    pub rouge_l: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub emb_average: Option<f64>,
    pub emb_extrema: Option<f64>,
    pub emb_greedy: Option<f64>,
    pub pairs: usize,
    /// Placeholder share of the candidate tokens.
    pub placeholder_ratio: Option<f64>,
}

/// Column order of the Per/AVE table.
pub const METRIC_NAMES: [&str; 9] = [
    "ppl",
    "bleu1",
    "bleu2",
    "rouge_l",
    "dist1",
    "dist2",
    "emb_average",
    "emb_extrema",
    "emb_greedy",
];

impl MetricsReport {
    /// Text metrics over aligned candidate/reference pairs; word-vector
    /// metrics only when a table is given.
    pub fn compute<S: AsRef<str>, T: AsRef<str>>(
        cands: &[Vec<S>],
        refs: &[Vec<T>],
        vectors: Option<&WordVectorTable>,
        smoothing: bool,
    ) -> Result<Self> {
        check_pairs(cands, refs)?;
        let emb = |m| vectors.map(|t| embedding_metric(cands, refs, t, m)).transpose();
        Ok(MetricsReport {
            ppl: None,
            bleu1: bleu(cands, refs, 1, smoothing)?,
            bleu2: bleu(cands, refs, 2, smoothing)?,
            rouge_l: rouge_l(cands, refs)?,
            dist1: distinct_n(cands, 1).unwrap_or(0.0),
            dist2: distinct_n(cands, 2).unwrap_or(0.0),
            emb_average: emb(EmbeddingMode::Average)?,
            emb_extrema: emb(EmbeddingMode::Extrema)?,
            emb_greedy: emb(EmbeddingMode::Greedy)?,
            pairs: cands.len(),
            placeholder_ratio: None,
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "ppl" => self.ppl,
            "bleu1" => Some(self.bleu1),
            "bleu2" => Some(self.bleu2),
            "rouge_l" => Some(self.rouge_l),
            "dist1" => Some(self.dist1),
            "dist2" => Some(self.dist2),
            "emb_average" => self.emb_average,
            "emb_extrema" => self.emb_extrema,
            "emb_greedy" => self.emb_greedy,
            "placeholder_ratio" => self.placeholder_ratio,
            _ => None,
        }
    }

    fn set(&mut self, name: &str, v: f64) -> bool {
        match name {
            "ppl" => self.ppl = Some(v),
            "bleu1" => self.bleu1 = v,
            "bleu2" => self.bleu2 = v,
            "rouge_l" => self.rouge_l = v,
            "dist1" => self.dist1 = v,
            "dist2" => self.dist2 = v,
            "emb_average" => self.emb_average = Some(v),
            "emb_extrema" => self.emb_extrema = Some(v),
            "emb_greedy" => self.emb_greedy = Some(v),
            "placeholder_ratio" => self.placeholder_ratio = Some(v),
            "pairs" => self.pairs = v as usize,
            _ => return false,
        }
        true
    }

    /// `name = value` lines; absent metrics are omitted.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for name in METRIC_NAMES.iter().chain(&["placeholder_ratio"]) {
            if let Some(v) = self.get(name) {
                let _ = writeln!(s, "{name} = {v}");
            }
        }
        let _ = writeln!(s, "pairs = {}", self.pairs);
        s
    }

    pub fn from_kv(text: &str, origin: &Path) -> Result<Self> {
        let mut r = MetricsReport::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `name = value`"))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|e| Error::parse(origin, i + 1, format!("bad value: {e}")))?;
            if !r.set(k.trim(), v) {
                return Err(Error::parse(origin, i + 1, format!("unknown metric `{}`", k.trim())));
            }
        }
        Ok(r)
    }

    /// Reads a key-value block or a JSON line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if text.trim_start().starts_with('{') {
            Ok(serde_json::from_str(text.trim())?)
        } else {
            Self::from_kv(&text, path)
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Zero-shot score as a percentage of the supervised score, per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentageTable {
    /// `None` marks an undefined ratio (missing value or zero denominator).
    pub per: BTreeMap<String, Option<f64>>,
    /// Mean of the defined percentages, PPL excluded.
    pub ave: Option<f64>,
    pub undefined: Vec<String>,
}

pub fn zero_sup_percentage(zero: &MetricsReport, sup: &MetricsReport) -> PercentageTable {
    let mut per = BTreeMap::new();
    let mut undefined = Vec::new();
    let mut acc = Vec::new();
    for name in METRIC_NAMES {
        let v = match (zero.get(name), sup.get(name)) {
            (Some(z), Some(s)) if s != 0.0 => Some(100.0 * z / s),
            (None, None) => continue,
            _ => None,
        };
        match v {
            Some(p) if name != "ppl" => acc.push(p),
            None => {
                log::warn!("{name}: percentage undefined; excluded from AVE");
                undefined.push(name.to_string());
            }
            _ => {}
        }
        per.insert(name.to_string(), v);
    }
    let ave = (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64);
    PercentageTable { per, ave, undefined }
}

fn header(name: &str) -> &str {
    match name {
        "ppl" => "PPL",
        "bleu1" => "BLEU-1",
        "bleu2" => "BLEU-2",
        "rouge_l" => "ROUGE-L",
        "dist1" => "Dist-1",
        "dist2" => "Dist-2",
        "emb_average" => "Average",
        "emb_extrema" => "Extrema",
        "emb_greedy" => "Greedy",
        other => other,
    }
}

/// Rows `Zero`, `Sup` and `Per` over the metrics present, plus an `AVE`
/// column on the `Per` row.
pub fn render_table(zero: &MetricsReport, sup: &MetricsReport, table: &PercentageTable) -> String {
    let names: Vec<&str> = METRIC_NAMES.iter().copied().filter(|n| table.per.contains_key(*n)).collect();
    let mut out = String::new();
    let _ = write!(out, "{:<6}", "");
    for n in &names {
        let _ = write!(out, " {:>9}", header(n));
    }
    let _ = writeln!(out, " {:>9}", "AVE");
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for (label, rep) in [("Zero", zero), ("Sup", sup)] {
        let _ = write!(out, "{label:<6}");
        for n in &names {
            let _ = write!(out, " {:>9}", cell(rep.get(n)));
        }
        let _ = writeln!(out, " {:>9}", "");
    }
    let _ = write!(out, "{:<6}", "Per");
    for n in &names {
        let v = table.per[*n].map(|p| format!("{p:.2}%")).unwrap_or_else(|| "n/a".into());
        let _ = write!(out, " {v:>9}");
    }
    let ave = table.ave.map(|p| format!("{p:.2}%")).unwrap_or_else(|| "n/a".into());
    let _ = writeln!(out, " {ave:>9}");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    struct Fixed(Vec<f64>);

    impl SequenceScorer for Fixed {
        fn score(&self, pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<Vec<(f64, usize)>> {
            Ok(pairs
                .iter()
                .map(|p| {
                    let n = p.1.len();
                    (self.0.iter().take(n).sum(), n)
                })
                .collect())
        }
    }

    #[test]
    fn perplexity_limits() {
        let pairs = vec![(vec![1], vec![1, 2, 3]), (vec![1], vec![4, 5])];
        assert_eq!(perplexity(&Fixed(vec![0.0; 4]), &pairs, 8).unwrap(), 1.0);
        let v = 100f64;
        assert!((perplexity(&Fixed(vec![v.ln(); 4]), &pairs, 1).unwrap() - 100.0).abs() < 1e-9);
        assert!(matches!(perplexity(&Fixed(vec![]), &[], 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn distinct_cases() {
        assert!((distinct_n(&[toks("a a b")], 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(distinct_n(&[toks("a b c d")], 1).unwrap(), 1.0);
        assert_eq!(distinct_n(&[toks("a b"), toks("a b")], 2).unwrap(), 0.5);
        assert!(matches!(distinct_n(&[toks("a")], 2), Err(Error::Degenerate(_))));
    }

    #[test]
    fn bleu_cases() {
        let c = vec![toks("the cat sat")];
        assert_eq!(bleu(&c, &c, 2, false).unwrap(), 1.0);
        let r = vec![toks("the cat ate")];
        assert!((bleu(&c, &r, 1, false).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        // clipping: "the the the" vs "the cat" gives 1/3 before the penalty
        let c = vec![toks("the the the")];
        let r = vec![toks("the cat")];
        assert!((bleu(&c, &r, 1, false).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        // brevity penalty
        let c = vec![toks("the")];
        let r = vec![toks("the cat")];
        assert!((bleu(&c, &r, 1, false).unwrap() - (1.0f64 - 2.0).exp()).abs() < 1e-12);
        assert!(matches!(bleu::<String, String>(&[], &[], 1, false), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rouge_cases() {
        let a = vec![toks("a b c")];
        assert_eq!(rouge_l(&a, &a).unwrap(), 1.0);
        assert_eq!(rouge_l(&a, &[toks("x y")]).unwrap(), 0.0);
        assert_eq!(lcs_len(&toks("a b c d"), &toks("b d a")), 2);
    }

    fn table() -> WordVectorTable {
        WordVectorTable::parse("a 1 0 0\nb 0 1 0\nc 0 0 1\nd 1 1 0\n", Path::new("v.txt")).unwrap()
    }

    #[test]
    fn embedding_cases() {
        let t = table();
        let s = vec![toks("a d c")];
        for m in [EmbeddingMode::Average, EmbeddingMode::Extrema, EmbeddingMode::Greedy] {
            assert!((embedding_metric(&s, &s, &t, m).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(embedding_metric(&[toks("a")], &[toks("b c")], &t, EmbeddingMode::Average).unwrap(), 0.0);
        assert_eq!(embedding_metric(&[toks("zz")], &[toks("a")], &t, EmbeddingMode::Greedy).unwrap(), 0.0);
        assert_eq!(t.lookup("zz"), vec![0.0; 3]);
        // unknown tokens are dropped rather than averaged in
        let with_unknown = embedding_pair(&toks("a zz"), &toks("a"), &t, EmbeddingMode::Average);
        assert!((with_unknown - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extrema_keeps_sign_of_largest_magnitude() {
        let t = WordVectorTable::parse("p 0.5 -2\nq -1 1\n", Path::new("v")).unwrap();
        let v = extrema_vector(&t.known(&toks("p q")), 2);
        assert_eq!(v, vec![-1.0, -2.0]);
    }

    #[test]
    fn vector_file_errors() {
        assert!(matches!(
            WordVectorTable::parse("a 1 2\nb 1\n", Path::new("v")),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            WordVectorTable::parse("a 1 x\n", Path::new("v")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn percentages() {
        let sup = MetricsReport {
            ppl: Some(10.0),
            bleu1: 0.2,
            bleu2: 0.1,
            rouge_l: 0.3,
            dist1: 0.05,
            dist2: 0.2,
            ..MetricsReport::default()
        };
        let t = zero_sup_percentage(&sup, &sup);
        assert!(t.per.values().all(|v| (v.unwrap() - 100.0).abs() < 1e-12));
        assert!((t.ave.unwrap() - 100.0).abs() < 1e-12);

        let scale = |x: f64| x * 0.8839;
        let zero = MetricsReport {
            ppl: sup.ppl.map(scale),
            bleu1: scale(sup.bleu1),
            bleu2: scale(sup.bleu2),
            rouge_l: scale(sup.rouge_l),
            dist1: scale(sup.dist1),
            dist2: scale(sup.dist2),
            ..MetricsReport::default()
        };
        let t = zero_sup_percentage(&zero, &sup);
        assert!((t.ave.unwrap() - 88.39).abs() < 1e-9);

        let mut bad = sup.clone();
        bad.dist2 = 0.0;
        let t = zero_sup_percentage(&sup, &bad);
        assert_eq!(t.per["dist2"], None);
        assert_eq!(t.undefined, vec!["dist2".to_string()]);
        assert!((t.ave.unwrap() - 100.0).abs() < 1e-12);
        let text = render_table(&sup, &bad, &t);
        assert!(text.contains("AVE") && text.contains("Per") && text.contains("n/a"));
    }

    #[test]
    fn report_kv_round_trip() {
        let r = MetricsReport {
            ppl: Some(12.5),
            bleu1: 0.25,
            emb_greedy: Some(0.5),
            pairs: 3,
            ..MetricsReport::default()
        };
        let back = MetricsReport::from_kv(&r.to_kv(), Path::new("m")).unwrap();
        assert_eq!(back, r);
        let json: MetricsReport = serde_json::from_str(&r.to_json_line().unwrap()).unwrap();
        assert_eq!(json, r);
    }

    fn sentence() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(prop_oneof!["a", "b", "c", "d"], 1..6)
    }

    proptest! {
        #[test]
        fn pair_order_does_not_matter(pairs in proptest::collection::vec((sentence(), sentence()), 1..8), rot in 0usize..8) {
            let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let mut p2 = pairs.clone();
            p2.rotate_left(rot % pairs.len());
            let (c2, r2): (Vec<_>, Vec<_>) = p2.into_iter().unzip();
            let t = table();
            prop_assert!((bleu(&c, &r, 2, false).unwrap() - bleu(&c2, &r2, 2, false).unwrap()).abs() < 1e-12);
            prop_assert!((rouge_l(&c, &r).unwrap() - rouge_l(&c2, &r2).unwrap()).abs() < 1e-12);
            prop_assert!((distinct_n(&c, 1).unwrap() - distinct_n(&c2, 1).unwrap()).abs() < 1e-12);
            let g1 = embedding_metric(&c, &r, &t, EmbeddingMode::Greedy).unwrap();
            let g2 = embedding_metric(&c2, &r2, &t, EmbeddingMode::Greedy).unwrap();
            prop_assert!((g1 - g2).abs() < 1e-12);
        }

        #[test]
        fn duplication_never_raises_distinct(rs in proptest::collection::vec(sentence(), 1..6)) {
            let d = distinct_n(&rs, 1).unwrap();
            let doubled: Vec<Vec<String>> = rs.iter().chain(rs.iter()).cloned().collect();
            prop_assert!(distinct_n(&doubled, 1).unwrap() <= d + 1e-12);
        }

        #[test]
        fn bag_metrics_ignore_token_order(s in sentence(), r in sentence(), seed in 0u64..100) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = s.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let t = table();
            for m in [EmbeddingMode::Average, EmbeddingMode::Greedy] {
                let a = embedding_pair(&s, &r, &t, m);
                let b = embedding_pair(&shuffled, &r, &t, m);
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn identical_pairs_score_one(s in sentence()) {
            let c = vec![s.clone()];
            prop_assert!((bleu(&c, &c, 1, false).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((rouge_l(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
