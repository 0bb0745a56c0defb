//! Dictionary-driven view construction.
//!
//! Every source example yields `2k + 1` mutually positive views: the source
//! itself, `k` pseudo-target views (every dictionary-covered token replaced by
//! a translation, every other token replaced by the placeholder) and `k`
//! code-switch views (each covered token replaced with probability `1 - tau`).
//! Views are aligned token for token with the source.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{attach_language_tag, DialogueExample, LanguageTag};
use crate::error::{Error, Result};
use crate::lexicon::BilingualLexicon;
use crate::tokenizer::{self, MASK, TURN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchConfig {
    pub k: usize,
    pub tau: f64,
    pub placeholder: String,
    pub seed: u64,
    pub pseudo_target_tag: LanguageTag,
    /// Literal pseudocode behaviour for the code-switch pass: uncovered
    /// tokens become placeholders and the keep branch emits every
    /// candidate. Breaks token alignment.
    pub strict_algorithm1: bool,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        SwitchConfig {
            k: 2,
            tau: 0.4,
            placeholder: MASK.to_string(),
            seed: 0,
            pseudo_target_tag: LanguageTag::Pt,
            strict_algorithm1: false,
        }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config(format!("k must be at least 1, got {}", self.k)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Source,
    PseudoTarget,
    CodeSwitch,
}

impl ViewKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewKind::Source => "source",
            ViewKind::PseudoTarget => "pseudo_target",
            ViewKind::CodeSwitch => "code_switch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Kept,
    Replaced,
    Masked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct View {
    pub kind: ViewKind,
    pub iteration: usize,
    pub tag: LanguageTag,
    /// Tag first.
    pub history: Vec<String>,
    /// Tag first.
    pub response: Vec<String>,
    pub history_provenance: Vec<Provenance>,
    pub response_provenance: Vec<Provenance>,
}

impl View {
    pub fn history_body(&self) -> &[String] {
        &self.history[1..]
    }

    pub fn response_body(&self) -> &[String] {
        &self.response[1..]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewSet {
    pub source: View,
    pub pseudo_targets: Vec<View>,
    pub code_switches: Vec<View>,
}

impl ViewSet {
    pub fn len(&self) -> usize {
        1 + self.pseudo_targets.len() + self.code_switches.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Source, then pseudo-target views, then code-switch views.
    pub fn views(&self) -> impl Iterator<Item = &View> {
        std::iter::once(&self.source)
            .chain(self.pseudo_targets.iter())
            .chain(self.code_switches.iter())
    }
}

fn pick<'a, R: Rng>(cands: &'a [String], rng: &mut R) -> &'a str {
    &cands[rng.random_range(0..cands.len())]
}

/// Replaces every covered token by a uniformly chosen candidate and every
/// other token by the placeholder. Special tokens such as `[TURN]` pass
/// through.
pub fn pseudo_target_pass<R: Rng>(
    tokens: &[String],
    lex: &BilingualLexicon,
    placeholder: &str,
    rng: &mut R,
) -> (Vec<String>, Vec<Provenance>) {
    let mut out = Vec::with_capacity(tokens.len());
    let mut prov = Vec::with_capacity(tokens.len());
    for tok in tokens {
        if tokenizer::is_special(tok) {
            out.push(tok.clone());
            prov.push(Provenance::Kept);
        } else if let Some(cands) = lex.lookup(tok) {
            out.push(pick(cands, rng).to_string());
            prov.push(Provenance::Replaced);
        } else {
            out.push(placeholder.to_string());
            prov.push(Provenance::Masked);
        }
    }
    (out, prov)
}

/// Each covered token is replaced by a uniformly chosen candidate when a
/// uniform draw on `[0, 1)` exceeds `tau`, and kept otherwise. Uncovered
/// tokens are kept.
pub fn code_switch_pass<R: Rng>(
    tokens: &[String],
    lex: &BilingualLexicon,
    tau: f64,
    rng: &mut R,
) -> (Vec<String>, Vec<Provenance>) {
    let mut out = Vec::with_capacity(tokens.len());
    let mut prov = Vec::with_capacity(tokens.len());
    for tok in tokens {
        match lex.lookup(tok).filter(|_| !tokenizer::is_special(tok)) {
            Some(cands) if rng.random::<f64>() > tau => {
                out.push(pick(cands, rng).to_string());
                prov.push(Provenance::Replaced);
            }
            _ => {
                out.push(tok.clone());
                prov.push(Provenance::Kept);
            }
        }
    }
    (out, prov)
}

/// Literal pseudocode variant of [`code_switch_pass`]; output may be longer
/// than the input.
pub fn code_switch_pass_strict<R: Rng>(
    tokens: &[String],
    lex: &BilingualLexicon,
    tau: f64,
    placeholder: &str,
    rng: &mut R,
) -> (Vec<String>, Vec<Provenance>) {
    let mut out = Vec::with_capacity(tokens.len());
    let mut prov = Vec::with_capacity(tokens.len());
    for tok in tokens {
        if tokenizer::is_special(tok) {
            out.push(tok.clone());
            prov.push(Provenance::Kept);
            continue;
        }
        match lex.lookup(tok) {
            Some(cands) => {
                if rng.random::<f64>() > tau {
                    out.push(pick(cands, rng).to_string());
                    prov.push(Provenance::Replaced);
                } else {
                    for c in cands {
                        out.push(c.clone());
                        prov.push(Provenance::Replaced);
                    }
                }
            }
            None => {
                out.push(placeholder.to_string());
                prov.push(Provenance::Masked);
            }
        }
    }
    (out, prov)
}

/// Stable per-example seed: the run seed mixed with a hash of the example id
/// and the epoch.
pub fn derive_seed(seed: u64, example_id: &str, epoch: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(example_id.as_bytes());
    h.update(epoch.to_le_bytes());
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(b)
}

pub fn build_views(example: &DialogueExample, lex: &BilingualLexicon, cfg: &SwitchConfig) -> Result<ViewSet> {
    build_views_for_epoch(example, lex, cfg, 0)
}

/// Same as [`build_views`] with the epoch mixed into the seed, for
/// re-sampling views between epochs.
pub fn build_views_for_epoch(
    example: &DialogueExample,
    lex: &BilingualLexicon,
    cfg: &SwitchConfig,
    epoch: u64,
) -> Result<ViewSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &example.id, epoch));
    let make = |kind, iteration, tag, h: (Vec<String>, Vec<Provenance>), r: (Vec<String>, Vec<Provenance>)| -> Result<View> {
        Ok(View {
            kind,
            iteration,
            tag,
            history: attach_language_tag(&h.0, tag)?,
            response: attach_language_tag(&r.0, tag)?,
            history_provenance: h.1,
            response_provenance: r.1,
        })
    };
    let kept = |t: &[String]| (t.to_vec(), vec![Provenance::Kept; t.len()]);
    let source = make(
        ViewKind::Source,
        0,
        example.language_tag,
        kept(&example.history),
        kept(&example.response),
    )?;
    let mut pseudo_targets = Vec::with_capacity(cfg.k);
    let mut code_switches = Vec::with_capacity(cfg.k);
    for it in 0..cfg.k {
        let h = pseudo_target_pass(&example.history, lex, &cfg.placeholder, &mut rng);
        let r = pseudo_target_pass(&example.response, lex, &cfg.placeholder, &mut rng);
        pseudo_targets.push(make(ViewKind::PseudoTarget, it, cfg.pseudo_target_tag, h, r)?);

        let (h, r) = if cfg.strict_algorithm1 {
            (
                code_switch_pass_strict(&example.history, lex, cfg.tau, &cfg.placeholder, &mut rng),
                code_switch_pass_strict(&example.response, lex, cfg.tau, &cfg.placeholder, &mut rng),
            )
        } else {
            (
                code_switch_pass(&example.history, lex, cfg.tau, &mut rng),
                code_switch_pass(&example.response, lex, cfg.tau, &mut rng),
            )
        };
        code_switches.push(make(ViewKind::CodeSwitch, it, LanguageTag::Cs, h, r)?);
    }
    Ok(ViewSet {
        source,
        pseudo_targets,
        code_switches,
    })
}

/// One line of an augmented-corpus file. Loadable as a dialogue record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub id: String,
    pub source_id: String,
    pub view_kind: ViewKind,
    pub iteration: usize,
    pub history: Vec<String>,
    pub response: String,
    pub tag: String,
}

impl ViewRecord {
    pub fn new(source_id: &str, view: &View) -> Self {
        ViewRecord {
            id: format!("{source_id}/{}/{}", view.kind.as_str(), view.iteration),
            source_id: source_id.to_string(),
            view_kind: view.kind,
            iteration: view.iteration,
            history: view
                .history_body()
                .split(|t| t == TURN)
                .map(tokenizer::detokenize)
                .collect(),
            response: tokenizer::detokenize(view.response_body()),
            tag: view.tag.as_str().to_string(),
        }
    }
}

pub fn view_records(source_id: &str, set: &ViewSet) -> Vec<ViewRecord> {
    set.views().map(|v| ViewRecord::new(source_id, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Limits;
    use std::path::Path;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn lex(text: &str) -> BilingualLexicon {
        BilingualLexicon::parse(text, Path::new("l"), LanguageTag::En, LanguageTag::De).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn pseudo_target_masks_uncovered_tokens() {
        let (out, prov) = pseudo_target_pass(&toks("here is an example"), &lex("here hier\nan ein\n"), MASK, &mut rng());
        assert_eq!(out, toks("hier [MASK] ein [MASK]"));
        assert_eq!(
            prov,
            vec![Provenance::Replaced, Provenance::Masked, Provenance::Replaced, Provenance::Masked]
        );
    }

    #[test]
    fn pseudo_target_with_empty_lexicon_is_all_placeholders() {
        let (out, _) = pseudo_target_pass(&toks("a b c"), &lex(""), MASK, &mut rng());
        assert_eq!(out, toks("[MASK] [MASK] [MASK]"));
    }

    #[test]
    fn pseudo_target_with_full_coverage_translates_everything() {
        let l = lex("here hier\nis ist\nan ein\nexample beispiel\n");
        let (out, _) = pseudo_target_pass(&toks("here is an example"), &l, MASK, &mut rng());
        assert_eq!(out, toks("hier ist ein beispiel"));
    }

    #[test]
    fn turn_separator_passes_through() {
        let (out, _) = pseudo_target_pass(&toks("here [TURN] is"), &lex("here hier\n"), MASK, &mut rng());
        assert_eq!(out, toks("hier [TURN] [MASK]"));
        let (out, _) = code_switch_pass(&toks("here [TURN] is"), &lex("here hier\n"), 0.0, &mut rng());
        assert_eq!(out, toks("hier [TURN] is"));
    }

    #[test]
    fn code_switch_tau_one_is_identity() {
        let src = toks("Here is an example");
        let l = lex("here hier\nis ist\nan ein\nexample beispiel\n");
        let (out, prov) = code_switch_pass(&src, &l, 1.0, &mut rng());
        assert_eq!(out, src);
        assert!(prov.iter().all(|p| *p == Provenance::Kept));
    }

    #[test]
    fn code_switch_tau_zero_matches_pseudo_target_on_full_coverage() {
        let src = toks("here is an example");
        let l = lex("here hier\nis ist\nan ein\nexample beispiel\n");
        let (cs, _) = code_switch_pass(&src, &l, 0.0, &mut rng());
        let (pt, _) = pseudo_target_pass(&src, &l, MASK, &mut rng());
        assert_eq!(cs, toks("hier ist ein beispiel"));
        assert_eq!(cs, pt);
    }

    #[test]
    fn code_switch_keeps_uncovered_tokens() {
        let src = toks("Here is an example");
        let l = lex("an ein\nexample beispiel\n");
        for seed in 0..20 {
            let (out, _) = code_switch_pass(&src, &l, 0.4, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(&out[..2], &src[..2]);
            assert!(!out.contains(&MASK.to_string()));
            assert!(out[2] == "an" || out[2] == "ein");
        }
    }

    #[test]
    fn strict_variant_masks_and_expands() {
        let l = lex("an ein\nan eine\n");
        let (out, _) = code_switch_pass_strict(&toks("is an"), &l, 1.0, MASK, &mut rng());
        assert_eq!(out, toks("[MASK] ein eine"));
    }

    fn example(h: &str, r: &str) -> DialogueExample {
        DialogueExample::from_turns("ex-1", &[h], r, LanguageTag::En, Limits::default()).unwrap()
    }

    #[test]
    fn k2_gives_five_tagged_views() {
        let ex = example("here is an example", "is it");
        let set = build_views(&ex, &lex("here hier\nan ein\n"), &SwitchConfig::default()).unwrap();
        assert_eq!(set.len(), 5);
        assert_eq!(set.views().count(), 5);
        assert_eq!(set.source.history[0], "<En>");
        assert!(set.pseudo_targets.iter().all(|v| v.history[0] == "<Pt>" && v.response[0] == "<Pt>"));
        assert!(set.code_switches.iter().all(|v| v.history[0] == "[Cs]"));
    }

    #[test]
    fn k1_empty_lexicon() {
        let ex = example("a b", "c");
        let cfg = SwitchConfig {
            k: 1,
            ..SwitchConfig::default()
        };
        let set = build_views(&ex, &lex(""), &cfg).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.pseudo_targets[0].history_body(), toks("[MASK] [MASK]"));
        assert_eq!(set.code_switches[0].history_body(), ex.history);
        assert_eq!(set.code_switches[0].response_body(), ex.response);
    }

    #[test]
    fn k0_rejected() {
        let cfg = SwitchConfig {
            k: 0,
            ..SwitchConfig::default()
        };
        assert!(matches!(build_views(&example("a", "b"), &lex(""), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn seeded_runs_repeat_and_epochs_differ() {
        let ex = example("here is an example of a thing", "an example is here");
        let l = lex("here hier\nhere da\nan ein\nexample beispiel\nis ist\nof von\n");
        let cfg = SwitchConfig {
            seed: 7,
            ..SwitchConfig::default()
        };
        assert_eq!(build_views(&ex, &l, &cfg).unwrap(), build_views(&ex, &l, &cfg).unwrap());
        let any_differs = (1..10).any(|e| {
            build_views_for_epoch(&ex, &l, &cfg, e).unwrap() != build_views(&ex, &l, &cfg).unwrap()
        });
        assert!(any_differs);
    }

    #[test]
    fn view_records_carry_kind_and_tag() {
        let ex = example("here is", "an example");
        let set = build_views(&ex, &lex("here hier\n"), &SwitchConfig::default()).unwrap();
        let recs = view_records(&ex.id, &set);
        assert_eq!(recs.len(), 5);
        assert_eq!(recs[1].view_kind, ViewKind::PseudoTarget);
        assert_eq!(recs[1].tag, "<Pt>");
        assert_eq!(recs[1].id, "ex-1/pseudo_target/0");
        assert_eq!(recs[1].history, vec!["hier [MASK]"]);
    }
}
