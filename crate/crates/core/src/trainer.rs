//! Batch assembly, the optimization loop, checkpoints and the training log.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_core::{Device, IndexOp, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DialogueExample, LanguageTag};
use crate::error::{Error, Result};
use crate::lexicon::BilingualLexicon;
use crate::metrics::{perplexity, scoring_pairs};
use crate::model::layers::range_mask;
use crate::model::{commit_dir, gumbel_noise, gumbel_softmax, ModelConfig, Seq2Seq};
use crate::objective::{contrastive_scale, negative_contrast_in_batch, positive_alignment_batched, sequence_nll, LossBreakdown};
use crate::optim::{Adam, AdamConfig};
use crate::switcher::{build_views_for_epoch, derive_seed, SwitchConfig, ViewSet};
use crate::tokenizer::Vocab;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_DIR: &str = "best";
const OPTIM_FILE: &str = "optimizer.safetensors";
const STATE_FILE: &str = "state.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub epochs: usize,
    pub seed: u64,
    pub switch: SwitchConfig,
    pub model: ModelConfig,
    /// Draw fresh views every epoch instead of fixing them once.
    pub resample_per_epoch: bool,
    /// Replaces the `1 / (4 t_avg)` contrastive multiplier.
    pub contrastive_scale: Option<f64>,
    /// Divide the negative sums by the number of negatives.
    pub normalize_negatives: bool,
    pub clip_norm: Option<f64>,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<u64>,
    /// Batch size for validation scoring.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 5e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            epochs: 10,
            seed: 0,
            switch: SwitchConfig::default(),
            model: ModelConfig::default(),
            resample_per_epoch: false,
            contrastive_scale: None,
            normalize_negatives: false,
            clip_norm: None,
            max_steps: None,
            eval_batch_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for in-batch negatives, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::Config("eval_batch_size must be positive".into()));
        }
        self.switch.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

/// Specials, then every token of the given corpora in first-seen order, then
/// the lexicon's target tokens.
pub fn build_vocab(corpora: &[&Corpus], lex: &BilingualLexicon) -> Vocab {
    let mut vocab = Vocab::new();
    for c in corpora {
        for ex in &c.examples {
            for t in ex.history.iter().chain(&ex.response) {
                vocab.insert(t);
            }
        }
    }
    for t in lex.target_tokens() {
        vocab.insert(t);
    }
    vocab
}

/// Token ids for one training batch. Views are stored example-major in
/// [`ViewSet::views`] order.
#[derive(Debug, Clone)]
pub struct Batch {
    pub example_ids: Vec<String>,
    pub views_per_example: usize,
    /// Tagged history of every view.
    pub histories: Vec<Vec<u32>>,
    /// Tagged response of every view.
    pub responses: Vec<Vec<u32>>,
    /// Per example: the source gold response, then the code-switched gold
    /// responses, all tagged.
    pub rectification: Vec<Vec<u32>>,
    /// Per example, the batch indices whose source histories serve as
    /// negatives.
    pub encoder_negatives: Vec<Vec<usize>>,
    /// Mean source response length in tokens.
    pub t_avg: f64,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.example_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.example_ids.is_empty()
    }

    pub fn num_views(&self) -> usize {
        self.histories.len()
    }

    pub fn from_views(examples: &[&DialogueExample], views: &[ViewSet], vocab: &Vocab) -> Result<Batch> {
        let b = examples.len();
        if b < 2 {
            return Err(Error::Degenerate(format!("a batch needs at least 2 examples, got {b}")));
        }
        if views.len() != b {
            return Err(Error::Shape(format!("{} view sets for {b} examples", views.len())));
        }
        let n = views[0].len();
        let mut histories = Vec::with_capacity(b * n);
        let mut responses = Vec::with_capacity(b * n);
        let mut rectification = Vec::new();
        for set in views {
            if set.len() != n {
                return Err(Error::Shape("examples have different view counts".into()));
            }
            for v in set.views() {
                histories.push(vocab.ids(&v.history));
                responses.push(vocab.ids(&v.response));
            }
            rectification.push(vocab.ids(&set.source.response));
            for cs in &set.code_switches {
                rectification.push(vocab.ids(&cs.response));
            }
        }
        let total: usize = examples.iter().map(|e| e.response.len()).sum();
        Ok(Batch {
            example_ids: examples.iter().map(|e| e.id.clone()).collect(),
            views_per_example: n,
            histories,
            responses,
            rectification,
            encoder_negatives: (0..b).map(|e| (0..b).filter(|&o| o != e).collect()).collect(),
            t_avg: total as f64 / b as f64,
        })
    }
}

/// Builds views for every example (epoch 0) and assembles the batch.
pub fn build_batch(examples: &[DialogueExample], lex: &BilingualLexicon, cfg: &TrainConfig, vocab: &Vocab) -> Result<Batch> {
    if examples.len() < 2 {
        return Err(Error::Degenerate(format!("a batch needs at least 2 examples, got {}", examples.len())));
    }
    let views = examples
        .iter()
        .map(|e| build_views_for_epoch(e, lex, &cfg.switch, 0))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DialogueExample> = examples.iter().collect();
    Batch::from_views(&refs, &views, vocab)
}

/// Graph outputs of one forward pass.
pub struct Forward {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
}

pub struct Trainer {
    model: Seq2Seq,
    opt: Adam,
    cfg: TrainConfig,
    step: u64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

impl Trainer {
    pub fn new(model: Seq2Seq, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = Adam::new(cfg.adam());
        Ok(Trainer { model, opt, cfg, step: 0 })
    }

    pub fn model(&self) -> &Seq2Seq {
        &self.model
    }

    pub fn into_model(self) -> Seq2Seq {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Pooled encodings of the rectification responses, gradient-blocked:
    /// `[B, k + 1, d]`.
    pub fn rectification_reps(&self, batch: &Batch) -> Result<Tensor> {
        let enc = self.model.encode_batch(&batch.rectification)?;
        let pooled = self.model.pool_batch(&enc)?.detach();
        let per = batch.rectification.len() / batch.len();
        Ok(pooled.reshape((batch.len(), per, self.model.config().hidden_dim))?)
    }

    /// Computes every loss term; `rng` supplies the Gumbel noise.
    pub fn forward(&self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<Forward> {
        let (b, n) = (batch.len(), batch.views_per_example);
        let d = self.model.config().hidden_dim;
        let vocab = self.model.vocab();

        let enc = self.model.encode_batch(&batch.histories)?;
        let pooled = self.model.pool_batch(&enc)?.reshape((b, n, d))?;
        let src_pool = pooled.i((.., 0, ..))?.contiguous()?;
        let l_p_e = positive_alignment_batched(&pooled)?.mean_all()?;
        let l_n_e = negative_contrast_in_batch(&pooled, &src_pool, self.cfg.normalize_negatives)?.mean_all()?;

        let cls = vocab.cls_id();
        let dec_inputs: Vec<Vec<u32>> = batch
            .responses
            .iter()
            .map(|r| std::iter::once(cls).chain(r.iter().copied()).collect())
            .collect();
        let targets: Vec<Vec<u32>> = batch
            .responses
            .iter()
            .map(|r| r[1..].iter().copied().chain(std::iter::once(vocab.sep_id())).collect())
            .collect();
        let logits = self.model.decode_batch(&enc, &dec_inputs)?;
        let l_g = sequence_nll(&logits, &targets, 1)?.mean_all()?;

        // Soft responses: rows 1..=t predict the response body.
        let (bn, t, v) = logits.dims3()?;
        let noise = gumbel_noise(&[bn, t, v], logits.dtype(), rng)?;
        let p = gumbel_softmax(&logits, &noise, self.model.config().temperature, self.model.config().hard_gumbel)?;
        let r = p
            .reshape((bn * t, v))?
            .matmul(self.model.embedding_table())?
            .reshape((bn, t, d))?;
        let ranges: Vec<(usize, usize)> = batch.responses.iter().map(|resp| (1, resp.len())).collect();
        let counts: Vec<f32> = batch.responses.iter().map(|resp| (resp.len() - 1) as f32).collect();
        let mask = range_mask(&ranges, t, r.dtype())?.unsqueeze(2)?;
        let counts = Tensor::from_vec(counts, (bn, 1), &Device::Cpu)?;
        let r_mean = r.broadcast_mul(&mask)?.sum(1)?.broadcast_div(&counts)?.reshape((b, n, d))?;

        let rect = self.rectification_reps(batch)?;
        let gold_src = rect.i((.., 0, ..))?.contiguous()?;
        let dec_reps = Tensor::cat(&[&r_mean, &rect], 1)?;
        let l_p_d = positive_alignment_batched(&dec_reps)?.mean_all()?;
        let l_n_d = negative_contrast_in_batch(&dec_reps, &gold_src, self.cfg.normalize_negatives)?.mean_all()?;

        let scale = contrastive_scale(batch.t_avg, self.cfg.contrastive_scale)?;
        let contrast = (((&l_n_e + &l_n_d)? - &l_p_d)? - &l_p_e)?;
        let total = (&l_g + (contrast * scale)?)?;
        let breakdown = LossBreakdown {
            l_p_e: scalar(&l_p_e)?,
            l_n_e: scalar(&l_n_e)?,
            l_p_d: scalar(&l_p_d)?,
            l_n_d: scalar(&l_n_d)?,
            l_g: scalar(&l_g)?,
            total: scalar(&total)?,
        };
        Ok(Forward { total, breakdown })
    }

    /// One optimizer update. Gumbel noise is seeded from the run seed and the
    /// global step, so resumed runs draw the same noise.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let step = self.step + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, "gumbel", step));
        let fwd = self.forward(batch, &mut rng)?;
        for (term, value) in fwd.breakdown.terms() {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    term: term.to_string(),
                    step,
                    dump: serde_json::to_string(&fwd.breakdown)?,
                });
            }
        }
        let grads = fwd.total.backward()?;
        self.opt.step(self.model.params(), &grads)?;
        self.step = step;
        Ok(fwd.breakdown)
    }

    /// Saves model, optimizer state and counters into `dir` atomically.
    pub fn save_checkpoint(&self, dir: &Path, state: &EpochState) -> Result<()> {
        let name = dir
            .file_name()
            .map(|n| format!("{}.tmp", n.to_string_lossy()))
            .unwrap_or_else(|| "checkpoint.tmp".into());
        let tmp = dir.with_file_name(name);
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        self.model.save_into(&tmp)?;
        self.opt.save(&tmp.join(OPTIM_FILE))?;
        crate::corpus::write_atomic(&tmp.join(STATE_FILE), serde_json::to_string_pretty(state)?.as_bytes())?;
        commit_dir(&tmp, dir)
    }

    pub fn load_checkpoint(dir: &Path, cfg: TrainConfig) -> Result<(Trainer, EpochState)> {
        let model = Seq2Seq::load(dir)?;
        let spath = dir.join(STATE_FILE);
        let text = fs::read_to_string(&spath).map_err(|e| Error::io(&spath, e))?;
        let state: EpochState = serde_json::from_str(&text)?;
        cfg.validate()?;
        let opt = Adam::load(cfg.adam(), &dir.join(OPTIM_FILE))?;
        Ok((
            Trainer {
                model,
                opt,
                cfg,
                step: state.step,
            },
            state,
        ))
    }
}

/// Counters stored with each epoch checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochState {
    pub epoch: usize,
    pub step: u64,
    pub valid_ppl: f64,
    pub best_ppl: f64,
    pub best_epoch: usize,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: u64,
        epoch: usize,
        #[serde(flatten)]
        loss: LossBreakdown,
    },
    Epoch {
        epoch: usize,
        step: u64,
        valid_ppl: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log: PathBuf,
    pub steps: u64,
    /// Validation perplexity before training, then after every epoch.
    pub valid_ppl: Vec<f64>,
    pub best_ppl: f64,
    pub step_losses: Vec<LossBreakdown>,
}

pub fn epoch_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("epoch-{epoch:03}"))
}

fn latest_epoch(out: &Path) -> Option<usize> {
    let entries = fs::read_dir(out).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            let n = name.strip_prefix("epoch-")?.parse::<usize>().ok()?;
            e.path().join(STATE_FILE).exists().then_some(n)
        })
        .max()
}

fn validation_ppl(model: &Seq2Seq, valid: &Corpus, batch: usize) -> Result<f64> {
    let pairs = scoring_pairs(&valid.examples, model.vocab(), None);
    perplexity(model, &pairs, batch)
}

fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn append_log(path: &Path, records: &[LogRecord]) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Trains on `train`, scoring `valid` after every epoch. Each epoch's
/// checkpoint lands in `out/epoch-NNN` and the lowest-perplexity one is
/// copied to `out/best`. With `resume`, training continues from the latest
/// complete epoch checkpoint in `out`. `model` supplies the initial weights
/// and vocabulary when starting fresh.
pub fn fit(
    cfg: &TrainConfig,
    model: Seq2Seq,
    train: &Corpus,
    valid: &Corpus,
    lex: &BilingualLexicon,
    out: &Path,
    resume: bool,
) -> Result<FitReport> {
    cfg.validate()?;
    if valid.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    if train.len() < 2 {
        return Err(Error::Degenerate("training split needs at least 2 examples".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join(LOG_FILE);

    let resume_from = if resume { latest_epoch(out) } else { None };
    let (mut trainer, mut state, mut valid_ppl, mut step_losses) = match resume_from {
        Some(e) => {
            let (trainer, state) = Trainer::load_checkpoint(&epoch_dir(out, e), cfg.clone())?;
            let kept: Vec<LogRecord> = read_log(&log_path)?
                .into_iter()
                .filter(|r| match r {
                    LogRecord::Step { step, .. } => *step <= state.step,
                    LogRecord::Epoch { epoch, .. } => *epoch <= state.epoch,
                })
                .collect();
            let ppls = kept
                .iter()
                .filter_map(|r| match r {
                    LogRecord::Epoch { valid_ppl, .. } => Some(*valid_ppl),
                    _ => None,
                })
                .collect();
            let losses = kept
                .iter()
                .filter_map(|r| match r {
                    LogRecord::Step { loss, .. } => Some(*loss),
                    _ => None,
                })
                .collect();
            let _ = fs::remove_file(&log_path);
            append_log(&log_path, &kept)?;
            log::info!("resuming after epoch {e} at step {}", state.step);
            (trainer, state, ppls, losses)
        }
        None => {
            let _ = fs::remove_file(&log_path);
            let trainer = Trainer::new(model, cfg.clone())?;
            let ppl0 = validation_ppl(trainer.model(), valid, cfg.eval_batch_size)?;
            append_log(
                &log_path,
                &[LogRecord::Epoch {
                    epoch: 0,
                    step: 0,
                    valid_ppl: ppl0,
                }],
            )?;
            let state = EpochState {
                epoch: 0,
                step: 0,
                valid_ppl: ppl0,
                best_ppl: ppl0,
                best_epoch: 0,
            };
            trainer.save_checkpoint(&epoch_dir(out, 0), &state)?;
            trainer.save_checkpoint(&out.join(BEST_DIR), &state)?;
            (trainer, state, vec![ppl0], Vec::new())
        }
    };

    let vocab = trainer.model().vocab().clone();
    let mut fixed_views: Option<Vec<ViewSet>> = None;
    let mut stop = cfg.max_steps.is_some_and(|m| trainer.step_count() >= m);
    for epoch in state.epoch + 1..=cfg.epochs {
        if stop {
            break;
        }
        let views = if cfg.resample_per_epoch {
            train
                .examples
                .iter()
                .map(|e| build_views_for_epoch(e, lex, &cfg.switch, epoch as u64))
                .collect::<Result<Vec<_>>>()?
        } else {
            match fixed_views.take() {
                Some(v) => v,
                None => train
                    .examples
                    .iter()
                    .map(|e| build_views_for_epoch(e, lex, &cfg.switch, 0))
                    .collect::<Result<Vec<_>>>()?,
            }
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle", epoch as u64)));
        let mut records = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let exs: Vec<&DialogueExample> = chunk.iter().map(|&i| &train.examples[i]).collect();
            let vs: Vec<ViewSet> = chunk.iter().map(|&i| views[i].clone()).collect();
            let batch = Batch::from_views(&exs, &vs, &vocab)?;
            let loss = trainer.train_step(&batch)?;
            log::debug!("step {} loss {:.4}", trainer.step_count(), loss.total);
            step_losses.push(loss);
            records.push(LogRecord::Step {
                step: trainer.step_count(),
                epoch,
                loss,
            });
            if cfg.max_steps.is_some_and(|m| trainer.step_count() >= m) {
                stop = true;
                break;
            }
        }
        if !cfg.resample_per_epoch {
            fixed_views = Some(views);
        }
        let ppl = validation_ppl(trainer.model(), valid, cfg.eval_batch_size)?;
        log::info!("epoch {epoch}: step {} valid ppl {ppl:.3}", trainer.step_count());
        records.push(LogRecord::Epoch {
            epoch,
            step: trainer.step_count(),
            valid_ppl: ppl,
        });
        append_log(&log_path, &records)?;
        valid_ppl.push(ppl);
        state.epoch = epoch;
        state.step = trainer.step_count();
        state.valid_ppl = ppl;
        let improved = ppl < state.best_ppl;
        if improved {
            state.best_ppl = ppl;
            state.best_epoch = epoch;
        }
        trainer.save_checkpoint(&epoch_dir(out, epoch), &state)?;
        if improved {
            trainer.save_checkpoint(&out.join(BEST_DIR), &state)?;
        }
    }

    Ok(FitReport {
        best_checkpoint: out.join(BEST_DIR),
        last_checkpoint: epoch_dir(out, state.epoch),
        log: log_path,
        steps: trainer.step_count(),
        valid_ppl,
        best_ppl: state.best_ppl,
        step_losses,
    })
}

/// Exponential moving average of a series, for smoothed loss curves.
pub fn smooth(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let next = match acc {
            None => v,
            Some(a) => alpha * v + (1.0 - alpha) * a,
        };
        acc = Some(next);
        out.push(next);
    }
    out
}

/// Retags histories (and responses) of `examples` with `tag`.
pub fn retag(examples: &[DialogueExample], tag: LanguageTag) -> Vec<DialogueExample> {
    examples
        .iter()
        .map(|e| DialogueExample {
            language_tag: tag,
            ..e.clone()
        })
        .collect()
}
