//! Transformer encoder-decoder with a single embedding table shared by the
//! encoder input, the decoder input and the output projection.

mod checkpoint;
pub mod layers;
mod soft;

use candle_core::{DType, Device, IndexOp, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Vocab;

pub use checkpoint::{commit_dir, init_from_mlm, CheckpointManifest, MODEL_FILE, MANIFEST_FILE, VOCAB_FILE};
pub use layers::ParamStore;
use layers::{causal_bias, key_padding_bias, range_mask, DecoderLayer, EncoderLayer, LayerNorm};
pub use soft::{gumbel_noise, gumbel_sample, gumbel_softmax, soft_response_repr};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Gumbel-Softmax temperature.
    pub temperature: f64,
    /// Straight-through (hard) Gumbel samples instead of soft ones.
    pub hard_gumbel: bool,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            heads: 4,
            hidden_dim: 128,
            ffn_dim: 512,
            vocab_size: 0,
            max_positions: 520,
            temperature: 1.0,
            hard_gumbel: false,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, num_special: usize) -> Result<()> {
        if self.heads == 0 || self.hidden_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.vocab_size < num_special {
            return Err(Error::Config(format!(
                "vocab_size {} is smaller than the {num_special} special tokens",
                self.vocab_size
            )));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.max_positions < 3 {
            return Err(Error::Config("max_positions must be at least 3".into()));
        }
        Ok(())
    }
}

/// Encoder states for one sequence: rows are `[CLS], tag, content..., [SEP]`.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[s + 3, d]`
    pub hidden: Tensor,
    pub content_len: usize,
}

/// Encoder states for a padded batch.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    /// `[B, S, d]`
    pub hidden: Tensor,
    /// `[B, 1, 1, S]`
    pub key_bias: Tensor,
    /// Unpadded lengths including `[CLS]` and `[SEP]`.
    pub lens: Vec<usize>,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    pub fn detach(&self) -> EncodedBatch {
        EncodedBatch {
            hidden: self.hidden.detach(),
            key_bias: self.key_bias.clone(),
            lens: self.lens.clone(),
        }
    }

    pub fn row(&self, i: usize) -> Result<EncoderOutput> {
        let len = self.lens[i];
        Ok(EncoderOutput {
            hidden: self.hidden.i(i)?.narrow(0, 0, len)?,
            content_len: len.saturating_sub(3),
        })
    }
}

/// Per-step vocabulary distribution.
#[derive(Debug, Clone)]
pub struct DecoderDistribution {
    /// `[t, v]`
    pub logits: Tensor,
    /// `[t, v]`, rows on the simplex.
    pub probs: Tensor,
}

impl DecoderDistribution {
    pub fn from_logits(logits: Tensor) -> Result<Self> {
        let probs = candle_nn::ops::softmax(&logits, D::Minus1)?;
        Ok(DecoderDistribution { logits, probs })
    }

    /// Uses `ln p` as logits; zero probabilities are clamped to the smallest
    /// positive value of the dtype.
    pub fn from_probs(probs: Tensor) -> Result<Self> {
        let floor = match probs.dtype() {
            DType::F64 => f64::MIN_POSITIVE,
            _ => f32::MIN_POSITIVE as f64,
        };
        let logits = probs.clamp(floor, 1.0)?.log()?;
        Ok(DecoderDistribution { logits, probs })
    }

    pub fn steps(&self) -> usize {
        self.probs.dim(0).unwrap_or(0)
    }
}

pub struct Seq2Seq {
    cfg: ModelConfig,
    vocab: Vocab,
    params: ParamStore,
    word: Var,
    enc_pos: Var,
    dec_pos: Var,
    enc_ln: LayerNorm,
    dec_ln: LayerNorm,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    out_bias: Var,
}

impl std::fmt::Debug for Seq2Seq {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Seq2Seq")
            .field("cfg", &self.cfg)
            .field("vocab_size", &self.vocab.len())
            .field("parameters", &self.params.num_elements())
            .finish()
    }
}

impl Seq2Seq {
    /// Randomly initialized model; `cfg.vocab_size` is taken from `vocab`.
    pub fn new(mut cfg: ModelConfig, vocab: Vocab) -> Result<Self> {
        cfg.vocab_size = vocab.len();
        cfg.validate(vocab.num_special())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut ps = ParamStore::new();
        let (d, std) = (cfg.hidden_dim, cfg.init_std);
        let word = ps.normal("embeddings.word", &[cfg.vocab_size, d], std, &mut rng)?;
        let enc_pos = ps.normal("encoder.pos", &[cfg.max_positions, d], std, &mut rng)?;
        let enc_ln = LayerNorm::new(&mut ps, "encoder.emb_ln", d)?;
        let encoder = (0..cfg.layers)
            .map(|i| EncoderLayer::new(&mut ps, &format!("encoder.layers.{i}"), d, cfg.heads, cfg.ffn_dim, std, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let dec_pos = ps.normal("decoder.pos", &[cfg.max_positions, d], std, &mut rng)?;
        let dec_ln = LayerNorm::new(&mut ps, "decoder.emb_ln", d)?;
        let decoder = (0..cfg.layers)
            .map(|i| DecoderLayer::new(&mut ps, &format!("decoder.layers.{i}"), d, cfg.heads, cfg.ffn_dim, std, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let out_bias = ps.constant("output.bias", &[cfg.vocab_size], 0.0)?;
        Ok(Seq2Seq {
            cfg,
            vocab,
            params: ps,
            word,
            enc_pos,
            dec_pos,
            enc_ln,
            dec_ln,
            encoder,
            decoder,
            out_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// The shared `[v, d]` embedding table.
    pub fn embedding_table(&self) -> &Tensor {
        self.word.as_tensor()
    }

    fn embed(&self, ids: &[Vec<u32>], pos: &Var, ln: &LayerNorm) -> Result<Tensor> {
        let b = ids.len();
        let t = ids.iter().map(Vec::len).max().unwrap_or(0);
        let pad = self.vocab.pad_id();
        let flat: Vec<u32> = ids
            .iter()
            .flat_map(|s| s.iter().copied().chain(std::iter::repeat(pad).take(t - s.len())))
            .collect();
        let idx = Tensor::from_vec(flat, b * t, &Device::Cpu)?;
        let d = self.cfg.hidden_dim;
        let x = self.word.as_tensor().index_select(&idx, 0)?.reshape((b, t, d))?;
        let x = x.broadcast_add(&pos.as_tensor().narrow(0, 0, t)?)?;
        ln.forward(&x)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.cfg.max_positions {
            return Err(Error::Length {
                len,
                max: self.cfg.max_positions,
            });
        }
        Ok(())
    }

    /// Encodes tagged sequences; `[CLS]` and `[SEP]` are added here.
    pub fn encode_batch(&self, tagged: &[Vec<u32>]) -> Result<EncodedBatch> {
        if tagged.is_empty() {
            return Err(Error::Degenerate("empty encoder batch".into()));
        }
        let (cls, sep) = (self.vocab.cls_id(), self.vocab.sep_id());
        let wrapped: Vec<Vec<u32>> = tagged
            .iter()
            .map(|s| std::iter::once(cls).chain(s.iter().copied()).chain(std::iter::once(sep)).collect())
            .collect();
        let lens: Vec<usize> = wrapped.iter().map(Vec::len).collect();
        let max = *lens.iter().max().unwrap();
        self.check_len(max)?;
        let key_bias = key_padding_bias(&lens, max)?;
        let mut x = self.embed(&wrapped, &self.enc_pos, &self.enc_ln)?;
        for layer in &self.encoder {
            x = layer.forward(&x, &key_bias)?;
        }
        Ok(EncodedBatch {
            hidden: x,
            key_bias,
            lens,
        })
    }

    pub fn encode(&self, tagged: &[u32]) -> Result<EncoderOutput> {
        self.encode_batch(&[tagged.to_vec()])?.row(0)
    }

    /// Mean of the content rows of every batch entry: `[B, d]`. The `[CLS]`,
    /// tag, `[SEP]` and padding rows are excluded.
    pub fn pool_batch(&self, enc: &EncodedBatch) -> Result<Tensor> {
        pool_rows(&enc.hidden, &enc.lens)
    }

    /// Logits `[B, T, v]` for decoder inputs that already start with `[CLS]`.
    /// Row `i` of entry `b` only sees `dec_inputs[b][..=i]`.
    pub fn decode_batch(&self, enc: &EncodedBatch, dec_inputs: &[Vec<u32>]) -> Result<Tensor> {
        if dec_inputs.len() != enc.len() {
            return Err(Error::Shape(format!(
                "{} decoder inputs for {} encoded sequences",
                dec_inputs.len(),
                enc.len()
            )));
        }
        let lens: Vec<usize> = dec_inputs.iter().map(Vec::len).collect();
        let t = *lens.iter().max().unwrap_or(&0);
        self.check_len(t)?;
        let self_bias = causal_bias(t)?.broadcast_add(&key_padding_bias(&lens, t)?)?;
        let mut x = self.embed(dec_inputs, &self.dec_pos, &self.dec_ln)?;
        for layer in &self.decoder {
            x = layer.forward(&x, &self_bias, &enc.hidden, &enc.key_bias)?;
        }
        self.project(&x)
    }

    fn project(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let logits = x
            .reshape((b * t, d))?
            .matmul(&self.word.as_tensor().t()?)?
            .broadcast_add(self.out_bias.as_tensor())?;
        Ok(logits.reshape((b, t, self.cfg.vocab_size))?)
    }

    /// Distribution over the step after each prefix position. The prefix is
    /// preceded by an implicit `[CLS]` start token, so the result has
    /// `prefix.len() + 1` rows.
    pub fn decode_distribution(&self, enc: &EncoderOutput, prefix: &[u32]) -> Result<DecoderDistribution> {
        let batch = EncodedBatch {
            hidden: enc.hidden.unsqueeze(0)?,
            key_bias: key_padding_bias(&[enc.hidden.dim(0)?], enc.hidden.dim(0)?)?,
            lens: vec![enc.hidden.dim(0)?],
        };
        let input: Vec<u32> = std::iter::once(self.vocab.cls_id()).chain(prefix.iter().copied()).collect();
        let logits = self.decode_batch(&batch, &[input])?.squeeze(0)?;
        DecoderDistribution::from_logits(logits)
    }

    /// Log-probabilities of the next token after each prefix, all decoded
    /// against the same single encoded history.
    pub fn next_log_probs(&self, enc: &EncodedBatch, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f32>>> {
        if prefixes.is_empty() {
            return Ok(Vec::new());
        }
        let n = prefixes.len();
        let (_, s, d) = enc.hidden.dims3()?;
        let rep = EncodedBatch {
            hidden: enc.hidden.narrow(0, 0, 1)?.broadcast_as((n, s, d))?.contiguous()?,
            key_bias: enc.key_bias.narrow(0, 0, 1)?.broadcast_as((n, 1, 1, s))?.contiguous()?,
            lens: vec![enc.lens[0]; n],
        };
        let inputs: Vec<Vec<u32>> = prefixes
            .iter()
            .map(|p| std::iter::once(self.vocab.cls_id()).chain(p.iter().copied()).collect())
            .collect();
        let logits = self.decode_batch(&rep, &inputs)?;
        let mut out = Vec::with_capacity(n);
        for (i, inp) in inputs.iter().enumerate() {
            let row = logits.i((i, inp.len() - 1))?;
            out.push(candle_nn::ops::log_softmax(&row, D::Minus1)?.to_vec1::<f32>()?);
        }
        Ok(out)
    }
}

/// Mean over rows `2..len-1` of each padded sequence.
pub(crate) fn pool_rows(hidden: &Tensor, lens: &[usize]) -> Result<Tensor> {
    let (_, s, _) = hidden.dims3()?;
    let mut ranges = Vec::with_capacity(lens.len());
    let mut counts = Vec::with_capacity(lens.len());
    for &l in lens {
        if l < 4 {
            return Err(Error::Degenerate("sequence has no content tokens to pool".into()));
        }
        ranges.push((2, l - 1));
        counts.push((l - 3) as f32);
    }
    let mask = range_mask(&ranges, s, hidden.dtype())?.unsqueeze(2)?;
    let counts = Tensor::from_vec(counts, (lens.len(), 1), &Device::Cpu)?.to_dtype(hidden.dtype())?;
    Ok(hidden.broadcast_mul(&mask)?.sum(1)?.broadcast_div(&counts)?)
}

/// Mean of the `s` content rows (tag, `[CLS]`, `[SEP]` excluded).
pub fn pool_history(enc: &EncoderOutput) -> Result<Tensor> {
    if enc.content_len == 0 {
        return Err(Error::Degenerate("history has no content tokens".into()));
    }
    let rows = enc.hidden.dim(0)?;
    if rows != enc.content_len + 3 {
        return Err(Error::Shape(format!(
            "encoder output has {rows} rows but content length {}",
            enc.content_len
        )));
    }
    Ok(enc.hidden.narrow(0, 2, enc.content_len)?.mean(0)?)
}
