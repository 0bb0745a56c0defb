//! Checkpoint bundles: a directory holding `model.safetensors`, `vocab.txt`
//! and `manifest.json`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Seq2Seq};
use crate::corpus::{write_atomic, LanguageTag};
use crate::error::{Error, Result};
use crate::tokenizer::{Vocab, TURN};

pub const MODEL_FILE: &str = "model.safetensors";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "xlzero-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub vocab_hash: String,
}

/// Replaces `dst` with the fully written directory `tmp`.
pub fn commit_dir(tmp: &Path, dst: &Path) -> Result<()> {
    if dst.exists() {
        fs::remove_dir_all(dst).map_err(|e| Error::io(dst, e))?;
    }
    fs::rename(tmp, dst).map_err(|e| Error::io(dst, e))
}

fn staging_dir(dir: &Path) -> Result<std::path::PathBuf> {
    let name = dir
        .file_name()
        .map(|n| format!("{}.tmp", n.to_string_lossy()))
        .unwrap_or_else(|| "checkpoint.tmp".into());
    let tmp = dir.with_file_name(name);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    Ok(tmp)
}

fn read_vocab(dir: &Path) -> Result<Vocab> {
    let path = dir.join(VOCAB_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Vocab::from_text(&text))
}

/// Token list of a bundle in row order, without adding specials.
fn read_token_rows(dir: &Path) -> Result<HashMap<String, usize>> {
    let path = dir.join(VOCAB_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut index = HashMap::new();
    for (i, tok) in text.lines().filter(|l| !l.is_empty()).enumerate() {
        index.entry(tok.to_string()).or_insert(i);
    }
    Ok(index)
}

fn read_tensors(dir: &Path) -> Result<HashMap<String, Tensor>> {
    let path = dir.join(MODEL_FILE);
    if !path.exists() {
        return Err(Error::io(&path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    Ok(candle_core::safetensors::load(&path, &Device::Cpu)?)
}

impl Seq2Seq {
    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            format: FORMAT.into(),
            config: self.cfg.clone(),
            vocab_size: self.vocab.len(),
            vocab_hash: self.vocab.hash(),
        }
    }

    /// Writes the bundle files into an existing directory.
    pub fn save_into(&self, dir: &Path) -> Result<()> {
        let tensors: HashMap<String, Tensor> = self.params.tensors().into_iter().collect();
        candle_core::safetensors::save(&tensors, dir.join(MODEL_FILE))?;
        write_atomic(&dir.join(VOCAB_FILE), self.vocab.to_text().as_bytes())?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        write_atomic(&dir.join(MANIFEST_FILE), manifest.as_bytes())
    }

    /// Writes the bundle through a staging directory and swaps it into
    /// place.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = staging_dir(dir)?;
        self.save_into(&tmp)?;
        commit_dir(&tmp, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        let vocab = read_vocab(dir)?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(Error::Config(format!(
                "vocabulary in {} does not match the manifest hash",
                dir.display()
            )));
        }
        let model = Seq2Seq::new(manifest.config, vocab)?;
        model.set_weights(&read_tensors(dir)?)?;
        Ok(model)
    }

    /// Overwrites every parameter from `tensors`; all names must be present
    /// with matching shapes.
    pub fn set_weights(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in self.params.iter() {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor `{name}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::Shape(format!(
                    "`{name}`: checkpoint {:?} vs model {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(var.dtype())?)?;
        }
        Ok(())
    }

    /// Writes the embedding table and encoder weights in the layout
    /// [`init_from_mlm`] reads.
    pub fn save_encoder_bundle(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tensors: HashMap<String, Tensor> = self
            .params
            .tensors()
            .into_iter()
            .filter(|(k, _)| k.starts_with("encoder.") || k.starts_with("embeddings."))
            .collect();
        candle_core::safetensors::save(&tensors, dir.join(MODEL_FILE))?;
        write_atomic(&dir.join(VOCAB_FILE), self.vocab.to_text().as_bytes())
    }
}

fn may_be_fresh(token: &str) -> bool {
    token == TURN || LanguageTag::ALL.iter().any(|t| t.as_str() == token)
}

/// Builds a model whose encoder (and decoder self-attention and feed-forward
/// blocks) start from a masked-LM encoder bundle. Decoder cross-attention is
/// always freshly initialized. Without a bundle the model is randomly
/// initialized.
///
/// Language tags and the turn separator may be missing from the bundle
/// vocabulary; they keep their fresh embeddings and a warning is returned.
/// Any other missing token is a compatibility error.
pub fn init_from_mlm(checkpoint: Option<&Path>, cfg: ModelConfig, vocab: Vocab) -> Result<(Seq2Seq, Vec<String>)> {
    let model = Seq2Seq::new(cfg, vocab)?;
    let mut warnings = Vec::new();
    let dir = match checkpoint {
        Some(d) if d.exists() => d,
        Some(d) => {
            warnings.push(format!("checkpoint {} not found; using random initialization", d.display()));
            return Ok((model, warnings));
        }
        None => {
            warnings.push("no checkpoint given; using random initialization".into());
            return Ok((model, warnings));
        }
    };
    let src_rows = read_token_rows(dir)?;
    let tensors = read_tensors(dir)?;

    let mut missing = Vec::new();
    let mut fresh = Vec::new();
    for tok in model.vocab.tokens() {
        if !src_rows.contains_key(tok) {
            if may_be_fresh(tok) {
                fresh.push(tok.clone());
            } else {
                missing.push(tok.clone());
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Compatibility(missing));
    }
    if !fresh.is_empty() {
        warnings.push(format!("initialized fresh embeddings for {}", fresh.join(", ")));
    }

    let src_word = tensors
        .get("embeddings.word")
        .ok_or_else(|| Error::Config("bundle lacks `embeddings.word`".into()))?;
    let table = src_word.to_vec2::<f32>()?;
    let mut ours = model.word.as_tensor().to_vec2::<f32>()?;
    if table.first().map(Vec::len) != Some(model.cfg.hidden_dim) {
        return Err(Error::Shape("bundle hidden size differs from the model".into()));
    }
    for (i, tok) in model.vocab.tokens().iter().enumerate() {
        if let Some(&j) = src_rows.get(tok) {
            let row = table
                .get(j)
                .ok_or_else(|| Error::Shape(format!("bundle vocabulary row {j} exceeds the embedding table")))?;
            ours[i] = row.clone();
        }
    }
    let (v, d) = (ours.len(), model.cfg.hidden_dim);
    model
        .word
        .set(&Tensor::from_vec(ours.concat(), (v, d), &Device::Cpu)?)?;

    let mut mapping: BTreeMap<String, String> = BTreeMap::new();
    for (name, _) in model.params.iter() {
        if name.starts_with("encoder.") {
            mapping.insert(name.clone(), name.clone());
        } else if let Some(rest) = name.strip_prefix("decoder.") {
            let src = if rest == "pos" || rest.starts_with("emb_ln") {
                Some(format!("encoder.{rest}"))
            } else if rest.contains(".cross_attn.") {
                None
            } else {
                Some(
                    format!("encoder.{rest}")
                        .replace(".self_attn.", ".attn.")
                        .replace(".ln3.", ".ln2."),
                )
            };
            if let Some(src) = src {
                mapping.insert(name.clone(), src);
            }
        }
    }
    for (dst, src) in mapping {
        let (Some(var), Some(t)) = (model.params.get(&dst), tensors.get(&src)) else {
            continue;
        };
        if t.dims() == var.dims() {
            var.set(&t.to_dtype(var.dtype())?)?;
        } else {
            warnings.push(format!("shape mismatch for `{src}`; keeping fresh `{dst}`"));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((model, warnings))
}
