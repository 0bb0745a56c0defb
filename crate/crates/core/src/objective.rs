//! Loss terms: mean-cosine contrastive losses for the encoder and decoder,
//! the generation cross-entropy and their combination.
//!
//! The combined loss is `l_g + s * (l_n_e + l_n_d - l_p_d - l_p_e)` with
//! `s = 1 / (4 t_avg)` unless a scale override is configured.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DecoderDistribution;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_p_e: f64,
    pub l_n_e: f64,
    pub l_p_d: f64,
    pub l_n_d: f64,
    pub l_g: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Fills `total` from the other fields.
    pub fn with_total(mut self, t_avg: f64, scale_override: Option<f64>) -> Result<Self> {
        self.total = total_loss(&self, t_avg, scale_override)?;
        Ok(self)
    }

    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("l_p_e", self.l_p_e),
            ("l_n_e", self.l_n_e),
            ("l_p_d", self.l_p_d),
            ("l_n_d", self.l_n_d),
            ("l_g", self.l_g),
            ("total", self.total),
        ]
    }
}

/// Multiplier of the contrastive block: the override if given, else
/// `1 / (4 t_avg)`.
pub fn contrastive_scale(t_avg: f64, scale_override: Option<f64>) -> Result<f64> {
    if !(t_avg > 0.0) || !t_avg.is_finite() {
        return Err(Error::Config(format!("t_avg must be positive, got {t_avg}")));
    }
    Ok(scale_override.unwrap_or(1.0 / (4.0 * t_avg)))
}

/// `l_g + scale * (l_n_e + l_n_d - l_p_d - l_p_e)`; `parts.total` is ignored.
pub fn total_loss(parts: &LossBreakdown, t_avg: f64, scale_override: Option<f64>) -> Result<f64> {
    let s = contrastive_scale(t_avg, scale_override)?;
    Ok(parts.l_g + s * (parts.l_n_e + parts.l_n_d - parts.l_p_d - parts.l_p_e))
}

/// Rows of `x` scaled to unit length. Any zero row is an error.
fn unit_rows(x: &Tensor) -> Result<Tensor> {
    let norms = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let min = norms.flatten_all()?.to_dtype(DType::F64)?.min(0)?.to_scalar::<f64>()?;
    if !(min > 0.0) {
        return Err(Error::Degenerate("zero vector in a contrastive set".into()));
    }
    Ok(x.broadcast_div(&norms)?)
}

fn to_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("vectors differ in dimension".into()));
    }
    Ok(Tensor::from_vec(rows.concat(), (rows.len(), d), &Device::Cpu)?)
}

/// Strictly lower triangular ones, `[n, n]`.
fn lower_mask(n: usize, dtype: DType) -> Result<Tensor> {
    let data: Vec<f64> = (0..n * n).map(|k| ((k / n) > (k % n)) as u8 as f64).collect();
    Ok(Tensor::from_vec(data, (n, n), &Device::Cpu)?.to_dtype(dtype)?)
}

/// `(1/n) Σ_{i>j} cos(reps_i, reps_j)` for `reps` of shape `[n, d]`,
/// returned as a scalar tensor.
pub fn positive_alignment_t(reps: &Tensor) -> Result<Tensor> {
    Ok(positive_alignment_batched(&reps.unsqueeze(0)?)?.squeeze(0)?)
}

/// Batched [`positive_alignment_t`]: `[B, n, d] -> [B]`.
pub fn positive_alignment_batched(reps: &Tensor) -> Result<Tensor> {
    let (_, n, _) = reps.dims3()?;
    if n < 2 {
        return Err(Error::Degenerate(format!("positive alignment needs at least 2 vectors, got {n}")));
    }
    let u = unit_rows(reps)?;
    let cos = u.matmul(&u.transpose(1, 2)?.contiguous()?)?;
    let mask = lower_mask(n, reps.dtype())?;
    Ok((cos.broadcast_mul(&mask)?.sum((1, 2))? / n as f64)?)
}

/// `(1/n) Σ_i Σ_j cos(reps_i, negatives_j)` for `[n, d]` and `[m, d]`
/// inputs. With `normalize`, the inner sum is divided by `m`.
pub fn negative_contrast_t(reps: &Tensor, negatives: &Tensor, normalize: bool) -> Result<Tensor> {
    let (n, _) = reps.dims2()?;
    let (m, _) = negatives.dims2()?;
    if n == 0 {
        return Err(Error::Degenerate("negative contrast needs at least one vector".into()));
    }
    if m == 0 {
        return Err(Error::Degenerate("no negatives: the batch needs at least 2 examples".into()));
    }
    let cos = unit_rows(reps)?.matmul(&unit_rows(negatives)?.t()?)?;
    let denom = if normalize { (n * m) as f64 } else { n as f64 };
    Ok((cos.sum_all()? / denom)?)
}

/// In-batch negatives: entry `b` of `reps` (`[B, n, d]`) is contrasted with
/// every row of `pool` (`[B, d]`) except row `b`. Returns `[B]`.
pub fn negative_contrast_in_batch(reps: &Tensor, pool: &Tensor, normalize: bool) -> Result<Tensor> {
    let (b, n, _) = reps.dims3()?;
    if b < 2 {
        return Err(Error::Degenerate("no negatives: the batch needs at least 2 examples".into()));
    }
    let u = unit_rows(reps)?;
    let p = unit_rows(pool)?;
    let (pb, d) = p.dims2()?;
    if pb != b {
        return Err(Error::Shape(format!("{pb} negatives for a batch of {b}")));
    }
    let cos = u.reshape((b * n, d))?.matmul(&p.t()?)?.reshape((b, n, b))?;
    let keep: Vec<f64> = (0..b * b).map(|k| ((k / b) != (k % b)) as u8 as f64).collect();
    let keep = Tensor::from_vec(keep, (b, 1, b), &Device::Cpu)?.to_dtype(reps.dtype())?;
    let denom = if normalize { (n * (b - 1)) as f64 } else { n as f64 };
    Ok((cos.broadcast_mul(&keep)?.sum((1, 2))? / denom)?)
}

/// Plain-vector form of [`positive_alignment_t`].
pub fn positive_alignment(reps: &[Vec<f64>]) -> Result<f64> {
    if reps.len() < 2 {
        return Err(Error::Degenerate(format!(
            "positive alignment needs at least 2 vectors, got {}",
            reps.len()
        )));
    }
    Ok(positive_alignment_t(&to_tensor(reps)?)?.to_scalar::<f64>()?)
}

/// Plain-vector form of [`negative_contrast_t`] without normalization.
pub fn negative_contrast(reps: &[Vec<f64>], negatives: &[Vec<f64>]) -> Result<f64> {
    if reps.is_empty() {
        return Err(Error::Degenerate("negative contrast needs at least one vector".into()));
    }
    if negatives.is_empty() {
        return Err(Error::Degenerate("no negatives: the batch needs at least 2 examples".into()));
    }
    Ok(negative_contrast_t(&to_tensor(reps)?, &to_tensor(negatives)?, false)?.to_scalar::<f64>()?)
}

/// Summed teacher-forced negative log-likelihood per sequence. Target token
/// `j` of sequence `i` is scored at row `offset + j` of `logits[i]`
/// (`[N, T, v]`). Returns `[N]`.
pub fn sequence_nll(logits: &Tensor, targets: &[Vec<u32>], offset: usize) -> Result<Tensor> {
    let (n, t, _) = logits.dims3()?;
    if targets.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} sequences", targets.len())));
    }
    let mut idx = vec![0u32; n * t];
    let mut mask = vec![0f32; n * t];
    for (i, tgt) in targets.iter().enumerate() {
        if offset + tgt.len() > t {
            return Err(Error::Shape(format!(
                "target of length {} does not fit {t} decoder rows at offset {offset}",
                tgt.len()
            )));
        }
        for (j, &tok) in tgt.iter().enumerate() {
            idx[i * t + offset + j] = tok;
            mask[i * t + offset + j] = 1.0;
        }
    }
    let idx = Tensor::from_vec(idx, (n, t, 1), &Device::Cpu)?;
    let mask = Tensor::from_vec(mask, (n, t), &Device::Cpu)?.to_dtype(logits.dtype())?;
    let lp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = lp.gather(&idx, 2)?.squeeze(2)?;
    Ok((picked * mask)?.sum(1)?.neg()?)
}

/// Mean over views of the summed per-step cross-entropy. Each distribution
/// must have exactly one row per target token.
pub fn generation_loss(views: &[DecoderDistribution], targets: &[Vec<u32>]) -> Result<Tensor> {
    if views.is_empty() || views.len() != targets.len() {
        return Err(Error::Shape(format!("{} distributions for {} targets", views.len(), targets.len())));
    }
    let mut total: Option<Tensor> = None;
    for (dist, tgt) in views.iter().zip(targets) {
        if dist.steps() != tgt.len() {
            return Err(Error::Shape(format!(
                "distribution has {} steps but the target has {} tokens",
                dist.steps(),
                tgt.len()
            )));
        }
        let nll = sequence_nll(&dist.logits.unsqueeze(0)?, std::slice::from_ref(tgt), 0)?.squeeze(0)?;
        total = Some(match total {
            Some(acc) => (acc + nll)?,
            None => nll,
        });
    }
    Ok((total.unwrap() / views.len() as f64)?)
}
