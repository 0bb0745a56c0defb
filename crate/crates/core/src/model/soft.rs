//! Gumbel-Softmax relaxation of decoder distributions and the soft response
//! representation `r = P̃ V`.

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;

use super::DecoderDistribution;
use crate::error::{Error, Result};

/// Standard Gumbel noise `-ln(-ln u)` with `u` uniform on the open interval.
pub fn gumbel_noise<R: Rng>(shape: &[usize], dtype: DType, rng: &mut R) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let u = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
            -(-u.ln()).ln()
        })
        .collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// `softmax((logits + noise) / temperature)` over the last dimension. With
/// `hard`, the forward value is the one-hot argmax while gradients follow the
/// soft sample.
pub fn gumbel_softmax(logits: &Tensor, noise: &Tensor, temperature: f64, hard: bool) -> Result<Tensor> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let y = candle_nn::ops::softmax(&((logits + noise)? / temperature)?, D::Minus1)?;
    if !hard {
        return Ok(y);
    }
    let v = y.dim(D::Minus1)?;
    let idx = y.argmax_keepdim(D::Minus1)?;
    let classes = Tensor::arange(0u32, v as u32, &Device::Cpu)?;
    let one_hot = idx.broadcast_eq(&classes)?.to_dtype(y.dtype())?;
    Ok(((one_hot - y.detach())? + &y)?)
}

/// Soft Gumbel-Softmax sample of a decoder distribution, with fresh noise.
pub fn gumbel_sample<R: Rng>(dist: &DecoderDistribution, temperature: f64, rng: &mut R) -> Result<Tensor> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let noise = gumbel_noise(dist.logits.dims(), dist.logits.dtype(), rng)?;
    gumbel_softmax(&dist.logits, &noise, temperature, false)
}

/// Returns `(r, r̃)`: `r = P̃ V` with shape `[t, d]` and its row mean.
pub fn soft_response_repr(p_tilde: &Tensor, table: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, v) = p_tilde.dims2()?;
    let (rows, _) = table.dims2()?;
    if v != rows {
        return Err(Error::Shape(format!(
            "distribution has {v} columns but the embedding table has {rows} rows"
        )));
    }
    let r = p_tilde.matmul(table)?;
    let mean = r.mean(0)?;
    Ok((r, mean))
}
