use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Named trainable tensors, iterated in name order so that initialization,
/// optimizer updates and serialization are reproducible.
#[derive(Debug, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| (standard_normal(rng) * std) as f32).collect();
        self.insert(name, Tensor::from_vec(data, shape, &Device::Cpu)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.insert(name, Tensor::from_vec(vec![value; n], shape, &Device::Cpu)?)
    }

    fn insert(&mut self, name: &str, t: Tensor) -> Result<Var> {
        let var = Var::from_tensor(&t)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }
}

/// Box–Muller on the run's own generator.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `x @ w + b` over the last dimension; `w` is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Linear {
            w: ps.normal(&format!("{name}.weight"), &[d_in, d_out], std, rng)?,
            b: ps.constant(&format!("{name}.bias"), &[d_out], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("non-scalar input");
        let rows = x.elem_count() / d_in;
        let y = x.reshape((rows, d_in))?.matmul(self.w.as_tensor())?;
        let y = y.broadcast_add(self.b.as_tensor())?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.w.dim(1)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Var,
    pub beta: Var,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: ps.constant(&format!("{name}.gamma"), &[d], 1.0)?,
            beta: ps.constant(&format!("{name}.beta"), &[d], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xn
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Attention {
            q: Linear::new(ps, &format!("{name}.q"), d, d, std, rng)?,
            k: Linear::new(ps, &format!("{name}.k"), d, d, std, rng)?,
            v: Linear::new(ps, &format!("{name}.v"), d, d, std, rng)?,
            o: Linear::new(ps, &format!("{name}.o"), d, d, std, rng)?,
            heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, d / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// `bias` is added to the `[B, H, Tq, Tk]` scores and must broadcast to
    /// that shape; masked positions carry a large negative value.
    pub fn forward(&self, xq: &Tensor, xkv: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (b, tq, d) = xq.dims3()?;
        let dh = d / self.heads;
        let q = self.split_heads(&self.q.forward(xq)?)?;
        let k = self.split_heads(&self.k.forward(xkv)?)?;
        let v = self.split_heads(&self.v.forward(xkv)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (dh as f64).sqrt()))?;
        let att = candle_nn::ops::softmax(&scores.broadcast_add(bias)?, D::Minus1)?;
        let ctx = att
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, tq, d))?;
        self.o.forward(&ctx)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, ffn: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(ps, &format!("{name}.up"), d, ffn, std, rng)?,
            down: Linear::new(ps, &format!("{name}.down"), ffn, d, std, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu()?)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn: Attention,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, ffn: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(EncoderLayer {
            attn: Attention::new(ps, &format!("{name}.attn"), d, heads, std, rng)?,
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d)?,
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), d, ffn, std, rng)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d)?,
        })
    }

    pub fn forward(&self, x: &Tensor, key_bias: &Tensor) -> Result<Tensor> {
        let x = self.ln1.forward(&(x + self.attn.forward(x, x, key_bias)?)?)?;
        self.ln2.forward(&(&x + self.ffn.forward(&x)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    pub ln1: LayerNorm,
    pub cross_attn: Attention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
    pub ln3: LayerNorm,
}

impl DecoderLayer {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, ffn: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(DecoderLayer {
            self_attn: Attention::new(ps, &format!("{name}.self_attn"), d, heads, std, rng)?,
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d)?,
            cross_attn: Attention::new(ps, &format!("{name}.cross_attn"), d, heads, std, rng)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d)?,
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), d, ffn, std, rng)?,
            ln3: LayerNorm::new(ps, &format!("{name}.ln3"), d)?,
        })
    }

    pub fn forward(&self, x: &Tensor, self_bias: &Tensor, memory: &Tensor, memory_bias: &Tensor) -> Result<Tensor> {
        let x = self.ln1.forward(&(x + self.self_attn.forward(x, x, self_bias)?)?)?;
        let x = self.ln2.forward(&(&x + self.cross_attn.forward(&x, memory, memory_bias)?)?)?;
        self.ln3.forward(&(&x + self.ffn.forward(&x)?)?)
    }
}

pub const MASKED: f32 = -1e9;

/// `[B, 1, 1, S]` additive bias hiding padded keys.
pub fn key_padding_bias(lens: &[usize], max_len: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(lens.len() * max_len);
    for &l in lens {
        data.extend((0..max_len).map(|j| if j < l { 0.0 } else { MASKED }));
    }
    Ok(Tensor::from_vec(data, (lens.len(), 1, 1, max_len), &Device::Cpu)?)
}

/// `[1, 1, T, T]` additive bias hiding future positions.
pub fn causal_bias(t: usize) -> Result<Tensor> {
    let data: Vec<f32> = (0..t)
        .flat_map(|i| (0..t).map(move |j| if j <= i { 0.0 } else { MASKED }))
        .collect();
    Ok(Tensor::from_vec(data, (1, 1, t, t), &Device::Cpu)?)
}

/// `[B, T]` float mask with ones on the given `[start, end)` range per row.
pub fn range_mask(ranges: &[(usize, usize)], max_len: usize, dtype: DType) -> Result<Tensor> {
    let mut data = Vec::with_capacity(ranges.len() * max_len);
    for &(s, e) in ranges {
        data.extend((0..max_len).map(|j| if j >= s && j < e { 1f32 } else { 0.0 }));
    }
    Ok(Tensor::from_vec(data, (ranges.len(), max_len), &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn layer_norm_normalizes_rows() {
        let mut ps = ParamStore::new();
        let ln = LayerNorm::new(&mut ps, "ln", 4).unwrap();
        let x = Tensor::new(&[[1f32, 2., 3., 4.], [10., 10., 10., 14.]], &Device::Cpu).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f32>().unwrap();
        for row in y {
            let mean: f32 = row.iter().sum::<f32>() / 4.0;
            let var: f32 = row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 4.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn linear_matches_manual_product() {
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::new(&mut ps, "l", 3, 2, 1.0, &mut rng).unwrap();
        let x = Tensor::new(&[[[1f32, -1., 0.5]]], &Device::Cpu).unwrap();
        let y = lin.forward(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let w = lin.w.as_tensor().to_vec2::<f32>().unwrap();
        for j in 0..2 {
            let expect = w[0][j] - w[1][j] + 0.5 * w[2][j];
            assert!((y[j] - expect).abs() < 1e-5);
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let build = || {
            let mut ps = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            ps.normal("w", &[4, 4], 0.02, &mut rng).unwrap();
            ps.tensors()["w"].flatten_all().unwrap().to_vec1::<f32>().unwrap()
        };
        assert_eq!(build(), build());
    }
}
