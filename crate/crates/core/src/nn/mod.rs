//! Small neural-network toolkit on top of candle tensors: a named, deterministically
//! initialized parameter store and the pre-norm building blocks the planner uses.

pub mod ops;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LhpfError, Result};
use ops::{mask_to_bias, softmax_last};

pub const DTYPE: DType = DType::F64;

pub fn device() -> Device {
    Device::Cpu
}

#[derive(Debug, Clone)]
pub enum Init {
    Uniform(f64),
    Zeros,
    Ones,
    Values(Vec<f64>),
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a keeps initialization independent of creation order.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Named parameters. Each parameter is initialized from `seed` and its own name only.
#[derive(Clone)]
pub struct ParamStore {
    vars: Arc<Mutex<BTreeMap<String, Var>>>,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore { vars: Arc::new(Mutex::new(BTreeMap::new())), seed }
    }

    pub fn root(&self) -> Scope<'_> {
        Scope { store: self, prefix: String::new() }
    }

    fn get_or_init(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut vars = self.vars.lock().expect("param store poisoned");
        if let Some(v) = vars.get(name) {
            if v.dims() != shape {
                return Err(LhpfError::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let numel: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; numel],
            Init::Ones => vec![1.0; numel],
            Init::Uniform(bound) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
                (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::Values(v) => {
                if v.len() != numel {
                    return Err(LhpfError::InvalidArgument(format!("init for {name}: {} values for {numel}", v.len())));
                }
                v
            }
        };
        let var = Var::from_vec(data, shape, &device())?;
        let t = var.as_tensor().clone();
        vars.insert(name.to_string(), var);
        Ok(t)
    }

    /// All parameters sorted by name.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let vars = self.vars.lock().expect("param store poisoned");
        vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<(String, Var)> {
        self.named_vars().into_iter().filter(|(k, _)| k.starts_with(prefix)).collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.lock().expect("param store poisoned").get(name).cloned()
    }

    /// Overwrites an existing parameter in place, so every module holding it sees the change.
    pub fn assign(&self, name: &str, values: &Tensor) -> Result<()> {
        let var = self.get(name).ok_or_else(|| LhpfError::Checkpoint(format!("unknown parameter {name}")))?;
        if var.dims() != values.dims() {
            return Err(LhpfError::Checkpoint(format!(
                "shape mismatch for {name}: stored {:?}, given {:?}",
                var.dims(),
                values.dims()
            )));
        }
        var.set(&values.to_dtype(DTYPE)?)?;
        Ok(())
    }

    pub fn num_scalars(&self, prefix: &str) -> usize {
        self.vars_with_prefix(prefix).iter().map(|(_, v)| v.elem_count()).sum()
    }
}

#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, name: &str) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{}", self.prefix, name) };
        Scope { store: self.store, prefix }
    }

    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{}", self.prefix, name) };
        self.store.get_or_init(&full, shape, init)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}

/// Per-call forward state: train/eval switch, dropout randomness and an optional op trace.
pub struct ForwardCtx {
    pub train: bool,
    pub dropout: f64,
    rng: RefCell<ChaCha8Rng>,
    trace: RefCell<Option<Vec<String>>>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx { train: false, dropout: 0.0, rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)), trace: RefCell::new(None) }
    }

    pub fn train(dropout: f64, seed: u64) -> Self {
        ForwardCtx { train: true, dropout, rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)), trace: RefCell::new(None) }
    }

    pub fn with_trace(self) -> Self {
        *self.trace.borrow_mut() = Some(Vec::new());
        self
    }

    pub fn record(&self, label: impl Into<String>) {
        if let Some(t) = self.trace.borrow_mut().as_mut() {
            t.push(label.into());
        }
    }

    pub fn take_trace(&self) -> Vec<String> {
        self.trace.borrow_mut().as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Bernoulli(keep) draws, one per element of `shape`.
    pub fn keep_mask(&self, shape: &[usize], drop_prob: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let keep = 1.0 - drop_prob;
        let mut rng = self.rng.borrow_mut();
        let data: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 } else { 0.0 }).collect();
        Ok(Tensor::from_vec(data, shape, &device())?)
    }

    pub fn dropout(&self, x: &Tensor) -> Result<Tensor> {
        if !self.train || self.dropout <= 0.0 {
            return Ok(x.clone());
        }
        let mask = self.keep_mask(x.dims(), self.dropout)?;
        Ok((x * mask)?.affine(1.0 / (1.0 - self.dropout), 0.0)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(scope: &Scope, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = scope.get("weight", &[out_dim, in_dim], Init::Uniform(bound))?;
        let bias = scope.get("bias", &[out_dim], Init::Uniform(bound))?;
        Ok(Linear { weight, bias: Some(bias) })
    }

    pub fn with_init(scope: &Scope, in_dim: usize, out_dim: usize, weight: Init, bias: Init) -> Result<Self> {
        let weight = scope.get("weight", &[out_dim, in_dim], weight)?;
        let bias = scope.get("bias", &[out_dim], bias)?;
        Ok(Linear { weight, bias: Some(bias) })
    }

    pub fn no_bias(scope: &Scope, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = scope.get("weight", &[out_dim, in_dim], Init::Uniform(bound))?;
        Ok(Linear { weight, bias: None })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.contiguous()?.broadcast_matmul(&self.weight.t()?)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(scope: &Scope, dim: usize) -> Result<Self> {
        Ok(LayerNorm { gamma: scope.get("gamma", &[dim], Init::Ones)?, beta: scope.get("beta", &[dim], Init::Zeros)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Two linear layers with a GELU between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(scope: &Scope, in_dim: usize, hidden: usize, out_dim: usize) -> Result<Self> {
        Ok(Mlp { fc1: Linear::new(&scope.pp("fc1"), in_dim, hidden)?, fc2: Linear::new(&scope.pp("fc2"), hidden, out_dim)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(scope: &Scope, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(LhpfError::InvalidArgument(format!("hidden dim {dim} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(&scope.pp("q"), dim, dim)?,
            k: Linear::new(&scope.pp("k"), dim, dim)?,
            v: Linear::new(&scope.pp("v"), dim, dim)?,
            o: Linear::new(&scope.pp("o"), dim, dim)?,
            heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (n, l, d) = x.dims3()?;
        Ok(x.reshape((n, l, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `query` `[N, Lq, D]` attends over `kv` `[N, Lk, D]`; `key_mask` `[N, Lk]` holds 1 for usable keys.
    pub fn forward(&self, query: &Tensor, kv: &Tensor, key_mask: Option<&Tensor>) -> Result<Tensor> {
        let (n, lq, d) = query.dims3()?;
        let q = self.split_heads(&self.q.forward(query)?)?;
        let k = self.split_heads(&self.k.forward(kv)?)?;
        let v = self.split_heads(&self.v.forward(kv)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let mut scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?;
        if let Some(mask) = key_mask {
            let lk = mask.dim(1)?;
            let bias = mask_to_bias(mask)?.reshape((n, 1, 1, lk))?;
            scores = scores.broadcast_add(&bias)?;
        }
        let attn = softmax_last(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((n, lq, d))?;
        self.o.forward(&out)
    }
}

/// Pre-norm self-attention with residual.
#[derive(Debug, Clone)]
pub struct SelfAttentionBlock {
    norm: LayerNorm,
    attn: MultiHeadAttention,
}

impl SelfAttentionBlock {
    pub fn new(scope: &Scope, dim: usize, heads: usize) -> Result<Self> {
        Ok(SelfAttentionBlock { norm: LayerNorm::new(&scope.pp("norm"), dim)?, attn: MultiHeadAttention::new(&scope.pp("attn"), dim, heads)? })
    }

    pub fn forward(&self, x: &Tensor, key_mask: Option<&Tensor>, ctx: &ForwardCtx) -> Result<Tensor> {
        let h = self.norm.forward(x)?;
        let a = self.attn.forward(&h, &h, key_mask)?;
        Ok((x + ctx.dropout(&a)?)?)
    }
}

/// Pre-norm feed-forward with residual.
#[derive(Debug, Clone)]
pub struct FeedForwardBlock {
    norm: LayerNorm,
    mlp: Mlp,
}

impl FeedForwardBlock {
    pub fn new(scope: &Scope, dim: usize) -> Result<Self> {
        Ok(FeedForwardBlock { norm: LayerNorm::new(&scope.pp("norm"), dim)?, mlp: Mlp::new(&scope.pp("mlp"), dim, 4 * dim, dim)? })
    }

    pub fn forward(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let h = self.mlp.forward(&self.norm.forward(x)?)?;
        Ok((x + ctx.dropout(&h)?)?)
    }
}

/// Pre-norm cross-attention followed by a feed-forward block.
#[derive(Debug, Clone)]
pub struct CrossAttentionBlock {
    norm: LayerNorm,
    attn: MultiHeadAttention,
    ffn: FeedForwardBlock,
}

impl CrossAttentionBlock {
    pub fn new(scope: &Scope, dim: usize, heads: usize) -> Result<Self> {
        Ok(CrossAttentionBlock {
            norm: LayerNorm::new(&scope.pp("norm"), dim)?,
            attn: MultiHeadAttention::new(&scope.pp("attn"), dim, heads)?,
            ffn: FeedForwardBlock::new(&scope.pp("ffn"), dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor, memory: &Tensor, memory_mask: Option<&Tensor>, ctx: &ForwardCtx) -> Result<Tensor> {
        let h = self.norm.forward(x)?;
        let a = self.attn.forward(&h, memory, memory_mask)?;
        let x = (x + ctx.dropout(&a)?)?;
        self.ffn.forward(&x, ctx)
    }
}

/// Turns a nested f64 buffer into a tensor of `shape`.
pub fn tensor_from(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, shape, &device())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent() {
        let a = ParamStore::new(7);
        let b = ParamStore::new(7);
        let wa1 = a.root().get("x.w", &[3, 2], Init::Uniform(1.0)).unwrap();
        let _ = a.root().get("y.w", &[4], Init::Uniform(1.0)).unwrap();
        let _ = b.root().get("y.w", &[4], Init::Uniform(1.0)).unwrap();
        let wb1 = b.root().get("x.w", &[3, 2], Init::Uniform(1.0)).unwrap();
        assert_eq!(wa1.to_vec2::<f64>().unwrap(), wb1.to_vec2::<f64>().unwrap());
    }

    #[test]
    fn assign_updates_shared_tensors() {
        let store = ParamStore::new(1);
        let lin = Linear::new(&store.root().pp("lin"), 2, 1).unwrap();
        store.assign("lin.weight", &Tensor::new(&[[2.0f64, 3.0]], &device()).unwrap()).unwrap();
        store.assign("lin.bias", &Tensor::new(&[1.0f64], &device()).unwrap()).unwrap();
        let y = lin.forward(&Tensor::new(&[[1.0f64, 1.0]], &device()).unwrap()).unwrap();
        assert_eq!(y.to_vec2::<f64>().unwrap(), vec![vec![6.0]]);
    }

    #[test]
    fn masked_key_equals_absent_key() {
        let store = ParamStore::new(3);
        let mha = MultiHeadAttention::new(&store.root().pp("mha"), 8, 2).unwrap();
        let q = Tensor::randn(0.0f64, 1.0, (1, 2, 8), &device()).unwrap();
        let kv = Tensor::randn(0.0f64, 1.0, (1, 3, 8), &device()).unwrap();
        let mask = Tensor::new(&[[1.0f64, 0.0, 1.0]], &device()).unwrap();
        let masked = mha.forward(&q, &kv, Some(&mask)).unwrap();
        let kv2 = Tensor::cat(&[kv.narrow(1, 0, 1).unwrap(), kv.narrow(1, 2, 1).unwrap()], 1).unwrap();
        let absent = mha.forward(&q, &kv2, None).unwrap();
        let diff = (masked - absent).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12);
    }
}
