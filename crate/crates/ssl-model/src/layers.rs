use autodiff_core::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelResult;

/// Registers parameters in a store with seeded initial values.
pub struct Init<'s> {
    pub store: &'s mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'s> Init<'s> {
    pub fn new(store: &'s mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn add(&mut self, name: &str, t: Tensor) -> ModelResult<ParamId> {
        Ok(self.store.add(name, t, true)?)
    }

    /// Uniform in `+-sqrt(6 / (rows + cols))`.
    pub fn glorot(&mut self, name: &str, rows: usize, cols: usize) -> ModelResult<ParamId> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let rng = &mut self.rng;
        let t = Tensor::from_fn(rows, cols, |_, _| rng.random_range(-a..a));
        self.add(name, t)
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, a: f64) -> ModelResult<ParamId> {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(rows, cols, |_, _| rng.random_range(-a..a));
        self.add(name, t)
    }

    pub fn full(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> ModelResult<ParamId> {
        self.add(name, Tensor::full(rows, cols, v))
    }
}

/// `x w + b` for row-major `x` of shape `n x in`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, input: usize, output: usize) -> ModelResult<Self> {
        Ok(Self {
            w: init.glorot(&format!("{name}.w"), input, output)?,
            b: init.full(&format!("{name}.b"), 1, output, 0.0)?,
        })
    }

    /// Both weights and bias start at zero, so the layer first outputs 0.
    pub fn zeroed(init: &mut Init, name: &str, input: usize, output: usize) -> ModelResult<Self> {
        Ok(Self {
            w: init.full(&format!("{name}.w"), input, output, 0.0)?,
            b: init.full(&format!("{name}.b"), 1, output, 0.0)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> ModelResult<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        Ok(tape.linear(x, w, b)?)
    }
}

/// Two linear layers with a GELU between them.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new(init: &mut Init, name: &str, input: usize, hidden: usize, output: usize) -> ModelResult<Self> {
        Ok(Self {
            first: Linear::new(init, &format!("{name}.0"), input, hidden)?,
            second: Linear::new(init, &format!("{name}.1"), hidden, output)?,
        })
    }

    /// Output layer zero-initialized.
    pub fn with_zero_head(
        init: &mut Init,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
    ) -> ModelResult<Self> {
        Ok(Self {
            first: Linear::new(init, &format!("{name}.0"), input, hidden)?,
            second: Linear::zeroed(init, &format!("{name}.1"), hidden, output)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> ModelResult<Var> {
        let h = self.first.forward(tape, x)?;
        let h = tape.gelu(h)?;
        self.second.forward(tape, h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> ModelResult<Self> {
        Ok(Self {
            gain: init.full(&format!("{name}.gain"), 1, dim, 1.0)?,
            bias: init.full(&format!("{name}.bias"), 1, dim, 0.0)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> ModelResult<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        Ok(tape.layer_norm_rows(x, g, b)?)
    }
}

/// Multi-head attention with bias-free projections `W_q`, `W_k`, `W_v` and
/// an output projection `W_o` over the concatenated heads.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl Attention {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize) -> ModelResult<Self> {
        Ok(Self {
            wq: init.glorot(&format!("{name}.wq"), dim, dim)?,
            wk: init.glorot(&format!("{name}.wk"), dim, dim)?,
            wv: init.glorot(&format!("{name}.wv"), dim, dim)?,
            wo: init.glorot(&format!("{name}.wo"), dim, dim)?,
            heads,
        })
    }

    /// `softmax(q k^T / sqrt(d_k)) v` per head, with `q` projected from
    /// `queries` and `k`, `v` from `keys`. With `top_t`, each query keeps only
    /// its `top_t` largest weights, renormalized; `top_t` above the key count
    /// is clamped to it.
    pub fn forward(&self, tape: &mut Tape, queries: Var, keys: Var, top_t: Option<usize>) -> ModelResult<Var> {
        let (wq, wk, wv, wo) = (
            tape.param(self.wq),
            tape.param(self.wk),
            tape.param(self.wv),
            tape.param(self.wo),
        );
        let q = tape.matmul(queries, wq)?;
        let k = tape.matmul(keys, wk)?;
        let v = tape.matmul(keys, wv)?;
        let dim = tape.shape(q).1;
        let num_keys = tape.shape(k).0;
        let dk = dim / self.heads;
        let keep = top_t.map(|t| {
            if t > num_keys {
                log::debug!("top_t {t} clamped to {num_keys} keys");
            }
            t.min(num_keys)
        });
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dk, (h + 1) * dk)?;
            let kh = tape.slice_cols(k, h * dk, (h + 1) * dk)?;
            let vh = tape.slice_cols(v, h * dk, (h + 1) * dk)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let weights = match keep {
                Some(t) => tape.topk_softmax_rows(scores, t)?,
                None => tape.softmax_rows(scores)?,
            };
            outs.push(tape.matmul(weights, vh)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        Ok(tape.matmul(joined, wo)?)
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp2,
}

impl Block {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize, hidden: usize) -> ModelResult<Self> {
        Ok(Self {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim)?,
            attn: Attention::new(init, &format!("{name}.attn"), dim, heads)?,
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim)?,
            mlp: Mlp2::new(init, &format!("{name}.mlp"), dim, hidden, dim)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> ModelResult<Var> {
        let h = self.ln1.forward(tape, x)?;
        let a = self.attn.forward(tape, h, h, None)?;
        let x = tape.add(x, a)?;
        let h = self.ln2.forward(tape, x)?;
        let m = self.mlp.forward(tape, h)?;
        Ok(tape.add(x, m)?)
    }
}
