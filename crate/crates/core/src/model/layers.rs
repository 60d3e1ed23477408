//! Parameterized building blocks evaluated on a [`Graph`].

use std::collections::HashMap;

use crate::tensor::{Axis, Graph, Init, ParamId, ParamStore, TensorError, Var};

/// A graph plus the parameter store it reads, with each parameter placed on
/// the tape at most once.
pub struct Ctx<'g, 's> {
    pub g: &'g mut Graph,
    store: &'s ParamStore,
    placed: HashMap<ParamId, Var>,
}

impl<'g, 's> Ctx<'g, 's> {
    pub fn new(g: &'g mut Graph, store: &'s ParamStore) -> Self {
        Self { g, store, placed: HashMap::new() }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.placed.get(&id) {
            return v;
        }
        let v = self.g.param(self.store, id);
        self.placed.insert(id, v);
        v
    }
}

/// Registers parameters under a common name prefix.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub seed: u64,
    pub std: f64,
}

impl Builder<'_> {
    pub fn weight(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, TensorError> {
        self.store.register(name, shape, Init::TruncatedNormal { std: self.std }, self.seed)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, TensorError> {
        self.store.register(name, shape, Init::Zeros, self.seed)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, TensorError> {
        self.store.register(name, shape, Init::Ones, self.seed)
    }

    pub fn linear(&mut self, name: &str, inp: usize, out: usize) -> Result<Linear, TensorError> {
        Ok(Linear {
            w: self.store.register(
                &format!("{name}.weight"),
                &[inp, out],
                Init::XavierUniform { fan_in: inp, fan_out: out },
                self.seed,
            )?,
            b: self.zeros(&format!("{name}.bias"), &[1, out])?,
        })
    }

    pub fn norm(&mut self, name: &str, dim: usize) -> Result<Norm, TensorError> {
        Ok(Norm {
            gain: self.ones(&format!("{name}.gain"), &[1, dim])?,
            bias: self.zeros(&format!("{name}.bias"), &[1, dim])?,
        })
    }

    pub fn block(&mut self, name: &str, dim: usize, hidden: usize, heads: usize) -> Result<Block, TensorError> {
        Ok(Block {
            ln1: self.norm(&format!("{name}.ln1"), dim)?,
            qkv: self.linear(&format!("{name}.attn.qkv"), dim, 3 * dim)?,
            proj: self.linear(&format!("{name}.attn.proj"), dim, dim)?,
            ln2: self.norm(&format!("{name}.ln2"), dim)?,
            fc1: self.linear(&format!("{name}.mlp.fc1"), dim, hidden)?,
            fc2: self.linear(&format!("{name}.mlp.fc2"), hidden, dim)?,
            heads,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var, TensorError> {
        let (w, b) = (cx.p(self.w), cx.p(self.b));
        cx.g.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn forward(&self, cx: &mut Ctx, x: Var, eps: f64) -> Result<Var, TensorError> {
        let (g, b) = (cx.p(self.gain), cx.p(self.bias));
        cx.g.layer_norm(x, g, b, eps)
    }
}

/// Scaled dot-product attention of `q` over `k`/`v` rows, softmax across keys.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, scale: f64) -> Result<Var, TensorError> {
    let kt = g.transpose(k);
    let s = g.matmul(q, kt)?;
    let s = g.scale(s, scale);
    let a = g.softmax(s, Axis::Cols);
    g.matmul(a, v)
}

/// Pre-norm transformer block with multi-head self-attention and a GELU MLP.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: Norm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub heads: usize,
}

impl Block {
    pub fn forward(&self, cx: &mut Ctx, x: Var, eps: f64) -> Result<Var, TensorError> {
        let d = cx.g.value(x).cols();
        let dh = d / self.heads;
        let h = self.ln1.forward(cx, x, eps)?;
        let qkv = self.qkv.forward(cx, h)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let q = cx.g.slice(qkv, Axis::Cols, i * dh, (i + 1) * dh)?;
            let k = cx.g.slice(qkv, Axis::Cols, d + i * dh, d + (i + 1) * dh)?;
            let v = cx.g.slice(qkv, Axis::Cols, 2 * d + i * dh, 2 * d + (i + 1) * dh)?;
            outs.push(attention(cx.g, q, k, v, scale)?);
        }
        let o = if outs.len() == 1 { outs[0] } else { cx.g.concat(&outs, Axis::Cols)? };
        let o = self.proj.forward(cx, o)?;
        let x = cx.g.add(x, o)?;
        let h = self.ln2.forward(cx, x, eps)?;
        let h = self.fc1.forward(cx, h)?;
        let h = cx.g.gelu(h);
        let h = self.fc2.forward(cx, h)?;
        cx.g.add(x, h)
    }
}
