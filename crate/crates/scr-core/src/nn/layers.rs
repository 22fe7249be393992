//! Named parameters and the layer building blocks used by every model.
//!
//! Parameters live in a [`ParamSet`] keyed by dotted names ("unet.down1.wq").
//! Layers hold [`ParamId`] handles plus geometry and build their forward
//! passes on a [`Tape`]. Checkpoints serialize the name to tensor mapping,
//! and optimizers select trainable subsets by name prefix.

use std::collections::HashMap;

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::{NnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, u32>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Registers a parameter. Names are unique; a duplicate is a bug in
    /// model construction, not a runtime condition.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name '{name}'"
        );
        let id = ParamId(self.params.len() as u32);
        self.index.insert(name.clone(), id.0);
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        id
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.index()]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len() as u32).map(ParamId)
    }

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| self.get(id).name.starts_with(prefix))
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Total scalar count across all parameters.
    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, rng: &mut impl Rng, name: &str, din: usize, dout: usize, bias: bool) -> Self {
        let std = (1.0 / din as f32).sqrt();
        Self::with_std(ps, rng, name, din, dout, bias, std)
    }

    pub fn with_std(
        ps: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
        std: f32,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), Tensor::randn(&[din, dout], std, rng));
        let b = bias.then(|| ps.add(format!("{name}.b"), Tensor::zeros(&[dout])));
        Linear { w, b, din, dout }
    }

    /// Applies to `[..., din]`, preserving leading dimensions.
    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> Result<Var> {
        let shape = t.val(x).shape().to_vec();
        if shape.last() != Some(&self.din) {
            return Err(NnError::shapes("linear", &shape, &[self.din, self.dout]));
        }
        let rows = t.val(x).len() / self.din;
        let flat = t.reshape(x, &[rows, self.din])?;
        let w = t.param(ps, self.w);
        let mut y = t.matmul(flat, w, false)?;
        if let Some(b) = self.b {
            let bv = t.param(ps, b);
            y = t.add_bias(y, bv)?;
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = self.dout;
        t.reshape(y, &oshape)
    }
}

pub struct Conv2dLayer {
    pub k: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let std = (2.0 / (kh * kw * cin) as f32).sqrt();
        let k = ps.add(format!("{name}.k"), Tensor::randn(&[kh, kw, cin, cout], std, rng));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Conv2dLayer { k, b, stride, pad }
    }

    /// Zero-initialized variant for output projections; the layer then
    /// contributes nothing until trained, which keeps early steps stable.
    pub fn new_zero(
        ps: &mut ParamSet,
        name: &str,
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let k = ps.add(format!("{name}.k"), Tensor::zeros(&[kh, kw, cin, cout]));
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Conv2dLayer { k, b, stride, pad }
    }

    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> Result<Var> {
        let k = t.param(ps, self.k);
        let y = t.conv2d(x, k, self.stride, self.pad)?;
        let b = t.param(ps, self.b);
        t.add_bias(y, b)
    }
}

pub struct GroupNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNormLayer {
    pub fn new(ps: &mut ParamSet, name: &str, c: usize, groups: usize) -> Self {
        GroupNormLayer {
            gamma: ps.add(format!("{name}.g"), Tensor::filled(&[c], 1.0)),
            beta: ps.add(format!("{name}.b"), Tensor::zeros(&[c])),
            groups,
        }
    }

    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> Result<Var> {
        let g = t.param(ps, self.gamma);
        let b = t.param(ps, self.beta);
        t.group_norm(x, g, b, self.groups)
    }
}

pub struct LayerNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormLayer {
    pub fn new(ps: &mut ParamSet, name: &str, c: usize) -> Self {
        LayerNormLayer {
            gamma: ps.add(format!("{name}.g"), Tensor::filled(&[c], 1.0)),
            beta: ps.add(format!("{name}.b"), Tensor::zeros(&[c])),
        }
    }

    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, x: Var) -> Result<Var> {
        let g = t.param(ps, self.gamma);
        let b = t.param(ps, self.beta);
        t.layer_norm(x, g, b)
    }
}

pub struct EmbeddingLayer {
    pub table: ParamId,
    pub dim: usize,
}

impl EmbeddingLayer {
    pub fn new(ps: &mut ParamSet, rng: &mut impl Rng, name: &str, vocab: usize, dim: usize) -> Self {
        EmbeddingLayer {
            table: ps.add(format!("{name}.table"), Tensor::randn(&[vocab, dim], 0.02, rng)),
            dim,
        }
    }

    pub fn forward(&self, t: &mut Tape, ps: &ParamSet, ids: &[u32], out_shape: &[usize]) -> Result<Var> {
        let table = t.param(ps, self.table);
        t.embed(table, ids, out_shape)
    }
}

/// Multi-head attention with observable weights. Queries come from one
/// sequence, keys and values from another (which may be the same sequence
/// for self-attention). The returned weights tensor is a live tape variable,
/// so callers can tap attention maps without re-running the pass.
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dq: usize,
}

impl Attention {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut impl Rng,
        name: &str,
        dq: usize,
        dkv: usize,
        heads: usize,
        zero_out: bool,
    ) -> Result<Self> {
        if heads == 0 || dq % heads != 0 {
            return Err(NnError::invalid(
                "cross_attention",
                format!("model dim {dq} not divisible by {heads} heads"),
            ));
        }
        let wq = Linear::new(ps, rng, &format!("{name}.wq"), dq, dq, true);
        let wk = Linear::new(ps, rng, &format!("{name}.wk"), dkv, dq, true);
        let wv = Linear::new(ps, rng, &format!("{name}.wv"), dkv, dq, true);
        let wo = if zero_out {
            Linear::with_std(ps, rng, &format!("{name}.wo"), dq, dq, true, 0.0)
        } else {
            Linear::new(ps, rng, &format!("{name}.wo"), dq, dq, true)
        };
        Ok(Attention { wq, wk, wv, wo, heads, dq })
    }

    /// `q_in`: `[n, lq, dq]`, `kv_in`: `[n, lkv, dkv]`; `kv_lens` masks
    /// padded key positions per sample. Returns the attended output
    /// `[n, lq, dq]` and the weights `[n, heads, lq, lkv]`.
    pub fn forward(
        &self,
        t: &mut Tape,
        ps: &ParamSet,
        q_in: Var,
        kv_in: Var,
        kv_lens: Option<&[u32]>,
    ) -> Result<(Var, Var)> {
        let qs = t.val(q_in).shape().to_vec();
        let ks = t.val(kv_in).shape().to_vec();
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] {
            return Err(NnError::shapes("cross_attention", &qs, &ks));
        }
        let (n, lq, lkv) = (qs[0], qs[1], ks[1]);
        if lkv == 0 {
            return Err(NnError::invalid("cross_attention", "empty key sequence rejected"));
        }
        let dh = self.dq / self.heads;
        let q = self.wq.forward(t, ps, q_in)?;
        let k = self.wk.forward(t, ps, kv_in)?;
        let v = self.wv.forward(t, ps, kv_in)?;
        let qh = split_heads(t, q, n, lq, self.heads, dh)?;
        let kh = split_heads(t, k, n, lkv, self.heads, dh)?;
        let vh = split_heads(t, v, n, lkv, self.heads, dh)?;
        let logits = t.matmul(qh, kh, true)?;
        let scaled = t.scale(logits, 1.0 / (dh as f32).sqrt());
        let lens = kv_lens.map(|per_sample| {
            debug_assert_eq!(per_sample.len(), n);
            let mut rows = Vec::with_capacity(n * self.heads * lq);
            for &l in per_sample {
                rows.extend(std::iter::repeat(l).take(self.heads * lq));
            }
            rows
        });
        let probs = t.softmax(scaled, lens)?;
        let att = t.matmul(probs, vh, false)?;
        let merged = merge_heads(t, att, n, lq, self.heads, dh)?;
        let out = self.wo.forward(t, ps, merged)?;
        let weights = t.reshape(probs, &[n, self.heads, lq, lkv])?;
        Ok((out, weights))
    }
}

fn split_heads(t: &mut Tape, x: Var, n: usize, l: usize, heads: usize, dh: usize) -> Result<Var> {
    let x4 = t.reshape(x, &[n, l, heads, dh])?;
    let p = t.permute(x4, &[0, 2, 1, 3])?;
    t.reshape(p, &[n * heads, l, dh])
}

fn merge_heads(t: &mut Tape, x: Var, n: usize, l: usize, heads: usize, dh: usize) -> Result<Var> {
    let x4 = t.reshape(x, &[n, heads, l, dh])?;
    let p = t.permute(x4, &[0, 2, 1, 3])?;
    t.reshape(p, &[n, l, heads * dh])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng::stream;

    #[test]
    fn duplicate_parameter_name_panics() {
        let r = std::panic::catch_unwind(|| {
            let mut ps = ParamSet::new();
            ps.add("x", Tensor::zeros(&[1]));
            ps.add("x", Tensor::zeros(&[1]));
        });
        assert!(r.is_err());
    }

    #[test]
    fn attention_rejects_bad_head_count() {
        let mut ps = ParamSet::new();
        let mut rng = stream(0, "attn");
        assert!(Attention::new(&mut ps, &mut rng, "a", 63, 16, 2, false).is_err());
    }

    #[test]
    fn attention_single_key_gets_full_weight() {
        let mut ps = ParamSet::new();
        let mut rng = stream(1, "attn");
        let attn = Attention::new(&mut ps, &mut rng, "a", 8, 4, 2, false).unwrap();
        let mut t = Tape::new();
        let q = t.leaf(Tensor::randn(&[1, 3, 8], 1.0, &mut rng));
        let kv = t.leaf(Tensor::randn(&[1, 1, 4], 1.0, &mut rng));
        let (_, w) = attn.forward(&mut t, &ps, q, kv, None).unwrap();
        assert_eq!(t.val(w).shape(), &[1, 2, 3, 1]);
        assert!(t.val(w).data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn attention_weight_rows_sum_to_one() {
        let mut ps = ParamSet::new();
        let mut rng = stream(2, "attn");
        let attn = Attention::new(&mut ps, &mut rng, "a", 16, 8, 2, false).unwrap();
        let mut t = Tape::new();
        let q = t.leaf(Tensor::randn(&[2, 5, 16], 1.0, &mut rng));
        let kv = t.leaf(Tensor::randn(&[2, 4, 8], 1.0, &mut rng));
        let (_, w) = attn.forward(&mut t, &ps, q, kv, Some(&[4, 2])).unwrap();
        let wd = t.val(w).data();
        for row in 0..2 * 2 * 5 {
            let sum: f32 = wd[row * 4..row * 4 + 4].iter().sum();
            assert!((sum - 1.0).abs() < 1e-5, "row {row} sums to {sum}");
        }
        // Masked sample attends only to its two valid keys.
        for row in 2 * 5..2 * 2 * 5 {
            assert_eq!(wd[row * 4 + 2], 0.0);
            assert_eq!(wd[row * 4 + 3], 0.0);
        }
    }

    #[test]
    fn attention_rejects_empty_keys() {
        let mut ps = ParamSet::new();
        let mut rng = stream(3, "attn");
        let attn = Attention::new(&mut ps, &mut rng, "a", 8, 4, 1, false).unwrap();
        let mut t = Tape::new();
        let q = t.leaf(Tensor::randn(&[1, 2, 8], 1.0, &mut rng));
        let kv = t.leaf(Tensor::zeros(&[1, 0, 4]));
        assert!(attn.forward(&mut t, &ps, q, kv, None).is_err());
    }

    #[test]
    fn uniform_logits_give_uniform_weights() {
        // Zeroed projections make all logits equal, so weights are 1/L.
        let mut ps = ParamSet::new();
        let mut rng = stream(4, "attn");
        let attn = Attention::new(&mut ps, &mut rng, "a", 8, 4, 2, false).unwrap();
        for pid in [attn.wq.w, attn.wk.w] {
            ps.get_mut(pid).value.data_mut().fill(0.0);
        }
        let mut t = Tape::new();
        let q = t.leaf(Tensor::randn(&[1, 2, 8], 1.0, &mut rng));
        let kv = t.leaf(Tensor::randn(&[1, 4, 4], 1.0, &mut rng));
        let (_, w) = attn.forward(&mut t, &ps, q, kv, None).unwrap();
        assert!(t.val(w).data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }
}
