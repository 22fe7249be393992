//! Reverse-mode autodiff over a recorded op tape.
//!
//! Every op appends a node holding its output tensor, so a finished forward
//! pass doubles as an activation record: block taps and attention weights are
//! just `Var`s whose values can be read back. [`Tape::backward`] seeds the
//! scalar root with gradient 1 and walks nodes in reverse creation order.
//! Gradients for the same `Var` accumulate by addition.

use super::kernels as k;
use super::layers::{ParamId, ParamSet};
use super::tensor::{numel, Tensor};
use super::{NnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    AddScalar(Var),
    Scale(Var, f32),
    Mul(Var, Var),
    AddBias { x: Var, b: Var },
    AddRows { x: Var, e: Var },
    MatMul { a: Var, b: Var, tb: bool },
    Conv2d { x: Var, kern: Var, geom: k::ConvGeom },
    Bilinear { x: Var },
    Upsample2 { x: Var },
    ConcatLast(Var, Var),
    SliceLast { x: Var, from: usize },
    Softmax { x: Var, lens: Option<Vec<u32>> },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize },
    Silu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Exp(Var),
    Embed { table: Var, ids: Vec<u32> },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    MeanAll(Var),
    Mse { a: Var, b: Var },
    SmoothL1 { a: Var, b: Var, beta: f32 },
    CrossEntropy { logits: Var, labels: Vec<u32> },
    BceLogits { logits: Var, targets: Var },
}

struct Node {
    val: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Per-variable gradients produced by [`Tape::backward`].
pub struct Grads {
    g: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.g[v.idx()].as_ref()
    }

    fn acc(&mut self, v: Var, shape: &[usize], add: impl FnOnce(&mut [f32])) {
        let slot = &mut self.g[v.idx()];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(shape));
        }
        add(slot.as_mut().unwrap().data_mut());
    }
}

const GN_EPS: f32 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.idx()].val
    }

    fn push(&mut self, val: Tensor, op: Op) -> Var {
        self.nodes.push(Node { val, op });
        Var((self.nodes.len() - 1) as u32)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Binds a parameter's current value; its gradient can later be exported
    /// with [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, ps: &ParamSet, id: ParamId) -> Var {
        let v = self.push(ps.get(id).value.clone(), Op::Param);
        self.params.push((id, v));
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(NnError::shapes("add", sa, sb));
        }
        let mut out = self.val(a).clone();
        out.add_in_place(self.val(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Var {
        let mut out = self.val(x).clone();
        for v in out.data_mut() {
            *v += c;
        }
        self.push(out, Op::AddScalar(x))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let mut out = self.val(x).clone();
        out.scale_in_place(c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(NnError::shapes("mul", sa, sb));
        }
        let mut out = self.val(a).clone();
        for (v, w) in out.data_mut().iter_mut().zip(self.val(b).data()) {
            *v *= w;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `x[..., c] + b[c]`, broadcast over all leading dimensions.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.val(x).shape(), self.val(b).shape());
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(NnError::shapes("add_bias", sx, sb));
        }
        let c = sb[0];
        let mut out = self.val(x).clone();
        let bd = self.val(b).data();
        for chunk in out.data_mut().chunks_exact_mut(c) {
            for (v, w) in chunk.iter_mut().zip(bd) {
                *v += w;
            }
        }
        Ok(self.push(out, Op::AddBias { x, b }))
    }

    /// `x[n,h,w,c] + e[n,c]`, broadcast over the spatial dimensions.
    pub fn add_rows(&mut self, x: Var, e: Var) -> Result<Var> {
        let (sx, se) = (self.val(x).shape().to_vec(), self.val(e).shape().to_vec());
        if sx.len() != 4 || se.len() != 2 || sx[0] != se[0] || sx[3] != se[1] {
            return Err(NnError::shapes("add_rows", &sx, &se));
        }
        let (n, hw, c) = (sx[0], sx[1] * sx[2], sx[3]);
        let mut out = self.val(x).clone();
        let ed = self.val(e).data();
        for nn in 0..n {
            let erow = &ed[nn * c..nn * c + c];
            for p in 0..hw {
                let base = (nn * hw + p) * c;
                for cc in 0..c {
                    out.data_mut()[base + cc] += erow[cc];
                }
            }
        }
        Ok(self.push(out, Op::AddRows { x, e }))
    }

    /// Matrix multiply with optional transpose of `b`'s trailing two dims.
    /// `a` is `[m,k]` or `[batch,m,k]`; `b` may be shared (2-D) or batched.
    pub fn matmul(&mut self, a: Var, b: Var, tb: bool) -> Result<Var> {
        let sa = self.val(a).shape().to_vec();
        let sb = self.val(b).shape().to_vec();
        let (batch, m, kk) = match sa.len() {
            2 => (1, sa[0], sa[1]),
            3 => (sa[0], sa[1], sa[2]),
            _ => return Err(NnError::shapes("matmul", &sa, &sb)),
        };
        let (bk, n, b_batched) = match (sb.len(), tb) {
            (2, false) => (sb[0], sb[1], false),
            (2, true) => (sb[1], sb[0], false),
            (3, false) => (sb[1], sb[2], true),
            (3, true) => (sb[2], sb[1], true),
            _ => return Err(NnError::shapes("matmul", &sa, &sb)),
        };
        if bk != kk || (b_batched && sb[0] != batch) {
            return Err(NnError::shapes("matmul", &sa, &sb));
        }
        let oshape = if sa.len() == 3 { vec![batch, m, n] } else { vec![m, n] };
        let mut out = Tensor::zeros(&oshape);
        {
            let ad = self.val(a).data();
            let bd = self.val(b).data();
            let od = out.data_mut();
            for bb in 0..batch {
                let av = &ad[bb * m * kk..(bb + 1) * m * kk];
                let bv = if b_batched { &bd[bb * kk * n..(bb + 1) * kk * n] } else { bd };
                let ov = &mut od[bb * m * n..(bb + 1) * m * n];
                if tb {
                    k::gemm_nt_acc(ov, av, bv, m, kk, n);
                } else {
                    k::gemm_nn_acc(ov, n, av, kk, bv, m, kk, n);
                }
            }
        }
        Ok(self.push(out, Op::MatMul { a, b, tb }))
    }

    pub fn conv2d(&mut self, x: Var, kern: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = k::conv_geom(self.val(x).shape(), self.val(kern).shape(), stride, pad)?;
        let mut out = Tensor::zeros(&[geom.n, geom.ho, geom.wo, geom.cout]);
        k::conv2d_fwd(out.data_mut(), self.val(x).data(), self.val(kern).data(), &geom);
        Ok(self.push(out, Op::Conv2d { x, kern, geom }))
    }

    pub fn bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let s = self.val(x).shape().to_vec();
        if s.len() != 4 {
            return Err(NnError::invalid("bilinear_resize", format!("want NHWC input, got {s:?}")));
        }
        if oh == 0 || ow == 0 {
            return Err(NnError::invalid("bilinear_resize", "target size must be positive"));
        }
        let mut out = Tensor::zeros(&[s[0], oh, ow, s[3]]);
        k::bilinear_fwd(out.data_mut(), self.val(x).data(), s[0], s[1], s[2], s[3], oh, ow);
        Ok(self.push(out, Op::Bilinear { x }))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x).shape().to_vec();
        if s.len() != 4 {
            return Err(NnError::invalid("upsample2", format!("want NHWC input, got {s:?}")));
        }
        let mut out = Tensor::zeros(&[s[0], 2 * s[1], 2 * s[2], s[3]]);
        k::upsample2_fwd(out.data_mut(), self.val(x).data(), s[0], s[1], s[2], s[3]);
        Ok(self.push(out, Op::Upsample2 { x }))
    }

    /// Concatenate along the last dimension; leading dims must match.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.val(a).shape().to_vec();
        let sb = self.val(b).shape().to_vec();
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(NnError::shapes("concat_last", &sa, &sb));
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = numel(&sa) / ca;
        let mut oshape = sa.clone();
        *oshape.last_mut().unwrap() = ca + cb;
        let mut out = Tensor::zeros(&oshape);
        {
            let (ad, bd) = (self.val(a).data(), self.val(b).data());
            let od = out.data_mut();
            for r in 0..rows {
                od[r * (ca + cb)..r * (ca + cb) + ca].copy_from_slice(&ad[r * ca..r * ca + ca]);
                od[r * (ca + cb) + ca..(r + 1) * (ca + cb)].copy_from_slice(&bd[r * cb..r * cb + cb]);
            }
        }
        Ok(self.push(out, Op::ConcatLast(a, b)))
    }

    /// Slice `[from, to)` of the last dimension.
    pub fn slice_last(&mut self, x: Var, from: usize, to: usize) -> Result<Var> {
        let s = self.val(x).shape().to_vec();
        let c = *s.last().unwrap();
        if from >= to || to > c {
            return Err(NnError::invalid(
                "slice_last",
                format!("range {from}..{to} out of bounds for {c} channels"),
            ));
        }
        let rows = numel(&s) / c;
        let w = to - from;
        let mut oshape = s.clone();
        *oshape.last_mut().unwrap() = w;
        let mut out = Tensor::zeros(&oshape);
        {
            let xd = self.val(x).data();
            let od = out.data_mut();
            for r in 0..rows {
                od[r * w..(r + 1) * w].copy_from_slice(&xd[r * c + from..r * c + to]);
            }
        }
        Ok(self.push(out, Op::SliceLast { x, from }))
    }

    /// Softmax over the last dimension with optional per-row valid lengths
    /// (rows are the product of leading dims). Masked entries get zero.
    pub fn softmax(&mut self, x: Var, lens: Option<Vec<u32>>) -> Result<Var> {
        let s = self.val(x).shape().to_vec();
        let cols = *s.last().unwrap();
        let rows = numel(&s) / cols;
        if let Some(ls) = &lens {
            if ls.len() != rows {
                return Err(NnError::invalid(
                    "softmax",
                    format!("{} lens for {rows} rows", ls.len()),
                ));
            }
            if ls.iter().any(|&l| l == 0 || l as usize > cols) {
                return Err(NnError::invalid("softmax", "row length must be in 1..=cols"));
            }
        }
        let mut out = Tensor::zeros(&s);
        k::softmax_rows(out.data_mut(), self.val(x).data(), rows, cols, lens.as_deref());
        Ok(self.push(out, Op::Softmax { x, lens }))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let s = self.val(x).shape().to_vec();
        if s.len() != 4 {
            return Err(NnError::invalid("group_norm", format!("want NHWC input, got {s:?}")));
        }
        let c = s[3];
        if groups == 0 || c % groups != 0 {
            return Err(NnError::invalid("group_norm", format!("{c} channels not divisible into {groups} groups")));
        }
        if self.val(gamma).shape() != [c] || self.val(beta).shape() != [c] {
            return Err(NnError::shapes("group_norm", &s, self.val(gamma).shape()));
        }
        let mut out = Tensor::zeros(&s);
        k::group_norm_fwd(
            out.data_mut(),
            self.val(x).data(),
            self.val(gamma).data(),
            self.val(beta).data(),
            s[0],
            s[1] * s[2],
            c,
            groups,
            GN_EPS,
        );
        Ok(self.push(out, Op::GroupNorm { x, gamma, beta, groups }))
    }

    /// LayerNorm over the last dimension; works on any rank >= 1.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.val(x).shape().to_vec();
        let c = *s.last().unwrap();
        if self.val(gamma).shape() != [c] || self.val(beta).shape() != [c] {
            return Err(NnError::shapes("layer_norm", &s, self.val(gamma).shape()));
        }
        let rows = numel(&s) / c;
        let mut out = Tensor::zeros(&s);
        k::layer_norm_fwd(
            out.data_mut(),
            self.val(x).data(),
            self.val(gamma).data(),
            self.val(beta).data(),
            rows,
            c,
            GN_EPS,
        );
        // LayerNorm is GroupNorm with one group over a [rows, 1, 1, c] view.
        Ok(self.push(out, Op::GroupNorm { x, gamma, beta, groups: 0 }))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let mut out = self.val(x).clone();
        for v in out.data_mut() {
            *v = k::silu_val_grad(*v).0;
        }
        self.push(out, Op::Silu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.val(x).clone();
        for v in out.data_mut() {
            *v = k::gelu_val_grad(*v).0;
        }
        self.push(out, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.val(x).clone();
        for v in out.data_mut() {
            *v = k::sigmoid(*v);
        }
        self.push(out, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let mut out = self.val(x).clone();
        for v in out.data_mut() {
            *v = v.exp();
        }
        self.push(out, Op::Exp(x))
    }

    /// Row lookup: `table[v, c]` gathered at `ids`, reshaped to `out_shape`
    /// which must end in `c` and cover `ids.len()` rows.
    pub fn embed(&mut self, table: Var, ids: &[u32], out_shape: &[usize]) -> Result<Var> {
        let ts = self.val(table).shape().to_vec();
        if ts.len() != 2 {
            return Err(NnError::invalid("embed", format!("table must be 2-D, got {ts:?}")));
        }
        let (v, c) = (ts[0], ts[1]);
        if out_shape.last() != Some(&c) || numel(out_shape) != ids.len() * c {
            return Err(NnError::shapes("embed", out_shape, &ts));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= v) {
            return Err(NnError::invalid("embed", format!("id {bad} out of range for table of {v}")));
        }
        let mut out = Tensor::zeros(out_shape);
        {
            let td = self.val(table).data();
            let od = out.data_mut();
            for (r, &id) in ids.iter().enumerate() {
                od[r * c..(r + 1) * c].copy_from_slice(&td[id as usize * c..(id as usize + 1) * c]);
            }
        }
        Ok(self.push(out, Op::Embed { table, ids: ids.to_vec() }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.val(x).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// Axis permutation (materialized copy).
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.val(x).shape().to_vec();
        if perm.len() != s.len() {
            return Err(NnError::invalid("permute", format!("perm {perm:?} for shape {s:?}")));
        }
        let mut seen = vec![false; s.len()];
        for &p in perm {
            if p >= s.len() || seen[p] {
                return Err(NnError::invalid("permute", format!("invalid perm {perm:?}")));
            }
            seen[p] = true;
        }
        let oshape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let out = permute_copy(self.val(x), &s, perm, &oshape);
        Ok(self.push(out, Op::Permute { x, perm: perm.to_vec() }))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let m = k::mean_all_f64(self.val(x).data()) as f32;
        self.push(Tensor::scalar(m), Op::MeanAll(x))
    }

    /// Scalar mean squared error between equally shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(NnError::shapes("mse", sa, sb));
        }
        let mut acc = 0.0f64;
        for (x, y) in self.val(a).data().iter().zip(self.val(b).data()) {
            let d = (x - y) as f64;
            acc += d * d;
        }
        let m = (acc / self.val(a).len() as f64) as f32;
        Ok(self.push(Tensor::scalar(m), Op::Mse { a, b }))
    }

    /// Scalar smooth-L1 (Huber) loss with transition point `beta`.
    pub fn smooth_l1(&mut self, a: Var, b: Var, beta: f32) -> Result<Var> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(NnError::shapes("smooth_l1", sa, sb));
        }
        let mut acc = 0.0f64;
        for (x, y) in self.val(a).data().iter().zip(self.val(b).data()) {
            let d = (x - y).abs();
            acc += if d < beta { 0.5 * d * d / beta } else { d - 0.5 * beta } as f64;
        }
        let m = (acc / self.val(a).len() as f64) as f32;
        Ok(self.push(Tensor::scalar(m), Op::SmoothL1 { a, b, beta }))
    }

    /// Mean cross-entropy of `[rows, classes]` logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u32]) -> Result<Var> {
        let s = self.val(logits).shape().to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(NnError::invalid(
                "cross_entropy",
                format!("logits {s:?} vs {} labels", labels.len()),
            ));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(NnError::invalid("cross_entropy", format!("label {bad} out of range")));
        }
        let ld = self.val(logits).data();
        let mut acc = 0.0f64;
        for (r, &lab) in labels.iter().enumerate() {
            let row = &ld[r * classes..(r + 1) * classes];
            let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse = mx as f64 + row.iter().map(|&v| ((v - mx) as f64).exp()).sum::<f64>().ln();
            acc += lse - row[lab as usize] as f64;
        }
        let m = (acc / labels.len() as f64) as f32;
        Ok(self.push(Tensor::scalar(m), Op::CrossEntropy { logits, labels: labels.to_vec() }))
    }

    /// Mean binary cross-entropy with logits against targets in [0, 1].
    pub fn bce_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        let (sa, sb) = (self.val(logits).shape(), self.val(targets).shape());
        if sa != sb {
            return Err(NnError::shapes("bce_logits", sa, sb));
        }
        let mut acc = 0.0f64;
        for (&z, &t) in self.val(logits).data().iter().zip(self.val(targets).data()) {
            acc += (z.max(0.0) - z * t + (1.0 + (-z.abs()).exp()).ln()) as f64;
        }
        let m = (acc / self.val(logits).len() as f64) as f32;
        Ok(self.push(Tensor::scalar(m), Op::BceLogits { logits, targets }))
    }

    /// Backpropagates from a scalar root through the recorded ops.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        if self.val(root).len() != 1 {
            return Err(NnError::invalid(
                "backward",
                format!("root must be scalar, got shape {:?}", self.val(root).shape()),
            ));
        }
        let mut grads = Grads { g: (0..self.nodes.len()).map(|_| None).collect() };
        grads.g[root.idx()] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.idx()).rev() {
            let Some(dy) = grads.g[idx].take() else { continue };
            self.backward_node(idx, &dy, &mut grads);
            grads.g[idx] = Some(dy);
        }
        Ok(grads)
    }

    fn backward_node(&self, idx: usize, dy: &Tensor, grads: &mut Grads) {
        let node = &self.nodes[idx];
        let dyd = dy.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                self.acc_same(grads, *a, dyd);
                self.acc_same(grads, *b, dyd);
            }
            Op::AddScalar(x) => self.acc_same(grads, *x, dyd),
            Op::Scale(x, c) => {
                let c = *c;
                grads.acc(*x, self.val(*x).shape(), |g| {
                    for (gv, &d) in g.iter_mut().zip(dyd) {
                        *gv += c * d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.val(*a).data(), self.val(*b).data());
                grads.acc(*a, self.val(*a).shape(), |g| {
                    for i in 0..g.len() {
                        g[i] += bd[i] * dyd[i];
                    }
                });
                grads.acc(*b, self.val(*b).shape(), |g| {
                    for i in 0..g.len() {
                        g[i] += ad[i] * dyd[i];
                    }
                });
            }
            Op::AddBias { x, b } => {
                self.acc_same(grads, *x, dyd);
                let c = self.val(*b).len();
                grads.acc(*b, self.val(*b).shape(), |g| {
                    for chunk in dyd.chunks_exact(c) {
                        for (gv, &d) in g.iter_mut().zip(chunk) {
                            *gv += d;
                        }
                    }
                });
            }
            Op::AddRows { x, e } => {
                self.acc_same(grads, *x, dyd);
                let sx = self.val(*x).shape();
                let (n, hw, c) = (sx[0], sx[1] * sx[2], sx[3]);
                grads.acc(*e, self.val(*e).shape(), |g| {
                    for nn in 0..n {
                        for p in 0..hw {
                            let base = (nn * hw + p) * c;
                            for cc in 0..c {
                                g[nn * c + cc] += dyd[base + cc];
                            }
                        }
                    }
                });
            }
            Op::MatMul { a, b, tb } => self.backward_matmul(*a, *b, *tb, dyd, grads),
            Op::Conv2d { x, kern, geom } => {
                let g = *geom;
                grads.acc(*x, self.val(*x).shape(), |dx| {
                    k::conv2d_dx(dx, dyd, self.val(*kern).data(), &g);
                });
                grads.acc(*kern, self.val(*kern).shape(), |dk| {
                    k::conv2d_dk(dk, self.val(*x).data(), dyd, &g);
                });
            }
            Op::Bilinear { x } => {
                let s = self.val(*x).shape().to_vec();
                let os = node.val.shape().to_vec();
                grads.acc(*x, &s, |dx| {
                    k::bilinear_bwd(dx, dyd, s[0], s[1], s[2], s[3], os[1], os[2]);
                });
            }
            Op::Upsample2 { x } => {
                let s = self.val(*x).shape().to_vec();
                grads.acc(*x, &s, |dx| {
                    k::upsample2_bwd(dx, dyd, s[0], s[1], s[2], s[3]);
                });
            }
            Op::ConcatLast(a, b) => {
                let ca = *self.val(*a).shape().last().unwrap();
                let cb = *self.val(*b).shape().last().unwrap();
                let rows = self.val(*a).len() / ca;
                grads.acc(*a, self.val(*a).shape(), |g| {
                    for r in 0..rows {
                        for i in 0..ca {
                            g[r * ca + i] += dyd[r * (ca + cb) + i];
                        }
                    }
                });
                grads.acc(*b, self.val(*b).shape(), |g| {
                    for r in 0..rows {
                        for i in 0..cb {
                            g[r * cb + i] += dyd[r * (ca + cb) + ca + i];
                        }
                    }
                });
            }
            Op::SliceLast { x, from } => {
                let c = *self.val(*x).shape().last().unwrap();
                let w = *node.val.shape().last().unwrap();
                let rows = self.val(*x).len() / c;
                let from = *from;
                grads.acc(*x, self.val(*x).shape(), |g| {
                    for r in 0..rows {
                        for i in 0..w {
                            g[r * c + from + i] += dyd[r * w + i];
                        }
                    }
                });
            }
            Op::Softmax { x, lens } => {
                let cols = *node.val.shape().last().unwrap();
                let rows = node.val.len() / cols;
                let y = node.val.data();
                grads.acc(*x, self.val(*x).shape(), |dx| {
                    let mut tmp = vec![0.0f32; dx.len()];
                    k::softmax_rows_bwd(&mut tmp, y, dyd, rows, cols, lens.as_deref());
                    for (g, t) in dx.iter_mut().zip(&tmp) {
                        *g += t;
                    }
                });
            }
            Op::GroupNorm { x, gamma, beta, groups } => {
                let s = self.val(*x).shape().to_vec();
                // groups == 0 marks the LayerNorm view: rows over last dim.
                let (n, hw, c, groups) = if *groups == 0 {
                    let c = *s.last().unwrap();
                    (numel(&s) / c, 1, c, 1)
                } else {
                    (s[0], s[1] * s[2], s[3], *groups)
                };
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                let mut dx = vec![0.0f32; self.val(*x).len()];
                k::group_norm_bwd(
                    &mut dx,
                    &mut dgamma,
                    &mut dbeta,
                    self.val(*x).data(),
                    dyd,
                    self.val(*gamma).data(),
                    n,
                    hw,
                    c,
                    groups,
                    GN_EPS,
                );
                grads.acc(*x, &s, |g| {
                    for (gv, d) in g.iter_mut().zip(&dx) {
                        *gv += d;
                    }
                });
                grads.acc(*gamma, &[c], |g| {
                    for (gv, d) in g.iter_mut().zip(&dgamma) {
                        *gv += d;
                    }
                });
                grads.acc(*beta, &[c], |g| {
                    for (gv, d) in g.iter_mut().zip(&dbeta) {
                        *gv += d;
                    }
                });
            }
            Op::Silu(x) => self.acc_unary(grads, *x, dyd, |v| k::silu_val_grad(v).1),
            Op::Gelu(x) => self.acc_unary(grads, *x, dyd, |v| k::gelu_val_grad(v).1),
            Op::Sigmoid(x) => {
                let y = node.val.data();
                grads.acc(*x, self.val(*x).shape(), |g| {
                    for i in 0..g.len() {
                        g[i] += y[i] * (1.0 - y[i]) * dyd[i];
                    }
                });
            }
            Op::Exp(x) => {
                let y = node.val.data();
                grads.acc(*x, self.val(*x).shape(), |g| {
                    for i in 0..g.len() {
                        g[i] += y[i] * dyd[i];
                    }
                });
            }
            Op::Embed { table, ids } => {
                let c = self.val(*table).shape()[1];
                grads.acc(*table, self.val(*table).shape(), |g| {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = id as usize * c;
                        for i in 0..c {
                            g[dst + i] += dyd[r * c + i];
                        }
                    }
                });
            }
            Op::Reshape { x } => self.acc_same(grads, *x, dyd),
            Op::Permute { x, perm } => {
                let s = self.val(*x).shape().to_vec();
                let os = node.val.shape().to_vec();
                let mut inv = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let dyt = Tensor::from_vec(&os, dyd.to_vec()).expect("dy shape");
                let back = permute_copy(&dyt, &os, &inv, &s);
                grads.acc(*x, &s, |g| {
                    for (gv, d) in g.iter_mut().zip(back.data()) {
                        *gv += d;
                    }
                });
            }
            Op::MeanAll(x) => {
                let n = self.val(*x).len() as f32;
                let d = dyd[0] / n;
                grads.acc(*x, self.val(*x).shape(), |g| {
                    for gv in g.iter_mut() {
                        *gv += d;
                    }
                });
            }
            Op::Mse { a, b } => {
                let n = self.val(*a).len() as f32;
                let scale = 2.0 * dyd[0] / n;
                let (ad, bd) = (self.val(*a).data(), self.val(*b).data());
                grads.acc(*a, self.val(*a).shape(), |g| {
                    for i in 0..g.len() {
                        g[i] += scale * (ad[i] - bd[i]);
                    }
                });
                grads.acc(*b, self.val(*b).shape(), |g| {
                    for i in 0..g.len() {
                        g[i] -= scale * (ad[i] - bd[i]);
                    }
                });
            }
            Op::SmoothL1 { a, b, beta } => {
                let n = self.val(*a).len() as f32;
                let scale = dyd[0] / n;
                let beta = *beta;
                let (ad, bd) = (self.val(*a).data(), self.val(*b).data());
                let dd = |i: usize| {
                    let d = ad[i] - bd[i];
                    if d.abs() < beta {
                        d / beta
                    } else {
                        d.signum()
                    }
                };
                grads.acc(*a, self.val(*a).shape(), |g| {
                    for i in 0..g.len() {
                        g[i] += scale * dd(i);
                    }
                });
                grads.acc(*b, self.val(*b).shape(), |g| {
                    for i in 0..g.len() {
                        g[i] -= scale * dd(i);
                    }
                });
            }
            Op::CrossEntropy { logits, labels } => {
                let s = self.val(*logits).shape();
                let classes = s[1];
                let rows = s[0];
                let ld = self.val(*logits).data();
                let scale = dyd[0] / rows as f32;
                grads.acc(*logits, s, |g| {
                    for (r, &lab) in labels.iter().enumerate() {
                        let row = &ld[r * classes..(r + 1) * classes];
                        let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                        let sum: f64 = row.iter().map(|&v| ((v - mx) as f64).exp()).sum();
                        for i in 0..classes {
                            let p = (((row[i] - mx) as f64).exp() / sum) as f32;
                            let t = if i == lab as usize { 1.0 } else { 0.0 };
                            g[r * classes + i] += scale * (p - t);
                        }
                    }
                });
            }
            Op::BceLogits { logits, targets } => {
                let n = self.val(*logits).len() as f32;
                let scale = dyd[0] / n;
                let (zd, td) = (self.val(*logits).data(), self.val(*targets).data());
                grads.acc(*logits, self.val(*logits).shape(), |g| {
                    for i in 0..g.len() {
                        g[i] += scale * (k::sigmoid(zd[i]) - td[i]);
                    }
                });
                grads.acc(*targets, self.val(*targets).shape(), |g| {
                    for i in 0..g.len() {
                        // d/dt of the stable form reduces to -z.
                        g[i] += scale * (-zd[i]);
                    }
                });
            }
        }
    }

    fn backward_matmul(&self, a: Var, b: Var, tb: bool, dyd: &[f32], grads: &mut Grads) {
        let sa = self.val(a).shape().to_vec();
        let sb = self.val(b).shape().to_vec();
        let (batch, m, kk) = match sa.len() {
            2 => (1, sa[0], sa[1]),
            _ => (sa[0], sa[1], sa[2]),
        };
        let b_batched = sb.len() == 3;
        let n = if tb { sb[sb.len() - 2] } else { sb[sb.len() - 1] };
        let ad = self.val(a).data();
        let bd = self.val(b).data();
        grads.acc(a, &sa, |da| {
            for bb in 0..batch {
                let dc = &dyd[bb * m * n..(bb + 1) * m * n];
                let bv = if b_batched { &bd[bb * kk * n..(bb + 1) * kk * n] } else { bd };
                let dav = &mut da[bb * m * kk..(bb + 1) * m * kk];
                if tb {
                    // dA = dC . B, with B stored [n, kk].
                    k::gemm_nn_acc(dav, kk, dc, n, bv, m, n, kk);
                } else {
                    // dA = dC . B^T, with B stored [kk, n].
                    k::gemm_nt_acc(dav, dc, bv, m, n, kk);
                }
            }
        });
        grads.acc(b, &sb, |db| {
            for bb in 0..batch {
                let dc = &dyd[bb * m * n..(bb + 1) * m * n];
                let av = &ad[bb * m * kk..(bb + 1) * m * kk];
                let dbv = if b_batched {
                    &mut db[bb * kk * n..(bb + 1) * kk * n]
                } else {
                    &mut db[..]
                };
                if tb {
                    // dB = dC^T . A, stored [n, kk].
                    k::gemm_tn_acc(dbv, dc, n, av, m, n, kk);
                } else {
                    // dB = A^T . dC, stored [kk, n].
                    k::gemm_tn_acc(dbv, av, kk, dc, m, kk, n);
                }
            }
        });
    }

    fn acc_same(&self, grads: &mut Grads, x: Var, dyd: &[f32]) {
        grads.acc(x, self.val(x).shape(), |g| {
            for (gv, &d) in g.iter_mut().zip(dyd) {
                *gv += d;
            }
        });
    }

    fn acc_unary(&self, grads: &mut Grads, x: Var, dyd: &[f32], df: impl Fn(f32) -> f32) {
        let xd = self.val(x).data();
        grads.acc(x, self.val(x).shape(), |g| {
            for i in 0..g.len() {
                g[i] += df(xd[i]) * dyd[i];
            }
        });
    }

    /// Adds tape gradients into `Parameter::grad` for every bound parameter.
    pub fn accumulate_param_grads(&self, grads: &Grads, ps: &mut ParamSet) {
        for &(id, var) in &self.params {
            if let Some(g) = grads.get(var) {
                ps.get_mut(id).grad.add_in_place(g);
            }
        }
    }
}

fn permute_copy(x: &Tensor, s: &[usize], perm: &[usize], oshape: &[usize]) -> Tensor {
    let rank = s.len();
    let mut istrides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        istrides[i] = istrides[i + 1] * s[i + 1];
    }
    let mut ostrides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        ostrides[i] = ostrides[i + 1] * oshape[i + 1];
    }
    let mut out = Tensor::zeros(oshape);
    let od = out.data_mut();
    let xd = x.data();
    for (o, slot) in od.iter_mut().enumerate() {
        let mut rem = o;
        let mut src = 0;
        for i in 0..rank {
            let oi = rem / ostrides[i];
            rem %= ostrides[i];
            src += oi * istrides[perm[i]];
        }
        *slot = xd[src];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_values_are_deterministic() {
        let run = || {
            let mut t = Tape::new();
            let x = t.leaf(Tensor::randn(&[2, 4, 4, 3], 1.0, &mut crate::util::rng::stream(5, "t")));
            let k_ = t.leaf(Tensor::randn(&[3, 3, 3, 4], 0.5, &mut crate::util::rng::stream(6, "t")));
            let c = t.conv2d(x, k_, 1, 1).unwrap();
            let s = t.silu(c);
            let m = t.mean_all(s);
            t.val(m).data()[0]
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mse_of_equal_tensors_is_zero_with_zero_grad() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::filled(&[3, 3], 2.0));
        let b = t.leaf(Tensor::filled(&[3, 3], 2.0));
        let l = t.mse(a, b).unwrap();
        assert_eq!(t.val(l).data()[0], 0.0);
        let g = t.backward(l).unwrap();
        assert!(g.get(a).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn permute_round_trips() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(&[2, 3, 4], (0..24).map(|i| i as f32).collect()).unwrap());
        let p = t.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(t.val(p).shape(), &[4, 2, 3]);
        let back = t.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(t.val(back).data(), t.val(x).data());
    }

    #[test]
    fn concat_and_slice_invert() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.leaf(Tensor::from_vec(&[2, 3], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap());
        let c = t.concat_last(a, b).unwrap();
        assert_eq!(t.val(c).shape(), &[2, 5]);
        let a2 = t.slice_last(c, 0, 2).unwrap();
        let b2 = t.slice_last(c, 2, 5).unwrap();
        assert_eq!(t.val(a2).data(), t.val(a).data());
        assert_eq!(t.val(b2).data(), t.val(b).data());
    }

    #[test]
    fn cross_entropy_matches_uniform_baseline() {
        let mut t = Tape::new();
        let logits = t.leaf(Tensor::zeros(&[4, 5]));
        let l = t.cross_entropy(logits, &[0, 1, 2, 3]).unwrap();
        let want = (5.0f32).ln();
        assert!((t.val(l).data()[0] - want).abs() < 1e-6);
    }
}
