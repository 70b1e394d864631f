//! Reverse-mode gradients by operation recording.
//!
//! Forward calls execute immediately, append one record to the tape, and
//! hard-error on any non-finite output. [`Tape::backward`] replays the
//! records in reverse, accumulating gradients into per-buffer slots. The op
//! vocabulary is fixed: matmul, broadcast/elementwise adds, relu, scale,
//! layer norm, masked multi-head attention, row slicing, masked mean,
//! flatten-dot, scalar stacking, and sigmoid cross-entropy.
//!
//! Attention and layer norm recompute their softmax / row statistics during
//! the backward pass instead of saving them; at this scale the extra forward
//! work is cheaper than the bookkeeping.

use crate::error::{Error, Result};
use crate::nn::scalar::Scalar;
use crate::nn::tensor::{AttentionMask, Tensor};

pub type BufId = usize;
type MaskId = usize;

struct Buf<E> {
    data: Vec<E>,
    shape: Vec<usize>,
}

impl<E: Scalar> Buf<E> {
    fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }
    fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }
}

enum Op {
    MatMul { a: BufId, b: BufId, out: BufId },
    Add { a: BufId, b: BufId, out: BufId },
    AddRowBroadcast { a: BufId, row: BufId, out: BufId },
    Scale { a: BufId, factor: f64, out: BufId },
    Relu { a: BufId, out: BufId },
    Tanh { a: BufId, out: BufId },
    LayerNormRows { x: BufId, gamma: BufId, beta: BufId, eps: f64, out: BufId },
    Attention { q: BufId, k: BufId, v: BufId, heads: usize, mask: Option<MaskId>, out: BufId },
    SliceRows { a: BufId, start: usize, out: BufId },
    MeanMaskedRows { a: BufId, mask: Option<MaskId>, out: BufId },
    DotFlatten { a: BufId, w: BufId, out: BufId },
    StackScalars { items: Vec<BufId>, out: BufId },
    BceMean { logits: BufId, labels: BufId, out: BufId },
}

pub struct Tape<E: Scalar> {
    bufs: Vec<Buf<E>>,
    ops: Vec<Op>,
    masks: Vec<Vec<bool>>,
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape {
            bufs: Vec::new(),
            ops: Vec::new(),
            masks: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// Register an input buffer (parameter or constant).
    pub fn leaf(&mut self, t: &Tensor<E>) -> BufId {
        self.push_buf(t.data().to_vec(), t.shape().to_vec())
    }

    pub fn mask(&mut self, m: &AttentionMask) -> MaskId {
        self.masks.push(m.valid().to_vec());
        self.masks.len() - 1
    }

    pub fn shape(&self, id: BufId) -> &[usize] {
        &self.bufs[id].shape
    }

    pub fn data(&self, id: BufId) -> &[E] {
        &self.bufs[id].data
    }

    pub fn to_tensor(&self, id: BufId) -> Tensor<E> {
        Tensor::new(self.bufs[id].shape.clone(), self.bufs[id].data.clone())
            .expect("tape buffers are internally consistent")
    }

    /// Gradient of the last `backward` target w.r.t. buffer `id`, if any
    /// gradient reached it.
    pub fn grad(&self, id: BufId) -> Option<&[E]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Smallest |input| over all recorded relu ops, or None if the tape has
    /// no relu. Finite-difference gradient checks are only a valid oracle
    /// when every relu input sits farther from zero than the sweep the FD
    /// step can induce; callers use this to certify an evaluation point
    /// before checking.
    pub fn relu_margin(&self) -> Option<f64> {
        let mut margin: Option<f64> = None;
        for op in &self.ops {
            if let Op::Relu { a, .. } = op {
                for v in &self.bufs[*a].data {
                    let m = v.as_f64().abs();
                    margin = Some(margin.map_or(m, |cur: f64| cur.min(m)));
                }
            }
        }
        margin
    }

    fn push_buf(&mut self, data: Vec<E>, shape: Vec<usize>) -> BufId {
        self.bufs.push(Buf { data, shape });
        self.bufs.len() - 1
    }

    fn finite(&self, id: BufId, what: &str) -> Result<()> {
        if self.bufs[id].data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("tape op {what}")))
        }
    }

    // ── forward ops ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: BufId, b: BufId) -> Result<BufId> {
        let (m, k) = (self.bufs[a].rows(), self.bufs[a].cols());
        let (k2, n) = (self.bufs[b].rows(), self.bufs[b].cols());
        if k != k2 {
            return Err(Error::shape("matmul", &self.bufs[a].shape, &self.bufs[b].shape));
        }
        let mut out = vec![E::zero(); m * n];
        super::ops::matmul_into(&self.bufs[a].data, &self.bufs[b].data, &mut out, m, k, n);
        let out = self.push_buf(out, vec![m, n]);
        self.ops.push(Op::MatMul { a, b, out });
        self.finite(out, "matmul")?;
        Ok(out)
    }

    pub fn add(&mut self, a: BufId, b: BufId) -> Result<BufId> {
        if self.bufs[a].shape != self.bufs[b].shape && self.bufs[a].data.len() != self.bufs[b].data.len() {
            return Err(Error::shape("add", &self.bufs[a].shape, &self.bufs[b].shape));
        }
        let data = self.bufs[a]
            .data
            .iter()
            .zip(&self.bufs[b].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.bufs[a].shape.clone();
        let out = self.push_buf(data, shape);
        self.ops.push(Op::Add { a, b, out });
        self.finite(out, "add")?;
        Ok(out)
    }

    /// `[r, c] + [c]`, the bias / frame-conditioning add.
    pub fn add_row_broadcast(&mut self, a: BufId, row: BufId) -> Result<BufId> {
        let c = self.bufs[a].cols();
        if self.bufs[row].data.len() != c {
            return Err(Error::shape(
                "add_row_broadcast",
                &self.bufs[a].shape,
                &self.bufs[row].shape,
            ));
        }
        let r = self.bufs[a].rows();
        let mut data = self.bufs[a].data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = data[i * c + j] + self.bufs[row].data[j];
            }
        }
        let shape = self.bufs[a].shape.clone();
        let out = self.push_buf(data, shape);
        self.ops.push(Op::AddRowBroadcast { a, row, out });
        self.finite(out, "add_row_broadcast")?;
        Ok(out)
    }

    pub fn scale(&mut self, a: BufId, factor: f64) -> Result<BufId> {
        let f = E::from_f64(factor);
        let data = self.bufs[a].data.iter().map(|&x| x * f).collect();
        let shape = self.bufs[a].shape.clone();
        let out = self.push_buf(data, shape);
        self.ops.push(Op::Scale { a, factor, out });
        self.finite(out, "scale")?;
        Ok(out)
    }

    pub fn relu(&mut self, a: BufId) -> Result<BufId> {
        let data = self.bufs[a]
            .data
            .iter()
            .map(|&x| if x > E::zero() { x } else { E::zero() })
            .collect();
        let shape = self.bufs[a].shape.clone();
        let out = self.push_buf(data, shape);
        self.ops.push(Op::Relu { a, out });
        self.finite(out, "relu")?;
        Ok(out)
    }

    pub fn tanh(&mut self, a: BufId) -> Result<BufId> {
        let data = self.bufs[a].data.iter().map(|&x| x.tanh()).collect();
        let shape = self.bufs[a].shape.clone();
        let out = self.push_buf(data, shape);
        self.ops.push(Op::Tanh { a, out });
        self.finite(out, "tanh")?;
        Ok(out)
    }

    pub fn layer_norm_rows(
        &mut self,
        x: BufId,
        gamma: BufId,
        beta: BufId,
        eps: f64,
    ) -> Result<BufId> {
        let d = self.bufs[x].cols();
        if self.bufs[gamma].data.len() != d || self.bufs[beta].data.len() != d {
            return Err(Error::shape(
                "layer_norm",
                &self.bufs[x].shape,
                &self.bufs[gamma].shape,
            ));
        }
        let rows = self.bufs[x].rows();
        let mut data = vec![E::zero(); rows * d];
        for r in 0..rows {
            let row = &self.bufs[x].data[r * d..(r + 1) * d];
            let (mean, rstd) = row_stats(row, eps);
            for c in 0..d {
                data[r * d + c] =
                    (row[c] - mean) * rstd * self.bufs[gamma].data[c] + self.bufs[beta].data[c];
            }
        }
        let shape = self.bufs[x].shape.clone();
        let out = self.push_buf(data, shape);
        self.ops.push(Op::LayerNormRows { x, gamma, beta, eps, out });
        self.finite(out, "layer_norm")?;
        Ok(out)
    }

    /// Multi-head scaled dot-product attention over already-projected
    /// q/k/v ([Lq, Da] and [T, Da]), heads along the column axis. Masked
    /// key/value rows get exactly zero weight.
    pub fn attention(
        &mut self,
        q: BufId,
        k: BufId,
        v: BufId,
        heads: usize,
        mask: Option<MaskId>,
    ) -> Result<BufId> {
        let da = self.bufs[q].cols();
        if self.bufs[k].cols() != da || self.bufs[v].cols() != da {
            return Err(Error::shape("attention", &self.bufs[q].shape, &self.bufs[k].shape));
        }
        if heads == 0 || da % heads != 0 {
            return Err(Error::Config(format!(
                "head count {heads} must divide projected dim {da}"
            )));
        }
        let t_len = self.bufs[k].rows();
        if let Some(mid) = mask {
            if self.masks[mid].len() != t_len {
                return Err(Error::shape("attention mask", &[t_len], &[self.masks[mid].len()]));
            }
            if !self.masks[mid].iter().any(|&b| b) {
                return Err(Error::EmptyAttentionSupport);
            }
        }
        if t_len == 0 {
            return Err(Error::EmptyAttentionSupport);
        }
        let lq = self.bufs[q].rows();
        let dh = da / heads;
        let mut data = vec![E::zero(); lq * da];
        let mut weights = vec![E::zero(); t_len];
        for h in 0..heads {
            for i in 0..lq {
                self.attn_weights(q, k, h, dh, da, i, mask, &mut weights)?;
                let off = h * dh;
                for (t, &w) in weights.iter().enumerate() {
                    if w == E::zero() {
                        continue;
                    }
                    let vrow = &self.bufs[v].data[t * da + off..t * da + off + dh];
                    for (o, &vv) in data[i * da + off..i * da + off + dh].iter_mut().zip(vrow) {
                        *o = *o + w * vv;
                    }
                }
            }
        }
        let out = self.push_buf(data, vec![lq, da]);
        self.ops.push(Op::Attention { q, k, v, heads, mask, out });
        self.finite(out, "attention")?;
        Ok(out)
    }

    /// Softmax attention row for one (head, query); shared by forward and
    /// backward.
    fn attn_weights(
        &self,
        q: BufId,
        k: BufId,
        h: usize,
        dh: usize,
        da: usize,
        i: usize,
        mask: Option<MaskId>,
        weights: &mut [E],
    ) -> Result<()> {
        let t_len = self.bufs[k].rows();
        let off = h * dh;
        let scale = E::from_f64(1.0 / (dh as f64).sqrt());
        let qrow = &self.bufs[q].data[i * da + off..i * da + off + dh];
        let valid = |t: usize| mask.map_or(true, |mid| self.masks[mid][t]);
        let mut max = E::neg_infinity();
        for t in 0..t_len {
            if valid(t) {
                let krow = &self.bufs[k].data[t * da + off..t * da + off + dh];
                let dot = qrow.iter().zip(krow).map(|(&a, &b)| a * b).sum::<E>() * scale;
                weights[t] = dot;
                if dot > max {
                    max = dot;
                }
            } else {
                weights[t] = E::neg_infinity();
            }
        }
        if max == E::neg_infinity() {
            return Err(Error::EmptyAttentionSupport);
        }
        let mut sum = E::zero();
        for t in 0..t_len {
            if valid(t) {
                let e = (weights[t] - max).exp();
                weights[t] = e;
                sum = sum + e;
            } else {
                weights[t] = E::zero();
            }
        }
        if sum <= E::zero() || !sum.is_finite() {
            return Err(Error::EmptyAttentionSupport);
        }
        for w in weights.iter_mut() {
            *w = *w / sum;
        }
        debug_assert!({
            let s: f64 = weights.iter().map(|v| v.as_f64()).sum();
            (s - 1.0).abs() < 1e-6
        });
        Ok(())
    }

    pub fn slice_rows(&mut self, a: BufId, start: usize, rows: usize) -> Result<BufId> {
        let c = self.bufs[a].cols();
        let total = self.bufs[a].rows();
        if start + rows > total {
            return Err(Error::InvalidInput(format!(
                "slice rows {start}..{} out of {total}",
                start + rows
            )));
        }
        let data = self.bufs[a].data[start * c..(start + rows) * c].to_vec();
        let out = self.push_buf(data, vec![rows, c]);
        self.ops.push(Op::SliceRows { a, start, out });
        Ok(out)
    }

    /// Mean over valid rows → [1, c].
    pub fn mean_masked_rows(&mut self, a: BufId, mask: Option<MaskId>) -> Result<BufId> {
        let c = self.bufs[a].cols();
        let rows = self.bufs[a].rows();
        if let Some(mid) = mask {
            if self.masks[mid].len() != rows {
                return Err(Error::shape("mean mask", &[rows], &[self.masks[mid].len()]));
            }
        }
        let valid = |r: usize| mask.map_or(true, |mid| self.masks[mid][r]);
        let n = (0..rows).filter(|&r| valid(r)).count();
        if n == 0 {
            return Err(Error::EmptyAttentionSupport);
        }
        let inv = E::from_f64(1.0 / n as f64);
        let mut data = vec![E::zero(); c];
        for r in 0..rows {
            if valid(r) {
                for j in 0..c {
                    data[j] = data[j] + self.bufs[a].data[r * c + j];
                }
            }
        }
        for d in data.iter_mut() {
            *d = *d * inv;
        }
        let out = self.push_buf(data, vec![1, c]);
        self.ops.push(Op::MeanMaskedRows { a, mask, out });
        self.finite(out, "mean_masked_rows")?;
        Ok(out)
    }

    /// Flatten `a` row-major and dot with `w` (same element count) → [1].
    pub fn dot_flatten(&mut self, a: BufId, w: BufId) -> Result<BufId> {
        if self.bufs[a].data.len() != self.bufs[w].data.len() {
            return Err(Error::shape("dot_flatten", &self.bufs[a].shape, &self.bufs[w].shape));
        }
        let dot = self.bufs[a]
            .data
            .iter()
            .zip(&self.bufs[w].data)
            .map(|(&x, &y)| x * y)
            .sum::<E>();
        let out = self.push_buf(vec![dot], vec![1]);
        self.ops.push(Op::DotFlatten { a, w, out });
        self.finite(out, "dot_flatten")?;
        Ok(out)
    }

    /// Stack scalar buffers into [1, n].
    pub fn stack_scalars(&mut self, items: &[BufId]) -> Result<BufId> {
        let mut data = Vec::with_capacity(items.len());
        for &id in items {
            if self.bufs[id].data.len() != 1 {
                return Err(Error::InvalidInput(
                    "stack_scalars expects scalar buffers".into(),
                ));
            }
            data.push(self.bufs[id].data[0]);
        }
        let n = items.len();
        let out = self.push_buf(data, vec![1, n]);
        self.ops.push(Op::StackScalars { items: items.to_vec(), out });
        Ok(out)
    }

    /// Mean sigmoid cross-entropy from logits; labels must be 0/1.
    ///
    /// Uses max(z,0) − z·y + ln(1 + exp(−|z|)) so saturated logits neither
    /// overflow nor lose the gradient.
    pub fn bce_mean(&mut self, logits: BufId, labels: BufId) -> Result<BufId> {
        if self.bufs[logits].data.len() != self.bufs[labels].data.len() {
            return Err(Error::shape(
                "bce",
                &self.bufs[logits].shape,
                &self.bufs[labels].shape,
            ));
        }
        if self.bufs[labels]
            .data
            .iter()
            .any(|&y| y != E::zero() && y != E::one())
        {
            return Err(Error::InvalidInput("bce labels must be 0 or 1".into()));
        }
        let n = self.bufs[logits].data.len();
        let mut acc = 0.0f64;
        for (&z, &y) in self.bufs[logits].data.iter().zip(&self.bufs[labels].data) {
            let z = z.as_f64();
            let y = y.as_f64();
            acc += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        let out = self.push_buf(vec![E::from_f64(acc / n as f64)], vec![1]);
        self.ops.push(Op::BceMean { logits, labels, out });
        self.finite(out, "bce_mean")?;
        Ok(out)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Accumulate gradients of the scalar `loss` into every buffer that
    /// reaches it. Buffers off the path keep no gradient (read them as zero).
    pub fn backward(&mut self, loss: BufId) -> Result<()> {
        if self.ops.is_empty() {
            return Err(Error::State("backward called before any forward op".into()));
        }
        if self.bufs[loss].data.len() != 1 {
            return Err(Error::State(format!(
                "backward target must be scalar, got shape {:?}",
                self.bufs[loss].shape
            )));
        }
        let mut grads: Vec<Option<Vec<E>>> = vec![None; self.bufs.len()];
        grads[loss] = Some(vec![E::one()]);

        for oi in (0..self.ops.len()).rev() {
            let out = op_out(&self.ops[oi]);
            let go = match grads[out].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_op(oi, &go, &mut grads)?;
        }
        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("backward pass".into()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_op(&self, oi: usize, go: &[E], grads: &mut [Option<Vec<E>>]) -> Result<()> {
        // Get-or-init the gradient slot for one buffer. Only one slot is
        // borrowed at a time; each op accumulates into its inputs in
        // separate scopes.
        macro_rules! gbuf {
            ($id:expr) => {{
                let len = self.bufs[$id].data.len();
                grads[$id].get_or_insert_with(|| vec![E::zero(); len])
            }};
        }
        match &self.ops[oi] {
            Op::MatMul { a, b, out: _ } => {
                let (m, k) = (self.bufs[*a].rows(), self.bufs[*a].cols());
                let n = self.bufs[*b].cols();
                {
                    let ga = gbuf!(*a);
                    for i in 0..m {
                        let go_row = &go[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let b_row = &self.bufs[*b].data[kk * n..(kk + 1) * n];
                            let dot = go_row
                                .iter()
                                .zip(b_row)
                                .map(|(&x, &y)| x * y)
                                .sum::<E>();
                            ga[i * k + kk] = ga[i * k + kk] + dot;
                        }
                    }
                }
                {
                    let gb = gbuf!(*b);
                    for i in 0..m {
                        let go_row = &go[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let av = self.bufs[*a].data[i * k + kk];
                            if av == E::zero() {
                                continue;
                            }
                            let gb_row = &mut gb[kk * n..(kk + 1) * n];
                            for (g, &x) in gb_row.iter_mut().zip(go_row) {
                                *g = *g + av * x;
                            }
                        }
                    }
                }
            }
            Op::Add { a, b, out: _ } => {
                for &id in &[*a, *b] {
                    let g = gbuf!(id);
                    for (gi, &x) in g.iter_mut().zip(go) {
                        *gi = *gi + x;
                    }
                }
            }
            Op::AddRowBroadcast { a, row, out: _ } => {
                let c = self.bufs[*a].cols();
                let r = self.bufs[*a].rows();
                {
                    let ga = gbuf!(*a);
                    for (gi, &x) in ga.iter_mut().zip(go) {
                        *gi = *gi + x;
                    }
                }
                {
                    let grow = gbuf!(*row);
                    for i in 0..r {
                        for j in 0..c {
                            grow[j] = grow[j] + go[i * c + j];
                        }
                    }
                }
            }
            Op::Scale { a, factor, out: _ } => {
                let f = E::from_f64(*factor);
                let ga = gbuf!(*a);
                for (gi, &x) in ga.iter_mut().zip(go) {
                    *gi = *gi + x * f;
                }
            }
            Op::Relu { a, out: _ } => {
                let ga = gbuf!(*a);
                for (i, (gi, &x)) in ga.iter_mut().zip(go).enumerate() {
                    if self.bufs[*a].data[i] > E::zero() {
                        *gi = *gi + x;
                    }
                }
            }
            Op::Tanh { a, out } => {
                let ga = gbuf!(*a);
                for (i, (gi, &x)) in ga.iter_mut().zip(go).enumerate() {
                    let y = self.bufs[*out].data[i];
                    *gi = *gi + x * (E::one() - y * y);
                }
            }
            Op::LayerNormRows { x, gamma, beta, eps, out: _ } => {
                let d = self.bufs[*x].cols();
                let rows = self.bufs[*x].rows();
                let inv_d = E::from_f64(1.0 / d as f64);
                {
                    let gbeta = gbuf!(*beta);
                    for r in 0..rows {
                        for c in 0..d {
                            gbeta[c] = gbeta[c] + go[r * d + c];
                        }
                    }
                }
                for r in 0..rows {
                    let row = &self.bufs[*x].data[r * d..(r + 1) * d];
                    let (mean, rstd) = row_stats(row, *eps);
                    // dgamma needs x̂; dx needs the two row means of dŷ
                    {
                        let ggamma = gbuf!(*gamma);
                        for c in 0..d {
                            let xhat = (row[c] - mean) * rstd;
                            ggamma[c] = ggamma[c] + go[r * d + c] * xhat;
                        }
                    }
                    let gx = gbuf!(*x);
                    let mut mean_dxhat = E::zero();
                    let mut mean_dxhat_xhat = E::zero();
                    for c in 0..d {
                        let dxhat = go[r * d + c] * self.bufs[*gamma].data[c];
                        let xhat = (row[c] - mean) * rstd;
                        mean_dxhat = mean_dxhat + dxhat;
                        mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xhat;
                    }
                    mean_dxhat = mean_dxhat * inv_d;
                    mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
                    for c in 0..d {
                        let dxhat = go[r * d + c] * self.bufs[*gamma].data[c];
                        let xhat = (row[c] - mean) * rstd;
                        gx[r * d + c] = gx[r * d + c]
                            + rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
            }
            Op::Attention { q, k, v, heads, mask, out: _ } => {
                let da = self.bufs[*q].cols();
                let dh = da / heads;
                let lq = self.bufs[*q].rows();
                let t_len = self.bufs[*k].rows();
                let scale = E::from_f64(1.0 / (dh as f64).sqrt());
                let mut weights = vec![E::zero(); t_len];
                let mut d_s = vec![E::zero(); t_len];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..lq {
                        self.attn_weights(*q, *k, h, dh, da, i, *mask, &mut weights)?;
                        let go_row = &go[i * da + off..i * da + off + dh];
                        // dV and dA in one sweep over t
                        let mut dot_da_a = E::zero();
                        for t in 0..t_len {
                            let w = weights[t];
                            if w == E::zero() {
                                d_s[t] = E::zero();
                                continue;
                            }
                            let vrow = &self.bufs[*v].data[t * da + off..t * da + off + dh];
                            let da_t = go_row
                                .iter()
                                .zip(vrow)
                                .map(|(&g, &vv)| g * vv)
                                .sum::<E>();
                            d_s[t] = da_t;
                            dot_da_a = dot_da_a + da_t * w;
                        }
                        {
                            let gv = gbuf!(*v);
                            for t in 0..t_len {
                                let w = weights[t];
                                if w == E::zero() {
                                    continue;
                                }
                                let gv_row = &mut gv[t * da + off..t * da + off + dh];
                                for (g, &x) in gv_row.iter_mut().zip(go_row) {
                                    *g = *g + w * x;
                                }
                            }
                        }
                        for t in 0..t_len {
                            d_s[t] = weights[t] * (d_s[t] - dot_da_a);
                        }
                        {
                            let gq = gbuf!(*q);
                            let gq_row = &mut gq[i * da + off..i * da + off + dh];
                            for t in 0..t_len {
                                let ds = d_s[t] * scale;
                                if ds == E::zero() {
                                    continue;
                                }
                                let krow = &self.bufs[*k].data[t * da + off..t * da + off + dh];
                                for (g, &kk) in gq_row.iter_mut().zip(krow) {
                                    *g = *g + ds * kk;
                                }
                            }
                        }
                        {
                            let gk = gbuf!(*k);
                            let qrow = &self.bufs[*q].data[i * da + off..i * da + off + dh];
                            for t in 0..t_len {
                                let ds = d_s[t] * scale;
                                if ds == E::zero() {
                                    continue;
                                }
                                let gk_row = &mut gk[t * da + off..t * da + off + dh];
                                for (g, &qq) in gk_row.iter_mut().zip(qrow) {
                                    *g = *g + ds * qq;
                                }
                            }
                        }
                    }
                }
            }
            Op::SliceRows { a, start, out } => {
                let c = self.bufs[*a].cols();
                let rows = self.bufs[*out].rows();
                let ga = gbuf!(*a);
                for i in 0..rows * c {
                    ga[start * c + i] = ga[start * c + i] + go[i];
                }
            }
            Op::MeanMaskedRows { a, mask, out: _ } => {
                let c = self.bufs[*a].cols();
                let rows = self.bufs[*a].rows();
                let valid = |r: usize| mask.map_or(true, |mid| self.masks[mid][r]);
                let n = (0..rows).filter(|&r| valid(r)).count();
                let inv = E::from_f64(1.0 / n as f64);
                let ga = gbuf!(*a);
                for r in 0..rows {
                    if valid(r) {
                        for j in 0..c {
                            ga[r * c + j] = ga[r * c + j] + go[j] * inv;
                        }
                    }
                }
            }
            Op::DotFlatten { a, w, out: _ } => {
                let g = go[0];
                {
                    let ga = gbuf!(*a);
                    for (gi, &wv) in ga.iter_mut().zip(&self.bufs[*w].data) {
                        *gi = *gi + g * wv;
                    }
                }
                {
                    let gw = gbuf!(*w);
                    for (gi, &av) in gw.iter_mut().zip(&self.bufs[*a].data) {
                        *gi = *gi + g * av;
                    }
                }
            }
            Op::StackScalars { items, out: _ } => {
                for (i, &id) in items.iter().enumerate() {
                    let g = gbuf!(id);
                    g[0] = g[0] + go[i];
                }
            }
            Op::BceMean { logits, labels, out: _ } => {
                let n = self.bufs[*logits].data.len();
                let inv = go[0].as_f64() / n as f64;
                let gl = gbuf!(*logits);
                for i in 0..n {
                    let z = self.bufs[*logits].data[i].as_f64();
                    let y = self.bufs[*labels].data[i].as_f64();
                    let sig = 1.0 / (1.0 + (-z).exp());
                    gl[i] = gl[i] + E::from_f64((sig - y) * inv);
                }
            }
        }
        Ok(())
    }
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

fn op_out(op: &Op) -> BufId {
    match op {
        Op::MatMul { out, .. }
        | Op::Add { out, .. }
        | Op::AddRowBroadcast { out, .. }
        | Op::Scale { out, .. }
        | Op::Relu { out, .. }
        | Op::Tanh { out, .. }
        | Op::LayerNormRows { out, .. }
        | Op::Attention { out, .. }
        | Op::SliceRows { out, .. }
        | Op::MeanMaskedRows { out, .. }
        | Op::DotFlatten { out, .. }
        | Op::StackScalars { out, .. }
        | Op::BceMean { out, .. } => *out,
    }
}

fn row_stats<E: Scalar>(row: &[E], eps: f64) -> (E, E) {
    let inv_d = E::from_f64(1.0 / row.len() as f64);
    let mean = row.iter().copied().sum::<E>() * inv_d;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv_d;
    let rstd = (var + E::from_f64(eps)).sqrt().recip();
    (mean, rstd)
}
