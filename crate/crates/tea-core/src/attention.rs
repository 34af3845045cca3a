//! Tensor-augmented attention: single-head tensor attention, multi-head
//! combination through a head weight vector, optional causal masking, and
//! multi-layer composition.
//!
//! One head maps `x ∈ R^{L×a×b}` to the same shape via
//! `σ(RowSoftmax(⟨x,W_Q⟩⟨x,W_K⟩ᵀ) ⟨x,W_V⟩) W_O` — note the activation sits
//! between the attention-weighted sum and the output weight tensor, not in a
//! separate feed-forward block. There is no `1/√d` scaling on the score
//! matrix by default; [`AttnConfig::scale_scores`] opts into it.
//!
//! Every forward op here has a matching backward that propagates adjoints to
//! inputs and weights; the attention weights are the trainable part of the
//! model, so those backwards are exercised by finite differencing.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Result, TensorError};
use crate::flops::FlopCounter;
use crate::tensor::{DenseTensor, Matrix};

/// Logit value standing in for −∞ on masked positions; large enough that
/// the stabilized softmax underflows it to exactly zero probability.
pub const MASK_LOGIT: f64 = -1e30;

/// Elementwise activation with σ(0) = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    /// Test-only: makes forward paths exactly linear past the softmax.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu(alpha) => {
                if z >= 0.0 {
                    z
                } else {
                    alpha * z
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(alpha) => {
                if z >= 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Per-head weight tensors: `w_q`, `w_k`, `w_v` of shape `a×b×d` and `w_o`
/// of shape `d×a×b`.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w_q: DenseTensor,
    pub w_k: DenseTensor,
    pub w_v: DenseTensor,
    pub w_o: DenseTensor,
}

impl HeadParams {
    pub fn validate(&self) -> Result<()> {
        let s = self.w_q.shape();
        if s.len() != 3 {
            return Err(TensorError::ShapeError("head weights must be order 3".into()));
        }
        if self.w_k.shape() != s || self.w_v.shape() != s {
            return Err(TensorError::ShapeError("w_q/w_k/w_v shapes differ".into()));
        }
        let want_o = [s[2], s[0], s[1]];
        if self.w_o.shape() != want_o {
            return Err(TensorError::ShapeError(format!(
                "w_o shape {:?} does not match {:?}",
                self.w_o.shape(),
                want_o
            )));
        }
        Ok(())
    }

    pub fn attn_dim(&self) -> usize {
        self.w_q.shape()[2]
    }
}

/// H heads plus the head weight vector combining their outputs.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    pub head_weights: Vec<f64>,
}

impl AttentionParams {
    pub fn validate(&self) -> Result<()> {
        if self.heads.is_empty() || self.heads.len() != self.head_weights.len() {
            return Err(TensorError::InvalidArgument(format!(
                "need H >= 1 heads with matching weight vector, got {} heads / {} weights",
                self.heads.len(),
                self.head_weights.len()
            )));
        }
        for h in &self.heads {
            h.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AttnConfig {
    /// Strict causal mask over the sequence mode: query `i` may attend keys
    /// `j <= i` only.
    pub causal: bool,
    /// Standard `1/√d` score scaling; off by default.
    pub scale_scores: bool,
}

impl AttnConfig {
    pub fn causal() -> Self {
        Self {
            causal: true,
            scale_scores: false,
        }
    }
}

/// Numerically stabilized row softmax: each row of the output is a
/// probability vector.
pub fn row_softmax(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..m.cols() {
            let e = libm::exp(row[c] - max);
            out.set(r, c, e);
            sum += e;
        }
        for c in 0..m.cols() {
            let v = out.at(r, c) / sum;
            out.set(r, c, v);
        }
    }
    out
}

/// Adjoint of [`row_softmax`]: `dlogits = p ∘ (dp − ⟨dp, p⟩)` per row.
/// Masked entries carry `p = 0` exactly and therefore zero gradient.
pub fn row_softmax_backward(probs: &Matrix, dprobs: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let dot: f64 = (0..probs.cols())
            .map(|c| probs.at(r, c) * dprobs.at(r, c))
            .sum();
        for c in 0..probs.cols() {
            out.set(r, c, probs.at(r, c) * (dprobs.at(r, c) - dot));
        }
    }
    out
}

/// Saved intermediates of one single-head forward, reused by the backward.
#[derive(Debug, Clone)]
pub struct ShaCtx {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub probs: Matrix,
    /// Pre-activation attention-weighted values `probs · v`.
    pub z: Matrix,
    /// `σ(z)`.
    pub s: Matrix,
}

fn flat_rows(x: &DenseTensor) -> Result<Matrix> {
    let l = x.shape()[0];
    Matrix::new(l, x.len() / l, x.data().to_vec())
}

fn flat_leading(w: &DenseTensor) -> Result<Matrix> {
    let d = *w.shape().last().expect("non-empty shape");
    Matrix::new(w.len() / d, d, w.data().to_vec())
}

/// Single-head tensor attention with distinct query and key/value sources
/// (`xq == xkv` is self-attention). Returns the output and the saved
/// context.
pub fn sha_forward_ctx(
    xq: &DenseTensor,
    xkv: &DenseTensor,
    head: &HeadParams,
    act: Activation,
    cfg: AttnConfig,
    mut counter: Option<&mut FlopCounter>,
) -> Result<(DenseTensor, ShaCtx)> {
    head.validate()?;
    if xq.order() != 3 || xkv.order() != 3 {
        return Err(TensorError::ShapeError("attention inputs must be order 3".into()));
    }
    if xq.shape()[1..] != xkv.shape()[1..] {
        return Err(TensorError::ShapeError(
            "query and key/value feature modes differ".into(),
        ));
    }
    let (a, b) = (xq.shape()[1], xq.shape()[2]);
    if head.w_q.shape()[0] != a || head.w_q.shape()[1] != b {
        return Err(TensorError::ShapeError(format!(
            "head weights {:?} do not match input feature modes {a}x{b}",
            head.w_q.shape()
        )));
    }
    let (lq, lk) = (xq.shape()[0], xkv.shape()[0]);
    if cfg.causal && lq != lk {
        return Err(TensorError::ShapeError(
            "causal mask requires matching query/key lengths".into(),
        ));
    }
    let d = head.attn_dim();
    let ab = a * b;

    let xq_m = flat_rows(xq)?;
    let xkv_m = flat_rows(xkv)?;
    let q = xq_m.matmul(&flat_leading(&head.w_q)?)?;
    let k = xkv_m.matmul(&flat_leading(&head.w_k)?)?;
    let v = xkv_m.matmul(&flat_leading(&head.w_v)?)?;
    if let Some(c) = counter.as_deref_mut() {
        c.add((lq * ab * d + 2 * lk * ab * d) as u64);
    }

    let mut logits = q.matmul(&k.transpose())?;
    if cfg.scale_scores {
        let s = 1.0 / libm::sqrt(d as f64);
        for v in logits.data_mut() {
            *v *= s;
        }
    }
    if cfg.causal {
        for i in 0..lq {
            for j in (i + 1)..lk {
                logits.set(i, j, MASK_LOGIT);
            }
        }
    }
    if let Some(c) = counter.as_deref_mut() {
        c.add((lq * lk * d) as u64);
        c.record_score_shape(lq, lk);
    }

    let probs = row_softmax(&logits);
    let z = probs.matmul(&v)?;
    if let Some(c) = counter.as_deref_mut() {
        c.add((lq * lk * d) as u64);
    }
    let mut s = Matrix::zeros(lq, d);
    for r in 0..lq {
        for cidx in 0..d {
            s.set(r, cidx, act.apply(z.at(r, cidx)));
        }
    }
    let wo_m = Matrix::new(d, ab, head.w_o.data().to_vec())?;
    let out_m = s.matmul(&wo_m)?;
    if let Some(c) = counter.as_deref_mut() {
        c.add((lq * d * ab) as u64);
    }
    let out = DenseTensor::new(vec![lq, a, b], out_m.data().to_vec())?;
    Ok((
        out,
        ShaCtx {
            q,
            k,
            v,
            probs,
            z,
            s,
        },
    ))
}

/// Self-attention single head.
pub fn sha_forward(
    x: &DenseTensor,
    head: &HeadParams,
    act: Activation,
    cfg: AttnConfig,
) -> Result<DenseTensor> {
    Ok(sha_forward_ctx(x, x, head, act, cfg, None)?.0)
}

/// Gradients of one head's weights.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub w_q: DenseTensor,
    pub w_k: DenseTensor,
    pub w_v: DenseTensor,
    pub w_o: DenseTensor,
}

/// Backward of [`sha_forward_ctx`]: maps the output adjoint to the query
/// input adjoint, key/value input adjoint, and weight gradients.
pub fn sha_backward(
    dout: &DenseTensor,
    xq: &DenseTensor,
    xkv: &DenseTensor,
    head: &HeadParams,
    act: Activation,
    cfg: AttnConfig,
    ctx: &ShaCtx,
) -> Result<(DenseTensor, DenseTensor, HeadGrads)> {
    let (lq, a, b) = (xq.shape()[0], xq.shape()[1], xq.shape()[2]);
    let lk = xkv.shape()[0];
    let d = head.attn_dim();
    let ab = a * b;

    let dout_m = flat_rows(dout)?;
    let wo_m = Matrix::new(d, ab, head.w_o.data().to_vec())?;
    let ds = dout_m.matmul(&wo_m.transpose())?;
    let d_wo = ctx.s.transpose().matmul(&dout_m)?;

    let mut dz = Matrix::zeros(lq, d);
    for r in 0..lq {
        for c in 0..d {
            dz.set(r, c, ds.at(r, c) * act.derivative(ctx.z.at(r, c)));
        }
    }
    let dprobs = dz.matmul(&ctx.v.transpose())?;
    let dv = ctx.probs.transpose().matmul(&dz)?;
    let mut dlogits = row_softmax_backward(&ctx.probs, &dprobs);
    if cfg.scale_scores {
        let s = 1.0 / libm::sqrt(d as f64);
        for v in dlogits.data_mut() {
            *v *= s;
        }
    }
    let dq = dlogits.matmul(&ctx.k)?;
    let dk = dlogits.transpose().matmul(&ctx.q)?;

    let xq_m = flat_rows(xq)?;
    let xkv_m = flat_rows(xkv)?;
    let wq_m = flat_leading(&head.w_q)?;
    let wk_m = flat_leading(&head.w_k)?;
    let wv_m = flat_leading(&head.w_v)?;

    let dxq_m = dq.matmul(&wq_m.transpose())?;
    let mut dxkv_m = dk.matmul(&wk_m.transpose())?;
    let dxkv_v = dv.matmul(&wv_m.transpose())?;
    for (x, y) in dxkv_m.data_mut().iter_mut().zip(dxkv_v.data()) {
        *x += y;
    }

    let d_wq = xq_m.transpose().matmul(&dq)?;
    let d_wk = xkv_m.transpose().matmul(&dk)?;
    let d_wv = xkv_m.transpose().matmul(&dv)?;

    Ok((
        DenseTensor::new(vec![lq, a, b], dxq_m.data().to_vec())?,
        DenseTensor::new(vec![lk, a, b], dxkv_m.data().to_vec())?,
        HeadGrads {
            w_q: DenseTensor::new(vec![a, b, d], d_wq.data().to_vec())?,
            w_k: DenseTensor::new(vec![a, b, d], d_wk.data().to_vec())?,
            w_v: DenseTensor::new(vec![a, b, d], d_wv.data().to_vec())?,
            w_o: DenseTensor::new(vec![d, a, b], d_wo.data().to_vec())?,
        },
    ))
}

/// Saved context of a multi-head forward.
#[derive(Debug, Clone)]
pub struct MhaCtx {
    pub head_ctxs: Vec<ShaCtx>,
    pub head_outputs: Vec<DenseTensor>,
}

/// Multi-head attention: per-head outputs stacked on a virtual fourth mode
/// and contracted with the head weight vector,
/// `out = Σ_h w_H[h] · SHA_h(x)`.
pub fn mha_forward_ctx(
    xq: &DenseTensor,
    xkv: &DenseTensor,
    p: &AttentionParams,
    act: Activation,
    cfg: AttnConfig,
    mut counter: Option<&mut FlopCounter>,
) -> Result<(DenseTensor, MhaCtx)> {
    p.validate()?;
    let mut head_ctxs = Vec::with_capacity(p.heads.len());
    let mut head_outputs = Vec::with_capacity(p.heads.len());
    let mut out = DenseTensor::zeros(xq.shape().to_vec());
    // Heads combined in fixed order for bitwise determinism.
    for (head, &w) in p.heads.iter().zip(&p.head_weights) {
        let (o, ctx) = sha_forward_ctx(xq, xkv, head, act, cfg, counter.as_deref_mut())?;
        out = out.add(&o.scale(w))?;
        if let Some(c) = counter.as_deref_mut() {
            c.add(o.len() as u64);
        }
        head_ctxs.push(ctx);
        head_outputs.push(o);
    }
    Ok((
        out,
        MhaCtx {
            head_ctxs,
            head_outputs,
        },
    ))
}

pub fn mha_forward(
    x: &DenseTensor,
    p: &AttentionParams,
    act: Activation,
    cfg: AttnConfig,
) -> Result<DenseTensor> {
    Ok(mha_forward_ctx(x, x, p, act, cfg, None)?.0)
}

/// Gradients of an [`AttentionParams`] bundle.
#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub heads: Vec<HeadGrads>,
    pub head_weights: Vec<f64>,
}

pub fn mha_backward(
    dout: &DenseTensor,
    xq: &DenseTensor,
    xkv: &DenseTensor,
    p: &AttentionParams,
    act: Activation,
    cfg: AttnConfig,
    ctx: &MhaCtx,
) -> Result<(DenseTensor, DenseTensor, AttentionGrads)> {
    let mut dxq = DenseTensor::zeros(xq.shape().to_vec());
    let mut dxkv = DenseTensor::zeros(xkv.shape().to_vec());
    let mut heads = Vec::with_capacity(p.heads.len());
    let mut dw_h = Vec::with_capacity(p.heads.len());
    for (h, head) in p.heads.iter().enumerate() {
        dw_h.push(ctx.head_outputs[h].inner(dout)?);
        let scaled = dout.scale(p.head_weights[h]);
        let (dq, dkv, grads) =
            sha_backward(&scaled, xq, xkv, head, act, cfg, &ctx.head_ctxs[h])?;
        dxq = dxq.add(&dq)?;
        dxkv = dxkv.add(&dkv)?;
        heads.push(grads);
    }
    Ok((
        dxq,
        dxkv,
        AttentionGrads {
            heads,
            head_weights: dw_h,
        },
    ))
}

/// Named self-attention entry point: queries, keys, and values all derive
/// from the same sequence.
pub fn msa_forward(
    x: &DenseTensor,
    p: &AttentionParams,
    act: Activation,
    cfg: AttnConfig,
) -> Result<DenseTensor> {
    mha_forward(x, p, act, cfg)
}

/// S-layer composition `T^(S) ∘ … ∘ T^(0)`; an empty layer list is the
/// identity.
pub fn stack_forward(
    x: &DenseTensor,
    layers: &[(AttentionParams, Activation)],
    cfg: AttnConfig,
) -> Result<DenseTensor> {
    let mut cur = x.clone();
    for (p, act) in layers {
        cur = mha_forward(&cur, p, *act, cfg)?;
    }
    Ok(cur)
}
