//! Single attention heads and the patch decomposition used by patchy layers.
//!
//! All heads take a feature-major batch `x` of shape `m × b` and build keys and
//! queries `k = σ(W_k x + w_k0)`, `q = σ(W_q x + w_q0)` with σ the identity or
//! `tanh`. They differ in which axis the score matrix `B` spans:
//!
//! * [`Variant::DotProduct`]: `B = qᵀk / √dk` (`b × b`), `y = v · softmax(Bᵀ)`.
//! * [`Variant::CosinePe`]: `B_ij = cos∠(q[:, i], k[:, j])` (`b × b`),
//!   `y = x · softmax(Bᵀ)`. Whole samples are re-weighted.
//! * [`Variant::BatchPc`]: `B_fg = cos∠(q[f, :], k[g, :])` (`m × m`), computed
//!   across the batch, `y = xᵀ · softmax(B)`. Individual features are
//!   re-weighted.
//!
//! Softmax always normalises each column over its rows.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{contract, dim_err, Error, Result};
use crate::tape::{Tape, Var};
use crate::{Rng, Tensor};

/// Added to cosine denominators so zero-norm rows or columns give a score of
/// zero instead of NaN, while keeping the expression differentiable.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    DotProduct,
    CosinePe,
    BatchPc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum KqNonlinearity {
    Identity,
    #[default]
    Tanh,
}

/// Learnable key/query (and optional value) maps of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub variant: Variant,
    pub kq_nonlinearity: KqNonlinearity,
    /// `d × m`
    pub w_k: Tensor,
    pub w_k0: Tensor,
    pub w_q: Tensor,
    pub w_q0: Tensor,
    pub w_v: Option<Tensor>,
    pub w_v0: Option<Tensor>,
}

impl AttentionHead {
    /// Glorot-initialised weights, zero biases. `d` is the key/query dimension
    /// and must equal `m` for [`Variant::BatchPc`]; the value map, when
    /// requested, is `m → m` (cosine heads) or `m → d` (dot-product).
    pub fn new(
        variant: Variant,
        m: usize,
        d: usize,
        kq_nonlinearity: KqNonlinearity,
        value_transform: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if m == 0 || d == 0 {
            return contract("attention head dimensions must be positive");
        }
        if variant == Variant::BatchPc && d != m {
            return contract(format!("BatchPc head needs a square key map, got d={d}, m={m}"));
        }
        let w_k = Tensor::seeded_init(&[d, m], m, rng)?;
        let w_q = Tensor::seeded_init(&[d, m], m, rng)?;
        let (w_v, w_v0) = if value_transform {
            let dv = if variant == Variant::DotProduct { d } else { m };
            (Some(Tensor::seeded_init(&[dv, m], m, rng)?), Some(Tensor::zeros(&[dv])))
        } else {
            (None, None)
        };
        let head = Self {
            variant,
            kq_nonlinearity,
            w_k,
            w_k0: Tensor::zeros(&[d]),
            w_q,
            w_q0: Tensor::zeros(&[d]),
            w_v,
            w_v0,
        };
        head.validate()?;
        Ok(head)
    }

    /// Head with identity key/query maps and zero biases.
    pub fn identity(variant: Variant, m: usize, kq_nonlinearity: KqNonlinearity) -> Self {
        Self {
            variant,
            kq_nonlinearity,
            w_k: Tensor::eye(m),
            w_k0: Tensor::zeros(&[m]),
            w_q: Tensor::eye(m),
            w_q0: Tensor::zeros(&[m]),
            w_v: None,
            w_v0: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_k.cols()
    }

    pub fn key_dim(&self) -> usize {
        self.w_k.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, m) = self.w_k.require_matrix("attention head")?;
        if self.w_q.shape() != [d, m] {
            return dim_err("attention head w_q", &[d, m], self.w_q.shape());
        }
        if self.w_k0.numel() != d || self.w_q0.numel() != d {
            return dim_err("attention head bias", &[d], self.w_k0.shape());
        }
        if self.variant == Variant::BatchPc && d != m {
            return contract(format!("BatchPc head needs d = m, got d={d}, m={m}"));
        }
        match (&self.w_v, &self.w_v0) {
            (None, None) => {}
            (Some(w), Some(b)) => {
                let (dv, mv) = w.require_matrix("attention head w_v")?;
                if mv != m || b.numel() != dv {
                    return dim_err("attention head w_v", &[dv, m], w.shape());
                }
            }
            _ => return contract("w_v and w_v0 must be present together"),
        }
        Ok(())
    }

    /// Named parameter tensors in binding order.
    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = alloc::vec![("w_k", &self.w_k), ("w_k0", &self.w_k0), ("w_q", &self.w_q), ("w_q0", &self.w_q0)];
        if let (Some(w), Some(b)) = (&self.w_v, &self.w_v0) {
            out.push(("w_v", w));
            out.push(("w_v0", b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = alloc::vec![&mut self.w_k, &mut self.w_k0, &mut self.w_q, &mut self.w_q0];
        if let (Some(w), Some(b)) = (&mut self.w_v, &mut self.w_v0) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Registers the head's parameters on `tape`, in [`Self::params`] order.
    pub fn bind(&self, tape: &mut Tape) -> BoundHead {
        let w_k = tape.param(self.w_k.clone());
        let w_k0 = tape.param(self.w_k0.clone());
        let w_q = tape.param(self.w_q.clone());
        let w_q0 = tape.param(self.w_q0.clone());
        let value = match (&self.w_v, &self.w_v0) {
            (Some(w), Some(b)) => Some((tape.param(w.clone()), tape.param(b.clone()))),
            _ => None,
        };
        BoundHead {
            variant: self.variant,
            kq_nonlinearity: self.kq_nonlinearity,
            input_dim: self.input_dim(),
            key_dim: self.key_dim(),
            w_k,
            w_k0,
            w_q,
            w_q0,
            value,
        }
    }
}

/// An [`AttentionHead`] whose parameters live on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundHead {
    pub variant: Variant,
    pub kq_nonlinearity: KqNonlinearity,
    input_dim: usize,
    key_dim: usize,
    pub w_k: Var,
    pub w_k0: Var,
    pub w_q: Var,
    pub w_q0: Var,
    pub value: Option<(Var, Var)>,
}

/// Score matrix and output of one head evaluation.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub scores: Var,
    pub y: Var,
}

fn affine(tape: &mut Tape, w: Var, b: Var, x: Var) -> Result<Var> {
    let wx = tape.matmul(w, x)?;
    tape.add_col_bias(wx, b)
}

fn require_variant(head: &BoundHead, v: Variant) -> Result<()> {
    if head.variant != v {
        return contract(format!("head is {:?}, operation needs {v:?}", head.variant));
    }
    Ok(())
}

/// `B = (qᵀk) ⊘ (‖q[:, i]‖·‖k[:, j]‖ + ε)`, the `b × b` cosine matrix between
/// batch columns.
pub fn cosine_pe_scores(tape: &mut Tape, q: Var, k: Var) -> Result<Var> {
    let dot = tape.matmul_t(q, true, k, false)?;
    let qn = tape.col_norms(q)?;
    let kn = tape.col_norms(k)?;
    let denom = tape.matmul_t(qn, true, kn, false)?;
    let denom = tape.add_scalar(denom, COSINE_EPS);
    tape.div(dot, denom)
}

/// `B = (q kᵀ) ⊘ (‖q[f, :]‖·‖k[g, :]‖ + ε)`, the `m × m` cosine matrix between
/// features measured across the batch.
pub fn bpc_scores(tape: &mut Tape, q: Var, k: Var) -> Result<Var> {
    let dot = tape.matmul_t(q, false, k, true)?;
    let qn = tape.row_norms(q)?;
    let kn = tape.row_norms(k)?;
    let denom = tape.matmul_t(qn, false, kn, true)?;
    let denom = tape.add_scalar(denom, COSINE_EPS);
    tape.div(dot, denom)
}

impl BoundHead {
    /// `k = σ(W_k x + w_k0)`, `q = σ(W_q x + w_q0)`.
    pub fn kq_transform(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let xv = tape.value(x);
        let (m, _) = xv.require_matrix("kq_transform")?;
        if m != self.input_dim {
            return dim_err("kq_transform", &[self.input_dim], xv.shape());
        }
        let mut k = affine(tape, self.w_k, self.w_k0, x)?;
        let mut q = affine(tape, self.w_q, self.w_q0, x)?;
        if self.kq_nonlinearity == KqNonlinearity::Tanh {
            k = tape.tanh(k);
            q = tape.tanh(q);
        }
        Ok((k, q))
    }

    fn value_path(&self, tape: &mut Tape, x: Var) -> Result<Option<Var>> {
        match self.value {
            Some((w, b)) => Ok(Some(affine(tape, w, b, x)?)),
            None => Ok(None),
        }
    }

    /// Scaled dot-product head. `v_input` is used as the value when the head
    /// has no value map of its own.
    pub fn dot_product_attention(&self, tape: &mut Tape, x: Var, v_input: Option<Var>) -> Result<HeadOutput> {
        require_variant(self, Variant::DotProduct)?;
        if self.key_dim == 0 {
            return contract("dot-product head needs dk > 0");
        }
        let (k, q) = self.kq_transform(tape, x)?;
        let qk = tape.matmul_t(q, true, k, false)?;
        let scores = tape.scale(qk, 1.0 / libm::sqrt(self.key_dim as f64));
        let v = match (self.value_path(tape, x)?, v_input) {
            (Some(v), _) => v,
            (None, Some(v)) => v,
            (None, None) => return contract("dot-product head without value map needs a value input"),
        };
        let weights = tape.transpose(scores)?;
        let weights = tape.softmax_cols(weights)?;
        let y = tape.matmul(v, weights)?;
        Ok(HeadOutput { scores, y })
    }

    /// Cosine primary-element head; output has the shape of `x` (or of the
    /// value map's output when one is present).
    pub fn cosine_pe_attention(&self, tape: &mut Tape, x: Var) -> Result<HeadOutput> {
        require_variant(self, Variant::CosinePe)?;
        let (k, q) = self.kq_transform(tape, x)?;
        let scores = cosine_pe_scores(tape, q, k)?;
        let v = self.value_path(tape, x)?.unwrap_or(x);
        let weights = tape.transpose(scores)?;
        let weights = tape.softmax_cols(weights)?;
        let y = tape.matmul(v, weights)?;
        Ok(HeadOutput { scores, y })
    }

    /// Batch primary-component head; output is `b × m`.
    pub fn bpc_attention(&self, tape: &mut Tape, x: Var) -> Result<HeadOutput> {
        require_variant(self, Variant::BatchPc)?;
        if self.key_dim != self.input_dim {
            return contract("BatchPc head needs d = m");
        }
        let (k, q) = self.kq_transform(tape, x)?;
        let scores = bpc_scores(tape, q, k)?;
        let v = self.value_path(tape, x)?.unwrap_or(x);
        let weights = tape.softmax_cols(scores)?;
        let y = tape.matmul_t(v, true, weights, false)?;
        Ok(HeadOutput { scores, y })
    }

    /// [`Self::bpc_attention`] transposed back to the feature-major `m × b`
    /// layout.
    pub fn bpc_layer(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let out = self.bpc_attention(tape, x)?;
        tape.transpose(out.y)
    }
}

/// Decomposition of an `H × W × C` image into equal rectangular patches.
///
/// Flattened images are channel-major (`ch·H·W + r·W + c`). Patches are
/// ordered channel-major outermost, then row-major over the patch grid, and
/// each patch is flattened row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatchLayout {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch_h: usize,
    pub patch_w: usize,
}

impl PatchLayout {
    pub fn new(image_h: usize, image_w: usize, channels: usize, patch_h: usize, patch_w: usize) -> Result<Self> {
        let l = Self {
            image_h,
            image_w,
            channels,
            patch_h,
            patch_w,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.image_h, self.image_w, self.channels, self.patch_h, self.patch_w];
        if dims.contains(&0) {
            return Err(Error::Layout(format!("zero extent in {self:?}")));
        }
        if !self.image_h.is_multiple_of(self.patch_h) || !self.image_w.is_multiple_of(self.patch_w) {
            return Err(Error::Layout(format!(
                "{}x{} patches do not tile a {}x{} image",
                self.patch_h, self.patch_w, self.image_h, self.image_w
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_h / self.patch_h, self.image_w / self.patch_w)
    }

    pub fn patch_count(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw * self.channels
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn input_dim(&self) -> usize {
        self.image_h * self.image_w * self.channels
    }

    /// Source row of every patch entry: `indices()[p][i]` is the flattened
    /// image row that becomes row `i` of patch `p`.
    pub fn indices(&self) -> Vec<Vec<usize>> {
        let (gh, gw) = self.grid();
        let mut out = Vec::with_capacity(self.patch_count());
        for ch in 0..self.channels {
            for pr in 0..gh {
                for pc in 0..gw {
                    let mut idx = Vec::with_capacity(self.patch_dim());
                    for i in 0..self.patch_h {
                        for j in 0..self.patch_w {
                            let r = pr * self.patch_h + i;
                            let c = pc * self.patch_w + j;
                            idx.push(ch * self.image_h * self.image_w + r * self.image_w + c);
                        }
                    }
                    out.push(idx);
                }
            }
        }
        out
    }
}

/// Splits a flattened image batch into its patches.
pub fn patch_split(x: &Tensor, layout: &PatchLayout) -> Result<Vec<Tensor>> {
    layout.validate()?;
    let (rows, b) = x.require_matrix("patch_split")?;
    if rows != layout.input_dim() {
        return dim_err("patch_split", &[layout.input_dim()], x.shape());
    }
    let data = x.data();
    Ok(layout
        .indices()
        .into_iter()
        .map(|idx| {
            let mut p = Vec::with_capacity(idx.len() * b);
            for r in idx {
                p.extend_from_slice(&data[r * b..(r + 1) * b]);
            }
            Tensor::from_parts(alloc::vec![layout.patch_dim(), b], p)
        })
        .collect())
}

/// Direct sum of patch outputs: stacks them in patch order.
pub fn patch_join(patches: &[Tensor]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = patches.iter().collect();
    Tensor::concat_rows(&refs)
}

/// Inverse of [`patch_split`]: places each patch back at its source pixels.
pub fn patch_unsplit(patches: &[Tensor], layout: &PatchLayout) -> Result<Tensor> {
    let idx = layout.indices();
    if patches.len() != idx.len() {
        return contract(format!("expected {} patches, got {}", idx.len(), patches.len()));
    }
    let b = patches[0].cols();
    let mut out = alloc::vec![0.0; layout.input_dim() * b];
    for (p, rows) in patches.iter().zip(idx) {
        if p.shape() != [layout.patch_dim(), b] {
            return dim_err("patch_unsplit", &[layout.patch_dim(), b], p.shape());
        }
        for (i, r) in rows.into_iter().enumerate() {
            out[r * b..(r + 1) * b].copy_from_slice(&p.data()[i * b..(i + 1) * b]);
        }
    }
    Ok(Tensor::from_parts(alloc::vec![layout.input_dim(), b], out))
}

/// Tape version of [`patch_split`].
pub fn patch_split_var(tape: &mut Tape, x: Var, layout: &PatchLayout) -> Result<Vec<Var>> {
    layout.validate()?;
    let rows = tape.value(x).rows();
    if rows != layout.input_dim() {
        return dim_err("patch_split", &[layout.input_dim()], tape.value(x).shape());
    }
    // Each patch is a union of row runs of length patch_w.
    let mut out = Vec::with_capacity(layout.patch_count());
    for idx in layout.indices() {
        let mut runs = Vec::with_capacity(layout.patch_h);
        for chunk in idx.chunks(layout.patch_w) {
            runs.push(tape.slice_rows(x, chunk[0], layout.patch_w)?);
        }
        out.push(if runs.len() == 1 { runs[0] } else { tape.concat_rows(&runs)? });
    }
    Ok(out)
}
