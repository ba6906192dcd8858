//! Model building blocks: linear maps, layer norm, multi-head attention,
//! pre-norm encoder blocks, the convolutional front-end, and the embedding
//! tables.

use std::collections::HashMap;

use crate::tensor::{ops, Scalar, Tape, Tensor, TensorError};

use super::{ModelError, RunMode};

pub(super) const LAYER_NORM_EPS: f64 = 1e-5;

/// Pull one tensor out of a name→tensor map, or report which is missing.
pub(super) fn take<E: Scalar>(
    map: &mut HashMap<String, Tensor<E>>,
    name: &str,
) -> Result<Tensor<E>, ModelError> {
    map.remove(name).ok_or_else(|| ModelError::Config {
        detail: format!("missing parameter {name:?}"),
    })
}

#[derive(Debug, Clone)]
pub(super) struct Linear<E: Scalar> {
    pub weight: Tensor<E>, // in × out
    pub bias: Tensor<E>,   // out
}

impl<E: Scalar> Linear<E> {
    pub fn from_map(
        map: &mut HashMap<String, Tensor<E>>,
        prefix: &str,
    ) -> Result<Self, ModelError> {
        Ok(Linear {
            weight: take(map, &format!("{prefix}.weight"))?,
            bias: take(map, &format!("{prefix}.bias"))?,
        })
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
        let y = ops::matmul(tape, x, &self.weight)?;
        ops::add_bias(tape, &y, &self.bias)
    }
}

#[derive(Debug, Clone)]
pub(super) struct LayerNorm<E: Scalar> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
}

impl<E: Scalar> LayerNorm<E> {
    pub fn from_map(
        map: &mut HashMap<String, Tensor<E>>,
        prefix: &str,
    ) -> Result<Self, ModelError> {
        Ok(LayerNorm {
            gamma: take(map, &format!("{prefix}.gamma"))?,
            beta: take(map, &format!("{prefix}.beta"))?,
        })
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
        ops::layer_norm(tape, x, &self.gamma, &self.beta, LAYER_NORM_EPS)
    }
}

/// Projected multi-head self-attention with padding-key masking.
#[derive(Debug, Clone)]
pub(super) struct MultiHeadAttention<E: Scalar> {
    pub query: Linear<E>,
    /// Bias-free: a key bias cannot affect the softmax output.
    pub key_weight: Tensor<E>,
    pub value: Linear<E>,
    pub output: Linear<E>,
    pub num_heads: usize,
}

impl<E: Scalar> MultiHeadAttention<E> {
    pub fn from_map(
        map: &mut HashMap<String, Tensor<E>>,
        prefix: &str,
        num_heads: usize,
    ) -> Result<Self, ModelError> {
        Ok(MultiHeadAttention {
            query: Linear::from_map(map, &format!("{prefix}.q"))?,
            key_weight: take(map, &format!("{prefix}.k.weight"))?,
            value: Linear::from_map(map, &format!("{prefix}.v"))?,
            output: Linear::from_map(map, &format!("{prefix}.o"))?,
            num_heads,
        })
    }

    /// Attend `x` (L×d) to itself. When `capture` is given, each head's
    /// row-stochastic weight matrix is pushed onto it.
    pub fn forward(
        &self,
        tape: &Tape<E>,
        x: &Tensor<E>,
        pad: &[bool],
        capture: Option<&mut Vec<Tensor<E>>>,
    ) -> Result<Tensor<E>, TensorError> {
        let d = x.shape()[1];
        let dh = d / self.num_heads;
        let q = self.query.forward(tape, x)?;
        let k = ops::matmul(tape, x, &self.key_weight)?;
        let v = self.value.forward(tape, x)?;
        let mut heads = Vec::with_capacity(self.num_heads);
        let mut captured = capture;
        for h in 0..self.num_heads {
            let qh = ops::slice_cols(tape, &q, h * dh, dh)?;
            let kh = ops::slice_cols(tape, &k, h * dh, dh)?;
            let vh = ops::slice_cols(tape, &v, h * dh, dh)?;
            let kt = ops::transpose(tape, &kh)?;
            let scores = ops::matmul(tape, &qh, &kt)?;
            let scaled = ops::scale(tape, &scores, 1.0 / (dh as f64).sqrt())?;
            let masked = ops::add_key_mask(tape, &scaled, pad)?;
            let weights = ops::softmax_rows(tape, &masked)?;
            if let Some(cap) = captured.as_deref_mut() {
                cap.push(weights.clone());
            }
            heads.push(ops::matmul(tape, &weights, &vh)?);
        }
        let merged = ops::concat_cols(tape, &heads)?;
        self.output.forward(tape, &merged)
    }
}

/// Pre-norm transformer encoder block.
#[derive(Debug, Clone)]
pub(super) struct EncoderBlock<E: Scalar> {
    pub ln1: LayerNorm<E>,
    pub attn: MultiHeadAttention<E>,
    pub ln2: LayerNorm<E>,
    pub ffn_in: Linear<E>,
    pub ffn_out: Linear<E>,
}

impl<E: Scalar> EncoderBlock<E> {
    pub fn from_map(
        map: &mut HashMap<String, Tensor<E>>,
        prefix: &str,
        num_heads: usize,
    ) -> Result<Self, ModelError> {
        Ok(EncoderBlock {
            ln1: LayerNorm::from_map(map, &format!("{prefix}.ln1"))?,
            attn: MultiHeadAttention::from_map(map, &format!("{prefix}.attn"), num_heads)?,
            ln2: LayerNorm::from_map(map, &format!("{prefix}.ln2"))?,
            ffn_in: Linear::from_map(map, &format!("{prefix}.ffn.w1"))?,
            ffn_out: Linear::from_map(map, &format!("{prefix}.ffn.w2"))?,
        })
    }

    pub fn forward(
        &self,
        tape: &Tape<E>,
        h: &Tensor<E>,
        pad: &[bool],
        dropout: f64,
        mode: &mut RunMode<'_>,
        capture: Option<&mut Vec<Tensor<E>>>,
    ) -> Result<Tensor<E>, TensorError> {
        let normed = self.ln1.forward(tape, h)?;
        let attended = self.attn.forward(tape, &normed, pad, capture)?;
        let attended = apply_dropout(tape, &attended, dropout, mode)?;
        let h = ops::add(tape, h, &attended)?;

        let normed = self.ln2.forward(tape, &h)?;
        let mid = ops::gelu(tape, &self.ffn_in.forward(tape, &normed)?)?;
        let ffn = self.ffn_out.forward(tape, &mid)?;
        let ffn = apply_dropout(tape, &ffn, dropout, mode)?;
        ops::add(tape, &h, &ffn)
    }
}

pub(super) fn apply_dropout<E: Scalar>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    p: f64,
    mode: &mut RunMode<'_>,
) -> Result<Tensor<E>, TensorError> {
    match mode {
        RunMode::Train { rng } if p > 0.0 => ops::dropout(tape, x, p, *rng),
        _ => Ok(x.clone()),
    }
}

/// One convolution block of the front-end: conv → layer norm → GELU, with an
/// identity residual when the channel counts match.
#[derive(Debug, Clone)]
pub(super) struct ConvBlock<E: Scalar> {
    pub weight: Tensor<E>, // out_ch × k × in_ch
    pub bias: Tensor<E>,
    pub norm: LayerNorm<E>,
}

impl<E: Scalar> ConvBlock<E> {
    pub fn from_map(
        map: &mut HashMap<String, Tensor<E>>,
        prefix: &str,
    ) -> Result<Self, ModelError> {
        Ok(ConvBlock {
            weight: take(map, &format!("{prefix}.weight"))?,
            bias: take(map, &format!("{prefix}.bias"))?,
            norm: LayerNorm::from_map(map, &format!("{prefix}.norm"))?,
        })
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
        let in_ch = x.shape()[1];
        let out_ch = self.weight.shape()[0];
        let y = ops::conv1d(tape, x, &self.weight, &self.bias)?;
        let y = self.norm.forward(tape, &y)?;
        let y = ops::gelu(tape, &y)?;
        if in_ch == out_ch {
            ops::add(tape, &y, x)
        } else {
            Ok(y)
        }
    }
}

/// Frame-rate-preserving stack of residual 1-D convolution blocks.
#[derive(Debug, Clone)]
pub(super) struct ConvFrontEnd<E: Scalar> {
    pub blocks: Vec<ConvBlock<E>>,
}

impl<E: Scalar> ConvFrontEnd<E> {
    pub fn from_map(
        map: &mut HashMap<String, Tensor<E>>,
        num_blocks: usize,
    ) -> Result<Self, ModelError> {
        let blocks = (0..num_blocks)
            .map(|i| ConvBlock::from_map(map, &format!("conv.{i}")))
            .collect::<Result<_, _>>()?;
        Ok(ConvFrontEnd { blocks })
    }

    pub fn forward(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(tape, &h)?;
        }
        Ok(h)
    }
}

/// Learned positional and interlocutor lookup tables.
#[derive(Debug, Clone)]
pub(super) struct EmbeddingTables<E: Scalar> {
    pub positional: Tensor<E>,
    /// Present only for interlocutor-aware models; index −1 resolves to a
    /// fixed zero row inside the lookup.
    pub interlocutor: Option<Tensor<E>>,
}
