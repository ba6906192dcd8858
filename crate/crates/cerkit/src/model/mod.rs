//! The neural architecture: transformer encoder with learned positional
//! embeddings, an optional convolutional local-context front-end, optional
//! interlocutor index embeddings, and a per-frame classifier head.
//!
//! The encoder is pre-norm: each block applies layer norm before its
//! sublayer and adds the result back onto the residual stream, with a final
//! norm before the classifier. Attention is bidirectional over the whole
//! sequence; padding frames are masked out of every attention row.

mod checkpoint;
mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_VERSION};

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{ops, Scalar, Tape, Tensor, TensorError};
use layers::{
    apply_dropout, take, ConvFrontEnd, EmbeddingTables, EncoderBlock, LayerNorm, Linear,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{what} {index} exceeds capacity {limit}")]
    Capacity {
        what: &'static str,
        index: i64,
        limit: usize,
    },
    #[error("model config error: {detail}")]
    Config { detail: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Convolutional front-end geometry (stride is fixed at 1).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default, deny_unknown_fields)]
pub struct ConvSpec {
    pub num_blocks: usize,
    /// Channel count per block; 0 means "use the model hidden size".
    pub channels: usize,
    /// Odd kernel width shared by all blocks.
    pub kernel_size: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            num_blocks: 2,
            channels: 0,
            kernel_size: 5,
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub num_classes: usize,
    pub use_conv_front_end: bool,
    pub conv_spec: ConvSpec,
    pub use_interlocutor: bool,
    pub max_speakers: usize,
    pub dropout: f64,
    pub input_dim: usize,
}

impl Default for ModelConfig {
    /// Desk-scale defaults, CPU-trainable in minutes.
    fn default() -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 4,
            hidden_dim: 64,
            ffn_dim: 256,
            max_positions: 2048,
            num_classes: 5,
            use_conv_front_end: false,
            conv_spec: ConvSpec::default(),
            use_interlocutor: false,
            max_speakers: 4,
            dropout: 0.1,
            input_dim: 13,
        }
    }
}

impl ModelConfig {
    /// The full-size reference configuration (12 layers, BERT-base width).
    pub fn paper_base(input_dim: usize) -> Self {
        ModelConfig {
            num_layers: 12,
            num_heads: 12,
            hidden_dim: 768,
            ffn_dim: 3072,
            max_positions: 2048,
            input_dim,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |detail: String| Err(ModelError::Config { detail });
        if self.hidden_dim == 0 || self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.num_layers == 0 || self.ffn_dim == 0 || self.input_dim == 0 {
            return fail("num_layers, ffn_dim, and input_dim must be positive".into());
        }
        if self.max_positions == 0 {
            return fail("max_positions must be positive".into());
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes {} must be at least 2", self.num_classes));
        }
        if self.max_speakers == 0 {
            return fail("max_speakers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.use_conv_front_end {
            if self.conv_spec.num_blocks == 0 {
                return fail("conv front-end needs at least one block".into());
            }
            if self.conv_spec.kernel_size % 2 == 0 || self.conv_spec.kernel_size == 0 {
                return fail(format!(
                    "conv kernel size {} must be odd",
                    self.conv_spec.kernel_size
                ));
            }
        }
        Ok(())
    }

    fn conv_channels(&self) -> usize {
        if self.conv_spec.channels == 0 {
            self.hidden_dim
        } else {
            self.conv_spec.channels
        }
    }
}

/// Whether a forward pass is a training pass (dropout on, driven by the
/// given RNG) or an inference pass.
pub enum RunMode<'a> {
    Train { rng: &'a mut dyn RngCore },
    Eval,
}

/// Canonical parameter list: name and shape for every learned tensor, in the
/// fixed order used by checkpoints and the optimizer.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.hidden_dim;
    let mut layout = Vec::new();
    if cfg.use_conv_front_end {
        let ch = cfg.conv_channels();
        let k = cfg.conv_spec.kernel_size;
        for i in 0..cfg.conv_spec.num_blocks {
            let in_ch = if i == 0 { cfg.input_dim } else { ch };
            let out_ch = if i + 1 == cfg.conv_spec.num_blocks { d } else { ch };
            layout.push((format!("conv.{i}.weight"), vec![out_ch, k, in_ch]));
            layout.push((format!("conv.{i}.bias"), vec![out_ch]));
            layout.push((format!("conv.{i}.norm.gamma"), vec![out_ch]));
            layout.push((format!("conv.{i}.norm.beta"), vec![out_ch]));
        }
    } else {
        layout.push(("input_proj.weight".into(), vec![cfg.input_dim, d]));
        layout.push(("input_proj.bias".into(), vec![d]));
    }
    layout.push(("embed.positional".into(), vec![cfg.max_positions, d]));
    if cfg.use_interlocutor {
        layout.push(("embed.interlocutor".into(), vec![cfg.max_speakers, d]));
    }
    for i in 0..cfg.num_layers {
        let p = format!("enc.{i}");
        layout.push((format!("{p}.ln1.gamma"), vec![d]));
        layout.push((format!("{p}.ln1.beta"), vec![d]));
        for proj in ["q", "k", "v", "o"] {
            layout.push((format!("{p}.attn.{proj}.weight"), vec![d, d]));
            // the key projection carries no bias: a constant added to every
            // key shifts each score row uniformly, which softmax cancels
            if proj != "k" {
                layout.push((format!("{p}.attn.{proj}.bias"), vec![d]));
            }
        }
        layout.push((format!("{p}.ln2.gamma"), vec![d]));
        layout.push((format!("{p}.ln2.beta"), vec![d]));
        layout.push((format!("{p}.ffn.w1.weight"), vec![d, cfg.ffn_dim]));
        layout.push((format!("{p}.ffn.w1.bias"), vec![cfg.ffn_dim]));
        layout.push((format!("{p}.ffn.w2.weight"), vec![cfg.ffn_dim, d]));
        layout.push((format!("{p}.ffn.w2.bias"), vec![d]));
    }
    layout.push(("final_norm.gamma".into(), vec![d]));
    layout.push(("final_norm.beta".into(), vec![d]));
    layout.push(("head.weight".into(), vec![d, cfg.num_classes]));
    layout.push(("head.bias".into(), vec![cfg.num_classes]));
    layout
}

/// The frame-level classifier.
#[derive(Debug)]
pub struct Model<E: Scalar> {
    pub config: ModelConfig,
    named: Vec<(String, Tensor<E>)>,
    input_proj: Option<Linear<E>>,
    conv: Option<ConvFrontEnd<E>>,
    embeddings: EmbeddingTables<E>,
    blocks: Vec<EncoderBlock<E>>,
    final_norm: LayerNorm<E>,
    head: Linear<E>,
}

impl<E: Scalar> Model<E> {
    /// Fresh model: fan-in-scaled normal weights, N(0, 0.02²) embedding
    /// tables, zero biases and shifts, unit gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = HashMap::new();
        for (name, shape) in param_layout(cfg) {
            let n: usize = shape.iter().product();
            let data: Vec<E> = if name.ends_with(".gamma") {
                vec![E::one(); n]
            } else if name.ends_with(".beta") || name.ends_with(".bias") {
                vec![E::zero(); n]
            } else {
                let std = if name.starts_with("embed.") {
                    0.02
                } else {
                    // weight matrices are in×out, conv kernels out×k×in
                    let fan_in: usize = match shape.as_slice() {
                        [rows, _cols] => *rows,
                        [_out, k, in_ch] => k * in_ch,
                        other => other.iter().product(),
                    };
                    1.0 / (fan_in as f64).sqrt()
                };
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        E::of_f64(z * std)
                    })
                    .collect()
            };
            map.insert(name.clone(), Tensor::param(shape, data)?);
        }
        Self::from_named_params(cfg, map)
    }

    /// Assemble a model from named tensors (checkpoint load, optimizer step).
    pub fn from_named_params(
        cfg: &ModelConfig,
        mut map: HashMap<String, Tensor<E>>,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        let layout = param_layout(cfg);
        let mut named = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            let t = map.get(name).ok_or_else(|| ModelError::Config {
                detail: format!("missing parameter {name:?}"),
            })?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Config {
                    detail: format!(
                        "parameter {name:?} has shape {:?}, expected {shape:?}",
                        t.shape()
                    ),
                });
            }
            named.push((name.clone(), t.clone()));
        }
        if map.len() != layout.len() {
            let extra: Vec<&String> = map
                .keys()
                .filter(|k| !layout.iter().any(|(n, _)| n == *k))
                .collect();
            return Err(ModelError::Config {
                detail: format!("unexpected parameters {extra:?}"),
            });
        }

        let input_proj = if cfg.use_conv_front_end {
            None
        } else {
            Some(Linear::from_map(&mut map, "input_proj")?)
        };
        let conv = if cfg.use_conv_front_end {
            Some(ConvFrontEnd::from_map(&mut map, cfg.conv_spec.num_blocks)?)
        } else {
            None
        };
        let embeddings = EmbeddingTables {
            positional: take(&mut map, "embed.positional")?,
            interlocutor: if cfg.use_interlocutor {
                Some(take(&mut map, "embed.interlocutor")?)
            } else {
                None
            },
        };
        let blocks = (0..cfg.num_layers)
            .map(|i| EncoderBlock::from_map(&mut map, &format!("enc.{i}"), cfg.num_heads))
            .collect::<Result<_, _>>()?;
        let final_norm = LayerNorm::from_map(&mut map, "final_norm")?;
        let head = Linear::from_map(&mut map, "head")?;
        Ok(Model {
            config: cfg.clone(),
            named,
            input_proj,
            conv,
            embeddings,
            blocks,
            final_norm,
            head,
        })
    }

    /// Assemble from tensors in canonical layout order.
    pub fn from_ordered_params(
        cfg: &ModelConfig,
        params: Vec<Tensor<E>>,
    ) -> Result<Self, ModelError> {
        let layout = param_layout(cfg);
        if params.len() != layout.len() {
            return Err(ModelError::Config {
                detail: format!(
                    "{} parameters supplied, layout has {}",
                    params.len(),
                    layout.len()
                ),
            });
        }
        let map = layout
            .into_iter()
            .map(|(name, _)| name)
            .zip(params)
            .collect();
        Self::from_named_params(cfg, map)
    }

    /// Learned tensors in canonical order (handles shared with the model).
    pub fn named_params(&self) -> &[(String, Tensor<E>)] {
        &self.named
    }

    pub fn params(&self) -> Vec<Tensor<E>> {
        self.named.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.named.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Front-end only: conv stack or learned input projection, `L×F → L×d`.
    pub fn front_end(&self, tape: &Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>, ModelError> {
        match (&self.conv, &self.input_proj) {
            (Some(conv), _) => Ok(conv.forward(tape, x)?),
            (None, Some(proj)) => Ok(proj.forward(tape, x)?),
            (None, None) => unreachable!("model has either conv or input projection"),
        }
    }

    /// Add positional (and, when enabled, interlocutor) embeddings to `h`.
    pub fn embed_inputs(
        &self,
        tape: &Tape<E>,
        h: &Tensor<E>,
        positions: &[u32],
        speaker_indices: &[i32],
    ) -> Result<Tensor<E>, ModelError> {
        let len = h.shape()[0];
        if positions.len() != len || speaker_indices.len() != len {
            return Err(ModelError::Config {
                detail: format!(
                    "{} frames with {} positions and {} speaker indices",
                    len,
                    positions.len(),
                    speaker_indices.len()
                ),
            });
        }
        for &p in positions {
            if p as usize >= self.config.max_positions {
                return Err(ModelError::Capacity {
                    what: "position",
                    index: p as i64,
                    limit: self.config.max_positions,
                });
            }
        }
        let pos_idx: Vec<i64> = positions.iter().map(|&p| p as i64).collect();
        let pos = ops::gather_rows(tape, &self.embeddings.positional, &pos_idx)?;
        let mut h = ops::add(tape, h, &pos)?;
        if let Some(table) = &self.embeddings.interlocutor {
            for &s in speaker_indices {
                if s >= 0 && s as usize >= self.config.max_speakers {
                    return Err(ModelError::Capacity {
                        what: "speaker index",
                        index: s as i64,
                        limit: self.config.max_speakers,
                    });
                }
            }
            let spk_idx: Vec<i64> = speaker_indices.iter().map(|&s| s as i64).collect();
            let spk = ops::gather_rows(tape, table, &spk_idx)?;
            h = ops::add(tape, &h, &spk)?;
        }
        Ok(h)
    }

    /// Encoder stack over embedded inputs, ending with the final norm.
    pub fn transformer_encode(
        &self,
        tape: &Tape<E>,
        h: &Tensor<E>,
        pad: &[bool],
        mode: &mut RunMode<'_>,
        mut capture: Option<&mut Vec<Tensor<E>>>,
    ) -> Result<Tensor<E>, ModelError> {
        let mut h = h.clone();
        for block in &self.blocks {
            h = block.forward(
                tape,
                &h,
                pad,
                self.config.dropout,
                mode,
                capture.as_deref_mut(),
            )?;
        }
        Ok(self.final_norm.forward(tape, &h)?)
    }

    /// Per-frame affine map `d → num_classes`.
    pub fn classify_frames(&self, tape: &Tape<E>, h: &Tensor<E>) -> Result<Tensor<E>, ModelError> {
        Ok(self.head.forward(tape, h)?)
    }

    /// Full forward pass: front-end → embeddings → encoder → classifier.
    pub fn forward(
        &self,
        tape: &Tape<E>,
        features: &Tensor<E>,
        positions: &[u32],
        speaker_indices: &[i32],
        pad: &[bool],
        mode: &mut RunMode<'_>,
    ) -> Result<Tensor<E>, ModelError> {
        self.forward_captured(tape, features, positions, speaker_indices, pad, mode, None)
    }

    /// Forward pass that can also expose every layer's per-head attention
    /// weights (diagnostics and tests).
    #[allow(clippy::too_many_arguments)]
    pub fn forward_captured(
        &self,
        tape: &Tape<E>,
        features: &Tensor<E>,
        positions: &[u32],
        speaker_indices: &[i32],
        pad: &[bool],
        mode: &mut RunMode<'_>,
        capture: Option<&mut Vec<Tensor<E>>>,
    ) -> Result<Tensor<E>, ModelError> {
        let len = features.shape()[0];
        if pad.len() != len {
            return Err(ModelError::Config {
                detail: format!("{len} frames with {} pad flags", pad.len()),
            });
        }
        let h = self.front_end(tape, features)?;
        let h = self.embed_inputs(tape, &h, positions, speaker_indices)?;
        let h = apply_dropout(tape, &h, self.config.dropout, mode).map_err(ModelError::Tensor)?;
        let h = self.transformer_encode(tape, &h, pad, mode, capture)?;
        self.classify_frames(tape, &h)
    }
}

/// Row-wise argmax with ties broken to the lowest class index.
pub fn argmax_rows<E: Scalar>(logits: &Tensor<E>) -> Vec<usize> {
    let cols = logits.shape()[1];
    logits
        .data()
        .chunks_exact(cols)
        .map(|row| {
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
