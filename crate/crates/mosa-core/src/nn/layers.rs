//! Transformer building blocks on the tape: linear layers, multi-head
//! attention, encoder and decoder stacks, sinusoidal positions, dropout.
//!
//! Parameters follow a `{prefix}.{part}` naming scheme; each block has a
//! `register_*` function declaring its parameters and a forward function
//! consuming them from a [`NetCtx`].

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;
use crate::nn::params::ParameterSet;
use crate::nn::tape::{Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Dimensions and depths of the network blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Model feature dimension D.
    pub dim: usize,
    /// Attention heads H; must divide `dim`.
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Hidden width of the transformer feed-forward blocks.
    pub ff_hidden: usize,
    /// Hidden width of the pair-feature MLP.
    pub pair_hidden: usize,
    /// Hidden width of the motion MLP.
    pub motion_hidden: usize,
    /// Dimension of the learned object-category embeddings.
    pub category_embed_dim: usize,
    /// Dimension of the ingested per-detection visual features.
    pub visual_dim: usize,
    pub activation: Activation,
    /// Dropout probability; 0 keeps training fully deterministic.
    pub dropout: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            dim: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            ff_hidden: 128,
            pair_hidden: 64,
            motion_hidden: 64,
            category_embed_dim: 16,
            visual_dim: 16,
            activation: Activation::Relu,
            dropout: 0.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 {
            return Err(Error::Config("dim and heads must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::Config("layer counts must be positive".into()));
        }
        for (name, v) in [
            ("ff_hidden", self.ff_hidden),
            ("pair_hidden", self.pair_hidden),
            ("motion_hidden", self.motion_hidden),
            ("category_embed_dim", self.category_embed_dim),
            ("visual_dim", self.visual_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Per-forward context: binds named parameters onto the tape (once each)
/// and owns the dropout state.
pub struct NetCtx<'p> {
    params: &'p ParameterSet,
    bound: BTreeMap<String, Var>,
    dropout_p: f64,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'p> NetCtx<'p> {
    /// Inference context: no dropout.
    pub fn new(params: &'p ParameterSet) -> Self {
        NetCtx {
            params,
            bound: BTreeMap::new(),
            dropout_p: 0.0,
            dropout_rng: None,
        }
    }

    /// Training context; masks are drawn from the given seed.
    pub fn with_dropout(params: &'p ParameterSet, p: f64, seed: u64) -> Self {
        NetCtx {
            params,
            bound: BTreeMap::new(),
            dropout_p: p,
            dropout_rng: if p > 0.0 {
                Some(ChaCha8Rng::seed_from_u64(seed))
            } else {
                None
            },
        }
    }

    pub fn bind(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let v = tape.param(self.params, name)?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Inverted dropout; identity when the probability is 0 or no rng is set.
    pub fn dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let p = self.dropout_p;
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        let (rows, cols) = tape.value(x).shape();
        let keep = 1.0 - p;
        let mask_data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                if rng.random_range(0.0..1.0) < p {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let mask = tape.input(Matrix::from_vec(rows, cols, mask_data)?);
        tape.mul(x, mask)
    }
}

// ----- registration -----

pub fn register_linear(
    ps: &mut ParameterSet,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
) -> Result<()> {
    ps.insert_xavier(&format!("{prefix}.w"), in_dim, out_dim, rng)?;
    ps.insert_zeros(&format!("{prefix}.b"), 1, out_dim)
}

pub fn register_layer_norm(ps: &mut ParameterSet, prefix: &str, dim: usize) -> Result<()> {
    ps.insert_filled(&format!("{prefix}.gamma"), 1, dim, 1.0)?;
    ps.insert_zeros(&format!("{prefix}.beta"), 1, dim)
}

pub fn register_attention(
    ps: &mut ParameterSet,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    dim: usize,
) -> Result<()> {
    for part in ["q", "k", "v", "o"] {
        register_linear(ps, rng, &format!("{prefix}.{part}"), dim, dim)?;
    }
    Ok(())
}

fn register_feed_forward(
    ps: &mut ParameterSet,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    dim: usize,
    hidden: usize,
) -> Result<()> {
    register_linear(ps, rng, &format!("{prefix}.ff1"), dim, hidden)?;
    register_linear(ps, rng, &format!("{prefix}.ff2"), hidden, dim)
}

pub fn register_encoder(
    ps: &mut ParameterSet,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cfg: &NetConfig,
) -> Result<()> {
    for l in 0..cfg.encoder_layers {
        let lp = format!("{prefix}.layer{l}");
        register_attention(ps, rng, &format!("{lp}.attn"), cfg.dim)?;
        register_layer_norm(ps, &format!("{lp}.ln1"), cfg.dim)?;
        register_feed_forward(ps, rng, &lp, cfg.dim, cfg.ff_hidden)?;
        register_layer_norm(ps, &format!("{lp}.ln2"), cfg.dim)?;
    }
    Ok(())
}

pub fn register_decoder(
    ps: &mut ParameterSet,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    cfg: &NetConfig,
) -> Result<()> {
    for l in 0..cfg.decoder_layers {
        let lp = format!("{prefix}.layer{l}");
        register_attention(ps, rng, &format!("{lp}.self_attn"), cfg.dim)?;
        register_layer_norm(ps, &format!("{lp}.ln1"), cfg.dim)?;
        register_attention(ps, rng, &format!("{lp}.cross_attn"), cfg.dim)?;
        register_layer_norm(ps, &format!("{lp}.ln2"), cfg.dim)?;
        register_feed_forward(ps, rng, &lp, cfg.dim, cfg.ff_hidden)?;
        register_layer_norm(ps, &format!("{lp}.ln3"), cfg.dim)?;
    }
    Ok(())
}

// ----- forward -----

/// `x W + b`.
pub fn linear(tape: &mut Tape, ctx: &mut NetCtx, prefix: &str, x: Var) -> Result<Var> {
    let w = ctx.bind(tape, &format!("{prefix}.w"))?;
    let b = ctx.bind(tape, &format!("{prefix}.b"))?;
    let xw = tape.matmul(x, w)?;
    tape.add_row_broadcast(xw, b)
}

/// Two-layer MLP with a rectifier hidden layer.
pub fn mlp(tape: &mut Tape, ctx: &mut NetCtx, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(tape, ctx, &format!("{prefix}.ff1"), x)?;
    let h = tape.relu(h);
    let h = ctx.dropout(tape, h)?;
    linear(tape, ctx, &format!("{prefix}.ff2"), h)
}

pub fn layer_norm(tape: &mut Tape, ctx: &mut NetCtx, prefix: &str, x: Var) -> Result<Var> {
    let gamma = ctx.bind(tape, &format!("{prefix}.gamma"))?;
    let beta = ctx.bind(tape, &format!("{prefix}.beta"))?;
    tape.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
}

/// Scaled dot-product multi-head attention with output projection.
/// Scaling is `1/sqrt(dim/heads)`.
pub fn multi_head_attention(
    tape: &mut Tape,
    ctx: &mut NetCtx,
    prefix: &str,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    heads: usize,
) -> Result<Var> {
    let dim = tape.value(q_in).cols();
    if dim % heads != 0 {
        return Err(Error::Config(format!(
            "attention dim {dim} not divisible by {heads} heads"
        )));
    }
    if tape.value(k_in).rows() != tape.value(v_in).rows() {
        return Err(Error::ShapeMismatch {
            op: "multi_head_attention",
            expected: format!("{} key/value tokens", tape.value(k_in).rows()),
            got: format!("{}", tape.value(v_in).rows()),
        });
    }
    let q = linear(tape, ctx, &format!("{prefix}.q"), q_in)?;
    let k = linear(tape, ctx, &format!("{prefix}.k"), k_in)?;
    let v = linear(tape, ctx, &format!("{prefix}.v"), v_in)?;

    let head_dim = dim / heads;
    let scaling = 1.0 / (head_dim as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scaling);
        let weights = tape.softmax_rows(scores);
        head_outputs.push(tape.matmul(weights, vh)?);
    }
    let merged = tape.concat_cols(&head_outputs)?;
    linear(tape, ctx, &format!("{prefix}.o"), merged)
}

fn encoder_layer(
    tape: &mut Tape,
    ctx: &mut NetCtx,
    prefix: &str,
    x: Var,
    cfg: &NetConfig,
) -> Result<Var> {
    let attn = multi_head_attention(tape, ctx, &format!("{prefix}.attn"), x, x, x, cfg.heads)?;
    let attn = ctx.dropout(tape, attn)?;
    let res = tape.add(x, attn)?;
    let x1 = layer_norm(tape, ctx, &format!("{prefix}.ln1"), res)?;
    let ff = mlp(tape, ctx, prefix, x1)?;
    let ff = ctx.dropout(tape, ff)?;
    let res = tape.add(x1, ff)?;
    layer_norm(tape, ctx, &format!("{prefix}.ln2"), res)
}

/// Self-attention encoder over a token set. No positional encoding: the
/// stack is permutation equivariant.
pub fn transformer_encoder(
    tape: &mut Tape,
    ctx: &mut NetCtx,
    prefix: &str,
    x: Var,
    cfg: &NetConfig,
) -> Result<Var> {
    let mut h = x;
    for l in 0..cfg.encoder_layers {
        h = encoder_layer(tape, ctx, &format!("{prefix}.layer{l}"), h, cfg)?;
    }
    Ok(h)
}

fn decoder_layer(
    tape: &mut Tape,
    ctx: &mut NetCtx,
    prefix: &str,
    x: Var,
    memory: Var,
    cfg: &NetConfig,
) -> Result<Var> {
    let sa = multi_head_attention(tape, ctx, &format!("{prefix}.self_attn"), x, x, x, cfg.heads)?;
    let sa = ctx.dropout(tape, sa)?;
    let res = tape.add(x, sa)?;
    let x1 = layer_norm(tape, ctx, &format!("{prefix}.ln1"), res)?;
    let ca = multi_head_attention(
        tape,
        ctx,
        &format!("{prefix}.cross_attn"),
        x1,
        memory,
        memory,
        cfg.heads,
    )?;
    let ca = ctx.dropout(tape, ca)?;
    let res = tape.add(x1, ca)?;
    let x2 = layer_norm(tape, ctx, &format!("{prefix}.ln2"), res)?;
    let ff = mlp(tape, ctx, prefix, x2)?;
    let ff = ctx.dropout(tape, ff)?;
    let res = tape.add(x2, ff)?;
    layer_norm(tape, ctx, &format!("{prefix}.ln3"), res)
}

/// Decoder over an ordered sequence: sinusoidal positions are added to the
/// target inputs, then each layer runs self-attention (unmasked, global),
/// cross-attention over `memory`, and a feed-forward block.
///
/// When `memory` is `None` the position-encoded target serves as its own
/// memory (self-conditioned decoding).
pub fn transformer_decoder(
    tape: &mut Tape,
    ctx: &mut NetCtx,
    prefix: &str,
    target: Var,
    memory: Option<Var>,
    cfg: &NetConfig,
) -> Result<Var> {
    let (rows, cols) = tape.value(target).shape();
    let pe = tape.input(positional_encoding(rows, cols));
    let x0 = tape.add(target, pe)?;
    let memory = memory.unwrap_or(x0);
    let mut h = x0;
    for l in 0..cfg.decoder_layers {
        h = decoder_layer(tape, ctx, &format!("{prefix}.layer{l}"), h, memory, cfg)?;
    }
    Ok(h)
}

/// Sinusoidal position encoding by sequence position.
pub fn positional_encoding(len: usize, dim: usize) -> Matrix {
    let mut pe = Matrix::zeros(len, dim);
    for pos in 0..len {
        for i in 0..dim {
            let exponent = 2.0 * (i / 2) as f64 / dim as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            pe.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}
