//! Encoder blocks: a standard multi-head temporal encoder and the
//! Global-Local Spatial Transformer (GLST).
//!
//! Both use the same sublayer arrangement, with layer normalisation applied
//! to each sublayer output before the residual add:
//!
//! ```text
//! Z   = LN(Att(E)) + E
//! out = LN(FFN(Z)) + Z
//! ```
//!
//! GLST attention computes one score matrix per head and normalises it twice,
//! once unmasked (global) and once restricted to the road graph (local), then
//! averages the two weight matrices before applying them to the values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Adjacency;
use crate::error::{Error, Result};
use crate::rng::xavier_uniform;
use crate::tensor::{Binding, ParamId, ParamStore, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// How the road graph restricts the local branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalMaskMode {
    /// Non-adjacent scores become −∞ before the softmax (weight exactly 0).
    #[default]
    NegInf,
    /// Scores are multiplied by the 0/1 adjacency before the softmax, so
    /// non-adjacent pairs keep weight proportional to e⁰.
    ZeroProduct,
}

impl std::str::FromStr for LocalMaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg_inf" => Ok(Self::NegInf),
            "zero_product" => Ok(Self::ZeroProduct),
            other => Err(Error::Config(format!(
                "unknown local_mask_mode {other:?} (expected neg_inf or zero_product)"
            ))),
        }
    }
}

/// Which GLST branches contribute to the attention weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialBranches {
    #[default]
    GlobalLocal,
    GlobalOnly,
    LocalOnly,
}

impl std::str::FromStr for SpatialBranches {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global_local" => Ok(Self::GlobalLocal),
            "global_only" => Ok(Self::GlobalOnly),
            "local_only" => Ok(Self::LocalOnly),
            other => Err(Error::Config(format!(
                "unknown spatial_branches {other:?} (expected global_local, global_only or local_only)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GlstOptions {
    pub mask_mode: LocalMaskMode,
    pub branches: SpatialBranches,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams {
    pub heads: Vec<HeadParams>,
    pub w_o: ParamId,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub w_1: ParamId,
    pub b_1: ParamId,
    pub w_2: ParamId,
    pub b_2: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub dim: usize,
    pub head_dim: usize,
}

impl EncoderLayerParams {
    /// Registers one encoder layer under `prefix`. The feed-forward width is
    /// `4 · dim`.
    pub fn init(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "model width {dim} is not divisible by {heads} heads"
            )));
        }
        let head_dim = dim / heads;
        let d_ff = 4 * dim;
        let heads = (0..heads)
            .map(|h| HeadParams {
                w_q: store.add(format!("{prefix}.head{h}.w_q"), xavier_uniform(rng, dim, head_dim)),
                w_k: store.add(format!("{prefix}.head{h}.w_k"), xavier_uniform(rng, dim, head_dim)),
                w_v: store.add(format!("{prefix}.head{h}.w_v"), xavier_uniform(rng, dim, head_dim)),
            })
            .collect();
        let vec = |n, v| Tensor::from_parts(vec![n], vec![v; n]);
        Ok(Self {
            heads,
            w_o: store.add(format!("{prefix}.w_o"), xavier_uniform(rng, dim, dim)),
            ln1_gamma: store.add(format!("{prefix}.ln1.gamma"), vec(dim, 1.0)),
            ln1_beta: store.add(format!("{prefix}.ln1.beta"), vec(dim, 0.0)),
            w_1: store.add(format!("{prefix}.ffn.w_1"), xavier_uniform(rng, dim, d_ff)),
            b_1: store.add(format!("{prefix}.ffn.b_1"), vec(d_ff, 0.0)),
            w_2: store.add(format!("{prefix}.ffn.w_2"), xavier_uniform(rng, d_ff, dim)),
            b_2: store.add(format!("{prefix}.ffn.b_2"), vec(dim, 0.0)),
            ln2_gamma: store.add(format!("{prefix}.ln2.gamma"), vec(dim, 1.0)),
            ln2_beta: store.add(format!("{prefix}.ln2.beta"), vec(dim, 0.0)),
            dim,
            head_dim,
        })
    }
}

/// Post-softmax attention weights of every GLST head, `h × r × r`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub alpha_global: Tensor,
    pub alpha_local: Tensor,
}

impl AttentionTrace {
    pub fn heads(&self) -> usize {
        self.alpha_global.shape()[0]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "head,i,j,global_weight,local_weight").map_err(io)?;
        let (h, r) = (self.alpha_global.shape()[0], self.alpha_global.shape()[1]);
        for head in 0..h {
            for i in 0..r {
                for j in 0..r {
                    let k = (head * r + i) * r + j;
                    writeln!(
                        w,
                        "{head},{i},{j},{},{}",
                        self.alpha_global.data()[k],
                        self.alpha_local.data()[k]
                    )
                    .map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }
}

fn check_input(tape: &Tape<'_>, x: Var, p: &EncoderLayerParams, op: &'static str) -> Result<usize> {
    let (r, d) = tape.value(x).expect_matrix(op)?;
    if d != p.dim {
        return Err(Error::shape(op, format!("input width {d}, layer width {}", p.dim)));
    }
    Ok(r)
}

fn head_scores(tape: &mut Tape<'_>, x: Var, h: &HeadParams, head_dim: usize, b: &Binding) -> Result<(Var, Var)> {
    let q = tape.matmul(x, b.var(h.w_q))?;
    let k = tape.matmul(x, b.var(h.w_k))?;
    let v = tape.matmul(x, b.var(h.w_v))?;
    let kt = tape.transpose(k)?;
    let raw = tape.matmul(q, kt)?;
    let scores = tape.scale(raw, 1.0 / (head_dim as f64).sqrt());
    Ok((scores, v))
}

fn residual_ffn(tape: &mut Tape<'_>, x: Var, attended: Var, p: &EncoderLayerParams, b: &Binding) -> Result<Var> {
    let projected = tape.matmul(attended, b.var(p.w_o))?;
    let normed = tape.layer_norm(projected, b.var(p.ln1_gamma), b.var(p.ln1_beta), LN_EPS)?;
    let z = tape.add(normed, x)?;

    let hidden = tape.matmul(z, b.var(p.w_1))?;
    let hidden = tape.add_bias(hidden, b.var(p.b_1))?;
    let hidden = tape.relu(hidden)?;
    let ff = tape.matmul(hidden, b.var(p.w_2))?;
    let ff = tape.add_bias(ff, b.var(p.b_2))?;
    let normed = tape.layer_norm(ff, b.var(p.ln2_gamma), b.var(p.ln2_beta), LN_EPS)?;
    tape.add(normed, z)
}

/// Standard multi-head self-attention encoder layer over the rows of `e`.
pub fn temporal_encoder(tape: &mut Tape<'_>, e: Var, p: &EncoderLayerParams, b: &Binding) -> Result<Var> {
    check_input(tape, e, p, "temporal_encoder")?;
    let mut outs = Vec::with_capacity(p.heads.len());
    for h in &p.heads {
        let (scores, v) = head_scores(tape, e, h, p.head_dim, b)?;
        let weights = tape.softmax_rows(scores, None)?;
        outs.push(tape.matmul(weights, v)?);
    }
    let attended = tape.concat_cols(&outs)?;
    residual_ffn(tape, e, attended, p, b)
}

/// Global-Local Spatial Transformer layer over the node rows of `e`.
pub fn glst(
    tape: &mut Tape<'_>,
    e: Var,
    adjacency: &Adjacency,
    opts: GlstOptions,
    p: &EncoderLayerParams,
    b: &Binding,
    trace: bool,
) -> Result<(Var, Option<AttentionTrace>)> {
    let r = check_input(tape, e, p, "glst")?;
    if adjacency.n() != r {
        return Err(Error::shape(
            "glst",
            format!("adjacency over {} nodes for {r} rows", adjacency.n()),
        ));
    }
    let adj_tensor = match opts.mask_mode {
        LocalMaskMode::ZeroProduct => Some(tape.constant(adjacency.to_tensor())),
        LocalMaskMode::NegInf => None,
    };
    let mut outs = Vec::with_capacity(p.heads.len());
    let mut traced_global = Vec::new();
    let mut traced_local = Vec::new();
    for h in &p.heads {
        let (scores, v) = head_scores(tape, e, h, p.head_dim, b)?;
        let global = tape.softmax_rows(scores, None)?;
        let local = match adj_tensor {
            Some(a) => {
                let masked = tape.mul(scores, a)?;
                tape.softmax_rows(masked, None)?
            }
            None => tape.softmax_rows(scores, Some(adjacency.mask()))?,
        };
        if trace {
            traced_global.push(tape.value(global).clone());
            traced_local.push(tape.value(local).clone());
        }
        let weights = match opts.branches {
            SpatialBranches::GlobalLocal => {
                let sum = tape.add(local, global)?;
                tape.scale(sum, 0.5)
            }
            SpatialBranches::GlobalOnly => global,
            SpatialBranches::LocalOnly => local,
        };
        outs.push(tape.matmul(weights, v)?);
    }
    let attended = tape.concat_cols(&outs)?;
    let out = residual_ffn(tape, e, attended, p, b)?;
    let trace = trace.then(|| AttentionTrace {
        alpha_global: Tensor::stack(&traced_global).expect("equal head shapes"),
        alpha_local: Tensor::stack(&traced_local).expect("equal head shapes"),
    });
    Ok((out, trace))
}
