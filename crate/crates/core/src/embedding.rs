//! Unified spatial-temporal embedding.
//!
//! A `T × N` window becomes two matrices: `E_t` (one row per time step, each
//! mixing every node) and `E_s` (one row per node, each mixing every step).
//!
//! ```text
//! E_t = (X W_tf + b_tf) ‖ tod_table[tod] ‖ dow_table[dow]     T × D_t
//! E_s = (Xᵀ W_sf + b_sf) ‖ spatial_table                       N × D_s
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::xavier_uniform;
use crate::tensor::{Binding, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingDims {
    pub d_tf: usize,
    pub d_tod: usize,
    pub d_dow: usize,
    pub d_sf: usize,
    pub d_spatial: usize,
}

impl Default for EmbeddingDims {
    fn default() -> Self {
        Self {
            d_tf: 64,
            d_tod: 32,
            d_dow: 32,
            d_sf: 96,
            d_spatial: 32,
        }
    }
}

impl EmbeddingDims {
    pub fn d_t(&self) -> usize {
        self.d_tf + self.d_tod + self.d_dow
    }

    pub fn d_s(&self) -> usize {
        self.d_sf + self.d_spatial
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingParams {
    pub w_tf: ParamId,
    pub b_tf: ParamId,
    pub w_sf: ParamId,
    pub b_sf: ParamId,
    pub tod_table: ParamId,
    pub dow_table: ParamId,
    pub spatial_table: ParamId,
    pub noise: ParamId,
    n_nodes: usize,
    t_in: usize,
}

impl EmbeddingParams {
    /// Registers the embedding tensors under `embedding.*`. Weights and
    /// tables are Xavier-uniform, biases zero; the noise is Xavier-uniform
    /// over `T × N`.
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        n_nodes: usize,
        t_in: usize,
        steps_per_day: usize,
        dims: &EmbeddingDims,
    ) -> Self {
        let zeros = |n| Tensor::from_parts(vec![n], vec![0.0; n]);
        Self {
            w_tf: store.add("embedding.w_tf", xavier_uniform(rng, n_nodes, dims.d_tf)),
            b_tf: store.add("embedding.b_tf", zeros(dims.d_tf)),
            w_sf: store.add("embedding.w_sf", xavier_uniform(rng, t_in, dims.d_sf)),
            b_sf: store.add("embedding.b_sf", zeros(dims.d_sf)),
            tod_table: store.add("embedding.tod_table", xavier_uniform(rng, steps_per_day, dims.d_tod)),
            dow_table: store.add("embedding.dow_table", xavier_uniform(rng, 7, dims.d_dow)),
            spatial_table: store.add("embedding.spatial_table", xavier_uniform(rng, n_nodes, dims.d_spatial)),
            noise: store.add("embedding.noise", xavier_uniform(rng, t_in, n_nodes)),
            n_nodes,
            t_in,
        }
    }
}

/// `E_t` and `E_s` as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct UnifiedRep {
    pub e_t: Var,
    pub e_s: Var,
}

/// Adds the learnable noise during training; identity at inference.
pub fn inject_noise(tape: &mut Tape<'_>, x: Var, p: &EmbeddingParams, b: &Binding, training: bool) -> Result<Var> {
    if !training {
        return Ok(x);
    }
    tape.add(x, b.var(p.noise))
}

pub fn embed(
    tape: &mut Tape<'_>,
    x: Var,
    tod_idx: &[usize],
    dow_idx: &[usize],
    p: &EmbeddingParams,
    b: &Binding,
) -> Result<UnifiedRep> {
    let (t, n) = tape.value(x).expect_matrix("embed")?;
    if t != p.t_in || n != p.n_nodes {
        return Err(Error::shape(
            "embed",
            format!(
                "window is {t}x{n} but the model was built for T={} and N={}",
                p.t_in, p.n_nodes
            ),
        ));
    }
    if tod_idx.len() != t || dow_idx.len() != t {
        return Err(Error::shape(
            "embed",
            format!(
                "expected {t} calendar indices, got {} tod and {} dow",
                tod_idx.len(),
                dow_idx.len()
            ),
        ));
    }
    let tf = tape.matmul(x, b.var(p.w_tf))?;
    let tf = tape.add_bias(tf, b.var(p.b_tf))?;
    let tod = tape.gather_rows(b.var(p.tod_table), tod_idx)?;
    let dow = tape.gather_rows(b.var(p.dow_table), dow_idx)?;
    let e_t = tape.concat_cols(&[tf, tod, dow])?;

    let xt = tape.transpose(x)?;
    let sf = tape.matmul(xt, b.var(p.w_sf))?;
    let sf = tape.add_bias(sf, b.var(p.b_sf))?;
    let e_s = tape.concat_cols(&[sf, b.var(p.spatial_table)])?;
    Ok(UnifiedRep { e_t, e_s })
}
