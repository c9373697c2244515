//! WebAssembly bindings for the browser demo.
//!
//! All functions are untimed; the page measures wall time itself.

use wasm_bindgen::prelude::*;

use extralonger::attention::LocalMaskMode;
use extralonger::bench::{closed_form_entries, AttentionProblem, Variant};
use extralonger::data::{synth_generate, Adjacency, Prepared, SynthConfig};
use extralonger::embedding::EmbeddingDims;
use extralonger::network::{Model, ModelConfig, WindowRef};

fn js_err(e: extralonger::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Row-major `steps × nodes` synthetic signal.
#[wasm_bindgen]
pub fn synth_signal(nodes: usize, days: usize, steps_per_day: usize, seed: u64, noise: f64) -> Result<Vec<f64>, JsValue> {
    let ds = synth_generate(&SynthConfig {
        n_nodes: nodes,
        n_days: days,
        steps_per_day,
        seed,
        noise_sigma: noise,
    })
    .map_err(js_err)?;
    Ok(ds.signal.into_data())
}

fn adjacency(kind: &str, n: usize) -> Result<Adjacency, JsValue> {
    match kind {
        "ring" => Ok(Adjacency::ring(n)),
        "path" => Ok(Adjacency::path(n)),
        "full" => Ok(Adjacency::fully_connected(n)),
        other => Err(JsValue::from_str(&format!("unknown graph {other:?}"))),
    }
}

/// Spatial attention weights of head 0 for one synthetic window, from a
/// freshly initialised model: `nodes²` global weights followed by `nodes²`
/// local weights.
#[wasm_bindgen]
pub fn glst_weights(nodes: usize, graph: &str, mask_mode: &str, seed: u64) -> Result<Vec<f64>, JsValue> {
    let spd = 24;
    let ds = synth_generate(&SynthConfig {
        n_nodes: nodes,
        n_days: 2,
        steps_per_day: spd,
        seed,
        noise_sigma: 1.0,
    })
    .map_err(js_err)?;
    let data = Prepared::new(ds).map_err(js_err)?;
    let mut cfg = ModelConfig::new(nodes, 12, 12, spd);
    cfg.dims = EmbeddingDims {
        d_tf: 8,
        d_tod: 4,
        d_dow: 4,
        d_sf: 12,
        d_spatial: 4,
    };
    cfg.heads = 2;
    cfg.local_mask_mode = mask_mode.parse::<LocalMaskMode>().map_err(js_err)?;
    let model = Model::new(cfg, seed).map_err(js_err)?;
    let s = data.sample(0, 12, 12).map_err(js_err)?;
    let w = WindowRef {
        x_norm: &s.input,
        tod_idx: &s.tod_idx,
        dow_idx: &s.dow_idx,
    };
    let adj = adjacency(graph, nodes)?;
    let f = model.forward(&w, &adj, &data.stats, false, true).map_err(js_err)?;
    let trace = f.trace.expect("trace requested");
    let per_head = nodes * nodes;
    let mut out = trace.alpha_global.data()[..per_head].to_vec();
    out.extend_from_slice(&trace.alpha_local.data()[..per_head]);
    Ok(out)
}

/// `[unified, classical]` attention-score entries per forward pass.
#[wasm_bindgen]
pub fn score_entries(t: usize, n: usize, heads: usize) -> Vec<f64> {
    [Variant::Unified, Variant::Classical]
        .map(|v| closed_form_entries(v, t, n, heads) as f64)
        .to_vec()
}

/// Prepared random inputs for repeated attention passes.
#[wasm_bindgen]
pub struct AttentionBench {
    problem: AttentionProblem,
}

#[wasm_bindgen]
impl AttentionBench {
    #[wasm_bindgen(constructor)]
    pub fn new(t: usize, n: usize, d: usize, heads: usize) -> Result<AttentionBench, JsValue> {
        Ok(Self {
            problem: AttentionProblem::new(t, n, d, heads, 42).map_err(js_err)?,
        })
    }

    /// One unified forward pass; returns the score entries it materialised.
    pub fn unified(&self) -> usize {
        self.problem.unified_pass()
    }

    /// One axial forward pass; returns the score entries it materialised.
    pub fn classical(&self) -> usize {
        self.problem.classical_pass()
    }
}
