//! The three-route forecaster.
//!
//! ```text
//!            ┌ temporal encoder ─ ·W_dn ─ time projection ───────────┐
//! X ─ embed ─┼ GLST ─ ·W_dt' ─ transpose ───────────────────────────┼─ Σ w_r · route_r ─ de-normalise ─ Ŷ
//!            └ temporal encoder', GLST' ─ Ê_t' W_m Ê_s'ᵀ ─ time proj ┘
//! ```
//!
//! The mixed route owns its own encoder weights and fuses the two encoded
//! representations bilinearly into a `T × N` map before projecting along time.

use serde::{Deserialize, Serialize};

use crate::attention::{
    glst, temporal_encoder, AttentionTrace, EncoderLayerParams, GlstOptions, LocalMaskMode, SpatialBranches,
};
use crate::data::{Adjacency, NormStats};
use crate::embedding::{embed, inject_noise, EmbeddingDims, EmbeddingParams};
use crate::error::{Error, Result};
use crate::rng::{self, xavier_uniform, Stream};
use crate::tensor::{Binding, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_nodes: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub steps_per_day: usize,
    pub dims: EmbeddingDims,
    pub heads: usize,
    pub layers: usize,
    /// Temporal, spatial and mixed route weights.
    pub route_weights: [f64; 3],
    pub local_mask_mode: LocalMaskMode,
    #[serde(default)]
    pub spatial_branches: SpatialBranches,
}

impl ModelConfig {
    pub fn new(n_nodes: usize, t_in: usize, t_out: usize, steps_per_day: usize) -> Self {
        Self {
            n_nodes,
            t_in,
            t_out,
            steps_per_day,
            dims: EmbeddingDims::default(),
            heads: 4,
            layers: 1,
            route_weights: [0.25, 0.25, 0.5],
            local_mask_mode: LocalMaskMode::NegInf,
            spatial_branches: SpatialBranches::GlobalLocal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_nodes", self.n_nodes),
            ("T", self.t_in),
            ("T_out", self.t_out),
            ("steps_per_day", self.steps_per_day),
            ("heads", self.heads),
            ("layers", self.layers),
            ("d_tf", self.dims.d_tf),
            ("d_sf", self.dims.d_sf),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let (d_t, d_s) = (self.dims.d_t(), self.dims.d_s());
        if d_t % self.heads != 0 || d_s % self.heads != 0 {
            return Err(Error::Config(format!(
                "D_t={d_t} and D_s={d_s} must both be divisible by heads={}",
                self.heads
            )));
        }
        let [wt, ws, wm] = self.route_weights;
        if [wt, ws, wm].iter().any(|w| !w.is_finite() || *w < 0.0) || ((wt + ws + wm) - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "route weights {:?} must be non-negative and sum to 1",
                self.route_weights
            )));
        }
        Ok(())
    }

    fn glst_options(&self) -> GlstOptions {
        GlstOptions {
            mask_mode: self.local_mask_mode,
            branches: self.spatial_branches,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embedding: EmbeddingParams,
    temporal: Vec<EncoderLayerParams>,
    spatial: Vec<EncoderLayerParams>,
    mixed_temporal: Vec<EncoderLayerParams>,
    mixed_spatial: Vec<EncoderLayerParams>,
    w_dn: ParamId,
    w_tt: ParamId,
    w_dt: ParamId,
    w_m: ParamId,
    w_tt_m: ParamId,
}

/// Model configuration plus every learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

/// A forecast in raw signal units.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    /// `T' × N`.
    pub y_hat: Tensor,
    /// De-normalised temporal, spatial and mixed route outputs.
    pub per_route: Option<[Tensor; 3]>,
    /// Spatial-route GLST weights of the last layer, when requested.
    pub trace: Option<AttentionTrace>,
}

/// Tape variables produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub y_norm: Var,
    pub y_raw: Var,
    /// Normalised route outputs, each `T' × N`.
    pub routes: [Var; 3],
    pub trace: Option<AttentionTrace>,
}

/// One input window.
#[derive(Clone, Copy, Debug)]
pub struct WindowRef<'a> {
    /// `T × N`, normalised.
    pub x_norm: &'a Tensor,
    pub tod_idx: &'a [usize],
    pub dow_idx: &'a [usize],
}

fn encoder_stack(
    store: &mut ParamStore,
    rng: &mut impl rand::Rng,
    prefix: &str,
    dim: usize,
    cfg: &ModelConfig,
) -> Result<Vec<EncoderLayerParams>> {
    (0..cfg.layers)
        .map(|l| EncoderLayerParams::init(store, rng, &format!("{prefix}.{l}"), dim, cfg.heads))
        .collect()
}

impl Model {
    /// Fresh model with Xavier-uniform weights drawn from the `init` stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, Stream::Init);
        let mut store = ParamStore::new();
        let c = &config;
        let (d_t, d_s) = (c.dims.d_t(), c.dims.d_s());
        let embedding = EmbeddingParams::init(&mut store, &mut rng, c.n_nodes, c.t_in, c.steps_per_day, &c.dims);
        let temporal = encoder_stack(&mut store, &mut rng, "temporal", d_t, c)?;
        let spatial = encoder_stack(&mut store, &mut rng, "spatial", d_s, c)?;
        let mixed_temporal = encoder_stack(&mut store, &mut rng, "mixed_temporal", d_t, c)?;
        let mixed_spatial = encoder_stack(&mut store, &mut rng, "mixed_spatial", d_s, c)?;
        let w_dn = store.add("head_temporal.w_dn", xavier_uniform(&mut rng, d_t, c.n_nodes));
        let w_tt = store.add("head_temporal.w_tt", xavier_uniform(&mut rng, c.t_in, c.t_out));
        let w_dt = store.add("head_spatial.w_dt", xavier_uniform(&mut rng, d_s, c.t_out));
        let w_m = store.add("head_mixed.w_m", xavier_uniform(&mut rng, d_t, d_s));
        let w_tt_m = store.add("head_mixed.w_tt", xavier_uniform(&mut rng, c.t_in, c.t_out));
        let layout = Layout {
            embedding,
            temporal,
            spatial,
            mixed_temporal,
            mixed_spatial,
            w_dn,
            w_tt,
            w_dt,
            w_m,
            w_tt_m,
        };
        Ok(Self {
            config,
            params: store,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn embedding(&self) -> &EmbeddingParams {
        &self.layout.embedding
    }

    /// Projection weights of the three prediction heads (`W_tt'`, `W_dt'`,
    /// and the mixed route's `W_tt'`), i.e. the last linear map of each route.
    pub fn head_projections(&self) -> [ParamId; 3] {
        [self.layout.w_tt, self.layout.w_dt, self.layout.w_tt_m]
    }

    /// Records a full forward pass on `tape`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_tape(
        &self,
        tape: &mut Tape<'_>,
        b: &Binding,
        x_norm: Var,
        window: &WindowRef<'_>,
        adjacency: &Adjacency,
        stats: &NormStats,
        training: bool,
        trace: bool,
    ) -> Result<ForwardVars> {
        let c = &self.config;
        let l = &self.layout;
        if adjacency.n() != c.n_nodes {
            return Err(Error::shape(
                "forward",
                format!("adjacency over {} nodes, model built for {}", adjacency.n(), c.n_nodes),
            ));
        }
        let x = inject_noise(tape, x_norm, &l.embedding, b, training)?;
        let rep = embed(tape, x, window.tod_idx, window.dow_idx, &l.embedding, b)?;
        let opts = c.glst_options();

        // temporal route
        let mut et = rep.e_t;
        for layer in &l.temporal {
            et = temporal_encoder(tape, et, layer, b)?;
        }
        let per_node = tape.matmul(et, b.var(l.w_dn))?;
        let wtt = tape.transpose(b.var(l.w_tt))?;
        let route_t = tape.matmul(wtt, per_node)?;

        // spatial route
        let mut es = rep.e_s;
        let mut last_trace = None;
        for (i, layer) in l.spatial.iter().enumerate() {
            let want = trace && i + 1 == l.spatial.len();
            let (out, tr) = glst(tape, es, adjacency, opts, layer, b, want)?;
            es = out;
            last_trace = tr;
        }
        let per_step = tape.matmul(es, b.var(l.w_dt))?;
        let route_s = tape.transpose(per_step)?;

        // mixed route
        let mut mt = rep.e_t;
        for layer in &l.mixed_temporal {
            mt = temporal_encoder(tape, mt, layer, b)?;
        }
        let mut ms = rep.e_s;
        for layer in &l.mixed_spatial {
            ms = glst(tape, ms, adjacency, opts, layer, b, false)?.0;
        }
        let left = tape.matmul(mt, b.var(l.w_m))?;
        let mst = tape.transpose(ms)?;
        let fused = tape.matmul(left, mst)?;
        let wttm = tape.transpose(b.var(l.w_tt_m))?;
        let route_m = tape.matmul(wttm, fused)?;

        let [wt, ws, wm] = c.route_weights;
        let a = tape.scale(route_t, wt);
        let s = tape.scale(route_s, ws);
        let m = tape.scale(route_m, wm);
        let sum = tape.add(a, s)?;
        let y_norm = tape.add(sum, m)?;
        let scaled = tape.scale(y_norm, stats.std);
        let y_raw = tape.add_scalar(scaled, stats.mean)?;
        Ok(ForwardVars {
            y_norm,
            y_raw,
            routes: [route_t, route_s, route_m],
            trace: last_trace,
        })
    }

    /// Inference-style forward pass returning plain tensors.
    pub fn forward(
        &self,
        window: &WindowRef<'_>,
        adjacency: &Adjacency,
        stats: &NormStats,
        training: bool,
        trace: bool,
    ) -> Result<Forecast> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape);
        let x = tape.constant_ref(window.x_norm);
        let vars = self.forward_tape(&mut tape, &b, x, window, adjacency, stats, training, trace)?;
        let per_route = vars
            .routes
            .map(|r| stats.invert(tape.value(r)));
        Ok(Forecast {
            y_hat: tape.value(vars.y_raw).clone(),
            per_route: Some(per_route),
            trace: vars.trace,
        })
    }

    /// Records forward pass plus Huber loss against a raw-unit target.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_tape(
        &self,
        tape: &mut Tape<'_>,
        b: &Binding,
        window: &WindowRef<'_>,
        target: &Tensor,
        adjacency: &Adjacency,
        stats: &NormStats,
        delta: f64,
        training: bool,
    ) -> Result<Var> {
        let x = tape.constant(window.x_norm.clone());
        let vars = self.forward_tape(tape, b, x, window, adjacency, stats, training, false)?;
        tape.huber(vars.y_raw, target, delta)
    }
}

/// Huber loss between a forecast and ground truth, averaged over all entries.
pub fn huber_loss(y_hat: &Tensor, y: &Tensor, delta: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant_ref(y_hat);
    let l = tape.huber(p, y, delta)?;
    Ok(tape.value(l).item())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tensor::grad_check;

    pub(crate) fn tiny_config(t_in: usize, t_out: usize, n: usize) -> ModelConfig {
        ModelConfig {
            dims: EmbeddingDims {
                d_tf: 4,
                d_tod: 2,
                d_dow: 2,
                d_sf: 6,
                d_spatial: 2,
            },
            heads: 2,
            ..ModelConfig::new(n, t_in, t_out, 4)
        }
    }

    fn window(t: usize, n: usize, seed: u64) -> (Tensor, Vec<usize>, Vec<usize>) {
        let x = xavier_uniform(&mut rng::stream(seed, Stream::Bench), t, n).map(|v| v * 3.0);
        // four steps per day, so the window crosses day boundaries and the
        // day-of-week rows are not constant over the window
        let tod = (0..t).map(|i| (i + 1) % 4).collect();
        let dow = (0..t).map(|i| ((i + 1) / 4 + 3) % 7).collect();
        (x, tod, dow)
    }

    const STATS: NormStats = NormStats { mean: 3.0, std: 2.0 };

    #[test]
    fn output_shapes() {
        let model = Model::new(tiny_config(12, 12, 5), 1).unwrap();
        let (x, tod, dow) = window(12, 5, 2);
        let w = WindowRef { x_norm: &x, tod_idx: &tod, dow_idx: &dow };
        let f = model.forward(&w, &Adjacency::ring(5), &STATS, false, false).unwrap();
        assert_eq!(f.y_hat.shape(), &[12, 5]);

        let model = Model::new(tiny_config(8, 20, 5), 1).unwrap();
        let (x, tod, dow) = window(8, 5, 2);
        let w = WindowRef { x_norm: &x, tod_idx: &tod, dow_idx: &dow };
        let f = model.forward(&w, &Adjacency::ring(5), &STATS, true, false).unwrap();
        assert_eq!(f.y_hat.shape(), &[20, 5]);
    }

    #[test]
    fn wrong_window_length_is_rejected() {
        let model = Model::new(tiny_config(8, 4, 5), 1).unwrap();
        let (x, tod, dow) = window(9, 5, 2);
        let w = WindowRef { x_norm: &x, tod_idx: &tod, dow_idx: &dow };
        assert!(model.forward(&w, &Adjacency::ring(5), &STATS, false, false).is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = tiny_config(8, 4, 5);
        c.route_weights = [0.5, 0.5, 0.5];
        assert!(Model::new(c, 0).is_err());
        let mut c = tiny_config(8, 4, 5);
        c.heads = 3;
        assert!(Model::new(c, 0).is_err());
    }

    #[test]
    fn route_decomposition() {
        let model = Model::new(tiny_config(8, 4, 5), 3).unwrap();
        let (x, tod, dow) = window(8, 5, 4);
        let w = WindowRef { x_norm: &x, tod_idx: &tod, dow_idx: &dow };
        let f = model.forward(&w, &Adjacency::ring(5), &STATS, false, false).unwrap();
        let routes = f.per_route.unwrap();
        let [wt, ws, wm] = model.config().route_weights;
        for k in 0..f.y_hat.len() {
            let recombined = wt * routes[0].data()[k] + ws * routes[1].data()[k] + wm * routes[2].data()[k];
            assert!((recombined - f.y_hat.data()[k]).abs() <= 1e-12 * f.y_hat.data()[k].abs().max(1.0));
        }
    }

    #[test]
    fn unit_weight_on_temporal_route() {
        let mut c = tiny_config(8, 4, 5);
        c.route_weights = [1.0, 0.0, 0.0];
        let model = Model::new(c, 3).unwrap();
        let (x, tod, dow) = window(8, 5, 4);
        let w = WindowRef { x_norm: &x, tod_idx: &tod, dow_idx: &dow };
        let f = model.forward(&w, &Adjacency::ring(5), &STATS, false, false).unwrap();
        assert_eq!(f.y_hat, f.per_route.unwrap()[0]);
    }

    #[test]
    fn head_projection_scaling_is_linear() {
        let model = Model::new(tiny_config(8, 4, 5), 5).unwrap();
        let (x, tod, dow) = window(8, 5, 6);
        let adj = Adjacency::ring(5);
        let norm_out = |m: &Model| {
            let mut tape = Tape::new();
            let b = m.params().bind(&mut tape);
            let xv = tape.constant(x.clone());
            let w = WindowRef { x_norm: &x, tod_idx: &tod, dow_idx: &dow };
            let v = m.forward_tape(&mut tape, &b, xv, &w, &adj, &STATS, false, false).unwrap();
            tape.value(v.y_norm).clone()
        };
        let base = norm_out(&model);
        let mut scaled = model.clone();
        for id in model.head_projections() {
            let t = scaled.params_mut().get_mut(id);
            *t = t.map(|v| v * 2.0);
        }
        let doubled = norm_out(&scaled);
        for (a, b) in base.data().iter().zip(doubled.data()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn huber_examples() {
        let y = Tensor::full(&[1, 1], 3.0).unwrap();
        assert_eq!(huber_loss(&y, &y, 1.0).unwrap(), 0.0);
        assert_eq!(huber_loss(&Tensor::full(&[1, 1], 3.5).unwrap(), &y, 1.0).unwrap(), 0.125);
        assert_eq!(huber_loss(&Tensor::full(&[1, 1], 1.0).unwrap(), &y, 1.0).unwrap(), 1.5);
        assert!(huber_loss(&y, &y, -1.0).is_err());
    }

    #[test]
    fn small_model_gradients() {
        let mut model = Model::new(tiny_config(8, 4, 5), 7).unwrap();
        let (x, tod, dow) = window(8, 5, 8);
        let adj = Adjacency::ring(5);
        // residuals of a few units: both Huber branches, loss of order one
        let w = WindowRef { x_norm: &x, tod_idx: &tod, dow_idx: &dow };
        let f = model.forward(&w, &adj, &STATS, true, false).unwrap();
        let offsets = xavier_uniform(&mut rng::stream(9, Stream::Bench), 4, 5);
        let target = Tensor::new(
            &[4, 5],
            f.y_hat.data().iter().zip(offsets.data()).map(|(y, o)| y + 5.0 * o).collect(),
        )
        .unwrap();
        let shadow = model.clone();
        let r = grad_check(model.params_mut(), 1e-6, |tape, b| {
            let w = WindowRef { x_norm: &x, tod_idx: &tod, dow_idx: &dow };
            shadow.loss_tape(tape, b, &w, &target, &adj, &STATS, 1.0, true)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
