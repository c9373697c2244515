//! Attention cost on the unified representation versus classical axial
//! attention.
//!
//! The unified pass attends over `E_t` (`T × D`) and `E_s` (`N × D`): one
//! `T × T` and one `N × N` score map per head. The axial reference keeps a
//! `T × N × D` tensor and attends along time once per node and along nodes
//! once per step: `N` maps of `T × T` and `T` maps of `N × N` per head.
//! Every score buffer is counted as it is materialised.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::rng::{self, xavier_uniform, Stream};
use crate::tensor::{gemm, softmax_rows_masked, MatRef, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Unified,
    Classical,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Unified => "unified",
            Variant::Classical => "classical",
        })
    }
}

/// Closed-form number of attention-score scalars one forward pass materialises.
pub fn closed_form_entries(variant: Variant, t: usize, n: usize, heads: usize) -> usize {
    match variant {
        Variant::Unified => heads * (t * t + n * n),
        Variant::Classical => heads * (n * t * t + t * n * n),
    }
}

struct Head {
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
}

/// Query, key and value weights for one axis.
struct AxisWeights {
    heads: Vec<Head>,
}

impl AxisWeights {
    fn new(rng: &mut impl rand::Rng, d: usize, heads: usize) -> Self {
        let dh = d / heads;
        Self {
            heads: (0..heads)
                .map(|_| Head {
                    w_q: xavier_uniform(rng, d, dh),
                    w_k: xavier_uniform(rng, d, dh),
                    w_v: xavier_uniform(rng, d, dh),
                })
                .collect(),
        }
    }

    /// Multi-head self-attention over the rows of `x` (`rows × d`), writing
    /// the concatenated head outputs into `out`. Returns score entries.
    fn attend(&self, x: &[f64], rows: usize, d: usize, out: &mut [f64]) -> usize {
        let dh = d / self.heads.len();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut q = vec![0.0; rows * dh];
        let mut k = vec![0.0; rows * dh];
        let mut v = vec![0.0; rows * dh];
        let mut ctx = vec![0.0; rows * dh];
        let mut entries = 0;
        for (h, head) in self.heads.iter().enumerate() {
            gemm(rows, d, dh, MatRef::row_major(x, d), MatRef::row_major(head.w_q.data(), dh), &mut q, false);
            gemm(rows, d, dh, MatRef::row_major(x, d), MatRef::row_major(head.w_k.data(), dh), &mut k, false);
            gemm(rows, d, dh, MatRef::row_major(x, d), MatRef::row_major(head.w_v.data(), dh), &mut v, false);
            let mut scores = vec![0.0; rows * rows];
            entries += scores.len();
            gemm(
                rows,
                dh,
                rows,
                MatRef::row_major(&q, dh),
                MatRef::transposed(&k, dh),
                &mut scores,
                false,
            );
            scores.iter_mut().for_each(|s| *s *= scale);
            let weights = softmax_rows_masked(&scores, rows, rows, None).expect("unmasked rows");
            gemm(rows, rows, dh, MatRef::row_major(&weights, rows), MatRef::row_major(&v, dh), &mut ctx, false);
            for r in 0..rows {
                out[r * d + h * dh..r * d + (h + 1) * dh].copy_from_slice(&ctx[r * dh..(r + 1) * dh]);
            }
        }
        entries
    }
}

/// Random inputs and weights for one grid point.
pub struct AttentionProblem {
    pub t: usize,
    pub n: usize,
    pub d: usize,
    pub heads: usize,
    temporal: AxisWeights,
    spatial: AxisWeights,
    e_t: Tensor,
    e_s: Tensor,
    /// `N × T × D`, node-major.
    grid: Vec<f64>,
}

impl AttentionProblem {
    pub fn new(t: usize, n: usize, d: usize, heads: usize, seed: u64) -> Result<Self> {
        if t == 0 || n == 0 || d == 0 || heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "bench needs positive T, N, D and heads dividing D (T={t}, N={n}, D={d}, heads={heads})"
            )));
        }
        let mut rng = rng::stream(seed, Stream::Bench);
        let temporal = AxisWeights::new(&mut rng, d, heads);
        let spatial = AxisWeights::new(&mut rng, d, heads);
        let e_t = xavier_uniform(&mut rng, t, d);
        let e_s = xavier_uniform(&mut rng, n, d);
        let grid = xavier_uniform(&mut rng, n * t, d).into_data();
        Ok(Self {
            t,
            n,
            d,
            heads,
            temporal,
            spatial,
            e_t,
            e_s,
            grid,
        })
    }

    /// One forward pass on the unified representation; returns score entries.
    pub fn unified_pass(&self) -> usize {
        let (t, n, d) = (self.t, self.n, self.d);
        let mut out_t = vec![0.0; t * d];
        let mut out_s = vec![0.0; n * d];
        let a = self.temporal.attend(self.e_t.data(), t, d, &mut out_t);
        let b = self.spatial.attend(self.e_s.data(), n, d, &mut out_s);
        std::hint::black_box((&out_t, &out_s));
        a + b
    }

    /// One forward pass of axial attention over `T × N × D`; returns score entries.
    pub fn classical_pass(&self) -> usize {
        let (t, n, d) = (self.t, self.n, self.d);
        let mut entries = 0;
        // temporal attention for every node
        let mut temporal = vec![0.0; n * t * d];
        for node in 0..n {
            let block = node * t * d..(node + 1) * t * d;
            entries += self.temporal.attend(&self.grid[block.clone()], t, d, &mut temporal[block]);
        }
        // spatial attention for every step, on a step-major copy
        let mut by_step = vec![0.0; t * n * d];
        for node in 0..n {
            for step in 0..t {
                let src = (node * t + step) * d;
                let dst = (step * n + node) * d;
                by_step[dst..dst + d].copy_from_slice(&temporal[src..src + d]);
            }
        }
        let mut spatial = vec![0.0; t * n * d];
        for step in 0..t {
            let block = step * n * d..(step + 1) * n * d;
            entries += self.spatial.attend(&by_step[block.clone()], n, d, &mut spatial[block]);
        }
        std::hint::black_box(&spatial);
        entries
    }

    pub fn pass(&self, variant: Variant) -> usize {
        match variant {
            Variant::Unified => self.unified_pass(),
            Variant::Classical => self.classical_pass(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub variant: Variant,
    pub t: usize,
    pub n: usize,
    pub d: usize,
    pub heads: usize,
    pub repeats: usize,
    pub wall_ms_median: f64,
    pub score_entries: usize,
    pub score_bytes: usize,
    /// Spread of the repeats exceeded half the median.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchGrid {
    /// `(T, N)` pairs.
    pub points: Vec<(usize, usize)>,
    pub d: usize,
    pub heads: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl BenchGrid {
    pub fn t_sweep(ts: &[usize], n: usize) -> Self {
        Self {
            points: ts.iter().map(|&t| (t, n)).collect(),
            d: 16,
            heads: 1,
            repeats: 5,
            warmup: 1,
            seed: 42,
        }
    }
}

fn median(sorted: &[f64]) -> f64 {
    let m = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        0.5 * (sorted[m - 1] + sorted[m])
    }
}

/// Times `repeats` forward passes after `warmup` untimed ones.
pub fn measure(problem: &AttentionProblem, variant: Variant, repeats: usize, warmup: usize) -> Result<BenchRecord> {
    if repeats < 3 {
        return Err(Error::Config(format!("bench needs at least 3 repeats, got {repeats}")));
    }
    let expected = closed_form_entries(variant, problem.t, problem.n, problem.heads);
    for _ in 0..warmup {
        problem.pass(variant);
    }
    let mut times = Vec::with_capacity(repeats);
    let mut entries = 0;
    for _ in 0..repeats {
        let start = Instant::now();
        entries = problem.pass(variant);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    if entries != expected {
        return Err(Error::Invalid(format!(
            "{variant} pass at T={}, N={} counted {entries} score entries, closed form gives {expected}",
            problem.t, problem.n
        )));
    }
    times.sort_by(f64::total_cmp);
    let med = median(&times);
    let mean = times.iter().sum::<f64>() / repeats as f64;
    let sd = (times.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / repeats as f64).sqrt();
    Ok(BenchRecord {
        variant,
        t: problem.t,
        n: problem.n,
        d: problem.d,
        heads: problem.heads,
        repeats,
        wall_ms_median: med,
        score_entries: entries,
        score_bytes: 8 * entries,
        flagged: sd > 0.5 * med,
    })
}

pub fn unified_attention_pass(t: usize, n: usize, d: usize, heads: usize) -> Result<BenchRecord> {
    measure(&AttentionProblem::new(t, n, d, heads, 42)?, Variant::Unified, 3, 1)
}

pub fn classical_axial_pass(t: usize, n: usize, d: usize, heads: usize) -> Result<BenchRecord> {
    measure(&AttentionProblem::new(t, n, d, heads, 42)?, Variant::Classical, 3, 1)
}

/// Both variants at every grid point, unified first.
pub fn run_grid(grid: &BenchGrid) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::with_capacity(2 * grid.points.len());
    for &(t, n) in &grid.points {
        let problem = AttentionProblem::new(t, n, grid.d, grid.heads, grid.seed)?;
        for variant in [Variant::Unified, Variant::Classical] {
            out.push(measure(&problem, variant, grid.repeats, grid.warmup)?);
        }
    }
    Ok(out)
}

/// Least-squares slope of `log y` on `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Wall-time exponent in `T` for one variant.
pub fn time_exponent(records: &[BenchRecord], variant: Variant) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.variant == variant)
        .map(|r| (r.t as f64, r.wall_ms_median))
        .collect();
    loglog_slope(&pts)
}

pub const CSV_HEADER: &str = "variant,T,N,D,heads,repeats,wall_ms_median,score_entries,score_bytes,flagged";

pub fn write_csv(path: impl AsRef<Path>, records: &[BenchRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut text = format!("{CSV_HEADER}\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{},{},{}\n",
            r.variant,
            r.t,
            r.n,
            r.d,
            r.heads,
            r.repeats,
            r.wall_ms_median,
            r.score_entries,
            r.score_bytes,
            if r.flagged { "noisy" } else { "" }
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Two log-log panels (wall time, score bytes) against `T`, one series per variant.
pub fn render_svg(records: &[BenchRecord]) -> String {
    let (w, h, pad) = (360.0, 260.0, 40.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        2.0 * w
    );
    let panels: [(&str, fn(&BenchRecord) -> f64); 2] = [
        ("wall time (ms)", |r| r.wall_ms_median),
        ("score bytes", |r| r.score_bytes as f64),
    ];
    for (p, (title, value)) in panels.iter().enumerate() {
        let x0 = p as f64 * w;
        let pts: Vec<(f64, f64)> = records
            .iter()
            .map(|r| (r.t as f64, value(r)))
            .filter(|&(_, y)| y > 0.0)
            .collect();
        if pts.is_empty() {
            continue;
        }
        let lx = |v: f64| v.log10();
        let (xmin, xmax) = pts.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(lx(p.0)), a.1.max(lx(p.0))));
        let (ymin, ymax) = pts.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(lx(p.1)), a.1.max(lx(p.1))));
        let sx = |v: f64| x0 + pad + (lx(v) - xmin) / (xmax - xmin).max(1e-9) * (w - 2.0 * pad);
        let sy = |v: f64| h - pad - (lx(v) - ymin) / (ymax - ymin).max(1e-9) * (h - 2.0 * pad);
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"16\">{title}, log-log in T</text>\n<rect x=\"{}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n",
            x0 + pad,
            x0 + pad,
            w - 2.0 * pad,
            h - 2.0 * pad
        ));
        for (variant, color) in [(Variant::Unified, "#1f77b4"), (Variant::Classical, "#d62728")] {
            let series: Vec<String> = records
                .iter()
                .filter(|r| r.variant == variant && value(r) > 0.0)
                .map(|r| format!("{:.1},{:.1}", sx(r.t as f64), sy(value(r))))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                series.join(" ")
            ));
        }
    }
    svg.push_str("<text x=\"40\" y=\"250\" fill=\"#1f77b4\">unified</text><text x=\"100\" y=\"250\" fill=\"#d62728\">classical</text>\n</svg>\n");
    svg
}
