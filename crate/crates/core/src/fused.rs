//! Single-pass tiled inference for narrow networks.
//!
//! Inputs are processed in tiles of [`TILE_ROWS`] rows. Each tile is pushed
//! through every layer inside two small ping-pong buffers, so no per-layer
//! activation matrix for the whole batch is ever materialized. Weights are
//! packed input-major with output rows padded to [`LANES`], which turns the
//! inner loop into a fixed-stride multiply-add the compiler can vectorize.
//! Layers wider than [`FUSED_MAX_WIDTH`] go through a blocked GEMM path
//! that materializes each layer for the whole batch.

use std::time::Instant;

use num_traits::{Float, NumCast};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::hybrid::{self, DenseLayer, HybridNetParams};
use crate::linalg::RealMatrix;
use crate::lls::LlsWeights;
use crate::rng::{stream_rng, Stream};

pub const FUSED_MAX_WIDTH: usize = 128;
pub const LANES: usize = 8;
pub const TILE_ROWS: usize = 32;
const GEMM_BLOCK_ROWS: usize = 64;
const GEMM_BLOCK_K: usize = 64;

/// Relative tolerance of the 64-bit fast paths against the reference forward.
pub const TOL_F64: f64 = 1e-12;
/// Relative tolerance of the 32-bit fused path.
pub const TOL_F32: f64 = 1e-5;

/// Scalar types the packed kernels run in.
pub trait Element: Float + std::ops::AddAssign + Send + Sync + std::fmt::Debug + 'static {
    const NAME: &'static str;
}

impl Element for f64 {
    const NAME: &'static str = "f64";
}

impl Element for f32 {
    const NAME: &'static str = "f32";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecPath {
    Fused,
    Fallback,
}

#[inline]
fn pad(n: usize) -> usize {
    n.div_ceil(LANES) * LANES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub inputs: usize,
    pub outputs: usize,
    /// Row stride of the packed, transposed weights.
    pub stride: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// Immutable packed network.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPlan<T> {
    buffer: Vec<T>,
    dims: Vec<usize>,
    layers: Vec<LayerLayout>,
    linear_offset: usize,
    output_offset: usize,
    /// Widest hidden layer.
    max_width: usize,
    /// Scratch row width: max of padded input and hidden widths.
    scratch_width: usize,
    path: ExecPath,
}

pub fn build_plan(params: &HybridNetParams) -> Result<FusedPlan<f64>> {
    params.validate()?;
    let dims = params.dims();
    let input = params.input_width();
    let mut buffer: Vec<f64> = Vec::new();

    let linear_offset = 0;
    buffer.extend_from_slice(&params.linear);
    buffer.resize(pad(input), 0.0);

    let mut layers = Vec::with_capacity(params.hidden.len());
    for l in &params.hidden {
        let stride = pad(l.outputs);
        let weight_offset = buffer.len();
        buffer.resize(weight_offset + l.inputs * stride, 0.0);
        for j in 0..l.outputs {
            for (i, &w) in l.weight_row(j).iter().enumerate() {
                buffer[weight_offset + i * stride + j] = w;
            }
        }
        let bias_offset = buffer.len();
        buffer.extend_from_slice(&l.bias);
        buffer.resize(bias_offset + stride, 0.0);
        layers.push(LayerLayout {
            inputs: l.inputs,
            outputs: l.outputs,
            stride,
            weight_offset,
            bias_offset,
        });
    }

    let output_offset = buffer.len();
    buffer.extend_from_slice(&params.output);
    buffer.resize(output_offset + pad(params.output.len()), 0.0);

    let max_width = params.max_hidden_width();
    let path = if max_width <= FUSED_MAX_WIDTH {
        ExecPath::Fused
    } else {
        ExecPath::Fallback
    };
    Ok(FusedPlan {
        buffer,
        dims,
        layers,
        linear_offset,
        output_offset,
        max_width,
        scratch_width: pad(input.max(max_width)),
        path,
    })
}

impl<T: Element> FusedPlan<T> {
    pub fn path(&self) -> ExecPath {
        self.path
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn max_width(&self) -> usize {
        self.max_width
    }

    pub fn scratch_width(&self) -> usize {
        self.scratch_width
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layers
    }

    pub fn packed(&self) -> &[T] {
        &self.buffer
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    /// Same plan with every packed value cast to `U`.
    pub fn cast<U: Element>(&self) -> FusedPlan<U> {
        FusedPlan {
            buffer: self
                .buffer
                .iter()
                .map(|&v| <U as NumCast>::from(v).expect("finite parameter"))
                .collect(),
            dims: self.dims.clone(),
            layers: self.layers.clone(),
            linear_offset: self.linear_offset,
            output_offset: self.output_offset,
            max_width: self.max_width,
            scratch_width: self.scratch_width,
            path: self.path,
        }
    }

    fn linear(&self) -> &[T] {
        &self.buffer[self.linear_offset..self.linear_offset + self.dims[0]]
    }

    fn final_weights(&self) -> &[T] {
        let width = *self.dims.last().unwrap();
        &self.buffer[self.output_offset..self.output_offset + width]
    }

    fn weights(&self, l: &LayerLayout) -> &[T] {
        &self.buffer[l.weight_offset..l.weight_offset + l.inputs * l.stride]
    }

    fn bias(&self, l: &LayerLayout) -> &[T] {
        &self.buffer[l.bias_offset..l.bias_offset + l.stride]
    }

    fn check_input(&self, x: &RealMatrix) -> Result<()> {
        if x.cols() != self.dims[0] {
            return Err(dim_err(format!(
                "input has {} columns, plan expects {}",
                x.cols(),
                self.dims[0]
            )));
        }
        Ok(())
    }
}

impl FusedPlan<f64> {
    /// Recovers the source parameters from the packed buffer.
    pub fn unpack(&self) -> HybridNetParams {
        let hidden = self
            .layers
            .iter()
            .map(|l| {
                let w = self.weights(l);
                let mut layer = DenseLayer::zeros(l.inputs, l.outputs);
                for j in 0..l.outputs {
                    for i in 0..l.inputs {
                        layer.weights[j * l.inputs + i] = w[i * l.stride + j];
                    }
                }
                layer.bias.copy_from_slice(&self.bias(l)[..l.outputs]);
                layer
            })
            .collect();
        HybridNetParams {
            linear: self.linear().to_vec(),
            hidden,
            output: self.final_weights().to_vec(),
        }
    }
}

#[inline]
fn cast<T: Element>(v: f64) -> T {
    <T as NumCast>::from(v).expect("finite input")
}

#[inline]
fn dot_t<T: Element>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `out = max(bias + Σ_i in[i] · Wt[i, :], 0)` over padded lanes.
#[inline]
fn layer_row<T: Element>(input: &[T], wt: &[T], bias: &[T], stride: usize, out: &mut [T]) {
    let out = &mut out[..stride];
    out.copy_from_slice(bias);
    for (i, &a) in input.iter().enumerate() {
        if a == T::zero() {
            continue;
        }
        let w = &wt[i * stride..(i + 1) * stride];
        for (o, &wv) in out.iter_mut().zip(w) {
            *o += a * wv;
        }
    }
    for o in out.iter_mut() {
        *o = o.max(T::zero());
    }
}

/// Runs the tile kernel over `rows` starting at `first_row`, writing into
/// `out`; `scratch` must hold `2 · TILE_ROWS · scratch_width` values.
fn fused_rows<T: Element>(
    plan: &FusedPlan<T>,
    x: &RealMatrix,
    first_row: usize,
    out: &mut [T],
    scratch: &mut [T],
) {
    let width = plan.scratch_width;
    let input = plan.dims[0];
    let (buf_a, buf_b) = scratch.split_at_mut(TILE_ROWS * width);
    let linear = plan.linear();
    let last_width = *plan.dims.last().unwrap();
    let final_w = plan.final_weights();

    for (tile_idx, out_tile) in out.chunks_mut(TILE_ROWS).enumerate() {
        let base = first_row + tile_idx * TILE_ROWS;
        let rows = out_tile.len();
        let mut cur: &mut [T] = &mut *buf_a;
        let mut nxt: &mut [T] = &mut *buf_b;
        for r in 0..rows {
            let dst = &mut cur[r * width..r * width + input];
            for (d, &s) in dst.iter_mut().zip(x.row(base + r)) {
                *d = cast(s);
            }
        }
        for r in 0..rows {
            out_tile[r] = dot_t(&cur[r * width..r * width + input], linear);
        }
        let mut cur_width = input;
        for l in &plan.layers {
            let wt = plan.weights(l);
            let bias = plan.bias(l);
            for r in 0..rows {
                layer_row(
                    &cur[r * width..r * width + cur_width],
                    wt,
                    bias,
                    l.stride,
                    &mut nxt[r * width..(r + 1) * width],
                );
            }
            std::mem::swap(&mut cur, &mut nxt);
            cur_width = l.outputs;
        }
        for r in 0..rows {
            out_tile[r] += dot_t(&cur[r * width..r * width + last_width], final_w);
        }
    }
}

/// The tiled single-pass kernel, regardless of the plan's width.
pub fn forward_tiled<T: Element>(plan: &FusedPlan<T>, x: &RealMatrix) -> Result<Vec<T>> {
    plan.check_input(x)?;
    let mut out = vec![T::zero(); x.rows()];
    let mut scratch = vec![T::zero(); 2 * TILE_ROWS * plan.scratch_width];
    fused_rows(plan, x, 0, &mut out, &mut scratch);
    Ok(out)
}

/// Tile-parallel variant of [`forward_tiled`]; each worker owns its scratch.
pub fn forward_tiled_par<T: Element>(plan: &FusedPlan<T>, x: &RealMatrix) -> Result<Vec<T>> {
    plan.check_input(x)?;
    let chunk = TILE_ROWS * 16;
    let mut out = vec![T::zero(); x.rows()];
    out.par_chunks_mut(chunk).enumerate().for_each(|(c, dst)| {
        let mut scratch = vec![T::zero(); 2 * TILE_ROWS * plan.scratch_width];
        fused_rows(plan, x, c * chunk, dst, &mut scratch);
    });
    Ok(out)
}

/// `C = relu(A · Wt + bias)` for the whole batch, blocked over rows and the
/// reduction dimension.
fn gemm_layer<T: Element>(a: &[T], a_cols: usize, rows: usize, wt: &[T], bias: &[T], stride: usize) -> Vec<T> {
    let mut c = vec![T::zero(); rows * stride];
    for r in 0..rows {
        c[r * stride..(r + 1) * stride].copy_from_slice(bias);
    }
    for r0 in (0..rows).step_by(GEMM_BLOCK_ROWS) {
        let r1 = (r0 + GEMM_BLOCK_ROWS).min(rows);
        for k0 in (0..a_cols).step_by(GEMM_BLOCK_K) {
            let k1 = (k0 + GEMM_BLOCK_K).min(a_cols);
            for r in r0..r1 {
                let arow = &a[r * a_cols..(r + 1) * a_cols];
                let crow = &mut c[r * stride..(r + 1) * stride];
                for k in k0..k1 {
                    let av = arow[k];
                    if av == T::zero() {
                        continue;
                    }
                    let w = &wt[k * stride..(k + 1) * stride];
                    for (cv, &wv) in crow.iter_mut().zip(w) {
                        *cv += av * wv;
                    }
                }
            }
        }
    }
    for v in c.iter_mut() {
        *v = v.max(T::zero());
    }
    c
}

/// Layer-by-layer path for wide networks.
pub fn forward_fallback<T: Element>(plan: &FusedPlan<T>, x: &RealMatrix) -> Result<Vec<T>> {
    plan.check_input(x)?;
    let rows = x.rows();
    let input: Vec<T> = x.as_slice().iter().map(|&v| cast(v)).collect();
    let linear = plan.linear();
    let mut out: Vec<T> = input.chunks(plan.dims[0].max(1)).take(rows).map(|r| dot_t(r, linear)).collect();

    let mut act = input;
    let mut act_cols = plan.dims[0];
    for l in &plan.layers {
        act = gemm_layer(&act, act_cols, rows, plan.weights(l), plan.bias(l), l.stride);
        act_cols = l.stride;
    }
    let width = *plan.dims.last().unwrap();
    let final_w = plan.final_weights();
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot_t(&act[r * act_cols..r * act_cols + width], final_w);
    }
    Ok(out)
}

/// Dispatches on the plan's path.
pub fn fused_forward<T: Element>(plan: &FusedPlan<T>, x: &RealMatrix) -> Result<Vec<T>> {
    match plan.path {
        ExecPath::Fused => forward_tiled(plan, x),
        ExecPath::Fallback => forward_fallback(plan, x),
    }
}

/// `max |a − b| / max |b|`, the deviation measure for the tolerance gates.
pub fn max_relative_deviation<T: Element>(fast: &[T], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = fast
        .iter()
        .zip(reference)
        .map(|(a, b)| (a.to_f64().unwrap() - b).abs())
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub path: String,
    pub dims: String,
    pub batch: usize,
    pub ns_per_sample: f64,
    pub speedup_vs_naive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineInfo {
    pub arch: &'static str,
    pub os: &'static str,
    pub logical_cpus: usize,
    pub threads: usize,
}

impl MachineInfo {
    pub fn current(threads: usize) -> Self {
        Self {
            arch: std::env::consts::ARCH,
            os: std::env::consts::OS,
            logical_cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            threads,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub machine: MachineInfo,
    /// Largest deviation of any fast path from the reference, checked
    /// before timing.
    pub max_deviation_f64: f64,
    pub max_deviation_f32: f64,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "path,dims,batch,ns_per_sample,speedup_vs_naive";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.3},{:.4}\n",
                r.path, r.dims, r.batch, r.ns_per_sample, r.speedup_vs_naive
            ));
        }
        s
    }

    pub fn speedup(&self, path: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.path == path).map(|r| r.speedup_vs_naive)
    }
}

pub fn dims_label(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Seeded `batch × width` input in `[-2, 2)`.
pub fn bench_input(batch: usize, width: usize, seed: u64) -> RealMatrix {
    let mut rng = stream_rng(seed, Stream::NetInit, 0xbe);
    RealMatrix::from_fn(batch, width, |_, _| rng.random_range(-2.0..2.0))
}

/// Seeded parameters with random linear weights, biases and final layer, so
/// every branch of the network contributes to the output.
pub fn bench_params(dims: &[usize], seed: u64) -> Result<HybridNetParams> {
    if dims.is_empty() || dims[0] == 0 {
        return Err(dim_err("network needs a positive input width"));
    }
    let mut rng = stream_rng(seed, Stream::NetInit, 0xbf);
    let w0 = LlsWeights::new((0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut p = hybrid::init_params(dims, &w0, &mut rng)?;
    for l in &mut p.hidden {
        for b in &mut l.bias {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    for w in &mut p.output {
        *w = rng.random_range(-0.5..0.5);
    }
    Ok(p)
}

fn median_ns_per_call(repeats: usize, mut f: impl FnMut()) -> f64 {
    // calibrate so that one repeat lasts at least ~200 µs
    let mut iters = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..iters {
            f();
        }
        if t.elapsed().as_micros() >= 200 || iters >= 1 << 20 {
            break;
        }
        iters *= 2;
    }
    let mut samples: Vec<f64> = (0..repeats.max(1))
        .map(|_| {
            let t = Instant::now();
            for _ in 0..iters {
                f();
            }
            t.elapsed().as_nanos() as f64 / iters as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

/// Times the reference forward, the dispatched fast path, the forced GEMM
/// path and the 32-bit fast path. All fast paths must pass their tolerance
/// against the reference before anything is timed.
pub fn bench_compare(plan: &FusedPlan<f64>, batch: usize, repeats: usize) -> Result<BenchReport> {
    if batch == 0 {
        return Err(dim_err("benchmark batch must be at least 1"));
    }
    let params = plan.unpack();
    let x = bench_input(batch, plan.input_width(), 0x5eed);
    let plan32: FusedPlan<f32> = plan.cast();

    let reference = hybrid::forward(&params, &x)?;
    let dev_fused = max_relative_deviation(&fused_forward(plan, &x)?, &reference);
    let dev_fallback = max_relative_deviation(&forward_fallback(plan, &x)?, &reference);
    let dev_f32 = max_relative_deviation(&fused_forward(&plan32, &x)?, &reference);
    let max_deviation_f64 = dev_fused.max(dev_fallback);
    if max_deviation_f64 > TOL_F64 {
        return Err(Error::EquivalenceFailed(format!(
            "64-bit deviation {max_deviation_f64:e} exceeds {TOL_F64:e}"
        )));
    }
    if dev_f32 > TOL_F32 {
        return Err(Error::EquivalenceFailed(format!(
            "32-bit deviation {dev_f32:e} exceeds {TOL_F32:e}"
        )));
    }

    let naive = median_ns_per_call(repeats, || {
        std::hint::black_box(hybrid::forward(&params, &x).unwrap());
    });
    let fused = median_ns_per_call(repeats, || {
        std::hint::black_box(fused_forward(plan, &x).unwrap());
    });
    let fallback = median_ns_per_call(repeats, || {
        std::hint::black_box(forward_fallback(plan, &x).unwrap());
    });
    let fused32 = median_ns_per_call(repeats, || {
        std::hint::black_box(fused_forward(&plan32, &x).unwrap());
    });

    let dims = dims_label(plan.dims());
    let row = |path: &str, ns: f64| BenchRow {
        path: path.to_string(),
        dims: dims.clone(),
        batch,
        ns_per_sample: ns / batch as f64,
        speedup_vs_naive: naive / ns,
    };
    Ok(BenchReport {
        rows: vec![
            row("naive", naive),
            row("fused", fused),
            row("fallback", fallback),
            row("fused_f32", fused32),
        ],
        machine: MachineInfo::current(1),
        max_deviation_f64,
        max_deviation_f32: dev_f32,
    })
}
