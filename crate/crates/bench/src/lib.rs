//! Shared fixtures for the benchmarks.

use noma_core::eval::user_training_set;
use noma_core::fused::{bench_input, bench_params, build_plan, FusedPlan};
use noma_core::hybrid::HybridNetParams;
use noma_core::iq::WidenedDataset;
use noma_core::{synthesize, RealMatrix, ScenarioConfig, Snr};

/// Network shapes the inference benchmarks sweep over.
pub const SHAPES: &[&[usize]] = &[&[8, 32, 32], &[8, 64, 64, 64], &[8, 128, 128, 128], &[8, 256, 256]];

/// Batch sizes; 3840 is one data phase.
pub const BATCHES: &[usize] = &[128, 3840];

pub struct InferenceFixture {
    pub params: HybridNetParams,
    pub plan: FusedPlan<f64>,
    pub plan32: FusedPlan<f32>,
    pub input: RealMatrix,
}

pub fn inference_fixture(dims: &[usize], batch: usize) -> InferenceFixture {
    let params = bench_params(dims, 1).expect("valid dims");
    let plan = build_plan(&params).expect("valid params");
    let plan32 = plan.cast();
    InferenceFixture {
        input: bench_input(batch, dims[0], 2),
        params,
        plan,
        plan32,
    }
}

/// User 4's widened training set from the default nonlinear scenario.
pub fn training_set() -> WidenedDataset {
    let rec = synthesize(&ScenarioConfig {
        snr_db: Snr::Db(25.0),
        rx_nonlinearity_gain: ScenarioConfig::NONLINEAR_GAIN,
        seed: 3,
        ..Default::default()
    })
    .expect("default scenario is valid");
    user_training_set(&rec, 4).expect("user 4 exists")
}
