use noma_core::fused::{
    self, build_plan, forward_fallback, forward_tiled, forward_tiled_par, fused_forward, max_relative_deviation,
    ExecPath, FusedPlan, TOL_F32, TOL_F64,
};
use noma_core::hybrid::{self, init_seeded, HybridNetParams};
use noma_core::lls::LlsWeights;
use noma_core::RealMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded parameters with non-zero biases and final layer so every branch
/// contributes.
fn params(dims: &[usize], seed: u64) -> HybridNetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = LlsWeights::new((0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut p = init_seeded(dims, &w0, seed).unwrap();
    for l in &mut p.hidden {
        for b in &mut l.bias {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    for w in &mut p.output {
        *w = rng.random_range(-0.5..0.5);
    }
    p
}

fn input(rows: usize, cols: usize, seed: u64) -> RealMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    RealMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

const CASES: &[&[usize]] = &[
    &[8, 64, 64, 64],
    &[8, 128, 128],
    &[8, 127, 129],
    &[8, 129],
    &[8, 256],
    &[8, 1],
    &[8, 3, 5, 7],
    &[8],
    &[6, 40, 17],
];

#[test]
fn fast_paths_match_reference_forward() {
    for (i, dims) in CASES.iter().enumerate() {
        for seed in 0..3u64 {
            let p = params(dims, 100 * i as u64 + seed);
            let plan = build_plan(&p).unwrap();
            let x = input(3840, dims[0], seed);
            let reference = hybrid::forward(&p, &x).unwrap();

            let checks: [(&str, Vec<f64>); 4] = [
                ("dispatch", fused_forward(&plan, &x).unwrap()),
                ("tiled", forward_tiled(&plan, &x).unwrap()),
                ("tiled_par", forward_tiled_par(&plan, &x).unwrap()),
                ("fallback", forward_fallback(&plan, &x).unwrap()),
            ];
            for (name, out) in &checks {
                let dev = max_relative_deviation(out, &reference);
                assert!(dev <= TOL_F64, "{name} {dims:?} seed {seed}: {dev:e}");
            }

            let plan32: FusedPlan<f32> = plan.cast();
            let dev32 = max_relative_deviation(&fused_forward(&plan32, &x).unwrap(), &reference);
            assert!(dev32 <= TOL_F32, "f32 {dims:?} seed {seed}: {dev32:e}");
        }
    }
}

#[test]
fn odd_batch_sizes_cover_partial_tiles() {
    let p = params(&[8, 64, 64, 64], 9);
    let plan = build_plan(&p).unwrap();
    for batch in [1, 2, 31, 32, 33, 65, 511, 513] {
        let x = input(batch, 8, batch as u64);
        let reference = hybrid::forward(&p, &x).unwrap();
        let out = fused_forward(&plan, &x).unwrap();
        assert_eq!(out.len(), batch);
        assert!(max_relative_deviation(&out, &reference) <= TOL_F64, "batch {batch}");
    }
}

#[test]
fn empty_batch_gives_empty_output() {
    let plan = build_plan(&params(&[8, 16], 1)).unwrap();
    assert!(fused_forward(&plan, &RealMatrix::zeros(0, 8)).unwrap().is_empty());
}

#[test]
fn width_threshold_is_inclusive() {
    let at = build_plan(&params(&[8, 128, 128, 128], 2)).unwrap();
    assert_eq!(at.path(), ExecPath::Fused);
    assert_eq!(at.max_width(), 128);
    let above = build_plan(&params(&[8, 64, 129], 2)).unwrap();
    assert_eq!(above.path(), ExecPath::Fallback);
    let wide = build_plan(&params(&[8, 256], 2)).unwrap();
    assert_eq!(wide.path(), ExecPath::Fallback);
}

#[test]
fn unpack_round_trip_is_bitwise() {
    for dims in CASES {
        let p = params(dims, 77);
        let back = build_plan(&p).unwrap().unpack();
        assert_eq!(back, p);
        let bits = |q: &HybridNetParams| -> Vec<u64> {
            let mut v: Vec<u64> = q.linear.iter().map(|x| x.to_bits()).collect();
            for l in &q.hidden {
                v.extend(l.weights.iter().chain(&l.bias).map(|x| x.to_bits()));
            }
            v.extend(q.output.iter().map(|x| x.to_bits()));
            v
        };
        assert_eq!(bits(&back), bits(&p));
    }
}

#[test]
fn packed_buffer_is_lane_aligned() {
    let plan = build_plan(&params(&[8, 5, 13], 3)).unwrap();
    for l in plan.layout() {
        assert_eq!(l.stride % fused::LANES, 0);
        assert!(l.stride >= l.outputs);
        assert_eq!(l.weight_offset % fused::LANES, 0);
        assert_eq!(l.bias_offset % fused::LANES, 0);
    }
    assert_eq!(plan.packed().len() % fused::LANES, 0);
}

#[test]
fn repeated_evaluation_is_deterministic() {
    let p = params(&[8, 64, 64, 64], 5);
    let plan = build_plan(&p).unwrap();
    let x = input(1000, 8, 5);
    let a = fused_forward(&plan, &x).unwrap();
    let b = fused_forward(&plan, &x).unwrap();
    let c = forward_tiled_par(&plan, &x).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn bench_report_carries_all_paths() {
    let plan = build_plan(&params(&[8, 64, 64, 64], 6)).unwrap();
    let report = fused::bench_compare(&plan, 64, 1).unwrap();
    for path in ["naive", "fused", "fallback", "fused_f32"] {
        let row = report.rows.iter().find(|r| r.path == path).unwrap();
        assert!(row.ns_per_sample > 0.0);
        assert!(row.speedup_vs_naive > 0.0);
        assert_eq!(row.dims, "8x64x64x64");
    }
    assert!(report.max_deviation_f64 <= TOL_F64);
    assert!(report.max_deviation_f32 <= TOL_F32);
    let csv = report.to_csv();
    assert!(csv.starts_with("path,dims,batch,ns_per_sample,speedup_vs_naive\n"));
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
}
