use noma_core::eval::{
    bit_error_rate, hard_decision_qpsk, mean, median, population_sd, run_noise_sweep, Ablation, BerReport, Detector,
    SweepConfig, SweepSetup,
};
use noma_core::hybrid::TrainConfig;
use noma_core::{ScenarioConfig, Snr};
use proptest::prelude::*;

fn small_setup() -> SweepSetup {
    SweepSetup {
        scenario: ScenarioConfig {
            num_users: 3,
            num_antennas: 4,
            train_symbols: 120,
            data_symbols: 200,
            seed: 8,
            ..Default::default()
        },
        hidden: vec![16, 16],
        train: TrainConfig {
            epochs: 3,
            batch_size: 32,
            ..Default::default()
        },
        sweep: SweepConfig {
            snr_db: vec![Snr::Db(0.0), Snr::Db(20.0)],
            trials: 2,
            detectors: Detector::ALL.to_vec(),
            ablations: vec![Ablation::SymmetryOn, Ablation::SymmetryOff, Ablation::SymmetryOnHalfData],
            users: vec![1, 3],
            fixed_channel: false,
        },
    }
}

#[test]
fn noiseless_linear_lls_sweep_is_error_free() {
    let setup = SweepSetup {
        scenario: ScenarioConfig {
            num_users: 3,
            num_antennas: 4,
            snr_db: Snr::Infinite,
            rx_nonlinearity_gain: 0.0,
            seed: 3,
            ..Default::default()
        },
        sweep: SweepConfig {
            snr_db: vec![Snr::Infinite],
            trials: 1,
            detectors: vec![Detector::Lls],
            ablations: vec![Ablation::SymmetryOn],
            users: vec![1, 2, 3],
            fixed_channel: false,
        },
        ..Default::default()
    };
    let report = run_noise_sweep(&setup, "x").unwrap();
    assert_eq!(report.rows.len(), 3);
    for row in &report.rows {
        assert_eq!(row.mean_ber, 0.0, "user {}", row.user);
        assert_eq!(row.sd_ber, 0.0);
    }
}

#[test]
fn sweep_is_bit_identical_across_runs() {
    let setup = small_setup();
    let a = run_noise_sweep(&setup, "d").unwrap();
    let b = run_noise_sweep(&setup, "d").unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn report_shape_and_invariants() {
    let setup = small_setup();
    let report = run_noise_sweep(&setup, "digest").unwrap();
    let s = &setup.sweep;
    assert_eq!(
        report.rows.len(),
        s.snr_db.len() * s.users.len() * s.detectors.len() * s.ablations.len()
    );
    for row in &report.rows {
        assert!((0.0..=1.0).contains(&row.mean_ber));
        assert!(row.sd_ber >= 0.0);
        assert_eq!(row.total_bits, 2 * 200 * 2);
        assert_eq!(row.per_trial.len(), 2);
        assert_eq!(row.mean_ber, mean(&row.per_trial));
    }
    assert_eq!(report.meta.master_seed, 8);
    assert_eq!(report.meta.config_digest, "digest");

    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(BerReport::CSV_HEADER));
    assert_eq!(lines.count(), report.rows.len());
    // row order: SNR, then user, detector, ablation
    assert_eq!(report.rows[0].snr, Snr::Db(0.0));
    assert_eq!(report.rows.last().unwrap().snr, Snr::Db(20.0));
    assert!(csv.contains("\n20,3,hybrid_nn,symmetry_on_half_data,2,"));
}

#[test]
fn one_trial_has_zero_spread() {
    let mut setup = small_setup();
    setup.sweep.trials = 1;
    setup.sweep.detectors = vec![Detector::Lls];
    let report = run_noise_sweep(&setup, "").unwrap();
    assert!(report.rows.iter().all(|r| r.sd_ber == 0.0));
}

#[test]
fn higher_snr_helps_lls_on_average() {
    let mut setup = small_setup();
    setup.sweep.detectors = vec![Detector::Lls];
    setup.sweep.ablations = vec![Ablation::SymmetryOn];
    setup.sweep.users = vec![1];
    setup.sweep.trials = 4;
    let report = run_noise_sweep(&setup, "").unwrap();
    let low = report.cell(Snr::Db(0.0), 1, Detector::Lls, Ablation::SymmetryOn).unwrap();
    let high = report.cell(Snr::Db(20.0), 1, Detector::Lls, Ablation::SymmetryOn).unwrap();
    assert!(high.mean_ber < low.mean_ber);
}

#[test]
fn fixed_channel_changes_only_the_channel_draw() {
    let mut setup = small_setup();
    setup.sweep.detectors = vec![Detector::Lls];
    let free = run_noise_sweep(&setup, "").unwrap();
    setup.sweep.fixed_channel = true;
    let fixed = run_noise_sweep(&setup, "").unwrap();
    // trial 0 uses channel draw 0 in both modes
    for (a, b) in free.rows.iter().zip(&fixed.rows) {
        assert_eq!(a.per_trial[0], b.per_trial[0]);
    }
    assert_ne!(free, fixed);
}

#[test]
fn invalid_setups_are_rejected() {
    let mut s = small_setup();
    s.sweep.snr_db.clear();
    assert!(run_noise_sweep(&s, "").is_err());
    let mut s = small_setup();
    s.sweep.trials = 0;
    assert!(run_noise_sweep(&s, "").is_err());
    let mut s = small_setup();
    s.sweep.users = vec![4];
    assert!(run_noise_sweep(&s, "").is_err());
    assert!("cnn".parse::<Detector>().is_err());
    assert!("symmetry_sideways".parse::<Ablation>().is_err());
}

#[test]
fn statistics_helpers() {
    assert_eq!(population_sd(&[0.25]), 0.0);
    assert!((population_sd(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
}

#[test]
fn ber_examples() {
    let truth: Vec<[u8; 2]> = (0..50).map(|i| [(i % 2) as u8, (i % 3 == 0) as u8]).collect();
    assert_eq!(bit_error_rate(&truth, &truth).unwrap(), 0.0);
    let flipped: Vec<[u8; 2]> = truth.iter().map(|b| [1 - b[0], 1 - b[1]]).collect();
    assert_eq!(bit_error_rate(&flipped, &truth).unwrap(), 1.0);
    let mut one = truth.clone();
    one[7][1] ^= 1;
    assert_eq!(bit_error_rate(&one, &truth).unwrap(), 0.01);
    assert!(bit_error_rate(&truth[..3], &truth).is_err());
}

proptest! {
    #[test]
    fn ber_is_symmetric(re in prop::collection::vec(-2.0f64..2.0, 1..40), seed in 0u64..1000) {
        let a: Vec<num_complex::Complex64> = re.iter().enumerate()
            .map(|(i, &r)| num_complex::Complex64::new(r, ((i as u64 * 7 + seed) % 5) as f64 - 2.0))
            .collect();
        let b: Vec<num_complex::Complex64> = a.iter().rev().cloned().collect();
        let (da, db) = (hard_decision_qpsk(&a), hard_decision_qpsk(&b));
        prop_assert_eq!(bit_error_rate(&da, &db).unwrap(), bit_error_rate(&db, &da).unwrap());
        prop_assert_eq!(bit_error_rate(&da, &da).unwrap(), 0.0);
    }
}
