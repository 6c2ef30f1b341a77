use noma_core::channel::{gen_channel, gen_symbols, noise_variance};
use noma_core::rng::{stream_rng, Stream};
use noma_core::{synthesize, synthesize_realization, Modulation, Realization, ScenarioConfig, Snr};
use num_complex::Complex64;

#[test]
fn qpsk_draws_are_uniform_with_unit_energy() {
    let n = 100_000;
    let s = gen_symbols(1, n, Modulation::Qpsk, &mut stream_rng(5, Stream::Symbols, 0)).unwrap();
    let energy: f64 = s.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
    assert!((energy - 1.0).abs() < 1e-12);

    let pts = Modulation::Qpsk.points();
    // binomial SD of a 1/4 frequency
    let sd = (0.25f64 * 0.75 / n as f64).sqrt();
    for p in &pts {
        let hits = s.as_slice().iter().filter(|z| *z == p).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.25).abs() < 4.0 * sd, "point {p}: frequency {freq}");
    }
}

#[test]
fn channel_entries_have_unit_power() {
    let mut rng = stream_rng(8, Stream::Channel, 0);
    let draws = 10_000;
    let mut acc = vec![0.0; 16];
    for _ in 0..draws {
        let h = gen_channel(4, 4, &mut rng).unwrap();
        for (a, z) in acc.iter_mut().zip(h.as_slice()) {
            *a += z.norm_sqr();
        }
    }
    for a in acc {
        let mean = a / draws as f64;
        assert!((mean - 1.0).abs() < 0.05, "entry power {mean}");
    }
}

#[test]
fn measured_snr_matches_target() {
    for gain in [0.0, 0.05] {
        let cfg = ScenarioConfig {
            data_symbols: 100_000,
            snr_db: Snr::Db(10.0),
            rx_nonlinearity_gain: gain,
            seed: 2,
            ..Default::default()
        };
        let noisy = synthesize(&cfg).unwrap();
        let clean = synthesize(&ScenarioConfig {
            snr_db: Snr::Infinite,
            ..cfg.clone()
        })
        .unwrap();
        let (mut sig, mut noise) = (0.0, 0.0);
        for (y, s) in noisy.data_rx.as_slice().iter().zip(clean.data_rx.as_slice()) {
            sig += s.norm_sqr();
            noise += (y - s).norm_sqr();
        }
        let measured = 10.0 * (sig / noise).log10();
        assert!((measured - 10.0).abs() < 0.1, "gain {gain}: measured {measured} dB");
    }
}

#[test]
fn noiseless_linear_output_is_symbols_times_channel() {
    let cfg = ScenarioConfig {
        num_users: 5,
        num_antennas: 3,
        train_symbols: 40,
        data_symbols: 60,
        seed: 12,
        ..Default::default()
    };
    let rec = synthesize(&cfg).unwrap();
    let amps: Vec<f64> = rec.powers.iter().map(|p| p.sqrt()).collect();
    for (x, b) in [(&rec.train_rx, &rec.train_symbols), (&rec.data_rx, &rec.data_symbols)] {
        for t in 0..x.rows() {
            for a in 0..3 {
                let expect: Complex64 = (0..5).map(|k| b.get(t, k) * amps[k] * rec.channel.get(a, k)).sum();
                assert!((x.get(t, a) - expect).norm() <= 1e-14 * expect.norm().max(1.0));
            }
        }
    }
}

#[test]
fn single_user_two_antenna_example() {
    // b(1) lands on the first constellation point; r(1) = b(1)·h
    let cfg = ScenarioConfig {
        num_users: 1,
        num_antennas: 2,
        train_symbols: 4,
        data_symbols: 1,
        seed: 0,
        ..Default::default()
    };
    let rec = synthesize(&cfg).unwrap();
    assert_eq!(rec.powers, vec![1.0]);
    for t in 0..4 {
        for a in 0..2 {
            assert_eq!(rec.train_rx.get(t, a), rec.train_symbols.get(t, 0) * rec.channel.get(a, 0));
        }
    }
}

#[test]
fn same_config_gives_identical_record() {
    let cfg = ScenarioConfig {
        snr_db: Snr::Db(5.0),
        rx_nonlinearity_gain: 0.05,
        seed: 77,
        ..Default::default()
    };
    assert_eq!(synthesize(&cfg).unwrap(), synthesize(&cfg).unwrap());
}

#[test]
fn trial_index_only_changes_channel_and_noise() {
    let cfg = ScenarioConfig {
        snr_db: Snr::Db(20.0),
        seed: 4,
        ..Default::default()
    };
    let a = synthesize_realization(&cfg, Realization::trial(0, false)).unwrap();
    let b = synthesize_realization(&cfg, Realization::trial(1, false)).unwrap();
    assert_eq!(a.train_symbols, b.train_symbols);
    assert_eq!(a.data_symbols, b.data_symbols);
    assert_ne!(a.channel, b.channel);
    let c = synthesize_realization(&cfg, Realization::trial(1, true)).unwrap();
    assert_eq!(a.channel, c.channel);
    assert_ne!(a.data_rx, c.data_rx);
}

#[test]
fn fourth_user_sits_twelve_db_below_total() {
    let share = 10f64.powf(-0.9) / (0..6).map(|k| 10f64.powf(-0.3 * k as f64)).sum::<f64>();
    let analytic_db = 10.0 * share.log10();
    assert!((analytic_db + 12.0).abs() < 0.1);

    // simulated: received power of user 4 over total, averaged over channels
    let (mut soi, mut total) = (0.0, 0.0);
    for seed in 0..300 {
        let cfg = ScenarioConfig {
            seed,
            data_symbols: 200,
            ..Default::default()
        };
        let rec = synthesize(&cfg).unwrap();
        for t in 0..rec.data_len() {
            for a in 0..4 {
                let u4 = rec.powers[3].sqrt() * rec.data_symbols.get(t, 3) * rec.channel.get(a, 3);
                soi += u4.norm_sqr();
                total += rec.data_rx.get(t, a).norm_sqr();
            }
        }
    }
    let measured_db = 10.0 * (soi / total).log10();
    assert!((measured_db - analytic_db).abs() < 1.0, "measured {measured_db} dB");
}

#[test]
fn infinite_snr_means_zero_noise_variance() {
    let cfg = ScenarioConfig::default();
    let h = gen_channel(6, 4, &mut stream_rng(1, Stream::Channel, 0)).unwrap();
    assert_eq!(noise_variance(&cfg, &h), 0.0);
    let finite = ScenarioConfig {
        snr_db: Snr::Db(0.0),
        ..cfg
    };
    assert!(noise_variance(&finite, &h) > 0.0);
}
