//! Hard-decision demapping, bit error rates and the seeded sweep harness.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{synthesize_realization, Realization, ScenarioConfig, Snr, TransmissionRecord};
use crate::error::{dim_err, Error, Result};
use crate::hybrid::{self, full_dims, init_seeded, TrainConfig, TrainOutcome, DEFAULT_HIDDEN};
use crate::iq::{stack_real, widen_dataset, WidenedDataset};
use crate::lls::{self, LlsWeights, RankPolicy};
use crate::rng::derive_seed;

/// Gray-coded QPSK decisions: `bit0 = Re < 0`, `bit1 = Im < 0`.
pub fn hard_decision_qpsk(symbols: &[Complex64]) -> Vec<[u8; 2]> {
    symbols
        .iter()
        .map(|z| [(z.re < 0.0) as u8, (z.im < 0.0) as u8])
        .collect()
}

/// Number of differing bits.
pub fn bit_errors(predicted: &[[u8; 2]], truth: &[[u8; 2]]) -> Result<u64> {
    if predicted.len() != truth.len() {
        return Err(dim_err(format!(
            "{} predicted symbols vs {} reference symbols",
            predicted.len(),
            truth.len()
        )));
    }
    Ok(predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p[0] != t[0]) as u64 + (p[1] != t[1]) as u64)
        .sum())
}

pub fn bit_error_rate(predicted: &[[u8; 2]], truth: &[[u8; 2]]) -> Result<f64> {
    let errors = bit_errors(predicted, truth)?;
    if truth.is_empty() {
        return Err(dim_err("bit error rate of an empty sequence"));
    }
    Ok(errors as f64 / (2 * truth.len()) as f64)
}

/// BER of complex estimates against ground-truth symbols.
pub fn symbol_ber(estimates: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    bit_error_rate(&hard_decision_qpsk(estimates), &hard_decision_qpsk(truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Lls,
    HybridNn,
}

impl Detector {
    pub const ALL: [Detector; 2] = [Detector::Lls, Detector::HybridNn];

    pub fn id(self) -> &'static str {
        match self {
            Detector::Lls => "lls",
            Detector::HybridNn => "hybrid_nn",
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Detector::ALL
            .into_iter()
            .find(|d| d.id() == s)
            .ok_or_else(|| Error::UnknownDetector(s.to_string()))
    }
}

/// Training-data regimes compared in the symmetry ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Widened data, one shared real function.
    SymmetryOn,
    /// One row per symbol; real and imaginary parts get independent models.
    SymmetryOff,
    /// Widened data from only the first half of the training symbols.
    SymmetryOnHalfData,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [
        Ablation::SymmetryOn,
        Ablation::SymmetryOff,
        Ablation::SymmetryOnHalfData,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Ablation::SymmetryOn => "symmetry_on",
            Ablation::SymmetryOff => "symmetry_off",
            Ablation::SymmetryOnHalfData => "symmetry_on_half_data",
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::UnknownAblation(s.to_string()))
    }
}

/// Seeds for one network training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetSeeds {
    pub init: u64,
    pub shuffle: u64,
}

impl NetSeeds {
    pub fn derive(parent: u64, tag: u64) -> Self {
        Self {
            init: derive_seed(parent, 2 * tag),
            shuffle: derive_seed(parent, 2 * tag + 1),
        }
    }
}

/// Least-squares initialization followed by hybrid training on one
/// real-valued dataset.
pub fn fit_hybrid(
    data: &WidenedDataset,
    hidden: &[usize],
    train_cfg: &TrainConfig,
    seeds: NetSeeds,
) -> Result<(LlsWeights, TrainOutcome)> {
    let w0 = lls::fit_with(data, RankPolicy::MinimumNorm)?;
    let dims = full_dims(data.input_width(), hidden);
    let params = init_seeded(&dims, &w0, seeds.init)?;
    let cfg = TrainConfig {
        shuffle_seed: seeds.shuffle,
        ..train_cfg.clone()
    };
    let outcome = hybrid::train(params, data, &cfg)?;
    Ok((w0, outcome))
}

/// Widened training set for user `user` (1-based).
pub fn user_training_set(rec: &TransmissionRecord, user: usize) -> Result<WidenedDataset> {
    check_user(rec, user)?;
    Ok(widen_dataset(&rec.train_rx, Some(&rec.user_train_symbols(user)))?.for_user(user))
}

fn check_user(rec: &TransmissionRecord, user: usize) -> Result<()> {
    if user == 0 || user > rec.num_users() {
        return Err(Error::InvalidConfig(format!(
            "user {user} outside 1..={}",
            rec.num_users()
        )));
    }
    Ok(())
}

fn real_targets(symbols: &[Complex64], part: fn(&Complex64) -> f64) -> Vec<f64> {
    symbols.iter().map(part).collect()
}

/// Detector outputs for one user under one ablation. The network is only
/// trained when `with_network` is set.
#[derive(Debug, Clone)]
pub struct AblationOutputs {
    pub lls: Vec<Complex64>,
    pub hybrid: Option<Vec<Complex64>>,
}

pub fn run_ablation(
    rec: &TransmissionRecord,
    user: usize,
    ablation: Ablation,
    hidden: &[usize],
    train_cfg: &TrainConfig,
    seeds: NetSeeds,
    with_network: bool,
) -> Result<AblationOutputs> {
    check_user(rec, user)?;
    let train_symbols = rec.user_train_symbols(user);
    match ablation {
        Ablation::SymmetryOn | Ablation::SymmetryOnHalfData => {
            let mut data = widen_dataset(&rec.train_rx, Some(&train_symbols))?.for_user(user);
            if ablation == Ablation::SymmetryOnHalfData {
                data = data.truncate_symbols(rec.train_len() / 2);
            }
            let detect = widen_dataset(&rec.data_rx, None)?;
            if with_network {
                let (w0, outcome) = fit_hybrid(&data, hidden, train_cfg, seeds)?;
                Ok(AblationOutputs {
                    lls: lls::predict(&w0, &detect)?,
                    hybrid: Some(hybrid::detect(&outcome.params, &detect.design)?),
                })
            } else {
                let w0 = lls::fit_with(&data, RankPolicy::MinimumNorm)?;
                Ok(AblationOutputs {
                    lls: lls::predict(&w0, &detect)?,
                    hybrid: None,
                })
            }
        }
        Ablation::SymmetryOff => {
            let design = stack_real(&rec.train_rx);
            let detect = stack_real(&rec.data_rx);
            let parts: [fn(&Complex64) -> f64; 2] = [|z| z.re, |z| z.im];
            let mut lls_parts: Vec<Vec<f64>> = Vec::with_capacity(2);
            let mut net_parts: Vec<Vec<f64>> = Vec::with_capacity(2);
            for (slot, part) in parts.into_iter().enumerate() {
                let data = WidenedDataset {
                    design: design.clone(),
                    targets: Some(real_targets(&train_symbols, part)),
                    user_index: Some(user),
                };
                if with_network {
                    let slot_seeds = NetSeeds::derive(seeds.init ^ seeds.shuffle, slot as u64);
                    let (w0, outcome) = fit_hybrid(&data, hidden, train_cfg, slot_seeds)?;
                    lls_parts.push(lls::predict_real(&w0, &detect)?);
                    net_parts.push(hybrid::forward(&outcome.params, &detect)?);
                } else {
                    let w0 = lls::fit_with(&data, RankPolicy::MinimumNorm)?;
                    lls_parts.push(lls::predict_real(&w0, &detect)?);
                }
            }
            let join = |p: &[Vec<f64>]| -> Vec<Complex64> {
                p[0].iter().zip(&p[1]).map(|(&re, &im)| Complex64::new(re, im)).collect()
            };
            Ok(AblationOutputs {
                lls: join(&lls_parts),
                hybrid: with_network.then(|| join(&net_parts)),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub snr_db: Vec<Snr>,
    pub trials: u32,
    pub detectors: Vec<Detector>,
    pub ablations: Vec<Ablation>,
    /// 1-based users to evaluate.
    pub users: Vec<usize>,
    /// Keep one channel draw for every trial.
    pub fixed_channel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_db: (0..=8).map(|i| Snr::Db(5.0 * i as f64)).collect(),
            trials: 20,
            detectors: Detector::ALL.to_vec(),
            ablations: vec![Ablation::SymmetryOn],
            users: vec![4],
            fixed_channel: false,
        }
    }
}

/// Everything a sweep depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSetup {
    pub scenario: ScenarioConfig,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

impl Default for SweepSetup {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl SweepSetup {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        let s = &self.sweep;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if s.snr_db.is_empty() {
            return bad("SNR list is empty");
        }
        if s.trials == 0 {
            return bad("trials must be at least 1");
        }
        if s.detectors.is_empty() || s.ablations.is_empty() || s.users.is_empty() {
            return bad("detectors, ablations and users must be non-empty");
        }
        if let Some(u) = s.users.iter().find(|&&u| u == 0 || u > self.scenario.num_users) {
            return Err(Error::InvalidConfig(format!(
                "user {u} outside 1..={}",
                self.scenario.num_users
            )));
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerRow {
    pub snr: Snr,
    pub user: usize,
    pub detector: Detector,
    pub ablation: Ablation,
    pub trials: u32,
    pub mean_ber: f64,
    pub sd_ber: f64,
    pub total_bits: u64,
    /// Per-trial BER, ordered by trial index.
    pub per_trial: Vec<f64>,
}

impl BerRow {
    pub fn median_ber(&self) -> f64 {
        median(&self.per_trial)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportMeta {
    pub master_seed: u64,
    pub trials: u32,
    pub fixed_channel: bool,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerReport {
    pub rows: Vec<BerRow>,
    pub meta: ReportMeta,
}

impl BerReport {
    pub const CSV_HEADER: &'static str =
        "snr_db,user,detector,ablation,trials,mean_ber,sd_ber,total_bits";

    pub fn cell(&self, snr: Snr, user: usize, detector: Detector, ablation: Ablation) -> Option<&BerRow> {
        self.rows.iter().find(|r| {
            r.snr == snr && r.user == user && r.detector == detector && r.ablation == ablation
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.snr, r.user, r.detector, r.ablation, r.trials, r.mean_ber, r.sd_ber, r.total_bits
            ));
        }
        s
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn population_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

type CellKey = (usize, Detector, Ablation);

/// BER of every requested (user, detector, ablation) cell for one trial.
fn run_trial(setup: &SweepSetup, snr: Snr, trial: u32) -> Result<Vec<(CellKey, f64)>> {
    let sweep = &setup.sweep;
    let scenario = ScenarioConfig {
        snr_db: snr,
        ..setup.scenario.clone()
    };
    let rec = synthesize_realization(&scenario, Realization::trial(trial, sweep.fixed_channel))?;
    let trial_seed = derive_seed(setup.scenario.seed, 0x7121_0000 | trial as u64);
    let with_network = sweep.detectors.contains(&Detector::HybridNn);

    let mut out = Vec::new();
    for &user in &sweep.users {
        let truth = rec.user_data_symbols(user);
        for &ablation in &sweep.ablations {
            let seeds = NetSeeds::derive(trial_seed, 16 * user as u64 + ablation.tag());
            let res = run_ablation(&rec, user, ablation, &setup.hidden, &setup.train, seeds, with_network)?;
            for &det in &sweep.detectors {
                let est = match det {
                    Detector::Lls => &res.lls,
                    Detector::HybridNn => res.hybrid.as_ref().expect("network was trained"),
                };
                out.push(((user, det, ablation), symbol_ber(est, &truth)?));
            }
        }
    }
    Ok(out)
}

/// Runs every (SNR, trial) realization and aggregates per cell. Trials run
/// in parallel; aggregation is ordered by trial index.
pub fn run_noise_sweep(setup: &SweepSetup, config_digest: &str) -> Result<BerReport> {
    setup.validate()?;
    let sweep = &setup.sweep;
    let jobs: Vec<(usize, u32)> = (0..sweep.snr_db.len())
        .flat_map(|s| (0..sweep.trials).map(move |t| (s, t)))
        .collect();
    let results: Vec<Vec<(CellKey, f64)>> = jobs
        .par_iter()
        .map(|&(s, t)| run_trial(setup, sweep.snr_db[s], t))
        .collect::<Result<_>>()?;

    let bits_per_trial = (setup.scenario.data_symbols * setup.scenario.modulation.bits_per_symbol()) as u64;
    let mut rows = Vec::new();
    for (s, &snr) in sweep.snr_db.iter().enumerate() {
        let trials = &results[s * sweep.trials as usize..(s + 1) * sweep.trials as usize];
        for &user in &sweep.users {
            for &detector in &sweep.detectors {
                for &ablation in &sweep.ablations {
                    let key = (user, detector, ablation);
                    let per_trial: Vec<f64> = trials
                        .iter()
                        .map(|cells| cells.iter().find(|(k, _)| *k == key).expect("cell computed").1)
                        .collect();
                    rows.push(BerRow {
                        snr,
                        user,
                        detector,
                        ablation,
                        trials: sweep.trials,
                        mean_ber: mean(&per_trial),
                        sd_ber: population_sd(&per_trial),
                        total_bits: sweep.trials as u64 * bits_per_trial,
                        per_trial,
                    });
                }
            }
        }
    }
    Ok(BerReport {
        rows,
        meta: ReportMeta {
            master_seed: setup.scenario.seed,
            trials: sweep.trials,
            fixed_channel: sweep.fixed_channel,
            config_digest: config_digest.to_string(),
        },
    })
}
