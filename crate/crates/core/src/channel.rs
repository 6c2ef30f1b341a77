//! Synthetic multi-user uplink transmissions.
//!
//! Each receive row is `r(t) = Σ_k √p_k · b_k(t) · h_k + n(t)`, optionally
//! passed through a memoryless cubic receiver distortion before the noise
//! is added.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::ComplexMatrix;
use crate::rng::{stream_rng, Stream};

/// Above this many users the expected distorted signal power is estimated
/// from a fixed Monte Carlo draw instead of full enumeration.
const MAX_ENUMERATED_USERS: usize = 8;
const POWER_MC_DRAWS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    #[default]
    Qpsk,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
        }
    }

    pub fn order(self) -> usize {
        1 << self.bits_per_symbol()
    }

    /// Gray map: `(b0, b1) -> ((1 - 2 b0) + i (1 - 2 b1)) / √2`.
    pub fn map_bits(self, bits: [u8; 2]) -> Complex64 {
        match self {
            Modulation::Qpsk => Complex64::new(
                (1.0 - 2.0 * bits[0] as f64) * FRAC_1_SQRT_2,
                (1.0 - 2.0 * bits[1] as f64) * FRAC_1_SQRT_2,
            ),
        }
    }

    /// Constellation point for symbol index `0..order`, bit 0 in the MSB.
    pub fn point(self, index: usize) -> Complex64 {
        self.map_bits([((index >> 1) & 1) as u8, (index & 1) as u8])
    }

    pub fn points(self) -> Vec<Complex64> {
        (0..self.order()).map(|i| self.point(i)).collect()
    }

    /// Average symbol energy of the constellation.
    pub fn symbol_energy(self) -> f64 {
        1.0
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modulation::Qpsk => f.write_str("qpsk"),
        }
    }
}

/// Signal-to-noise ratio in dB, or noiseless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Db(f64),
    Infinite,
}

impl Snr {
    pub fn is_infinite(self) -> bool {
        matches!(self, Snr::Infinite)
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snr::Db(db) => write!(f, "{db}"),
            Snr::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Snr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinite" | "+inf" => Ok(Snr::Infinite),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Snr::Db)
                .ok_or_else(|| Error::InvalidConfig(format!("bad SNR value `{s}`"))),
        }
    }
}

impl Serialize for Snr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Snr::Db(db) => s.serialize_f64(*db),
            Snr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v.is_finite() => Ok(Snr::Db(v)),
            Raw::Num(v) if v == f64::INFINITY => Ok(Snr::Infinite),
            Raw::Num(v) => Err(serde::de::Error::custom(format!("bad SNR value {v}"))),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub num_users: usize,
    pub num_antennas: usize,
    pub train_symbols: usize,
    pub data_symbols: usize,
    pub power_step_db: f64,
    pub snr_db: Snr,
    pub rx_nonlinearity_gain: f64,
    pub modulation: Modulation,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_users: 6,
            num_antennas: 4,
            train_symbols: 685,
            data_symbols: 3840,
            power_step_db: 3.0,
            snr_db: Snr::Infinite,
            rx_nonlinearity_gain: 0.0,
            modulation: Modulation::Qpsk,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Receiver distortion gain used for the nonlinear experiments.
    pub const NONLINEAR_GAIN: f64 = 0.05;

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_users == 0 || self.num_antennas == 0 {
            return bad("num_users and num_antennas must be at least 1".into());
        }
        if self.data_symbols == 0 {
            return bad("data_symbols must be at least 1".into());
        }
        if self.train_symbols < 2 * self.num_antennas {
            return bad(format!(
                "train_symbols ({}) must be at least 2 x num_antennas ({})",
                self.train_symbols,
                2 * self.num_antennas
            ));
        }
        if !(self.power_step_db.is_finite() && self.power_step_db >= 0.0) {
            return bad(format!("power_step_db must be finite and >= 0, got {}", self.power_step_db));
        }
        if !(self.rx_nonlinearity_gain.is_finite() && self.rx_nonlinearity_gain >= 0.0) {
            return bad(format!(
                "rx_nonlinearity_gain must be finite and >= 0, got {}",
                self.rx_nonlinearity_gain
            ));
        }
        if let Snr::Db(db) = self.snr_db {
            if !db.is_finite() {
                return bad("snr_db must be finite or \"inf\"".into());
            }
        }
        Ok(())
    }

    /// Transmit powers `p_k = 10^(-(k-1)·step/10)`.
    pub fn powers(&self) -> Vec<f64> {
        (0..self.num_users)
            .map(|k| 10f64.powf(-(k as f64) * self.power_step_db / 10.0))
            .collect()
    }
}

/// Which channel and noise realization to draw. Symbols depend only on the
/// scenario seed, never on the realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Realization {
    pub channel: u32,
    pub noise: u32,
}

impl Realization {
    pub fn trial(index: u32, fixed_channel: bool) -> Self {
        Self {
            channel: if fixed_channel { 0 } else { index },
            noise: index,
        }
    }
}

/// One simulated transmission: training phase followed by data phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionRecord {
    /// `M×K`, column `k` is user `k`'s signature.
    pub channel: ComplexMatrix,
    pub powers: Vec<f64>,
    /// `N_T×M`
    pub train_rx: ComplexMatrix,
    /// `N_T×K`
    pub train_symbols: ComplexMatrix,
    /// `N_D×M`
    pub data_rx: ComplexMatrix,
    /// `N_D×K`
    pub data_symbols: ComplexMatrix,
    pub noise_power: f64,
}

impl TransmissionRecord {
    pub fn num_users(&self) -> usize {
        self.channel.cols()
    }

    pub fn num_antennas(&self) -> usize {
        self.channel.rows()
    }

    pub fn train_len(&self) -> usize {
        self.train_rx.rows()
    }

    pub fn data_len(&self) -> usize {
        self.data_rx.rows()
    }

    /// Checks that all matrix shapes agree with each other.
    pub fn check_shapes(&self) -> Result<()> {
        let (m, k) = self.channel.shape();
        let ok = self.powers.len() == k
            && self.train_rx.cols() == m
            && self.data_rx.cols() == m
            && self.train_symbols.shape() == (self.train_rx.rows(), k)
            && self.data_symbols.shape() == (self.data_rx.rows(), k);
        if ok {
            Ok(())
        } else {
            Err(dim_err("transmission record matrices have inconsistent shapes"))
        }
    }

    /// Ground-truth symbols of user `user` (1-based) in the training phase.
    pub fn user_train_symbols(&self, user: usize) -> Vec<Complex64> {
        self.train_symbols.column(user - 1)
    }

    pub fn user_data_symbols(&self, user: usize) -> Vec<Complex64> {
        self.data_symbols.column(user - 1)
    }
}

/// `N×K` matrix of uniformly drawn constellation points.
pub fn gen_symbols(
    users: usize,
    len: usize,
    modulation: Modulation,
    rng: &mut impl Rng,
) -> Result<ComplexMatrix> {
    if users == 0 || len == 0 {
        return Err(dim_err(format!("symbol matrix needs nonzero dims, got {len}x{users}")));
    }
    let order = modulation.order();
    Ok(ComplexMatrix::from_fn(len, users, |_, _| {
        modulation.point(rng.random_range(0..order))
    }))
}

/// `M×K` matrix of i.i.d. CN(0, 1) entries.
pub fn gen_channel(users: usize, antennas: usize, rng: &mut impl Rng) -> Result<ComplexMatrix> {
    if users == 0 || antennas == 0 {
        return Err(dim_err(format!(
            "channel needs nonzero dims, got {antennas}x{users}"
        )));
    }
    Ok(ComplexMatrix::from_fn(antennas, users, |_, _| {
        complex_gaussian(rng, 1.0)
    }))
}

fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

#[inline]
fn distort(u: Complex64, gain: f64) -> Complex64 {
    if gain == 0.0 {
        u
    } else {
        u + u * (gain * u.norm_sqr())
    }
}

/// Noiseless (possibly distorted) receive rows for a block of symbols.
fn receive(
    symbols: &ComplexMatrix,
    channel: &ComplexMatrix,
    amplitudes: &[f64],
    gain: f64,
) -> ComplexMatrix {
    let (m, k) = channel.shape();
    let mut out = ComplexMatrix::zeros(symbols.rows(), m);
    for t in 0..symbols.rows() {
        let b = symbols.row(t);
        let row = out.row_mut(t);
        for (a, r) in row.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for u in 0..k {
                acc += amplitudes[u] * b[u] * channel.get(a, u);
            }
            *r = distort(acc, gain);
        }
    }
    out
}

/// Expected `‖signal row‖²` averaged over uniform symbols.
///
/// Without distortion this is `Es · Σ_k p_k ‖h_k‖²`. With distortion the
/// expectation is taken exactly over every symbol combination when that is
/// tractable, otherwise over a fixed seeded draw.
pub fn expected_signal_power(cfg: &ScenarioConfig, channel: &ComplexMatrix) -> f64 {
    let powers = cfg.powers();
    let gain = cfg.rx_nonlinearity_gain;
    let (m, k) = channel.shape();
    if gain == 0.0 {
        let es = cfg.modulation.symbol_energy();
        return (0..k)
            .map(|u| powers[u] * (0..m).map(|a| channel.get(a, u).norm_sqr()).sum::<f64>())
            .sum::<f64>()
            * es;
    }
    let amps: Vec<f64> = powers.iter().map(|p| p.sqrt()).collect();
    let points = cfg.modulation.points();
    let row_power = |b: &[Complex64]| -> f64 {
        (0..m)
            .map(|a| {
                let u: Complex64 = (0..k).map(|u| amps[u] * b[u] * channel.get(a, u)).sum();
                distort(u, gain).norm_sqr()
            })
            .sum()
    };
    let order = points.len();
    if k <= MAX_ENUMERATED_USERS {
        let combos = order.pow(k as u32);
        let mut b = vec![Complex64::new(0.0, 0.0); k];
        let mut total = 0.0;
        for idx in 0..combos {
            let mut rest = idx;
            for slot in b.iter_mut() {
                *slot = points[rest % order];
                rest /= order;
            }
            total += row_power(&b);
        }
        total / combos as f64
    } else {
        let mut rng = stream_rng(cfg.seed, Stream::Distortion, 0);
        let mut b = vec![Complex64::new(0.0, 0.0); k];
        let mut total = 0.0;
        for _ in 0..POWER_MC_DRAWS {
            for slot in b.iter_mut() {
                *slot = points[rng.random_range(0..order)];
            }
            total += row_power(&b);
        }
        total / POWER_MC_DRAWS as f64
    }
}

/// Per-complex-sample noise variance for the configured SNR.
pub fn noise_variance(cfg: &ScenarioConfig, channel: &ComplexMatrix) -> f64 {
    match cfg.snr_db {
        Snr::Infinite => 0.0,
        Snr::Db(db) => {
            let signal = expected_signal_power(cfg, channel);
            signal / (channel.rows() as f64 * 10f64.powf(db / 10.0))
        }
    }
}

pub fn synthesize(cfg: &ScenarioConfig) -> Result<TransmissionRecord> {
    synthesize_realization(cfg, Realization::default())
}

/// Builds a transmission; the `Symbols` stream is shared by all realizations.
pub fn synthesize_realization(
    cfg: &ScenarioConfig,
    realization: Realization,
) -> Result<TransmissionRecord> {
    cfg.validate()?;
    let (k, m) = (cfg.num_users, cfg.num_antennas);

    let mut sym_rng = stream_rng(cfg.seed, Stream::Symbols, 0);
    let train_symbols = gen_symbols(k, cfg.train_symbols, cfg.modulation, &mut sym_rng)?;
    let data_symbols = gen_symbols(k, cfg.data_symbols, cfg.modulation, &mut sym_rng)?;

    let mut ch_rng = stream_rng(cfg.seed, Stream::Channel, realization.channel);
    let channel = gen_channel(k, m, &mut ch_rng)?;

    let powers = cfg.powers();
    let amps: Vec<f64> = powers.iter().map(|p| p.sqrt()).collect();
    let gain = cfg.rx_nonlinearity_gain;
    let mut train_rx = receive(&train_symbols, &channel, &amps, gain);
    let mut data_rx = receive(&data_symbols, &channel, &amps, gain);

    let noise_power = noise_variance(cfg, &channel);
    if noise_power > 0.0 {
        let mut n_rng = stream_rng(cfg.seed, Stream::Noise, realization.noise);
        for x in train_rx
            .as_mut_slice()
            .iter_mut()
            .chain(data_rx.as_mut_slice().iter_mut())
        {
            *x += complex_gaussian(&mut n_rng, noise_power);
        }
    }

    Ok(TransmissionRecord {
        channel,
        powers,
        train_rx,
        train_symbols,
        data_rx,
        data_symbols,
        noise_power,
    })
}
