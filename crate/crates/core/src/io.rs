//! Persistence: the binary dataset format, trained detector files,
//! experiment configuration and CSV/metadata helpers.
//!
//! Dataset layout (all little-endian):
//!
//! | field        | type                                   |
//! |--------------|----------------------------------------|
//! | magic        | `b"NOMA1"`                             |
//! | version      | u16                                    |
//! | K, M, N_T, N_D | u32 each                             |
//! | noise power  | f64                                    |
//! | powers       | K × f64                                |
//! | channel      | M×K complex, row-major, (re, im) f64   |
//! | X_T, Y_T, X_D, Y_D | row-major complex, (re, im) f64  |

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ScenarioConfig, TransmissionRecord};
use crate::error::{Error, Result};
use crate::eval::{SweepConfig, SweepSetup};
use crate::hybrid::{HybridNetParams, TrainConfig, DEFAULT_HIDDEN};
use crate::linalg::ComplexMatrix;

pub const DATASET_MAGIC: &[u8; 5] = b"NOMA1";
pub const DATASET_VERSION: u16 = 1;
const HEADER_LEN: usize = 5 + 2 + 4 * 4 + 8;

fn payload_len(k: u64, m: u64, nt: u64, nd: u64) -> u64 {
    8 * k + 16 * (m * k + nt * m + nt * k + nd * m + nd * k)
}

pub fn encode_dataset(rec: &TransmissionRecord) -> Result<Vec<u8>> {
    rec.check_shapes()?;
    let (k, m, nt, nd) = (rec.num_users(), rec.num_antennas(), rec.train_len(), rec.data_len());
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} does not fit in u32")))
    };
    let total = HEADER_LEN as u64 + payload_len(k as u64, m as u64, nt as u64, nd as u64);
    let mut out = Vec::with_capacity(total as usize);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [k, m, nt, nd] {
        out.extend_from_slice(&dim(v)?.to_le_bytes());
    }
    out.extend_from_slice(&rec.noise_power.to_le_bytes());
    for p in &rec.powers {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for mat in [&rec.channel, &rec.train_rx, &rec.train_symbols, &rec.data_rx, &rec.data_symbols] {
        for z in mat.as_slice() {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let b: [u8; N] = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        b
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }

    fn complex_matrix(&mut self, rows: usize, cols: usize) -> ComplexMatrix {
        let data = (0..rows * cols)
            .map(|_| {
                let re = self.f64();
                Complex64::new(re, self.f64())
            })
            .collect();
        ComplexMatrix::from_vec(rows, cols, data).expect("length computed from dims")
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<TransmissionRecord> {
    let actual = bytes.len() as u64;
    let magic_len = bytes.len().min(DATASET_MAGIC.len());
    if bytes[..magic_len] != DATASET_MAGIC[..magic_len] {
        return Err(Error::Format("bad magic, not a NOMA1 dataset".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            actual,
        });
    }
    let mut r = Reader { buf: bytes, pos: 5 };
    let version = u16::from_le_bytes(r.take());
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version} (expected {DATASET_VERSION})"
        )));
    }
    let (k, m, nt, nd) = (r.u32() as u64, r.u32() as u64, r.u32() as u64, r.u32() as u64);
    if k == 0 || m == 0 || nt == 0 || nd == 0 {
        return Err(Error::Format("header has a zero dimension".into()));
    }
    let expected = HEADER_LEN as u64 + payload_len(k, m, nt, nd);
    if actual < expected {
        return Err(Error::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last matrix",
            actual - expected
        )));
    }
    let (k, m, nt, nd) = (k as usize, m as usize, nt as usize, nd as usize);
    let noise_power = r.f64();
    let powers = (0..k).map(|_| r.f64()).collect();
    let channel = r.complex_matrix(m, k);
    let train_rx = r.complex_matrix(nt, m);
    let train_symbols = r.complex_matrix(nt, k);
    let data_rx = r.complex_matrix(nd, m);
    let data_symbols = r.complex_matrix(nd, k);
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

pub fn write_dataset(rec: &TransmissionRecord, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(rec)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<TransmissionRecord> {
    decode_dataset(&fs::read(path)?)
}

/// Writes `rec` to `path` and reads it back.
pub fn dataset_roundtrip(rec: &TransmissionRecord, path: &Path) -> Result<TransmissionRecord> {
    write_dataset(rec, path)?;
    read_dataset(path)
}

/// Trained detectors for one or more users of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedDetectors {
    pub format: String,
    pub num_antennas: usize,
    pub config_digest: String,
    pub users: Vec<UserDetector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDetector {
    pub user: usize,
    pub lls_weights: Vec<f64>,
    /// `None` when the Gram matrix is singular.
    pub gram_condition: Option<f64>,
    pub network: HybridNetParams,
}

impl TrainedDetectors {
    pub const FORMAT: &'static str = "noma-detectors/1";

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("cannot serialize detectors: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let det: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if det.format != Self::FORMAT {
            return Err(Error::Format(format!("unsupported detector format `{}`", det.format)));
        }
        for u in &det.users {
            u.network.validate()?;
        }
        Ok(det)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Top-level experiment document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML file; the literal name `default` yields the built-in
    /// defaults.
    pub fn load(source: &str) -> Result<Self> {
        if source == "default" {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(source)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.setup().validate()
    }

    pub fn setup(&self) -> SweepSetup {
        SweepSetup {
            scenario: self.scenario.clone(),
            hidden: self.network.hidden.clone(),
            train: self.train.clone(),
            sweep: self.sweep.clone(),
        }
    }

    /// SHA-256 over everything that influences results (not output paths).
    pub fn digest(&self) -> String {
        config_digest(&self.setup())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Sidecar metadata written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub artifact: String,
    pub config_digest: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub fn meta_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    artifact.with_file_name(name)
}

pub fn write_meta(artifact: &Path, meta: &ArtifactMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Format(format!("cannot serialize metadata: {e}")))?;
    fs::write(meta_path(artifact), json + "\n")?;
    Ok(())
}
