//! Multi-user uplink detection for power-domain NOMA.
//!
//! The pipeline simulates a transmission ([`channel`]), widens complex
//! receive data into a real regression problem ([`iq`]), fits a
//! least-squares detector ([`lls`]) and refines it with a two-branch network
//! ([`hybrid`]) that can be evaluated through a tiled single-pass kernel
//! ([`fused`]). [`eval`] measures bit error rates across seeded noise sweeps
//! and [`io`] handles files and configuration.

#![allow(clippy::needless_range_loop)]

pub mod channel;
pub mod error;
pub mod eval;
pub mod fused;
pub mod hybrid;
pub mod io;
pub mod iq;
pub mod linalg;
pub mod lls;
pub mod rng;

pub use channel::{synthesize, synthesize_realization, Modulation, Realization, ScenarioConfig, Snr, TransmissionRecord};
pub use error::{Error, Result};
pub use eval::{Ablation, BerReport, Detector, SweepConfig, SweepSetup};
pub use fused::{build_plan, fused_forward, ExecPath, FusedPlan};
pub use hybrid::{HybridNetParams, TrainConfig};
pub use iq::{narrow_predictions, widen_dataset, WidenedDataset};
pub use linalg::{ComplexMatrix, RealMatrix};
pub use lls::{LlsWeights, RankPolicy};
