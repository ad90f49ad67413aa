//! Device configuration: sources, losses, detectors, clock.
//!
//! The on-disk form is TOML. Every key is optional and falls back to the
//! documented default; unknown keys are rejected with their full dotted path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::Convention;

/// Photon-number distribution of each pair source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairStatistics {
    /// Geometric distribution of a single-mode squeezer.
    #[default]
    Thermal,
    Poissonian,
    /// Exactly `source.fixed_pairs` pairs from each source, every pulse.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockConfig {
    pub pump_rep_rate_hz: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self {
            pump_rep_rate_hz: 7.6e7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    /// Mean pair number per pulse per source.
    pub mean_pairs_per_pulse: f64,
    pub pair_statistics: PairStatistics,
    /// Pairs emitted by (source 1, source 2) under `fixed` statistics.
    pub fixed_pairs: [u32; 2],
    /// Pump imbalance in [-1, 1]; source 1 gets `(1 + a)` times the mean, source 2 `(1 - a)`.
    pub pump_asymmetry: f64,
    /// Down-conversion efficiency, pairs per pump photon.
    pub pairs_per_pump_photon: f64,
    pub pump_wavelength_nm: f64,
    /// Quasi-phase-matching period, informational only.
    pub poling_period_um: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            mean_pairs_per_pulse: 0.1,
            pair_statistics: PairStatistics::Thermal,
            fixed_pairs: [1, 1],
            pump_asymmetry: 0.0,
            pairs_per_pump_photon: 1e-6,
            pump_wavelength_nm: 712.0,
            poling_period_um: 14.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Successive loss stages on each 1310 nm herald channel, dB.
    pub herald_stages_db: Vec<f64>,
    /// Successive loss stages on each 1560 nm signal channel, dB.
    pub signal_stages_db: Vec<f64>,
    /// WDM extinction ratio; photons crossing the WDM are discarded.
    pub wdm_extinction_db: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        // mode matching, WDM + propagation, collection + filtering
        let budget = vec![3.0, 6.0, 4.0];
        Self {
            herald_stages_db: budget.clone(),
            signal_stages_db: budget,
            wdm_extinction_db: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Dark-click probability per detector per gate.
    pub dark_count_prob: f64,
    /// Gates a detector stays blind after a click.
    pub dead_time_pulses: u32,
    /// Gaussian timing jitter, ps (0 disables).
    pub jitter_sigma_ps: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            dark_count_prob: 1e-5,
            dead_time_pulses: 0,
            jitter_sigma_ps: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterferenceConfig {
    /// Indistinguishability of photons from the two sources, in [0, 1].
    pub mode_overlap: f64,
}

impl Default for InterferenceConfig {
    fn default() -> Self {
        Self { mode_overlap: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MziConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_rad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voltage_v: Option<f64>,
    /// Calibration CSV used to turn `voltage_v` into a phase.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Total photon-number cutoff of the exact engine.
    pub cutoff: u32,
    pub convention: Convention,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            cutoff: 4,
            convention: Convention::Symmetric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceConfig {
    pub seed: u64,
    pub clock: ClockConfig,
    pub source: SourceConfig,
    pub losses: LossConfig,
    pub detectors: DetectorConfig,
    pub interference: InterferenceConfig,
    pub mzi: MziConfig,
    pub engine: EngineConfig,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            clock: ClockConfig::default(),
            source: SourceConfig::default(),
            losses: LossConfig::default(),
            detectors: DetectorConfig::default(),
            interference: InterferenceConfig::default(),
            mzi: MziConfig::default(),
            engine: EngineConfig::default(),
        }
    }
}

/// Power transmission of a loss of `db` decibels.
pub fn db_to_transmission(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

impl DeviceConfig {
    /// Lossless, noiseless device with exactly one pair per source per pulse.
    pub fn ideal() -> Self {
        let mut config = Self::default();
        config.source.pair_statistics = PairStatistics::Fixed;
        config.source.fixed_pairs = [1, 1];
        config.losses.herald_stages_db.clear();
        config.losses.signal_stages_db.clear();
        config.losses.wdm_extinction_db = f64::INFINITY;
        config.detectors.dark_count_prob = 0.0;
        config
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let deserializer = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        let config: DeviceConfig = serde_ignored::deserialize(deserializer, |path| {
            unknown.push(path.to_string());
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(Error::UnknownConfigKeys(unknown));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        if !(self.clock.pump_rep_rate_hz > 0.0 && self.clock.pump_rep_rate_hz.is_finite()) {
            return bad("clock.pump_rep_rate_hz", "must be positive");
        }
        let s = &self.source;
        if !(s.mean_pairs_per_pulse >= 0.0 && s.mean_pairs_per_pulse.is_finite()) {
            return bad("source.mean_pairs_per_pulse", "must be non-negative");
        }
        if !(-1.0..=1.0).contains(&s.pump_asymmetry) {
            return bad("source.pump_asymmetry", "must lie in [-1, 1]");
        }
        if !(s.pairs_per_pump_photon > 0.0) {
            return bad("source.pairs_per_pump_photon", "must be positive");
        }
        let l = &self.losses;
        for (key, stages) in [
            ("losses.herald_stages_db", &l.herald_stages_db),
            ("losses.signal_stages_db", &l.signal_stages_db),
        ] {
            if stages.iter().any(|db| !(*db >= 0.0) || db.is_infinite()) {
                return bad(key, "stages must be finite and non-negative");
            }
        }
        if !(l.wdm_extinction_db >= 0.0) {
            return bad("losses.wdm_extinction_db", "must be non-negative");
        }
        let d = &self.detectors;
        if !(0.0..=1.0).contains(&d.dark_count_prob) {
            return bad("detectors.dark_count_prob", "must lie in [0, 1]");
        }
        if !(d.jitter_sigma_ps >= 0.0 && d.jitter_sigma_ps.is_finite()) {
            return bad("detectors.jitter_sigma_ps", "must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.interference.mode_overlap) {
            return bad("interference.mode_overlap", "must lie in [0, 1]");
        }
        if self.engine.cutoff < 2 || self.engine.cutoff > 16 {
            return bad("engine.cutoff", "must lie in [2, 16]");
        }
        if self.mzi.phase_rad.is_some_and(|p| !p.is_finite()) {
            return bad("mzi.phase_rad", "must be finite");
        }
        Ok(())
    }

    /// Clock period in whole picoseconds.
    pub fn clock_period_ps(&self) -> i64 {
        (1e12 / self.clock.pump_rep_rate_hz).round() as i64
    }

    /// Mean pairs per pulse of (source 1, source 2) after the pump splitter.
    pub fn source_means(&self) -> [f64; 2] {
        let n = self.source.mean_pairs_per_pulse;
        let a = self.source.pump_asymmetry;
        [n * (1.0 + a), n * (1.0 - a)]
    }

    /// Fraction of photons that survive the WDM routing.
    pub fn wdm_transmission(&self) -> f64 {
        1.0 - db_to_transmission(self.losses.wdm_extinction_db)
    }

    /// Total dB of the herald loss stages.
    pub fn loss_herald_db(&self) -> f64 {
        self.losses.herald_stages_db.iter().sum()
    }

    pub fn loss_signal_db(&self) -> f64 {
        self.losses.signal_stages_db.iter().sum()
    }

    /// End-to-end survival probability of a herald photon, WDM included.
    pub fn herald_transmission(&self) -> f64 {
        self.wdm_transmission() * db_to_transmission(self.loss_herald_db())
    }

    pub fn signal_transmission(&self) -> f64 {
        self.wdm_transmission() * db_to_transmission(self.loss_signal_db())
    }

    /// Pump photons per pulse and per source needed for the configured mean pair number.
    pub fn pump_photons_per_pulse(&self) -> f64 {
        self.source.mean_pairs_per_pulse / self.source.pairs_per_pump_photon
    }

    /// Average pump power (W) reaching each source for the configured mean pair number.
    pub fn pump_power_per_source_w(&self) -> f64 {
        const PLANCK: f64 = 6.626_070_15e-34;
        const LIGHT_SPEED: f64 = 299_792_458.0;
        let photon_energy = PLANCK * LIGHT_SPEED / (self.source.pump_wavelength_nm * 1e-9);
        self.pump_photons_per_pulse() * photon_energy * self.clock.pump_rep_rate_hz
    }
}
