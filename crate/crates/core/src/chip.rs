//! The chip as a quantum-state pipeline: two SPDC sources, wavelength
//! demultiplexers, channel losses, and the tunable Mach-Zehnder interferometer
//! acting on the two 1560 nm modes.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use num_complex::Complex64;

use crate::config::{db_to_transmission, DeviceConfig, PairStatistics};
use crate::error::{Error, Result};
use crate::fock::{Convention, FockState};
use crate::tdc::Channel;

/// Chip mode ordering, outer herald modes around the inner signal modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChipMode {
    H1,
    A1,
    A2,
    H2,
}

impl ChipMode {
    pub const ALL: [ChipMode; 4] = [ChipMode::H1, ChipMode::A1, ChipMode::A2, ChipMode::H2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            ChipMode::H1 => "H1",
            ChipMode::A1 => "A1",
            ChipMode::A2 => "A2",
            ChipMode::H2 => "H2",
        }
    }

    pub fn is_herald(self) -> bool {
        matches!(self, ChipMode::H1 | ChipMode::H2)
    }
}

impl fmt::Display for ChipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Source-to-mode wiring: source `k` feeds `(herald, signal)`.
pub const SOURCE_WIRING: [(ChipMode, ChipMode); 2] = [(ChipMode::H1, ChipMode::A1), (ChipMode::H2, ChipMode::A2)];

/// Herald wavelength, nm.
pub const HERALD_NM: u32 = 1310;
/// Signal wavelength, nm.
pub const SIGNAL_NM: u32 = 1560;

/// Which MZI input a lone signal photon enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalInput {
    A1,
    A2,
}

/// Single-mode squeezer amplitude giving mean pair number `mean_pairs`.
pub fn pair_amplitude(mean_pairs: f64) -> f64 {
    (mean_pairs / (1.0 + mean_pairs)).sqrt()
}

/// Normalized truncation of `sum_n lambda^n |n, n>` on (signal, idler), keeping `2n <= cutoff`.
pub fn spdc_pair_state(lambda: f64, cutoff: u32) -> Result<FockState> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::PairAmplitude(lambda));
    }
    let terms = (0..=cutoff / 2).map(|n| (vec![n, n], Complex64::new(lambda.powi(n as i32), 0.0)));
    FockState::from_terms(2, cutoff, terms)?.normalized()
}

/// Routes tagged modes onto the chip layout `(H1, A1, A2, H2)` and appends one
/// discard mode per chip mode, in the same order.
///
/// The first 1310 nm mode goes to H1 and the second to H2; the 1560 nm modes
/// go to A1 then A2. Finite extinction couples a fraction
/// `10^(-extinction_db / 10)` of each mode into its discard mode.
pub fn apply_wdm(state: &FockState, wavelengths_nm: &[u32], extinction_db: f64) -> Result<FockState> {
    if wavelengths_nm.len() != state.mode_count() {
        return Err(Error::DimensionMismatch {
            expected: state.mode_count(),
            got: wavelengths_nm.len(),
        });
    }
    if !(extinction_db >= 0.0) {
        return Err(Error::Extinction(extinction_db));
    }
    let mut heralds = Vec::new();
    let mut signals = Vec::new();
    for (mode, &nm) in wavelengths_nm.iter().enumerate() {
        match nm {
            HERALD_NM => heralds.push(mode),
            SIGNAL_NM => signals.push(mode),
            other => return Err(Error::UnknownWavelength(other)),
        }
    }
    if heralds.len() != 2 || signals.len() != 2 {
        return Err(Error::WdmRouting);
    }
    let order = [heralds[0], signals[0], signals[1], heralds[1]];
    let routed = state.permuted(&order)?.with_vacuum_modes(4);
    let transmission = 1.0 - db_to_transmission(extinction_db);
    attenuate_into(&routed, 4, transmission)
}

// Beamsplitter from each of the first four modes into `first_discard + k`.
fn attenuate_into(state: &FockState, first_discard: usize, transmission: f64) -> Result<FockState> {
    if transmission >= 1.0 {
        return Ok(state.clone());
    }
    let mut out = state.clone();
    for k in 0..4 {
        out = out.apply_beamsplitter(k, first_discard + k, transmission, Convention::Real)?;
    }
    Ok(out)
}

/// Balanced MZI on two modes: 50/50, phase on the second arm, 50/50.
pub fn apply_mzi(state: &FockState, arm_1: usize, arm_2: usize, phase: f64, convention: Convention) -> Result<FockState> {
    state
        .apply_beamsplitter(arm_1, arm_2, 0.5, convention)?
        .apply_phase(arm_2, phase)?
        .apply_beamsplitter(arm_1, arm_2, 0.5, convention)
}

/// `(|20> - |02>)/sqrt(2)`.
pub fn noon_target() -> FockState {
    FockState::from_terms(
        2,
        2,
        [
            (vec![2, 0], Complex64::new(FRAC_1_SQRT_2, 0.0)),
            (vec![0, 2], Complex64::new(-FRAC_1_SQRT_2, 0.0)),
        ],
    )
    .expect("valid target")
}

/// `|11>`.
pub fn product_target() -> FockState {
    FockState::basis(&[1, 1], 2).expect("valid target")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhotonProbabilities {
    pub p11: f64,
    pub p20: f64,
    pub p02: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglePhotonProbabilities {
    pub p10: f64,
    pub p01: f64,
}

/// Ideal two-photon fringe for `|11>` entering the MZI.
pub fn analytic_two_photon_prob(phase: f64) -> TwoPhotonProbabilities {
    let c = (2.0 * phase).cos();
    TwoPhotonProbabilities {
        p11: (1.0 + c) / 2.0,
        p20: (1.0 - c) / 4.0,
        p02: (1.0 - c) / 4.0,
    }
}

/// Ideal single-photon fringe.
pub fn analytic_single_photon_prob(phase: f64, input: SignalInput) -> SinglePhotonProbabilities {
    let s2 = (phase / 2.0).sin().powi(2);
    let c2 = (phase / 2.0).cos().powi(2);
    match input {
        SignalInput::A1 => SinglePhotonProbabilities { p10: s2, p01: c2 },
        SignalInput::A2 => SinglePhotonProbabilities { p10: c2, p01: s2 },
    }
}

/// Conditional state of the signal modes `(A1, A2)` after both heralds fired.
#[derive(Debug, Clone)]
pub struct HeraldedOutput {
    pub state: FockState,
    /// Probability that H1 and H2 each receive exactly one photon and no
    /// photon is lost anywhere on the chip.
    pub herald_probability: f64,
}

impl HeraldedOutput {
    pub fn probabilities(&self) -> TwoPhotonProbabilities {
        let p = |pattern: [u32; 2]| self.state.amplitude(&pattern).norm_sqr();
        TwoPhotonProbabilities {
            p11: p([1, 1]),
            p20: p([2, 0]),
            p02: p([0, 2]),
        }
    }

    pub fn fidelity_noon(&self) -> f64 {
        crate::fock::fidelity(&self.state, &noon_target()).unwrap_or(0.0)
    }

    pub fn fidelity_product(&self) -> f64 {
        crate::fock::fidelity(&self.state, &product_target()).unwrap_or(0.0)
    }
}

/// The SPDC / WDM / loss / MZI pipeline evaluated with the exact Fock engine.
#[derive(Debug, Clone)]
pub struct ChipModel {
    config: DeviceConfig,
}

impl ChipModel {
    pub fn new(config: &DeviceConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config: config.clone() })
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    // (signal, idler) state of each source. Fixed statistics give exact pair
    // numbers; thermal and Poissonian sources both use the squeezed state.
    fn pair_sources(&self, cutoff: u32) -> Result<[FockState; 2]> {
        let source = &self.config.source;
        if source.pair_statistics == PairStatistics::Fixed {
            let [k1, k2] = source.fixed_pairs;
            if 2 * (k1 + k2) > cutoff {
                return Err(Error::Config(format!(
                    "source.fixed_pairs {:?} need a photon cutoff of at least {}, got {cutoff}",
                    source.fixed_pairs,
                    2 * (k1 + k2)
                )));
            }
            return Ok([FockState::basis(&[k1, k1], cutoff)?, FockState::basis(&[k2, k2], cutoff)?]);
        }
        let [mean_1, mean_2] = self.config.source_means();
        Ok([
            spdc_pair_state(pair_amplitude(mean_1), cutoff)?,
            spdc_pair_state(pair_amplitude(mean_2), cutoff)?,
        ])
    }

    /// Joint state of `(H1, A1, A2, H2)` straight after the sources, before
    /// any routing loss, with both sources truncated to `cutoff` photons in total.
    pub fn source_state(&self, cutoff: u32) -> Result<FockState> {
        let [source_1, source_2] = self.pair_sources(cutoff)?;
        // (signal, idler) x (signal, idler) -> (H1, A1, A2, H2)
        source_1
            .tensor(&source_2, cutoff)
            .normalized()?
            .permuted(&[1, 0, 2, 3])
    }

    /// Heralded state on `(A1, A2)` at MZI phase `phase`.
    ///
    /// Loss is modeled with discard modes; the returned state is the branch
    /// in which every discard mode stays empty, so its probability decreases
    /// with every loss stage.
    pub fn heralded_output_state(&self, phase: f64) -> Result<HeraldedOutput> {
        let cutoff = self.config.engine.cutoff;
        let [source_1, source_2] = self.pair_sources(cutoff)?;
        let joint = source_1.tensor(&source_2, cutoff).normalized()?;
        // Modes 0..4 chip layout, 4..8 WDM discards.
        let routed = apply_wdm(
            &joint,
            &[SIGNAL_NM, HERALD_NM, SIGNAL_NM, HERALD_NM],
            self.config.losses.wdm_extinction_db,
        )?;
        // Modes 8..12 channel-loss discards.
        let herald_t = db_to_transmission(self.config.loss_herald_db());
        let signal_t = db_to_transmission(self.config.loss_signal_db());
        let mut lossy = routed.with_vacuum_modes(4);
        for mode in ChipMode::ALL {
            let t = if mode.is_herald() { herald_t } else { signal_t };
            if t < 1.0 {
                lossy = lossy.apply_beamsplitter(mode.index(), 8 + mode.index(), t, Convention::Real)?;
            }
        }
        let out = apply_mzi(
            &lossy,
            ChipMode::A1.index(),
            ChipMode::A2.index(),
            phase,
            self.config.engine.convention,
        )?;
        let mut herald_modes = vec![ChipMode::H1.index(), ChipMode::H2.index()];
        herald_modes.extend(4..12);
        let mut pattern = vec![1, 1];
        pattern.extend([0; 8]);
        let heralded = out.herald_project(&herald_modes, &pattern)?;
        Ok(HeraldedOutput {
            state: heralded.state,
            herald_probability: heralded.probability,
        })
    }

    /// Click probabilities of the four non-number-resolving detectors for
    /// fully indistinguishable photons, including multi-pair emission up to
    /// `cutoff` photons, channel losses and dark counts.
    ///
    /// Uniform loss on the two MZI inputs commutes with the interferometer,
    /// so losses are applied as binomial survival at the detectors.
    pub fn click_statistics(&self, phase: f64, cutoff: u32) -> Result<ClickStatistics> {
        let state = apply_mzi(
            &self.source_state(cutoff)?,
            ChipMode::A1.index(),
            ChipMode::A2.index(),
            phase,
            self.config.engine.convention,
        )?;
        let herald_t = self.config.herald_transmission();
        let signal_t = self.config.signal_transmission();
        let survival = [herald_t, signal_t, signal_t, herald_t];
        let channel_bit = [Channel::H1, Channel::D1, Channel::D2, Channel::H2].map(Channel::bit);
        let dark = self.config.detectors.dark_count_prob;
        // silent[mask] = P(no click on every detector in mask)
        let mut silent = [0.0; 16];
        for (occupation, amplitude) in state.terms() {
            let weight = amplitude.norm_sqr();
            for (mask, slot) in silent.iter_mut().enumerate() {
                let mut p = weight;
                for (k, &n) in occupation.iter().enumerate() {
                    if mask & usize::from(channel_bit[k]) != 0 {
                        p *= (1.0 - survival[k]).powi(n as i32);
                    }
                }
                *slot += p;
            }
        }
        for (mask, slot) in silent.iter_mut().enumerate() {
            *slot *= (1.0 - dark).powi(mask.count_ones() as i32);
        }
        Ok(ClickStatistics { silent })
    }
}

/// Joint click statistics of the four detectors; D1 and D2 watch the MZI
/// outputs on the A1 and A2 sides.
#[derive(Debug, Clone, Copy)]
pub struct ClickStatistics {
    silent: [f64; 16],
}

impl ClickStatistics {
    /// Probability that every detector in `mask` clicks (bits from [`Channel::bit`]).
    pub fn all_click(&self, mask: usize) -> f64 {
        // inclusion-exclusion over subsets of mask
        let mut total = 0.0;
        let mut subset = mask;
        loop {
            let sign = if subset.count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
            total += sign * self.silent[subset];
            if subset == 0 {
                break;
            }
            subset = (subset - 1) & mask;
        }
        total
    }

    pub fn fourfold(&self) -> f64 {
        self.all_click(0b1111)
    }

    /// Click probability of a single detector.
    pub fn single(&self, channel: Channel) -> f64 {
        self.all_click(channel.bit().into())
    }
}
