//! Pulse-by-pulse Monte Carlo of the heralded experiment.
//!
//! Each clock period draws pair numbers for both sources, thins every photon
//! by its channel transmission, routes the surviving signal photons through
//! the MZI and adds dark counts on four binary detectors. Pulse `k` draws
//! from its own ChaCha stream keyed by the master seed, so output does not
//! depend on how pulses are split across threads.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use rayon::prelude::*;

use crate::chip::{analytic_single_photon_prob, apply_mzi, SignalInput};
use crate::config::{DeviceConfig, PairStatistics};
use crate::error::{Error, Result};
use crate::fock::FockState;
use crate::tdc::{Channel, TimeTag, TimeTagStream};

const BLOCK_PULSES: u64 = 1 << 15;
/// Largest per-input photon number routed with the exact interference table.
pub const MAX_INTERFERING_PHOTONS: u64 = 6;
const JITTER_STREAM_SALT: u64 = 0x6a09_e667_f3bc_c909;

/// Per-pulse click mask, bit `Channel::index()` set when that detector fired.
pub type ClickMask = u8;

#[derive(Debug, Clone)]
enum PairDistribution {
    Zero,
    Fixed(u64),
    Thermal(Geometric, f64),
    Poissonian(Poisson<f64>, f64),
}

impl PairDistribution {
    fn new(statistics: PairStatistics, mean: f64, fixed: u32) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("source.mean_pairs_per_pulse: {e}"));
        Ok(match statistics {
            PairStatistics::Fixed => Self::Fixed(u64::from(fixed)),
            _ if mean == 0.0 => Self::Zero,
            PairStatistics::Thermal => {
                let p = 1.0 / (1.0 + mean);
                Self::Thermal(Geometric::new(p).map_err(|e| bad(&e))?, p)
            }
            PairStatistics::Poissonian => Self::Poissonian(Poisson::new(mean).map_err(|e| bad(&e))?, mean),
        })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            Self::Zero => 0,
            Self::Fixed(n) => *n,
            Self::Thermal(d, _) => d.sample(rng),
            Self::Poissonian(d, _) => d.sample(rng) as u64,
        }
    }

    /// Probability generating function `E[z^n]`.
    fn pgf(&self, z: f64) -> f64 {
        match self {
            Self::Zero => 1.0,
            Self::Fixed(n) => z.powi(*n as i32),
            Self::Thermal(_, p) => p / (1.0 - (1.0 - p) * z),
            Self::Poissonian(_, mean) => (mean * (z - 1.0)).exp(),
        }
    }
}

/// Single-pulse physics, independent of timing.
#[derive(Debug, Clone)]
pub struct PulseModel {
    sources: [PairDistribution; 2],
    herald_transmission: f64,
    signal_transmission: f64,
    mode_overlap: f64,
    dark_count_prob: f64,
    // P(D1 | photon entering A1), P(D1 | photon entering A2)
    d1_from_a1: f64,
    d1_from_a2: f64,
    // cumulative P(j photons reach D1) for |k1, k2> entering the MZI, k1, k2 >= 1
    interfering: Vec<Vec<f64>>,
    silent: f64,
}

impl PulseModel {
    pub fn new(config: &DeviceConfig, phase: f64) -> Result<Self> {
        config.validate()?;
        let [mean_1, mean_2] = config.source_means();
        let stats = config.source.pair_statistics;
        let fixed = config.source.fixed_pairs;
        let sources = [
            PairDistribution::new(stats, mean_1, fixed[0])?,
            PairDistribution::new(stats, mean_2, fixed[1])?,
        ];
        let herald_transmission = config.herald_transmission();
        let signal_transmission = config.signal_transmission();
        let dark_count_prob = config.detectors.dark_count_prob;
        let undetected = (1.0 - herald_transmission) * (1.0 - signal_transmission);
        let silent = sources[0].pgf(undetected) * sources[1].pgf(undetected) * (1.0 - dark_count_prob).powi(4);
        let mut interfering = Vec::new();
        for k1 in 1..=MAX_INTERFERING_PHOTONS as u32 {
            for k2 in 1..=MAX_INTERFERING_PHOTONS as u32 {
                let input = FockState::basis(&[k1, k2], k1 + k2)?;
                let output = apply_mzi(&input, 0, 1, phase, config.engine.convention)?;
                let mut cumulative = 0.0;
                let table = (0..=k1 + k2)
                    .map(|j| {
                        cumulative += output.outcome_probability(&[j, k1 + k2 - j]).unwrap_or(0.0);
                        cumulative
                    })
                    .collect();
                interfering.push(table);
            }
        }
        Ok(Self {
            sources,
            herald_transmission,
            signal_transmission,
            mode_overlap: config.interference.mode_overlap,
            dark_count_prob,
            d1_from_a1: analytic_single_photon_prob(phase, SignalInput::A1).p10,
            d1_from_a2: analytic_single_photon_prob(phase, SignalInput::A2).p10,
            interfering,
            silent,
        })
    }

    /// Probability that no detector fires in a pulse.
    pub fn silent_probability(&self) -> f64 {
        self.silent
    }

    /// Draws the clicks of one clock period.
    pub fn sample_pulse<R: Rng + ?Sized>(&self, rng: &mut R) -> ClickMask {
        let mut mask = 0;
        let mut signals = [0u64; 2];
        for (source, herald) in [Channel::H1, Channel::H2].into_iter().enumerate() {
            let pairs = self.sources[source].sample(rng);
            if survivors(rng, pairs, self.herald_transmission) > 0 {
                mask |= herald.bit();
            }
            signals[source] = survivors(rng, pairs, self.signal_transmission);
        }
        let (to_d1, to_d2) = self.route(rng, signals);
        if to_d1 > 0 {
            mask |= Channel::D1.bit();
        }
        if to_d2 > 0 {
            mask |= Channel::D2.bit();
        }
        if self.dark_count_prob > 0.0 {
            for channel in Channel::ALL {
                if rng.random::<f64>() < self.dark_count_prob {
                    mask |= channel.bit();
                }
            }
        }
        mask
    }

    // Photons reaching (D1, D2) from `signals[k]` photons entering A1 / A2.
    // Photons meeting from both inputs interfere with probability
    // `mode_overlap`; otherwise each photon is routed on its own.
    fn route<R: Rng + ?Sized>(&self, rng: &mut R, signals: [u64; 2]) -> (u64, u64) {
        let total = signals[0] + signals[1];
        if total == 0 {
            return (0, 0);
        }
        let [k1, k2] = signals;
        let tabulated = (1..=MAX_INTERFERING_PHOTONS).contains(&k1) && (1..=MAX_INTERFERING_PHOTONS).contains(&k2);
        if tabulated && rng.random::<f64>() < self.mode_overlap {
            let table = &self.interfering[((k1 - 1) * MAX_INTERFERING_PHOTONS + (k2 - 1)) as usize];
            let u = rng.random::<f64>() * table[table.len() - 1];
            let to_d1 = table.iter().position(|&c| u < c).unwrap_or(table.len() - 1) as u64;
            return (to_d1, total - to_d1);
        }
        // distinguishable: each photon independently
        let to_d1 = survivors(rng, signals[0], self.d1_from_a1) + survivors(rng, signals[1], self.d1_from_a2);
        (to_d1, total - to_d1)
    }
}

fn survivors<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if p >= 1.0 {
        return n;
    }
    (0..n).filter(|_| rng.random::<f64>() < p).count() as u64
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counts of each of the 16 click masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternCounts {
    pub pulses: u64,
    pub counts: [u64; 16],
}

impl PatternCounts {
    fn empty(pulses: u64) -> Self {
        Self { pulses, counts: [0; 16] }
    }

    /// Pulses in which every channel of `required` fired.
    pub fn containing(&self, required: ClickMask) -> u64 {
        (0..16).filter(|&m| m & required == required).map(|m| self.counts[m as usize]).sum()
    }

    /// Fraction of pulses in which every channel of `required` fired.
    pub fn frequency(&self, required: ClickMask) -> f64 {
        self.containing(required) as f64 / self.pulses as f64
    }
}

/// Reproducible simulator for one device configuration and MZI phase.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: PulseModel,
    phase: f64,
    seed: u64,
    clock_period_ps: i64,
    dead_time_pulses: u64,
    jitter_sigma_ps: f64,
    config_toml: String,
    root: ChaCha8Rng,
}

impl Simulator {
    pub fn new(config: &DeviceConfig, phase: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            model: PulseModel::new(config, phase)?,
            phase,
            seed,
            clock_period_ps: config.clock_period_ps(),
            dead_time_pulses: u64::from(config.detectors.dead_time_pulses),
            jitter_sigma_ps: config.detectors.jitter_sigma_ps,
            config_toml: config.to_toml_string(),
            root: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn model(&self) -> &PulseModel {
        &self.model
    }

    fn pulse_rng(&self, pulse: u64) -> ChaCha8Rng {
        let mut rng = self.root.clone();
        rng.set_stream(pulse);
        rng.set_word_pos(0);
        rng
    }

    /// Click mask of pulse `pulse`; depends only on the seed and the index.
    pub fn pulse_mask(&self, pulse: u64) -> ClickMask {
        // cheap counter hash decides the (common) silent pulses
        let u = (mix64(self.seed ^ mix64(pulse.wrapping_add(0x9e37_79b9_7f4a_7c15))) >> 11) as f64
            * (1.0 / (1u64 << 53) as f64);
        if u < self.model.silent {
            return 0;
        }
        // conditional on at least one click
        let mut rng = self.pulse_rng(pulse);
        loop {
            let mask = self.model.sample_pulse(&mut rng);
            if mask != 0 {
                return mask;
            }
        }
    }

    fn check_pulses(&self, n_pulses: u64) -> Result<()> {
        if n_pulses == 0 {
            return Err(Error::NoPulses);
        }
        let margin = (10.0 * self.jitter_sigma_ps).ceil() as i64 + self.clock_period_ps;
        i64::try_from(n_pulses)
            .ok()
            .and_then(|n| n.checked_mul(self.clock_period_ps))
            .and_then(|t| t.checked_add(margin))
            .map(|_| ())
            .ok_or(Error::TimestampOverflow {
                pulses: n_pulses,
                period_ps: self.clock_period_ps,
            })
    }

    /// Nonzero click masks in pulse order, after the dead-time filter.
    pub fn events(&self, n_pulses: u64) -> Result<Vec<(u64, ClickMask)>> {
        self.check_pulses(n_pulses)?;
        let blocks = n_pulses.div_ceil(BLOCK_PULSES);
        let per_block: Vec<Vec<(u64, ClickMask)>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let end = ((b + 1) * BLOCK_PULSES).min(n_pulses);
                (b * BLOCK_PULSES..end)
                    .filter_map(|pulse| {
                        let mask = self.pulse_mask(pulse);
                        (mask != 0).then_some((pulse, mask))
                    })
                    .collect()
            })
            .collect();
        let mut events: Vec<(u64, ClickMask)> = per_block.into_iter().flatten().collect();
        if self.dead_time_pulses > 0 {
            apply_dead_time(&mut events, self.dead_time_pulses);
        }
        Ok(events)
    }

    /// Click-pattern histogram over `n_pulses` pulses.
    pub fn tally(&self, n_pulses: u64) -> Result<PatternCounts> {
        self.check_pulses(n_pulses)?;
        let mut total = PatternCounts::empty(n_pulses);
        if self.dead_time_pulses > 0 {
            for (_, mask) in self.events(n_pulses)? {
                total.counts[mask as usize] += 1;
            }
        } else {
            let blocks = n_pulses.div_ceil(BLOCK_PULSES);
            let per_block: Vec<[u64; 16]> = (0..blocks)
                .into_par_iter()
                .map(|b| {
                    let mut counts = [0u64; 16];
                    let end = ((b + 1) * BLOCK_PULSES).min(n_pulses);
                    for pulse in b * BLOCK_PULSES..end {
                        counts[self.pulse_mask(pulse) as usize] += 1;
                    }
                    counts
                })
                .collect();
            for counts in per_block {
                for (t, c) in total.counts.iter_mut().zip(counts) {
                    *t += c;
                }
            }
        }
        total.counts[0] = n_pulses - total.counts[1..].iter().sum::<u64>();
        Ok(total)
    }

    /// Time-tag stream for pulses `0..n_pulses`; tags sit at `pulse * period`
    /// plus optional Gaussian jitter (clamped at zero).
    pub fn simulate(&self, n_pulses: u64) -> Result<TimeTagStream> {
        let events = self.events(n_pulses)?;
        let jitter = if self.jitter_sigma_ps > 0.0 {
            Some(Normal::new(0.0, self.jitter_sigma_ps).map_err(|e| Error::Config(format!("detectors.jitter_sigma_ps: {e}")))?)
        } else {
            None
        };
        let jitter_root = ChaCha8Rng::seed_from_u64(self.seed ^ JITTER_STREAM_SALT);
        let mut stream = TimeTagStream::new(self.clock_period_ps);
        stream.records.reserve(events.len() * 2);
        for (pulse, mask) in events {
            let base = pulse as i64 * self.clock_period_ps;
            let mut rng = jitter.map(|_| {
                let mut r = jitter_root.clone();
                r.set_stream(pulse);
                r
            });
            for channel in Channel::ALL {
                if mask & channel.bit() == 0 {
                    continue;
                }
                let offset = match (&jitter, rng.as_mut()) {
                    (Some(normal), Some(r)) => normal.sample(r).round() as i64,
                    _ => 0,
                };
                stream.records.push(TimeTag {
                    timestamp_ps: (base + offset).max(0),
                    channel,
                });
            }
        }
        if jitter.is_some() {
            stream.records.sort();
            stream.records.dedup();
        }
        stream.metadata.insert("pulses".into(), n_pulses.to_string());
        stream.metadata.insert("seed".into(), self.seed.to_string());
        stream.metadata.insert("phase_rad".into(), self.phase.to_string());
        stream.metadata.insert(
            "config".into(),
            serde_json::to_string(&self.config_toml).expect("string serialization"),
        );
        Ok(stream)
    }
}

fn apply_dead_time(events: &mut Vec<(u64, ClickMask)>, dead_time_pulses: u64) {
    let mut last: [Option<u64>; 4] = [None; 4];
    for (pulse, mask) in events.iter_mut() {
        for channel in Channel::ALL {
            if *mask & channel.bit() == 0 {
                continue;
            }
            let i = channel.index();
            if last[i].is_some_and(|prev| *pulse - prev <= dead_time_pulses) {
                *mask &= !channel.bit();
            } else {
                last[i] = Some(*pulse);
            }
        }
    }
    events.retain(|&(_, mask)| mask != 0);
}

/// Phase taken from `mzi.phase_rad`; a voltage-only setting must be resolved
/// through a calibration curve first.
pub fn configured_phase(config: &DeviceConfig) -> Result<f64> {
    match (config.mzi.phase_rad, config.mzi.voltage_v) {
        (Some(phase), _) => Ok(phase),
        (None, Some(_)) => Err(Error::Calibration(
            "mzi.voltage_v is set but no phase was resolved; supply a calibration curve".into(),
        )),
        (None, None) => Ok(0.0),
    }
}

/// Simulates `n_pulses` at the configured MZI phase.
pub fn simulate(config: &DeviceConfig, n_pulses: u64, seed: u64) -> Result<TimeTagStream> {
    Simulator::new(config, configured_phase(config)?, seed)?.simulate(n_pulses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chip::analytic_two_photon_prob;
    use std::f64::consts::{FRAC_PI_2, PI};

    const H1: u8 = 1;
    const H2: u8 = 2;
    const D1: u8 = 4;
    const D2: u8 = 8;

    fn ideal() -> DeviceConfig {
        DeviceConfig::ideal()
    }

    fn within(observed: u64, trials: u64, p: f64, sigmas: f64) -> bool {
        let expected = trials as f64 * p;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt().max(1.0);
        (observed as f64 - expected).abs() <= sigmas * sd
    }

    // P(j photons in output 0) for |k1, k2> through BS(1/2) . phase . BS(1/2),
    // expanding (U00 b0 + U10 b1)^k1 (U01 b0 + U11 b1)^k2.
    fn number_distribution(k1: u64, k2: u64, phase: f64) -> Vec<f64> {
        use num_complex::Complex64 as C;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bs = [[C::new(h, 0.0), C::new(0.0, h)], [C::new(0.0, h), C::new(h, 0.0)]];
        let ph = [C::new(1.0, 0.0), C::from_polar(1.0, phase)];
        let mut u = [[C::new(0.0, 0.0); 2]; 2];
        for (m, row) in u.iter_mut().enumerate() {
            for (k, cell) in row.iter_mut().enumerate() {
                *cell = (0..2).map(|l| bs[m][l] * ph[l] * bs[l][k]).sum();
            }
        }
        let fact = |n: u64| (1..=n).map(|x| x as f64).product::<f64>();
        let choose = |n: u64, k: u64| fact(n) / (fact(k) * fact(n - k));
        let n = k1 + k2;
        (0..=n)
            .map(|j| {
                let mut amp = C::new(0.0, 0.0);
                for p in 0..=k1.min(j) {
                    if j - p > k2 {
                        continue;
                    }
                    amp += choose(k1, p)
                        * choose(k2, j - p)
                        * u[0][0].powu(p as u32)
                        * u[1][0].powu((k1 - p) as u32)
                        * u[0][1].powu((j - p) as u32)
                        * u[1][1].powu((k2 + p - j) as u32);
                }
                amp.norm_sqr() * fact(j) * fact(n - j) / (fact(k1) * fact(k2))
            })
            .collect()
    }

    // Exact click-mask distribution of the pulse rules, by enumeration.
    fn enumerate(config: &DeviceConfig, phase: f64, max_pairs: u64) -> [f64; 16] {
        fn binom(n: u64, k: u64, p: f64) -> f64 {
            let mut c = 1.0;
            for i in 0..k {
                c = c * (n - i) as f64 / (i + 1) as f64;
            }
            c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
        }
        let [m1, m2] = config.source_means();
        let pmf = |mean: f64, n: u64, fixed: u32| match config.source.pair_statistics {
            PairStatistics::Fixed => f64::from(u8::from(n == u64::from(fixed))),
            PairStatistics::Thermal => mean.powi(n as i32) / (1.0 + mean).powi(n as i32 + 1),
            PairStatistics::Poissonian => {
                (-mean).exp() * mean.powi(n as i32) / (1..=n).map(|k| k as f64).product::<f64>()
            }
        };
        let eh = config.herald_transmission();
        let es = config.signal_transmission();
        let overlap = config.interference.mode_overlap;
        let s1 = analytic_single_photon_prob(phase, SignalInput::A1).p10;
        let s2 = analytic_single_photon_prob(phase, SignalInput::A2).p10;
        let mut photon_masks = [0.0; 16];
        for n1 in 0..=max_pairs {
            for n2 in 0..=max_pairs {
                let p_pairs = pmf(m1, n1, config.source.fixed_pairs[0]) * pmf(m2, n2, config.source.fixed_pairs[1]);
                if p_pairs == 0.0 {
                    continue;
                }
                for h1 in 0..=n1 {
                    for h2 in 0..=n2 {
                        for k1 in 0..=n1 {
                            for k2 in 0..=n2 {
                                let p = p_pairs
                                    * binom(n1, h1, eh)
                                    * binom(n2, h2, eh)
                                    * binom(n1, k1, es)
                                    * binom(n2, k2, es);
                                let heralds = (u8::from(h1 > 0) * H1) | (u8::from(h2 > 0) * H2);
                                // distribution of photons reaching D1
                                let mut to_d1 = vec![0.0; (k1 + k2 + 1) as usize];
                                for a in 0..=k1 {
                                    for b in 0..=k2 {
                                        to_d1[(a + b) as usize] += binom(k1, a, s1) * binom(k2, b, s2);
                                    }
                                }
                                if k1 > 0 && k2 > 0 {
                                    let quantum = number_distribution(k1, k2, phase);
                                    for (j, q) in quantum.iter().enumerate() {
                                        to_d1[j] = overlap * q + (1.0 - overlap) * to_d1[j];
                                    }
                                }
                                for (d1, pd) in to_d1.iter().enumerate() {
                                    let d1 = d1 as u64;
                                    let mask = heralds
                                        | (u8::from(d1 > 0) * D1)
                                        | (u8::from(k1 + k2 - d1 > 0) * D2);
                                    photon_masks[mask as usize] += p * pd;
                                }
                            }
                        }
                    }
                }
            }
        }
        let d = config.detectors.dark_count_prob;
        let mut out = [0.0; 16];
        for (mask, p) in photon_masks.iter().enumerate() {
            for darks in 0..16usize {
                let k = darks.count_ones() as i32;
                out[mask | darks] += p * d.powi(k) * (1.0 - d).powi(4 - k);
            }
        }
        out
    }

    #[test]
    fn dead_source_never_clicks() {
        let mut c = ideal();
        c.source.pair_statistics = PairStatistics::Thermal;
        c.source.mean_pairs_per_pulse = 0.0;
        let sim = Simulator::new(&c, 0.3, 1).unwrap();
        assert_eq!(sim.model().silent_probability(), 1.0);
        assert!(sim.simulate(10_000).unwrap().is_empty());
    }

    #[test]
    fn noon_point_has_no_coincidences() {
        let sim = Simulator::new(&ideal(), FRAC_PI_2, 3).unwrap();
        let tally = sim.tally(200_000).unwrap();
        assert_eq!(tally.containing(D1 | D2), 0);
        assert_eq!(tally.containing(H1 | H2), 200_000);
    }

    #[test]
    fn single_source_at_zero_phase_hits_one_detector() {
        let mut c = ideal();
        c.source.fixed_pairs = [1, 0];
        let tally = Simulator::new(&c, 0.0, 9).unwrap().tally(50_000).unwrap();
        assert_eq!(tally.counts[(H1 | D2) as usize], 50_000);
    }

    #[test]
    fn product_point_every_pulse_is_fourfold() {
        let tally = Simulator::new(&ideal(), 0.0, 5).unwrap().tally(10_000).unwrap();
        assert_eq!(tally.counts[15], 10_000);
    }

    #[test]
    fn dark_counts_only() {
        let mut c = ideal();
        c.source.pair_statistics = PairStatistics::Thermal;
        c.source.mean_pairs_per_pulse = 0.0;
        c.detectors.dark_count_prob = 1e-5;
        let n = 2_000_000;
        let tally = Simulator::new(&c, 0.0, 11).unwrap().tally(n).unwrap();
        for bit in [H1, H2, D1, D2] {
            assert!(within(tally.containing(bit), n, 1e-5, 3.0), "{bit}: {}", tally.containing(bit));
        }
    }

    #[test]
    fn output_rate_follows_loss_budget() {
        let c = DeviceConfig::default();
        let n = 1_000_000;
        let tally = Simulator::new(&c, 0.0, 42).unwrap().tally(n).unwrap();
        let exact = enumerate(&c, 0.0, 12);
        for bit in [D1, D2] {
            let p: f64 = (0..16).filter(|&m| m & bit as usize != 0).map(|m| exact[m]).sum();
            // leading order: one mean pair split over two outputs, per source
            let leading = c.source.mean_pairs_per_pulse * c.signal_transmission();
            assert!((p - leading).abs() < 0.01 * leading, "{p} vs {leading}");
            assert!(within(tally.containing(bit), n, p, 4.0), "{} vs {}", tally.containing(bit), p * n as f64);
        }
    }

    #[test]
    fn frequencies_match_enumeration() {
        let mut lossy = DeviceConfig::default();
        lossy.interference.mode_overlap = 0.7;
        lossy.losses.herald_stages_db = vec![2.0];
        lossy.losses.signal_stages_db = vec![1.0, 1.5];
        lossy.source.mean_pairs_per_pulse = 0.3;
        lossy.detectors.dark_count_prob = 1e-3;
        let mut poisson = lossy.clone();
        poisson.source.pair_statistics = PairStatistics::Poissonian;
        poisson.source.pump_asymmetry = 0.2;
        let mut fixed = lossy.clone();
        fixed.source.pair_statistics = PairStatistics::Fixed;
        fixed.source.fixed_pairs = [2, 1];
        let n = 400_000;
        for (config, phase) in [(lossy, 0.4), (poisson, 2.0), (fixed, 5.0)] {
            let exact = enumerate(&config, phase, 14);
            assert!((exact.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let sim = Simulator::new(&config, phase, 77).unwrap();
            assert!((sim.model().silent_probability() - exact[0]).abs() < 1e-9);
            let tally = sim.tally(n).unwrap();
            for mask in 0..16 {
                assert!(
                    within(tally.counts[mask], n, exact[mask], 4.0),
                    "mask {mask}: {} vs {}",
                    tally.counts[mask],
                    exact[mask] * n as f64
                );
            }
        }
    }

    #[test]
    fn split_loss_stages_agree() {
        let mut one = DeviceConfig::default();
        one.losses.signal_stages_db = vec![6.0];
        let mut two = one.clone();
        two.losses.signal_stages_db = vec![3.0, 3.0];
        let n = 1_000_000;
        let a = Simulator::new(&one, 1.0, 1).unwrap().tally(n).unwrap();
        let b = Simulator::new(&two, 1.0, 2).unwrap().tally(n).unwrap();
        for bit in [D1, D2, H1] {
            let (x, y) = (a.containing(bit) as f64, b.containing(bit) as f64);
            assert!((x - y).abs() <= 3.0 * (x + y).sqrt(), "{bit}: {x} vs {y}");
        }
    }

    #[test]
    fn deterministic_and_lane_independent() {
        let c = DeviceConfig::default();
        let sim = Simulator::new(&c, 0.5, 42).unwrap();
        let a = sim.simulate(100_000).unwrap();
        let b = sim.simulate(100_000).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c1 = single.install(|| sim.simulate(100_000).unwrap());
        assert_eq!(a, c1);
        // pulse k is the same whether or not later pulses are simulated
        let short = sim.events(40_000).unwrap();
        let long = sim.events(100_000).unwrap();
        assert_eq!(short[..], long[..short.len()]);
        let other = Simulator::new(&c, 0.5, 43).unwrap().simulate(100_000).unwrap();
        assert_ne!(a.records, other.records);
    }

    #[test]
    fn timestamps_are_clock_multiples() {
        let sim = Simulator::new(&DeviceConfig::default(), 0.0, 4).unwrap();
        let s = sim.simulate(50_000).unwrap();
        assert!(!s.is_empty());
        assert!(s.records.windows(2).all(|w| w[0] < w[1]));
        assert!(s.records.iter().all(|t| t.timestamp_ps % s.clock_period_ps == 0));
        let back = TimeTagStream::parse(&s.to_csv_string()).unwrap().stream;
        assert_eq!(back, s);
        let toml: String = serde_json::from_str(&s.metadata["config"]).unwrap();
        assert_eq!(DeviceConfig::from_toml_str(&toml).unwrap(), DeviceConfig::default());
    }

    #[test]
    fn jitter_spreads_tags() {
        let mut c = DeviceConfig::default();
        c.detectors.jitter_sigma_ps = 50.0;
        let s = Simulator::new(&c, 0.0, 4).unwrap().simulate(50_000).unwrap();
        assert!(s.records.windows(2).all(|w| w[0] <= w[1]));
        assert!(s.records.iter().any(|t| t.timestamp_ps % s.clock_period_ps != 0));
        assert!(s
            .records
            .iter()
            .all(|t| (t.timestamp_ps - s.pulse_of(t.timestamp_ps) * s.clock_period_ps).abs() < 1000));
    }

    #[test]
    fn dead_time_suppresses_following_pulses() {
        let mut events = vec![(0, D1 | H1), (1, D1 | H2), (2, D1), (3, D1), (10, D1)];
        apply_dead_time(&mut events, 2);
        assert_eq!(events, vec![(0, D1 | H1), (1, H2), (3, D1), (10, D1)]);
    }

    #[test]
    fn errors() {
        let sim = Simulator::new(&ideal(), 0.0, 1).unwrap();
        assert!(matches!(sim.simulate(0), Err(Error::NoPulses)));
        assert!(matches!(sim.tally(u64::MAX), Err(Error::TimestampOverflow { .. })));
        let mut c = ideal();
        c.mzi.voltage_v = Some(3.0);
        assert!(matches!(simulate(&c, 10, 1), Err(Error::Calibration(_))));
    }

    #[test]
    fn visibility_drops_with_distinguishability_and_darks() {
        // exact four-fold fringe contrast between phase 0 and pi/2
        let contrast = |c: &DeviceConfig| {
            let high = enumerate(c, 0.0, 1)[15];
            let low = enumerate(c, FRAC_PI_2, 1)[15];
            (high - low) / (high + low)
        };
        let mut c = ideal();
        c.losses.signal_stages_db = vec![3.0];
        let mut previous = f64::INFINITY;
        for overlap in [1.0, 0.9, 0.8] {
            c.interference.mode_overlap = overlap;
            let v = contrast(&c);
            assert!(v < previous);
            previous = v;
        }
        c.interference.mode_overlap = 0.9;
        assert!((contrast(&c) - (1.0 + 0.9) / (3.0 - 0.9)).abs() < 1e-12);
        let mut previous = f64::INFINITY;
        for dark in [0.0, 1e-3, 1e-2] {
            c.detectors.dark_count_prob = dark;
            let v = contrast(&c);
            assert!(v < previous);
            previous = v;
        }
        let _ = PI;
    }

    #[test]
    fn number_distribution_oracle() {
        let two = analytic_two_photon_prob(0.9);
        let d = number_distribution(1, 1, 0.9);
        assert!((d[1] - two.p11).abs() < 1e-14 && (d[2] - two.p20).abs() < 1e-14);
        for (k1, k2) in [(2, 1), (3, 3), (1, 5)] {
            assert!((number_distribution(k1, k2, 2.2).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rules_match_quantum_model_at_full_overlap() {
        let mut lossless = DeviceConfig::default();
        lossless.losses.herald_stages_db = vec![];
        lossless.losses.signal_stages_db = vec![];
        lossless.losses.wdm_extinction_db = f64::INFINITY;
        lossless.detectors.dark_count_prob = 0.0;
        let mut lossy = DeviceConfig::default();
        lossy.source.mean_pairs_per_pulse = 0.2;
        lossy.detectors.dark_count_prob = 1e-3;
        for (config, phase) in [(lossless, 0.0), (lossless_at(0.2), 0.7), (lossy, 1.3)] {
            let exact = enumerate(&config, phase, 10);
            let quantum = crate::chip::ChipModel::new(&config)
                .unwrap()
                .click_statistics(phase, 20)
                .unwrap();
            for required in 1..16usize {
                let rules: f64 = (0..16).filter(|m| m & required == required).map(|m| exact[m]).sum();
                let q = quantum.all_click(required);
                // both sides drop photon-number tails of order 1e-8
                assert!((rules - q).abs() <= 1e-7, "mask {required}: {rules} vs {q}");
            }
        }
    }

    fn lossless_at(mean: f64) -> DeviceConfig {
        let mut c = DeviceConfig::default();
        c.source.mean_pairs_per_pulse = mean;
        c.losses.signal_stages_db = vec![];
        c
    }
}
