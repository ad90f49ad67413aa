//! Multimode photon-number (Fock) states and the passive linear-optical
//! operations acting on them.
//!
//! States are stored sparsely as a map from occupation tuples to complex
//! amplitudes. The total photon number of every stored tuple is bounded by a
//! cutoff; operations that would exceed it (only [`FockState::create`] can)
//! drop the offending terms without renormalizing.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitudes smaller than this are pruned after every operation.
pub const PRUNE_THRESHOLD: f64 = 1e-15;
/// Tolerance on `sum |amplitude|^2 = 1` for a state to count as normalized.
pub const NORM_TOLERANCE: f64 = 1e-10;
/// Patterns less likely than this cannot be used as a herald.
pub const HERALD_FLOOR: f64 = 1e-14;

/// Sign convention of a two-mode beamsplitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// `a† -> t a† + i r b†`, `b† -> i r a† + t b†`.
    #[default]
    Symmetric,
    /// `a† -> t a† + r b†`, `b† -> -r a† + t b†`.
    Real,
}

/// A passive mode transformation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeTransform {
    Beamsplitter {
        mode_i: usize,
        mode_j: usize,
        transmissivity: f64,
        convention: Convention,
    },
    Phase {
        mode: usize,
        phi: f64,
    },
}

impl ModeTransform {
    pub fn apply(&self, state: &FockState) -> Result<FockState> {
        match *self {
            ModeTransform::Beamsplitter {
                mode_i,
                mode_j,
                transmissivity,
                convention,
            } => state.apply_beamsplitter(mode_i, mode_j, transmissivity, convention),
            ModeTransform::Phase { mode, phi } => state.apply_phase(mode, phi),
        }
    }
}

/// Pure state on `mode_count` bosonic modes with total photon number at most `cutoff`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockState {
    mode_count: usize,
    cutoff: u32,
    amplitudes: BTreeMap<Vec<u32>, Complex64>,
}

/// Result of projecting some modes of a state onto a photon-number pattern.
#[derive(Debug, Clone)]
pub struct Heralded {
    /// Renormalized conditional state on the remaining modes.
    pub state: FockState,
    /// Probability of observing the herald pattern.
    pub probability: f64,
}

impl FockState {
    /// `|0...0>` on `mode_count` modes.
    pub fn vacuum(mode_count: usize, cutoff: u32) -> Result<Self> {
        Self::basis(&vec![0; mode_count], cutoff)
    }

    /// A single normalized basis ket.
    pub fn basis(occupation: &[u32], cutoff: u32) -> Result<Self> {
        Self::from_terms(occupation.len(), cutoff, [(occupation.to_vec(), Complex64::new(1.0, 0.0))])
    }

    /// Builds a state from explicit terms. Repeated tuples are summed; the
    /// result is not normalized.
    pub fn from_terms<I>(mode_count: usize, cutoff: u32, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, Complex64)>,
    {
        if mode_count == 0 {
            return Err(Error::NoModes);
        }
        let mut amplitudes = BTreeMap::new();
        for (occupation, amplitude) in terms {
            if occupation.len() != mode_count {
                return Err(Error::DimensionMismatch {
                    expected: mode_count,
                    got: occupation.len(),
                });
            }
            if occupation.iter().sum::<u32>() > cutoff {
                return Err(Error::AboveCutoff { occupation, cutoff });
            }
            *amplitudes.entry(occupation).or_insert(Complex64::new(0.0, 0.0)) += amplitude;
        }
        Ok(Self {
            mode_count,
            cutoff,
            amplitudes,
        }
        .pruned())
    }

    pub fn mode_count(&self) -> usize {
        self.mode_count
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    /// Number of stored basis terms.
    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Stored terms in lexicographic order of occupation.
    pub fn terms(&self) -> impl Iterator<Item = (&[u32], Complex64)> + '_ {
        self.amplitudes.iter().map(|(k, v)| (k.as_slice(), *v))
    }

    /// Amplitude of a basis tuple, zero when absent.
    pub fn amplitude(&self, occupation: &[u32]) -> Complex64 {
        self.amplitudes
            .get(occupation)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= NORM_TOLERANCE
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm_sqr().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroState);
        }
        Ok(self.scaled(Complex64::new(1.0 / norm, 0.0)))
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        let amplitudes = self
            .amplitudes
            .iter()
            .map(|(k, v)| (k.clone(), v * factor))
            .collect();
        Self {
            amplitudes,
            ..self.clone_empty()
        }
        .pruned()
    }

    /// Drops amplitudes below [`PRUNE_THRESHOLD`].
    pub fn pruned(mut self) -> Self {
        self.amplitudes.retain(|_, a| a.norm() >= PRUNE_THRESHOLD);
        self
    }

    fn clone_empty(&self) -> Self {
        Self {
            mode_count: self.mode_count,
            cutoff: self.cutoff,
            amplitudes: BTreeMap::new(),
        }
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.mode_count {
            Err(Error::ModeOutOfRange {
                mode,
                mode_count: self.mode_count,
            })
        } else {
            Ok(())
        }
    }

    /// Creation operator `a†` on `mode`. Terms pushed above the cutoff are
    /// dropped and the result is not renormalized.
    pub fn create(&self, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        let mut out = self.clone_empty();
        for (occupation, amplitude) in &self.amplitudes {
            if occupation.iter().sum::<u32>() >= self.cutoff {
                continue;
            }
            let mut next = occupation.clone();
            next[mode] += 1;
            let factor = f64::from(next[mode]).sqrt();
            *out.amplitudes.entry(next).or_default() += amplitude * factor;
        }
        Ok(out.pruned())
    }

    /// Phase shift `exp(i n phi)` on the `n` photons of `mode`.
    pub fn apply_phase(&self, mode: usize, phi: f64) -> Result<Self> {
        self.check_mode(mode)?;
        let amplitudes = self
            .amplitudes
            .iter()
            .map(|(k, v)| {
                let n = f64::from(k[mode]);
                (k.clone(), v * Complex64::from_polar(1.0, n * phi))
            })
            .collect();
        Ok(Self {
            amplitudes,
            ..self.clone_empty()
        })
    }

    /// Two-mode beamsplitter with power transmissivity `transmissivity`.
    pub fn apply_beamsplitter(
        &self,
        mode_i: usize,
        mode_j: usize,
        transmissivity: f64,
        convention: Convention,
    ) -> Result<Self> {
        self.check_mode(mode_i)?;
        self.check_mode(mode_j)?;
        if mode_i == mode_j {
            return Err(Error::IdenticalModes(mode_i));
        }
        if !(0.0..=1.0).contains(&transmissivity) {
            return Err(Error::Transmissivity(transmissivity));
        }
        let t = Complex64::new(transmissivity.sqrt(), 0.0);
        let r = (1.0 - transmissivity).sqrt();
        // Images of the input creation operators: a_i† -> ii a_i† + ij a_j†, a_j† -> ji a_i† + jj a_j†.
        let (ii, ij, ji, jj) = match convention {
            Convention::Symmetric => (t, Complex64::new(0.0, r), Complex64::new(0.0, r), t),
            Convention::Real => (t, Complex64::new(r, 0.0), Complex64::new(-r, 0.0), t),
        };
        let factorial = Factorials::up_to(self.cutoff);
        let mut out = self.clone_empty();
        for (occupation, amplitude) in &self.amplitudes {
            let a = occupation[mode_i];
            let b = occupation[mode_j];
            let prefactor = amplitude / (factorial.get(a) * factorial.get(b)).sqrt();
            // (ii x + ij y)^a (ji x + jj y)^b, with x^k y^l |0> = sqrt(k! l!) |k, l>.
            let mut coefficients = vec![Complex64::new(0.0, 0.0); (a + b + 1) as usize];
            for p in 0..=a {
                let left = ii.powu(p) * ij.powu(a - p) * factorial.binomial(a, p);
                for q in 0..=b {
                    let right = ji.powu(q) * jj.powu(b - q) * factorial.binomial(b, q);
                    coefficients[(p + q) as usize] += left * right;
                }
            }
            for (k, c) in coefficients.into_iter().enumerate() {
                let k = k as u32;
                let l = a + b - k;
                let value = prefactor * c * (factorial.get(k) * factorial.get(l)).sqrt();
                if value.norm() == 0.0 {
                    continue;
                }
                let mut next = occupation.clone();
                next[mode_i] = k;
                next[mode_j] = l;
                *out.amplitudes.entry(next).or_default() += value;
            }
        }
        Ok(out.pruned())
    }

    /// Born-rule probability of an exact occupation pattern.
    pub fn outcome_probability(&self, pattern: &[u32]) -> Result<f64> {
        if pattern.len() != self.mode_count {
            return Err(Error::DimensionMismatch {
                expected: self.mode_count,
                got: pattern.len(),
            });
        }
        Ok(self.amplitude(pattern).norm_sqr())
    }

    /// Total probability of all terms accepted by `predicate`.
    pub fn probability_where<F>(&self, mut predicate: F) -> f64
    where
        F: FnMut(&[u32]) -> bool,
    {
        self.amplitudes
            .iter()
            .filter(|(k, _)| predicate(k))
            .map(|(_, v)| v.norm_sqr())
            .sum()
    }

    /// Projects `herald_modes` onto `herald_pattern` and returns the
    /// renormalized state of the other modes, in their original order.
    pub fn herald_project(&self, herald_modes: &[usize], herald_pattern: &[u32]) -> Result<Heralded> {
        if herald_modes.len() != herald_pattern.len() {
            return Err(Error::DimensionMismatch {
                expected: herald_modes.len(),
                got: herald_pattern.len(),
            });
        }
        let mut seen = vec![false; self.mode_count];
        for &m in herald_modes {
            if m >= self.mode_count || seen[m] {
                return Err(Error::HeraldModes);
            }
            seen[m] = true;
        }
        let norm = self.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized(norm));
        }
        let kept: Vec<usize> = (0..self.mode_count).filter(|m| !seen[*m]).collect();
        if kept.is_empty() {
            return Err(Error::HeraldModes);
        }
        let mut conditional = BTreeMap::new();
        let mut probability = 0.0;
        for (occupation, amplitude) in &self.amplitudes {
            let matches = herald_modes
                .iter()
                .zip(herald_pattern)
                .all(|(&m, &n)| occupation[m] == n);
            if matches {
                probability += amplitude.norm_sqr();
                let rest: Vec<u32> = kept.iter().map(|&m| occupation[m]).collect();
                *conditional.entry(rest).or_insert(Complex64::new(0.0, 0.0)) += amplitude;
            }
        }
        if probability < HERALD_FLOOR {
            return Err(Error::ImpossibleHeralding(probability));
        }
        let state = FockState {
            mode_count: kept.len(),
            cutoff: self.cutoff,
            amplitudes: conditional,
        };
        Ok(Heralded {
            state: state.scaled(Complex64::new(1.0 / probability.sqrt(), 0.0)),
            probability,
        })
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &FockState) -> Result<Complex64> {
        if self.mode_count != other.mode_count {
            return Err(Error::DimensionMismatch {
                expected: self.mode_count,
                got: other.mode_count,
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .map(|(k, a)| a.conj() * other.amplitude(k))
            .sum())
    }

    /// Tensor product, keeping only terms whose total photon number fits `cutoff`.
    /// The result is not renormalized.
    pub fn tensor(&self, other: &FockState, cutoff: u32) -> FockState {
        let mut amplitudes = BTreeMap::new();
        for (left, a) in &self.amplitudes {
            let left_total: u32 = left.iter().sum();
            for (right, b) in &other.amplitudes {
                if left_total + right.iter().sum::<u32>() > cutoff {
                    continue;
                }
                let mut joined = left.clone();
                joined.extend_from_slice(right);
                amplitudes.insert(joined, a * b);
            }
        }
        FockState {
            mode_count: self.mode_count + other.mode_count,
            cutoff,
            amplitudes,
        }
        .pruned()
    }

    /// Reorders modes: output mode `k` is input mode `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<FockState> {
        if order.len() != self.mode_count {
            return Err(Error::DimensionMismatch {
                expected: self.mode_count,
                got: order.len(),
            });
        }
        let mut seen = vec![false; self.mode_count];
        for &m in order {
            self.check_mode(m)?;
            if std::mem::replace(&mut seen[m], true) {
                return Err(Error::IdenticalModes(m));
            }
        }
        let amplitudes = self
            .amplitudes
            .iter()
            .map(|(k, v)| (order.iter().map(|&m| k[m]).collect(), *v))
            .collect();
        Ok(FockState {
            amplitudes,
            ..self.clone_empty()
        })
    }

    /// Appends `extra` vacuum modes after the existing ones.
    pub fn with_vacuum_modes(&self, extra: usize) -> FockState {
        let amplitudes = self
            .amplitudes
            .iter()
            .map(|(k, v)| {
                let mut longer = k.clone();
                longer.resize(k.len() + extra, 0);
                (longer, *v)
            })
            .collect();
        FockState {
            mode_count: self.mode_count + extra,
            cutoff: self.cutoff,
            amplitudes,
        }
    }
}

impl fmt::Display for FockState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.amplitudes.is_empty() {
            return write!(f, "0");
        }
        for (i, (occupation, a)) in self.amplitudes.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            let ket: Vec<String> = occupation.iter().map(u32::to_string).collect();
            write!(f, "({:.6}{:+.6}i)|{}>", a.re, a.im, ket.join(","))?;
        }
        Ok(())
    }
}

/// `|<a|b>|^2` for two normalized states on the same modes.
pub fn fidelity(a: &FockState, b: &FockState) -> Result<f64> {
    for s in [a, b] {
        if !s.is_normalized() {
            return Err(Error::NotNormalized(s.norm_sqr()));
        }
    }
    Ok(a.inner(b)?.norm_sqr().clamp(0.0, 1.0))
}

struct Factorials(Vec<f64>);

impl Factorials {
    fn up_to(n: u32) -> Self {
        let mut table = Vec::with_capacity(n as usize + 1);
        table.push(1.0);
        for k in 1..=n {
            table.push(table[k as usize - 1] * f64::from(k));
        }
        Self(table)
    }

    fn get(&self, n: u32) -> f64 {
        self.0[n as usize]
    }

    fn binomial(&self, n: u32, k: u32) -> f64 {
        self.get(n) / (self.get(k) * self.get(n - k))
    }
}
