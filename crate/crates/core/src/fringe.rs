//! Fringe fitting with Poisson weights, visibility and fidelity estimates.
//!
//! The model `C = A (1 + V cos(k phase))` is linear in `(A, A V)`, so the
//! weighted least-squares solution is closed form.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of points accepted by [`fit_fringe`].
pub const MIN_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FringeKind {
    /// Period 2π.
    Single,
    /// Period π.
    Double,
}

impl FringeKind {
    pub fn harmonic(self) -> f64 {
        match self {
            FringeKind::Single => 1.0,
            FringeKind::Double => 2.0,
        }
    }

    pub fn period(self) -> f64 {
        2.0 * PI / self.harmonic()
    }
}

impl fmt::Display for FringeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FringeKind::Single => "single",
            FringeKind::Double => "double",
        })
    }
}

impl FromStr for FringeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single" => Ok(FringeKind::Single),
            "double" => Ok(FringeKind::Double),
            other => Err(format!("unknown fringe kind {other:?} (expected single or double)")),
        }
    }
}

/// Fitted fringe; uncertainties are one standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeFit {
    pub kind: FringeKind,
    pub amplitude: f64,
    pub visibility: f64,
    pub sigma_amplitude: f64,
    pub sigma_visibility: f64,
    pub chi2_dof: f64,
    pub n_points: usize,
}

impl FringeFit {
    pub fn model(&self, phase: f64) -> f64 {
        self.amplitude * (1.0 + self.visibility * (self.kind.harmonic() * phase).cos())
    }

    pub fn report(&self) -> FitReport {
        let fidelity = fidelity_from_visibility(self.visibility, self.sigma_visibility);
        FitReport {
            kind: self.kind,
            amplitude: self.amplitude,
            visibility: self.visibility,
            sigma_amplitude: self.sigma_amplitude,
            sigma_visibility: self.sigma_visibility,
            fidelity: fidelity.fidelity,
            sigma_fidelity: fidelity.sigma,
            chi2_dof: self.chi2_dof,
            n_points: self.n_points,
            uncertainty: "1sigma".to_string(),
        }
    }
}

/// Serializable fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub kind: FringeKind,
    #[serde(rename = "A")]
    pub amplitude: f64,
    #[serde(rename = "V")]
    pub visibility: f64,
    #[serde(rename = "sigma_A")]
    pub sigma_amplitude: f64,
    #[serde(rename = "sigma_V")]
    pub sigma_visibility: f64,
    #[serde(rename = "F")]
    pub fidelity: f64,
    #[serde(rename = "sigma_F")]
    pub sigma_fidelity: f64,
    pub chi2_dof: f64,
    pub n_points: usize,
    pub uncertainty: String,
}

/// Weighted least-squares fit of `C = A (1 + V cos(k phase))` with weights
/// `1 / max(counts, 1)`. Phases are taken as exact.
pub fn fit_fringe(points: &[(f64, f64)], kind: FringeKind) -> Result<FringeFit> {
    if points.len() < MIN_POINTS {
        return Err(Error::Fit(format!(
            "need at least {MIN_POINTS} points, got {}",
            points.len()
        )));
    }
    if let Some(&(phase, counts)) = points.iter().find(|(p, c)| !p.is_finite() || !c.is_finite() || *c < 0.0) {
        return Err(Error::Fit(format!("invalid point (phase {phase}, counts {counts})")));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(p, _)| (lo.min(p), hi.max(p)));
    let needed = kind.period() / 2.0;
    if hi - lo < needed - 1e-12 {
        return Err(Error::Fit(format!(
            "phase span {:.4} rad is below half a period ({needed:.4} rad)",
            hi - lo
        )));
    }
    if points.iter().all(|&(_, c)| c == 0.0) {
        return Err(Error::ZeroCounts);
    }
    let k = kind.harmonic();
    // normal equations for counts = a + b x, x = cos(k phase)
    let (mut s_w, mut s_x, mut s_xx, mut s_y, mut s_xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(phase, counts) in points {
        let w = 1.0 / counts.max(1.0);
        let x = (k * phase).cos();
        s_w += w;
        s_x += w * x;
        s_xx += w * x * x;
        s_y += w * counts;
        s_xy += w * x * counts;
    }
    let det = s_w * s_xx - s_x * s_x;
    if det.abs() <= 1e-12 * s_w * s_xx.max(f64::MIN_POSITIVE) {
        return Err(Error::Fit("phases do not sample the fringe (singular design)".into()));
    }
    let a = (s_xx * s_y - s_x * s_xy) / det;
    let b = (s_w * s_xy - s_x * s_y) / det;
    let (var_a, var_b, cov_ab) = (s_xx / det, s_w / det, -s_x / det);
    if a <= 0.0 {
        return Err(Error::Fit(format!("non-positive fitted amplitude {a}")));
    }
    let visibility = b / a;
    let var_v = (visibility * visibility * var_a + var_b - 2.0 * visibility * cov_ab) / (a * a);
    let chi2: f64 = points
        .iter()
        .map(|&(phase, counts)| {
            let r = counts - a - b * (k * phase).cos();
            r * r / counts.max(1.0)
        })
        .sum();
    if !(0.0..=1.0).contains(&visibility) {
        log::warn!("fitted {kind} visibility {visibility:.4} lies outside [0, 1]");
    }
    Ok(FringeFit {
        kind,
        amplitude: a,
        visibility,
        sigma_amplitude: var_a.max(0.0).sqrt(),
        sigma_visibility: var_v.max(0.0).sqrt(),
        chi2_dof: chi2 / (points.len() - 2) as f64,
        n_points: points.len(),
    })
}

/// `(max - min) / (max + min)`.
pub fn visibility_minmax(c_max: f64, c_min: f64) -> Result<f64> {
    if !(c_min >= 0.0 && c_max >= c_min) {
        return Err(Error::Fit(format!("need max >= min >= 0, got max {c_max}, min {c_min}")));
    }
    if c_max == 0.0 {
        return Err(Error::ZeroCounts);
    }
    Ok((c_max - c_min) / (c_max + c_min))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityEstimate {
    pub fidelity: f64,
    pub sigma: f64,
    /// The visibility was outside `[0, 1]` and was clamped first.
    pub clamped: bool,
}

/// `F = (1 + V) / 2`, `sigma_F = sigma_V / 2`.
pub fn fidelity_from_visibility(visibility: f64, sigma_visibility: f64) -> FidelityEstimate {
    let clamped = !(0.0..=1.0).contains(&visibility);
    if clamped {
        log::warn!("visibility {visibility} clamped to [0, 1] before the fidelity mapping");
    }
    let v = if visibility.is_nan() { 0.0 } else { visibility.clamp(0.0, 1.0) };
    FidelityEstimate {
        fidelity: (1.0 + v) / 2.0,
        sigma: sigma_visibility.abs() / 2.0,
        clamped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| 2.0 * PI * i as f64 / (n - 1) as f64).collect()
    }

    fn noisy(amplitude: f64, visibility: f64, kind: FringeKind, seed: u64, n: usize) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        grid(n)
            .into_iter()
            .map(|p| {
                let mean = amplitude * (1.0 + visibility * (kind.harmonic() * p).cos());
                let counts = if mean > 0.0 { Poisson::new(mean).unwrap().sample(&mut rng) } else { 0.0 };
                (p, counts)
            })
            .collect()
    }

    // Unweighted-free reference: solve the weighted normal equations by
    // Gaussian elimination on the 2x2 design, independently of the closed form.
    fn reference(points: &[(f64, f64)], k: f64) -> (f64, f64) {
        let mut m = [[0.0; 3]; 2];
        for &(p, c) in points {
            let w = 1.0 / c.max(1.0);
            let row = [1.0, (k * p).cos()];
            for i in 0..2 {
                for j in 0..2 {
                    m[i][j] += w * row[i] * row[j];
                }
                m[i][2] += w * row[i] * c;
            }
        }
        let f = m[1][0] / m[0][0];
        for j in 0..3 {
            m[1][j] -= f * m[0][j];
        }
        let b = m[1][2] / m[1][1];
        let a = (m[0][2] - m[0][1] * b) / m[0][0];
        (a, b / a)
    }

    #[test]
    fn exact_recovery() {
        let points: Vec<_> = grid(13).into_iter().map(|p| (p, 100.0 * (1.0 + 0.9 * (2.0 * p).cos()))).collect();
        let fit = fit_fringe(&points, FringeKind::Double).unwrap();
        assert_abs_diff_eq!(fit.amplitude, 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.visibility, 0.9, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.chi2_dof, 0.0, epsilon = 1e-12);
        for &(p, _) in &points {
            let formula = fit.amplitude * (1.0 + fit.visibility * (2.0 * p).cos());
            assert!((fit.model(p) - formula).abs() <= 1e-12 * formula.abs().max(1.0));
        }
    }

    #[test]
    fn flat_data() {
        let points: Vec<_> = grid(9).into_iter().map(|p| (p, 40.0)).collect();
        let fit = fit_fringe(&points, FringeKind::Single).unwrap();
        assert_abs_diff_eq!(fit.visibility, 0.0, epsilon = 1e-12);
        assert!(fit.sigma_visibility > 0.0);
    }

    #[test]
    fn noisy_regime_of_low_count_fringes() {
        // peak about 50 counts: A = 50 / 1.9
        let mut spread = Vec::new();
        for seed in 0..200 {
            let fit = fit_fringe(&noisy(50.0 / 1.9, 0.9, FringeKind::Double, seed, 13), FringeKind::Double).unwrap();
            spread.push((fit.visibility, fit.sigma_visibility));
        }
        let mean_v = spread.iter().map(|s| s.0).sum::<f64>() / spread.len() as f64;
        let sd_v = (spread.iter().map(|s| (s.0 - mean_v).powi(2)).sum::<f64>() / (spread.len() - 1) as f64).sqrt();
        let mean_sigma = spread.iter().map(|s| s.1).sum::<f64>() / spread.len() as f64;
        assert!((mean_v - 0.9).abs() < 0.03, "{mean_v}");
        assert!((0.02..0.12).contains(&mean_sigma), "{mean_sigma}");
        assert!((sd_v / mean_sigma - 1.0).abs() < 0.35, "{sd_v} vs {mean_sigma}");
    }

    #[test]
    fn error_shrinks_with_counts() {
        let rms = |amplitude: f64| {
            let sq: f64 = (0..100)
                .map(|seed| {
                    let fit = fit_fringe(&noisy(amplitude, 0.7, FringeKind::Single, seed, 13), FringeKind::Single).unwrap();
                    (fit.visibility - 0.7).powi(2)
                })
                .sum();
            (sq / 100.0).sqrt()
        };
        let errors = [rms(100.0), rms(1_000.0), rms(10_000.0)];
        for pair in errors.windows(2) {
            let ratio = pair[0] / pair[1];
            // 1/sqrt(counts) scaling: ratio sqrt(10), within a factor of two
            assert!((10f64.sqrt() / 2.0..10f64.sqrt() * 2.0).contains(&ratio), "{errors:?}");
        }
    }

    #[test]
    fn wrong_period_sees_no_fringe() {
        // one full period, endpoint excluded so no phase is sampled twice
        let open: Vec<f64> = (0..100).map(|i| 2.0 * PI * i as f64 / 100.0).collect();
        let points: Vec<_> = open.iter().map(|&p| (p, 100.0 * (1.0 + (2.0 * p).cos()))).collect();
        let single = fit_fringe(&points, FringeKind::Single).unwrap();
        assert!(single.visibility.abs() <= 0.01, "{single:?}");
        let double = fit_fringe(&points, FringeKind::Double).unwrap();
        assert!(double.visibility >= 0.999);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy: Vec<_> = (0..12)
                .map(|i| 2.0 * PI * i as f64 / 12.0)
                .map(|p| (p, Poisson::new(30.0 * (1.0 + 0.9 * (2.0 * p).cos()) + 1e-9).unwrap().sample(&mut rng)))
                .collect();
            let fit = fit_fringe(&noisy, FringeKind::Single).unwrap();
            assert!(fit.visibility.abs() <= 3.0 * fit.sigma_visibility, "{seed}: {fit:?}");
        }
    }

    #[test]
    fn errors() {
        let few: Vec<_> = grid(4).into_iter().map(|p| (p, 10.0)).collect();
        assert!(matches!(fit_fringe(&few, FringeKind::Single), Err(Error::Fit(_))));
        let narrow: Vec<_> = (0..8).map(|i| (i as f64 * 0.1, 10.0)).collect();
        assert!(matches!(fit_fringe(&narrow, FringeKind::Single), Err(Error::Fit(_))));
        assert!(fit_fringe(&narrow, FringeKind::Double).is_err());
        let zeros: Vec<_> = grid(8).into_iter().map(|p| (p, 0.0)).collect();
        assert_eq!(fit_fringe(&zeros, FringeKind::Double), Err(Error::ZeroCounts));
        let negative: Vec<_> = grid(8).into_iter().map(|p| (p, -1.0)).collect();
        assert!(fit_fringe(&negative, FringeKind::Double).is_err());
    }

    #[test]
    fn minmax_visibility() {
        assert_eq!(visibility_minmax(100.0, 0.0).unwrap(), 1.0);
        assert_eq!(visibility_minmax(100.0, 100.0).unwrap(), 0.0);
        assert_abs_diff_eq!(visibility_minmax(190.0, 10.0).unwrap(), 0.9, epsilon = 1e-15);
        assert_eq!(visibility_minmax(0.0, 0.0), Err(Error::ZeroCounts));
        assert!(visibility_minmax(1.0, 2.0).is_err());
    }

    #[test]
    fn fidelity_mapping() {
        let f = fidelity_from_visibility(0.90, 0.08);
        assert_abs_diff_eq!(f.fidelity, 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(f.sigma, 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(fidelity_from_visibility(0.99, 0.0).fidelity, 0.995, epsilon = 1e-15);
        assert_eq!(fidelity_from_visibility(0.0, 0.0).fidelity, 0.5);
        assert_eq!(fidelity_from_visibility(1.0, 0.0).fidelity, 1.0);
        let clamped = fidelity_from_visibility(1.2, 0.1);
        assert!(clamped.clamped);
        assert_eq!(clamped.fidelity, 1.0);
    }

    #[test]
    fn report_fields() {
        let points: Vec<_> = grid(13).into_iter().map(|p| (p, 50.0 * (1.0 + 0.5 * p.cos()))).collect();
        let json = serde_json::to_value(fit_fringe(&points, FringeKind::Single).unwrap().report()).unwrap();
        for key in ["kind", "A", "V", "sigma_A", "sigma_V", "F", "sigma_F", "chi2_dof", "n_points"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["kind"], "single");
    }

    proptest! {
        #[test]
        fn closed_form_matches_elimination(
            counts in proptest::collection::vec(0.0f64..500.0, 6..20),
            double in any::<bool>(),
        ) {
            let kind = if double { FringeKind::Double } else { FringeKind::Single };
            let n = counts.len();
            let points: Vec<_> = grid(n).into_iter().zip(counts).collect();
            prop_assume!(points.iter().any(|p| p.1 > 1.0));
            let fit = fit_fringe(&points, kind);
            prop_assume!(fit.is_ok());
            let fit = fit.unwrap();
            let (a, v) = reference(&points, kind.harmonic());
            prop_assert!((fit.amplitude - a).abs() <= 1e-9 * a.abs().max(1.0));
            prop_assert!((fit.visibility - v).abs() <= 1e-9 * v.abs().max(1.0));
            prop_assert!(fit.sigma_amplitude >= 0.0 && fit.sigma_visibility >= 0.0);
        }

        #[test]
        fn fidelity_is_affine_and_monotone(v1 in 0.0f64..=1.0, v2 in 0.0f64..=1.0) {
            let (f1, f2) = (fidelity_from_visibility(v1, 0.0).fidelity, fidelity_from_visibility(v2, 0.0).fidelity);
            prop_assert!((f1 - (1.0 + v1) / 2.0).abs() < 1e-15);
            prop_assert_eq!(v1 <= v2, f1 <= f2);
        }
    }
}
