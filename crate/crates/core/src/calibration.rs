//! Voltage-to-phase calibration of the thermo-optic MZI.
//!
//! A curve is a set of `(voltage, phase)` samples joined by monotone
//! piecewise-cubic (PCHIP) interpolation. It is built from a classical
//! fringe scan by inverting `C = A (1 + V cos phase)` point by point and
//! unwrapping the result into a non-decreasing phase.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;
use std::path::Path;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};

/// Minimum number of scan points accepted by [`fit_calibration`].
pub const MIN_SCAN_POINTS: usize = 8;

/// Phase targets this close outside the sampled phase range snap to the
/// nearest end of the curve when locating working points.
pub const EDGE_TOLERANCE_RAD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    voltages: Vec<f64>,
    phases: Vec<f64>,
    slopes: Vec<f64>,
}

impl CalibrationCurve {
    /// Voltages must be strictly increasing and phases monotone.
    pub fn new(voltages: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        if voltages.len() != phases.len() {
            return Err(Error::DimensionMismatch {
                expected: voltages.len(),
                got: phases.len(),
            });
        }
        if voltages.len() < 2 {
            return Err(Error::Calibration(format!(
                "a curve needs at least 2 samples, got {}",
                voltages.len()
            )));
        }
        if voltages.iter().chain(&phases).any(|x| !x.is_finite()) {
            return Err(Error::Calibration("non-finite sample".into()));
        }
        if let Some(k) = voltages.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Calibration(format!(
                "voltages must increase strictly (sample {} at {} V follows {} V)",
                k + 1,
                voltages[k + 1],
                voltages[k]
            )));
        }
        let rising = phases.windows(2).all(|w| w[1] >= w[0]);
        let falling = phases.windows(2).all(|w| w[1] <= w[0]);
        if !rising && !falling {
            return Err(Error::Calibration("phases are not monotone in voltage".into()));
        }
        let slopes = pchip_slopes(&voltages, &phases);
        Ok(Self { voltages, phases, slopes })
    }

    pub fn len(&self) -> usize {
        self.voltages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltages.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.voltages.iter().copied().zip(self.phases.iter().copied())
    }

    pub fn voltage_range(&self) -> (f64, f64) {
        (self.voltages[0], self.voltages[self.len() - 1])
    }

    /// `(min, max)` of the sampled phases.
    pub fn phase_range(&self) -> (f64, f64) {
        let (a, b) = (self.phases[0], self.phases[self.len() - 1]);
        (a.min(b), a.max(b))
    }

    /// Interpolated phase; exact at the samples, an error outside them.
    pub fn phase_from_voltage(&self, voltage: f64) -> Result<f64> {
        let (min, max) = self.voltage_range();
        if !(min..=max).contains(&voltage) {
            return Err(Error::VoltageOutOfRange { voltage, min, max });
        }
        let k = match self.voltages.binary_search_by(|v| v.total_cmp(&voltage)) {
            Ok(k) => return Ok(self.phases[k]),
            Err(k) => k - 1,
        };
        Ok(self.hermite(k, voltage))
    }

    fn hermite(&self, k: usize, voltage: f64) -> f64 {
        let h = self.voltages[k + 1] - self.voltages[k];
        let t = (voltage - self.voltages[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.phases[k]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
            + (-2.0 * t3 + 3.0 * t2) * self.phases[k + 1]
            + (t3 - t2) * h * self.slopes[k + 1]
    }

    /// Lowest voltage at which the curve reaches `phase`, if it does.
    pub fn voltage_for_phase(&self, phase: f64) -> Option<f64> {
        let rising = self.phases[self.len() - 1] >= self.phases[0];
        for k in 0..self.len() - 1 {
            let (a, b) = (self.phases[k], self.phases[k + 1]);
            if a == phase {
                return Some(self.voltages[k]);
            }
            let inside = if rising { a < phase && phase <= b } else { b <= phase && phase < a };
            if !inside {
                continue;
            }
            if b == phase {
                return Some(self.voltages[k + 1]);
            }
            // PCHIP is monotone on each segment, so bisection converges
            let (mut lo, mut hi) = (self.voltages[k], self.voltages[k + 1]);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (self.hermite(k, mid) < phase) == rising {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-14 * hi.abs().max(1.0) {
                    break;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        None
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "voltage_v,phase_rad")?;
        for (v, p) in self.samples() {
            writeln!(out, "{v},{p}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let rows = parse_two_columns(text, "voltage_v,phase_rad")?;
        let (voltages, phases) = rows.into_iter().unzip();
        Self::new(voltages, phases)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

// Fritsch-Carlson derivative estimates with the three-point end conditions.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() || d0 == 0.0 {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn parse_two_columns(text: &str, header: &str) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line.replace(' ', "") != header {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected header {header:?}, got {line:?}"),
                });
            }
            header_seen = true;
            continue;
        }
        let parse = |field: Option<&str>| {
            field.and_then(|f| f.trim().parse::<f64>().ok()).ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected two numbers, got {line:?}"),
            })
        };
        let mut fields = line.split(',');
        let row = (parse(fields.next())?, parse(fields.next())?);
        if fields.next().is_some() {
            return Err(Error::Parse {
                line: i + 1,
                message: "too many fields".into(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a fringe scan with header `voltage_v,counts`.
pub fn parse_scan_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    parse_two_columns(text, "voltage_v,counts")
}

pub fn scan_to_csv(scan: &[(f64, f64)]) -> String {
    let mut out = String::from("voltage_v,counts\n");
    for (v, c) in scan {
        out.push_str(&format!("{v},{c}\n"));
    }
    out
}

/// Curve plus the fringe parameters found while building it.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    pub curve: CalibrationCurve,
    pub amplitude: f64,
    pub visibility: f64,
    /// RMS of `counts - A (1 + V cos phase)` over the scan.
    pub residual_rms: f64,
    /// RMS Poisson standard deviation of the scan counts.
    pub poisson_rms: f64,
}

/// Builds a calibration curve from `(voltage, counts)` pairs.
///
/// The fringe amplitude and visibility start from the scan extremes and are
/// refined by a weighted linear fit against the unwrapped phases until the
/// phases stop moving. The unwrapped phase starts on the branch consistent
/// with the first count change and is non-decreasing in voltage.
pub fn fit_calibration(scan: &[(f64, f64)]) -> Result<CalibrationFit> {
    if scan.len() < MIN_SCAN_POINTS {
        return Err(Error::Calibration(format!(
            "need at least {MIN_SCAN_POINTS} scan points, got {}",
            scan.len()
        )));
    }
    if let Some(&(v, c)) = scan.iter().find(|(v, c)| !v.is_finite() || !c.is_finite() || *c < 0.0) {
        return Err(Error::Calibration(format!("invalid scan point ({v} V, {c} counts)")));
    }
    let mut scan = scan.to_vec();
    scan.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = scan.windows(2).find(|w| w[1].0 == w[0].0) {
        return Err(Error::Calibration(format!("voltage {} V appears twice", w[0].0)));
    }
    let voltages: Vec<f64> = scan.iter().map(|s| s.0).collect();
    let counts: Vec<f64> = scan.iter().map(|s| s.1).collect();
    let c_max = counts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let c_min = counts.iter().copied().fold(f64::INFINITY, f64::min);
    if c_max <= 0.0 || c_max - c_min <= 1e-9 * c_max {
        return Err(Error::NoModulation);
    }

    let (amplitude, visibility) = fringe_extremes(&voltages, &counts, c_max, c_min)?;
    let phases = unwrap(&voltages, &counts, amplitude, visibility)?;
    let span = phases[phases.len() - 1] - phases[0];
    if span < PI {
        return Err(Error::Calibration(format!(
            "scan covers {span:.3} rad of phase; at least half a fringe (pi) is needed"
        )));
    }
    let n = counts.len() as f64;
    let residual_rms = (counts
        .iter()
        .zip(&phases)
        .map(|(c, p)| (c - amplitude * (1.0 + visibility * p.cos())).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let poisson_rms = (counts.iter().map(|c| c.max(1.0)).sum::<f64>() / n).sqrt();
    Ok(CalibrationFit {
        curve: CalibrationCurve::new(voltages, phases)?,
        amplitude,
        visibility,
        residual_rms,
        poisson_rms,
    })
}

// The true fringe maximum and minimum lie outside the sampled count range. Pick
// them so the unwrapped phase is as smooth as possible: a wrong extreme leaves
// kinks near every turning point of the fringe.
fn fringe_extremes(voltages: &[f64], counts: &[f64], c_max: f64, c_min: f64) -> Result<(f64, f64)> {
    let roughness = || Roughness { voltages, counts, c_max, c_min };
    let reach = c_max - c_min;
    // The landscape is piecewise smooth with branch jumps: screen a
    // log-spaced grid of offsets before polishing.
    let scales: Vec<f64> = (1..8).map(|k| reach * 10f64.powi(-k)).collect();
    let mut screened: Vec<(f64, Vec<f64>)> = Vec::new();
    for &hi in &scales {
        for &lo in &scales {
            let offsets = vec![hi, lo];
            let cost = roughness().cost(&offsets).unwrap_or(f64::MAX);
            screened.push((cost, offsets));
        }
    }
    screened.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Parabolas through the samples around the observed extremes land inside
    // the narrow well of the true solution; the best grid cell is the fallback.
    let floor = 1e-9 * reach;
    let vertex_offsets = vec![
        extreme_vertex(voltages, counts, true).map_or(floor, |hi| (hi - c_max).max(floor)),
        extreme_vertex(voltages, counts, false).map_or(floor, |lo| (c_min - lo).max(floor)),
    ];
    let starts = [vertex_offsets, screened.swap_remove(0).1];
    let mut best = (f64::INFINITY, starts[0].clone());
    for start in starts {
        let mut point = start;
        // restarting from a fresh simplex gets past early stalls
        for _ in 0..3 {
            let step = point.iter().map(|z| 0.05 * z.abs()).fold(1e-9 * c_max, f64::max);
            let simplex = vec![point.clone(), vec![point[0] + step, point[1]], vec![point[0], point[1] + step]];
            let solver = NelderMead::new(simplex)
                .with_sd_tolerance(0.0)
                .map_err(|e| Error::Calibration(e.to_string()))?;
            let result = Executor::new(roughness(), solver)
                .configure(|state| state.max_iters(1500))
                .run()
                .map_err(|e| Error::Calibration(e.to_string()))?;
            let state = result.state();
            if let Some(p) = state.get_best_param() {
                point = p.clone();
            }
            if state.get_best_cost() < best.0 {
                best = (state.get_best_cost(), point.clone());
            }
        }
    }
    let best = best.1;
    Ok(Roughness::extremes(c_max, c_min, &best))
}

// Vertex of the parabola through the highest (or lowest) sample and its two
// neighbours; `None` when the extreme sits at either end of the scan.
fn extreme_vertex(voltages: &[f64], counts: &[f64], highest: bool) -> Option<f64> {
    let sign = if highest { 1.0 } else { -1.0 };
    let m = (0..counts.len()).max_by(|&a, &b| (sign * counts[a]).total_cmp(&(sign * counts[b])))?;
    if m == 0 || m + 1 == counts.len() {
        return None;
    }
    let (x0, x1, x2) = (voltages[m - 1], voltages[m], voltages[m + 1]);
    let (y0, y1, y2) = (counts[m - 1], counts[m], counts[m + 1]);
    let slope_01 = (y1 - y0) / (x1 - x0);
    let a = ((y2 - y1) / (x2 - x1) - slope_01) / (x2 - x0);
    if a == 0.0 {
        return None;
    }
    let b = slope_01 - a * (x0 + x1);
    let c = y0 - a * x0 * x0 - b * x0;
    Some(c - b * b / (4.0 * a))
}

struct Roughness<'a> {
    voltages: &'a [f64],
    counts: &'a [f64],
    c_max: f64,
    c_min: f64,
}

impl Roughness<'_> {
    // (amplitude, visibility) for offsets beyond the observed extremes
    fn extremes(c_max: f64, c_min: f64, offsets: &[f64]) -> (f64, f64) {
        // a sampled fringe misses its true extremes by a few percent at most
        let reach = 0.1 * (c_max - c_min);
        let hi = c_max + offsets[0].abs().min(reach);
        let lo = (c_min - offsets[1].abs().min(reach)).max(0.0);
        ((hi + lo) / 2.0, (hi - lo) / (hi + lo))
    }
}

impl CostFunction for Roughness<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, offsets: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let (amplitude, visibility) = Self::extremes(self.c_max, self.c_min, offsets);
        Ok(match unwrap_raw(self.voltages, self.counts, amplitude, visibility) {
            Ok(phases) => roughness(self.voltages, &phases),
            Err(_) => f64::MAX,
        })
    }
}

fn unwrap(voltages: &[f64], counts: &[f64], amplitude: f64, visibility: f64) -> Result<Vec<f64>> {
    Ok(isotonic(&unwrap_raw(voltages, counts, amplitude, visibility)?))
}

const UNWRAP_BEAM: usize = 16;

// Unwraps principal phases into a continuous, mostly rising sequence. Near a
// fringe extremum both branches fit the data, so a small beam of candidate
// sequences is kept and ranked by accumulated curvature change (squared third
// divided differences); noise may still cause small backward steps.
fn unwrap_raw(voltages: &[f64], counts: &[f64], amplitude: f64, visibility: f64) -> Result<Vec<f64>> {
    let principal: Vec<f64> = counts
        .iter()
        .map(|&c| ((c / amplitude - 1.0) / visibility).clamp(-1.0, 1.0).acos())
        .collect();
    // falling counts suggest a phase in (0, pi), rising counts one in (pi, 2 pi)
    let firsts = if counts[1] < counts[0] {
        [principal[0], TAU - principal[0]]
    } else {
        [TAU - principal[0], principal[0]]
    };
    // Each track keeps its score, its last four phases (newest last) and a
    // link into `nodes`. A track reflected about pi fits the counts equally
    // well, so tracks are kept rising: one that falls below its start is
    // reflected, and the node records that its ancestors are in the other frame.
    let mut nodes: Vec<Node> = Vec::with_capacity(2 * UNWRAP_BEAM * principal.len());
    let mut beam: Vec<Track> = firsts
        .iter()
        .map(|&p| {
            nodes.push(Node { parent: usize::MAX, phase: p, reflected: false });
            Track { score: 0.0, first: p, tail: [0.0, 0.0, 0.0, p], node: nodes.len() - 1 }
        })
        .collect();
    let mut next: Vec<Track> = Vec::with_capacity(2 * UNWRAP_BEAM);
    for i in 1..principal.len() {
        next.clear();
        for track in &beam {
            let previous = track.tail[3];
            let predicted = predict(voltages, track, i);
            let mut candidates = [f64::NAN; 8];
            let mut found = 0;
            for c in branches(previous, principal[i]) {
                if c >= previous - FRAC_PI_2 && c - previous <= PI {
                    candidates[found] = c;
                    found += 1;
                }
            }
            let candidates = &mut candidates[..found];
            // nearest first; near-ties continue upward
            candidates.sort_by(|a, b| {
                let (da, db) = ((a - predicted).abs(), (b - predicted).abs());
                if (da - db).abs() <= 1e-9 {
                    b.total_cmp(a)
                } else {
                    da.total_cmp(&db)
                }
            });
            for &c in candidates.iter().take(2) {
                let mut tail = [track.tail[1], track.tail[2], track.tail[3], c];
                let added = if i >= 3 { third_difference(&voltages[i - 3..=i], &tail).powi(2) } else { 0.0 };
                let mut first = track.first;
                let reflected = c < first;
                if reflected {
                    tail = tail.map(|p| TAU - p);
                    first = TAU - first;
                }
                nodes.push(Node { parent: track.node, phase: tail[3], reflected });
                next.push(Track { score: track.score + added, first, tail, node: nodes.len() - 1 });
            }
        }
        if next.is_empty() {
            return Err(Error::Calibration(format!(
                "phase step between {} V and {} V exceeds pi; the scan is too coarse to unwrap",
                voltages[i - 1],
                voltages[i]
            )));
        }
        // stable sort keeps the preferred branch first among equals
        next.sort_by(|a, b| a.score.total_cmp(&b.score));
        next.dedup_by(|a, b| a.first == b.first && a.tail == b.tail);
        next.truncate(UNWRAP_BEAM);
        std::mem::swap(&mut beam, &mut next);
    }
    let mut phases = vec![0.0; principal.len()];
    let (mut node, mut flip) = (beam[0].node, false);
    for slot in phases.iter_mut().rev() {
        let Node { parent, phase, reflected } = nodes[node];
        *slot = if flip { TAU - phase } else { phase };
        flip ^= reflected;
        node = parent;
    }
    Ok(phases)
}

struct Node {
    parent: usize,
    phase: f64,
    reflected: bool,
}

struct Track {
    score: f64,
    first: f64,
    tail: [f64; 4],
    node: usize,
}

// Extrapolated phase at sample `i`: quadratic through the last three phases,
// linear (never falling) through two, flat after one.
fn predict(voltages: &[f64], path: &Track, i: usize) -> f64 {
    let previous = path.tail[3];
    if i >= 3 {
        let (x, x0, x1, x2) = (voltages[i], voltages[i - 1], voltages[i - 2], voltages[i - 3]);
        let (y0, y1, y2) = (previous, path.tail[2], path.tail[1]);
        let quad = y0 * (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
            + y1 * (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
            + y2 * (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1));
        quad.max(previous)
    } else if i == 2 {
        let step = (previous - path.first) / (voltages[1] - voltages[0]);
        previous + step.max(0.0) * (voltages[2] - voltages[1])
    } else {
        previous
    }
}

// Phases equivalent to principal value `theta` near `anchor`.
fn branches(anchor: f64, theta: f64) -> impl Iterator<Item = f64> {
    let base = (anchor / TAU).floor() * TAU;
    [-TAU, 0.0, TAU, 2.0 * TAU]
        .into_iter()
        .flat_map(move |shift| [base + shift + theta, base + shift + TAU - theta])
}

// Third divided difference of four points.
fn third_difference(x: &[f64], y: &[f64]) -> f64 {
    let mut d = [y[0], y[1], y[2], y[3]];
    for k in 1..=3 {
        for j in 0..4 - k {
            d[j] = (d[j + 1] - d[j]) / (x[j + k] - x[j]);
        }
    }
    d[0]
}

// Sum of squared third divided differences, relative to the squared phase
// span so that flattening the curve does not pay.
fn roughness(voltages: &[f64], phases: &[f64]) -> f64 {
    let span = (phases[phases.len() - 1] - phases[0]).abs().max(1e-9);
    let mut d = phases.to_vec();
    for k in 1..=3 {
        d = d
            .windows(2)
            .enumerate()
            .map(|(i, w)| (w[1] - w[0]) / (voltages[i + k] - voltages[i]))
            .collect();
    }
    d.iter().map(|x| x * x).sum::<f64>() / (span * span)
}

// Pool-adjacent-violators: least-squares non-decreasing fit.
fn isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * n1 as f64 + m2 * n2 as f64) / (n1 + n2) as f64, n1 + n2));
        }
    }
    blocks.into_iter().flat_map(|(m, n)| std::iter::repeat_n(m, n)).collect()
}

/// Voltages of the two working points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorkingPoints {
    /// Phase a multiple of pi: heralded `|1,1>`.
    pub product_v: f64,
    /// Phase pi/2 plus a multiple of pi: heralded N00N state.
    pub noon_v: f64,
}

/// Lowest-voltage settings where the phase is `0 (mod pi)` and `pi/2 (mod pi)`.
pub fn working_points(curve: &CalibrationCurve) -> Result<WorkingPoints> {
    let (lo, hi) = curve.phase_range();
    let (start_v, start) = (curve.voltages[0], curve.phases[0]);
    let lowest = |offset: f64| -> Option<f64> {
        // near a flat turning point a tiny phase error moves the exact
        // crossing far, so a target this close to the first sample sits on it
        let nearest = offset + ((start - offset) / PI).round() * PI;
        if (start - nearest).abs() <= EDGE_TOLERANCE_RAD {
            return Some(start_v);
        }
        let first = ((lo - EDGE_TOLERANCE_RAD - offset) / PI).ceil() as i64;
        let last = ((hi + EDGE_TOLERANCE_RAD - offset) / PI).floor() as i64;
        (first..=last)
            .filter_map(|m| curve.voltage_for_phase((offset + m as f64 * PI).clamp(lo, hi)))
            .min_by(f64::total_cmp)
    };
    match (lowest(0.0), lowest(FRAC_PI_2)) {
        (Some(product_v), Some(noon_v)) => Ok(WorkingPoints { product_v, noon_v }),
        _ => Err(Error::SpanTooSmall(hi - lo)),
    }
}

/// Synthetic calibration law used by the demo: `pi + (pi/2) (V / 10 V)^2`,
/// giving the product state at 0 V and the N00N state at 10 V.
pub fn demo_phase(voltage: f64) -> f64 {
    PI + FRAC_PI_2 * (voltage / 10.0).powi(2)
}

/// Demo scan voltages: 0 to 20 V in 0.5 V steps.
pub fn demo_voltages() -> Vec<f64> {
    (0..=40).map(|i| f64::from(i) * 0.5).collect()
}

/// Noiseless single-photon counts `A (1 + V cos phase(voltage))`.
pub fn synthetic_scan(voltages: &[f64], amplitude: f64, visibility: f64, phase: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    voltages
        .iter()
        .map(|&v| (v, amplitude * (1.0 + visibility * phase(v).cos())))
        .collect()
}

/// Replaces each count by a Poisson draw with that mean.
pub fn with_poisson_noise<R: Rng + ?Sized>(scan: &[(f64, f64)], rng: &mut R) -> Vec<(f64, f64)> {
    scan.iter()
        .map(|&(v, mean)| {
            let counts = match Poisson::new(mean) {
                Ok(d) => d.sample(rng),
                Err(_) => 0.0,
            };
            (v, counts)
        })
        .collect()
}
