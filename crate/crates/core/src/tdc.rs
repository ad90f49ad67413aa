//! Time-tag streams and the start-stop coincidence analysis run on them.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

/// Detector channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Channel {
    H1,
    H2,
    D1,
    D2,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::H1, Channel::H2, Channel::D1, Channel::D2];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Bit of this channel in a per-pulse click mask.
    pub fn bit(self) -> u8 {
        1 << self.index()
    }

    pub fn label(self) -> &'static str {
        match self {
            Channel::H1 => "H1",
            Channel::H2 => "H2",
            Channel::D1 => "D1",
            Channel::D2 => "D2",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "H1" => Ok(Channel::H1),
            "H2" => Ok(Channel::H2),
            "D1" => Ok(Channel::D1),
            "D2" => Ok(Channel::D2),
            other => Err(format!("unknown channel {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeTag {
    pub timestamp_ps: i64,
    pub channel: Channel,
}

/// Metadata key holding the clock period.
pub const CLOCK_PERIOD_KEY: &str = "clock_period_ps";

/// Ordered detection records plus the clock they were taken against.
///
/// A stream read from an empty file has `clock_period_ps == 0`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TimeTagStream {
    pub clock_period_ps: i64,
    pub records: Vec<TimeTag>,
    /// Free-form `key=value` metadata, excluding the clock period.
    pub metadata: BTreeMap<String, String>,
}

/// Result of [`validate_stream`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedStream {
    pub stream: TimeTagStream,
    /// Records that appeared before an earlier timestamp in the input.
    pub out_of_order: usize,
}

/// One unparsed tag line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub line: usize,
    pub channel: String,
    pub timestamp: String,
}

impl TimeTagStream {
    pub fn new(clock_period_ps: i64) -> Self {
        Self {
            clock_period_ps,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Index of the clock period nearest to `timestamp_ps`.
    pub fn pulse_of(&self, timestamp_ps: i64) -> i64 {
        nearest_pulse(timestamp_ps, self.clock_period_ps)
    }

    /// Click masks keyed by pulse index.
    pub fn pulse_masks(&self) -> BTreeMap<i64, u8> {
        let mut masks = BTreeMap::new();
        for tag in &self.records {
            *masks.entry(self.pulse_of(tag.timestamp_ps)).or_insert(0u8) |= tag.channel.bit();
        }
        masks
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {CLOCK_PERIOD_KEY}={}", self.clock_period_ps)?;
        for (key, value) in &self.metadata {
            writeln!(out, "# {key}={value}")?;
        }
        writeln!(out, "channel,timestamp_ps")?;
        for tag in &self.records {
            writeln!(out, "{},{}", tag.channel, tag.timestamp_ps)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Parses a tag file, sorting records and rejecting malformed lines.
    pub fn parse(text: &str) -> Result<ValidatedStream> {
        let mut clock_period_ps = None;
        let mut metadata = BTreeMap::new();
        let mut raw = Vec::new();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let Some((key, value)) = comment.trim().split_once('=') else {
                    continue;
                };
                let (key, value) = (key.trim(), value.trim());
                if key == CLOCK_PERIOD_KEY {
                    let period = value.parse::<i64>().ok().filter(|&p| p > 0).ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: format!("{CLOCK_PERIOD_KEY} must be a positive integer, got {value:?}"),
                    })?;
                    clock_period_ps = Some(period);
                } else {
                    metadata.insert(key.to_string(), value.to_string());
                }
                continue;
            }
            if !header_seen {
                if line.replace(' ', "") != "channel,timestamp_ps" {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("expected header \"channel,timestamp_ps\", got {line:?}"),
                    });
                }
                header_seen = true;
                continue;
            }
            let (channel, timestamp) = line.split_once(',').ok_or_else(|| Error::Parse {
                line: line_no,
                message: "expected two comma-separated fields".to_string(),
            })?;
            raw.push(RawRecord {
                line: line_no,
                channel: channel.trim().to_string(),
                timestamp: timestamp.trim().to_string(),
            });
        }
        let clock_period_ps = match clock_period_ps {
            Some(p) => p,
            None if raw.is_empty() => 0,
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("missing mandatory metadata \"# {CLOCK_PERIOD_KEY}=...\""),
                })
            }
        };
        let mut validated = validate_stream(clock_period_ps, raw)?;
        validated.stream.metadata = metadata;
        Ok(validated)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ValidatedStream> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn nearest_pulse(timestamp_ps: i64, period_ps: i64) -> i64 {
    (timestamp_ps + period_ps / 2).div_euclid(period_ps)
}

/// Turns raw records into a sorted stream; duplicate `(channel, timestamp)` pairs are rejected.
pub fn validate_stream(clock_period_ps: i64, raw: Vec<RawRecord>) -> Result<ValidatedStream> {
    let mut tagged = Vec::with_capacity(raw.len());
    for record in raw {
        let channel = record.channel.parse::<Channel>().map_err(|message| Error::Parse {
            line: record.line,
            message,
        })?;
        let timestamp_ps = record.timestamp.parse::<i64>().map_err(|_| Error::Parse {
            line: record.line,
            message: format!("timestamp {:?} is not an integer number of picoseconds", record.timestamp),
        })?;
        if timestamp_ps < 0 {
            return Err(Error::Parse {
                line: record.line,
                message: format!("negative timestamp {timestamp_ps}"),
            });
        }
        tagged.push((record.line, TimeTag { timestamp_ps, channel }));
    }
    let out_of_order = tagged
        .windows(2)
        .filter(|w| w[1].1.timestamp_ps < w[0].1.timestamp_ps)
        .count();
    tagged.sort_by_key(|&(line, tag)| (tag, line));
    for w in tagged.windows(2) {
        if w[0].1 == w[1].1 {
            return Err(Error::DuplicateRecord {
                line: w[1].0,
                channel: w[1].1.channel.to_string(),
                timestamp_ps: w[1].1.timestamp_ps,
            });
        }
    }
    Ok(ValidatedStream {
        stream: TimeTagStream {
            clock_period_ps,
            records: tagged.into_iter().map(|(_, tag)| tag).collect(),
            metadata: BTreeMap::new(),
        },
        out_of_order,
    })
}

/// Which D1/D2 pairs enter the delay histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Qualification {
    None,
    /// Each D click's pulse also holds at least one herald click.
    #[default]
    HeraldSamePulse,
    /// The D1 click's pulse holds clicks on both H1 and H2.
    Full4fold,
}

impl FromStr for Qualification {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Qualification::None),
            "herald_same_pulse" => Ok(Qualification::HeraldSamePulse),
            "full_4fold" => Ok(Qualification::Full4fold),
            other => Err(format!(
                "unknown qualification {other:?} (expected none, herald_same_pulse or full_4fold)"
            )),
        }
    }
}

pub const DEFAULT_BIN_WIDTH_PS: i64 = 100;
pub const DEFAULT_MAX_OFFSET: u32 = 8;

/// Counts integrated over one pulse-offset window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Peak {
    pub offset: i64,
    pub counts: u64,
}

/// Histogram of `t(D2) - t(D1)`.
///
/// Bins are centered on multiples of the bin width and cover
/// `±(max_offset + 1/2)` clock periods, so each of the `2 * max_offset + 1`
/// peak windows of width one period is fully binned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayHistogram {
    pub bin_width_ps: i64,
    pub clock_period_ps: i64,
    pub max_offset: u32,
    /// Index of the bin centered on zero delay.
    pub zero_bin: usize,
    pub counts: Vec<u64>,
    pub peaks: Vec<Peak>,
}

impl DelayHistogram {
    pub fn bin_center(&self, bin: usize) -> i64 {
        (bin as i64 - self.zero_bin as i64) * self.bin_width_ps
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn peak(&self, offset: i64) -> Option<u64> {
        self.peaks.iter().find(|p| p.offset == offset).map(|p| p.counts)
    }

    /// Sum of all peaks with nonzero offset.
    pub fn delayed_total(&self) -> u64 {
        self.peaks.iter().filter(|p| p.offset != 0).map(|p| p.counts).sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin_center_ps,counts")?;
        for (bin, count) in self.counts.iter().enumerate() {
            writeln!(out, "{},{}", self.bin_center(bin), count)?;
        }
        Ok(())
    }
}

/// Builds the start (D1) to stop (D2) delay histogram.
pub fn delay_histogram(
    stream: &TimeTagStream,
    qualification: Qualification,
    bin_width_ps: i64,
    max_offset: u32,
) -> Result<DelayHistogram> {
    let period = stream.clock_period_ps;
    if bin_width_ps <= 0 || period <= 0 || 2 * bin_width_ps > period {
        return Err(Error::BinWidth {
            bin_width_ps,
            period_ps: period,
        });
    }
    let masks = stream.pulse_masks();
    let herald_bits = Channel::H1.bit() | Channel::H2.bit();
    let qualified = |tag: &TimeTag| -> bool {
        let mask = masks[&stream.pulse_of(tag.timestamp_ps)];
        match qualification {
            Qualification::None => true,
            Qualification::HeraldSamePulse => mask & herald_bits != 0,
            Qualification::Full4fold => tag.channel != Channel::D1 || mask & herald_bits == herald_bits,
        }
    };
    let starts: Vec<i64> = stream
        .records
        .iter()
        .filter(|t| t.channel == Channel::D1 && qualified(t))
        .map(|t| t.timestamp_ps)
        .collect();
    let stops: Vec<i64> = stream
        .records
        .iter()
        .filter(|t| {
            t.channel == Channel::D2 && (qualification != Qualification::HeraldSamePulse || qualified(t))
        })
        .map(|t| t.timestamp_ps)
        .collect();

    let reach = i64::from(max_offset) * period + period / 2;
    let half_bins = (reach + bin_width_ps / 2) / bin_width_ps;
    let zero_bin = half_bins as usize;
    let mut counts = vec![0u64; 2 * zero_bin + 1];
    let limit = half_bins * bin_width_ps + bin_width_ps / 2;
    let mut first = 0;
    for &start in &starts {
        while first < stops.len() && stops[first] - start < -limit {
            first += 1;
        }
        for &stop in &stops[first..] {
            let delay = stop - start;
            if delay > limit {
                break;
            }
            let bin = (delay + bin_width_ps / 2).div_euclid(bin_width_ps) + half_bins;
            if (0..counts.len() as i64).contains(&bin) {
                counts[bin as usize] += 1;
            }
        }
    }

    let mut peaks: Vec<Peak> = (-i64::from(max_offset)..=i64::from(max_offset))
        .map(|offset| Peak { offset, counts: 0 })
        .collect();
    for (bin, &count) in counts.iter().enumerate() {
        let center = (bin as i64 - half_bins) * bin_width_ps;
        let offset = nearest_pulse(center, period);
        if offset.unsigned_abs() <= u64::from(max_offset) {
            peaks[(offset + i64::from(max_offset)) as usize].counts += count;
        }
    }
    Ok(DelayHistogram {
        bin_width_ps,
        clock_period_ps: period,
        max_offset,
        zero_bin,
        counts,
        peaks,
    })
}

/// Number of pulses with clicks on all four channels.
pub fn fourfold_counts(stream: &TimeTagStream) -> u64 {
    if stream.clock_period_ps <= 0 {
        return 0;
    }
    stream.pulse_masks().values().filter(|&&m| m == 0b1111).count() as u64
}

/// Heralded single-photon events: exactly one herald and exactly one output
/// detector fired, with the output on the side that is bright at zero phase
/// (H1 with D2, H2 with D1).
pub fn heralded_single_counts(stream: &TimeTagStream) -> u64 {
    if stream.clock_period_ps <= 0 {
        return 0;
    }
    let h1_d2 = Channel::H1.bit() | Channel::D2.bit();
    let h2_d1 = Channel::H2.bit() | Channel::D1.bit();
    stream
        .pulse_masks()
        .values()
        .filter(|&&m| m == h1_d2 || m == h2_d1)
        .count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAU: i64 = 13158;

    fn stream(tags: &[(Channel, i64)]) -> TimeTagStream {
        let mut s = TimeTagStream::new(TAU);
        s.records = tags
            .iter()
            .map(|&(channel, pulse)| TimeTag {
                channel,
                timestamp_ps: pulse * TAU,
            })
            .collect();
        s.records.sort();
        s
    }

    use Channel::{D1, D2, H1, H2};

    #[test]
    fn empty_file_is_valid() {
        let v = TimeTagStream::parse("").unwrap();
        assert!(v.stream.is_empty());
        assert_eq!(v.out_of_order, 0);
    }

    #[test]
    fn sorts_and_counts_out_of_order() {
        let text = "# clock_period_ps=13158\n# seed=7\nchannel,timestamp_ps\nD1,300\nH1,100\nH2,200\nD2,50\n";
        let v = TimeTagStream::parse(text).unwrap();
        assert_eq!(v.out_of_order, 2);
        let times: Vec<i64> = v.stream.records.iter().map(|t| t.timestamp_ps).collect();
        assert_eq!(times, vec![50, 100, 200, 300]);
        assert_eq!(v.stream.metadata["seed"], "7");
        assert_eq!(v.stream.clock_period_ps, 13158);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad_channel = "# clock_period_ps=100\nchannel,timestamp_ps\nH1,0\nX1,5\n";
        match TimeTagStream::parse(bad_channel) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("X1"));
            }
            other => panic!("{other:?}"),
        }
        let bad_time = "# clock_period_ps=100\nchannel,timestamp_ps\nH1,1.5\n";
        assert!(matches!(TimeTagStream::parse(bad_time), Err(Error::Parse { line: 3, .. })));
        let duplicate = "# clock_period_ps=100\nchannel,timestamp_ps\nH1,7\nD1,7\nH1,7\n";
        assert!(matches!(
            TimeTagStream::parse(duplicate),
            Err(Error::DuplicateRecord { line: 5, .. })
        ));
        let no_clock = "channel,timestamp_ps\nH1,7\n";
        assert!(matches!(TimeTagStream::parse(no_clock), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let mut s = stream(&[(H1, 0), (D1, 0), (D2, 3), (H2, 9)]);
        s.metadata.insert("pulses".into(), "10".into());
        let back = TimeTagStream::parse(&s.to_csv_string()).unwrap();
        assert_eq!(back.stream, s);
        assert_eq!(back.out_of_order, 0);
    }

    #[test]
    fn same_pulse_pair_lands_at_zero() {
        let s = stream(&[(D1, 5), (D2, 5)]);
        let h = delay_histogram(&s, Qualification::None, 100, 8).unwrap();
        assert_eq!(h.total(), 1);
        assert_eq!(h.counts[h.zero_bin], 1);
        assert_eq!(h.peak(0), Some(1));
    }

    #[test]
    fn delayed_pair_lands_at_two_periods() {
        let s = stream(&[(H1, 5), (D1, 5), (H2, 7), (D2, 7)]);
        let h = delay_histogram(&s, Qualification::HeraldSamePulse, 100, 8).unwrap();
        assert_eq!(h.peak(2), Some(1));
        assert_eq!(h.total(), 1);
        let bin = h.counts.iter().position(|&c| c == 1).unwrap();
        assert!((h.bin_center(bin) - 2 * TAU).abs() <= 50);
        // no herald in D2's pulse
        let s = stream(&[(H1, 5), (D1, 5), (D2, 7)]);
        let h = delay_histogram(&s, Qualification::HeraldSamePulse, 100, 8).unwrap();
        assert_eq!(h.total(), 0);
        let h = delay_histogram(&s, Qualification::None, 100, 8).unwrap();
        assert_eq!(h.peak(2), Some(1));
    }

    #[test]
    fn full_fourfold_condition_on_start_pulse() {
        let s = stream(&[(H1, 1), (H2, 1), (D1, 1), (D2, 1), (H1, 4), (D1, 4), (D2, 4), (D2, 2)]);
        let h = delay_histogram(&s, Qualification::Full4fold, 100, 8).unwrap();
        assert_eq!(h.peak(0), Some(1));
        assert_eq!(h.peak(1), Some(1));
        assert_eq!(h.peak(3), Some(1));
        assert_eq!(h.total(), 3);
        assert_eq!(fourfold_counts(&s), 1);
    }

    #[test]
    fn out_of_range_pairs_are_dropped() {
        let s = stream(&[(D1, 0), (D2, 9), (D2, 8)]);
        let h = delay_histogram(&s, Qualification::None, 100, 8).unwrap();
        assert_eq!(h.total(), 1);
        assert_eq!(h.peak(8), Some(1));
    }

    #[test]
    fn bin_width_checks() {
        let s = stream(&[]);
        for bad in [0, -5, TAU] {
            assert!(matches!(
                delay_histogram(&s, Qualification::None, bad, 8),
                Err(Error::BinWidth { .. })
            ));
        }
        let h = delay_histogram(&s, Qualification::None, 100, 2).unwrap();
        assert_eq!(h.peaks.len(), 5);
        // bins tile the range: consecutive centers one width apart, symmetric
        assert_eq!(h.bin_center(0), -h.bin_center(h.counts.len() - 1));
        assert!(h.bin_center(h.counts.len() - 1) + 50 >= 2 * TAU + TAU / 2);
    }

    #[test]
    fn fourfold_and_single_counts() {
        assert_eq!(fourfold_counts(&stream(&[(H1, 3), (H2, 3), (D1, 3), (D2, 3)])), 1);
        assert_eq!(fourfold_counts(&stream(&[(H1, 3), (H2, 3), (H1, 4)])), 0);
        assert_eq!(fourfold_counts(&TimeTagStream::default()), 0);
        let s = stream(&[(H1, 0), (D2, 0), (H2, 1), (D1, 1), (H1, 2), (D1, 2), (H1, 3), (H2, 3), (D2, 3)]);
        assert_eq!(heralded_single_counts(&s), 2);
    }

    #[test]
    fn jittered_tags_round_to_nearest_pulse() {
        let mut s = TimeTagStream::new(TAU);
        s.records = vec![
            TimeTag { channel: D1, timestamp_ps: 10 * TAU - 40 },
            TimeTag { channel: D2, timestamp_ps: 10 * TAU + 70 },
        ];
        let h = delay_histogram(&s, Qualification::None, 100, 8).unwrap();
        assert_eq!(h.peak(0), Some(1));
        assert_eq!(h.counts[h.zero_bin + 1], 1);
    }
}
