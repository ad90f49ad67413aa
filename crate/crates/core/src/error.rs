use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mode count must be at least 1")]
    NoModes,
    #[error("mode {mode} out of range for a {mode_count}-mode state")]
    ModeOutOfRange { mode: usize, mode_count: usize },
    #[error("occupation pattern has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("occupation {occupation:?} exceeds cutoff {cutoff}")]
    AboveCutoff { occupation: Vec<u32>, cutoff: u32 },
    #[error("beamsplitter needs two distinct modes, got {0} twice")]
    IdenticalModes(usize),
    #[error("transmissivity {0} outside [0, 1]")]
    Transmissivity(f64),
    #[error("state is not normalized (norm^2 = {0})")]
    NotNormalized(f64),
    #[error("state has zero norm")]
    ZeroState,
    #[error("herald modes must be distinct and in range")]
    HeraldModes,
    #[error("impossible heralding: pattern probability {0:e} below 1e-14")]
    ImpossibleHeralding(f64),
    #[error("pair amplitude {0} must satisfy 0 <= lambda < 1")]
    PairAmplitude(f64),
    #[error("unknown wavelength tag {0} nm (expected 1310 or 1560)")]
    UnknownWavelength(u32),
    #[error("wavelength routing needs exactly two 1310 nm and two 1560 nm modes")]
    WdmRouting,
    #[error("extinction {0} dB must be non-negative")]
    Extinction(f64),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownConfigKeys(Vec<String>),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("voltage {voltage} V outside calibrated range [{min}, {max}] V")]
    VoltageOutOfRange { voltage: f64, min: f64, max: f64 },
    #[error("no modulation in calibration scan")]
    NoModulation,
    #[error("phase span {0:.3} rad too small to contain both working points")]
    SpanTooSmall(f64),
    #[error("pulse count must be at least 1")]
    NoPulses,
    #[error("{pulses} pulses at {period_ps} ps overflow the 64-bit timestamp range")]
    TimestampOverflow { pulses: u64, period_ps: i64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate record {channel} at {timestamp_ps} ps")]
    DuplicateRecord { line: usize, channel: String, timestamp_ps: i64 },
    #[error("bin width {bin_width_ps} ps incompatible with clock period {period_ps} ps")]
    BinWidth { bin_width_ps: i64, period_ps: i64 },
    #[error("fit: {0}")]
    Fit(String),
    #[error("visibility undefined when both counts are zero")]
    ZeroCounts,
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Short machine-readable category used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::UnknownConfigKeys(_) => "config",
            Error::Calibration(_)
            | Error::VoltageOutOfRange { .. }
            | Error::NoModulation
            | Error::SpanTooSmall(_) => "calibration",
            Error::Parse { .. } | Error::DuplicateRecord { .. } => "parse",
            Error::Fit(_) | Error::ZeroCounts => "fit",
            Error::Io(_) => "io",
            Error::ImpossibleHeralding(_) => "herald",
            Error::NoPulses | Error::TimestampOverflow { .. } | Error::BinWidth { .. } => "input",
            _ => "state",
        }
    }
}
