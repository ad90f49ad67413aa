//! Digital twin of a heralded photon-number-state generator.
//!
//! Two photon-pair sources feed a phase-tunable Mach-Zehnder interferometer;
//! detecting both 1310 nm partners heralds a two-photon state on the 1560 nm
//! modes that ranges from the product state `|11>` to the N00N state
//! `(|20> - |02>)/sqrt(2)`.
//!
//! * [`fock`] exact multimode Fock-state engine
//! * [`chip`] the source / WDM / MZI pipeline and closed-form fringe laws
//! * [`calibration`] voltage to phase calibration curve
//! * [`montecarlo`] pulse-by-pulse detection simulation producing time tags
//! * [`tdc`] time-tag ingestion, delay histograms and coincidence counting
//! * [`fringe`] weighted fringe fits, visibility and fidelity

pub mod calibration;
pub mod chip;
pub mod config;
pub mod error;
pub mod fock;
pub mod fringe;
pub mod montecarlo;
pub mod tdc;

pub use error::{Error, Result};
