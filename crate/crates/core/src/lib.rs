//! Simulation and calibration toolkit for arrays of frequency- and
//! sensitivity-tunable superconducting microresonators (FASTR) read out
//! through a quantum-flux-parametron shift register.
//!
//! The crate is organised by subsystem:
//!
//! * [`squid`]: single-device physics: SQUID inductance, resonance
//!   frequency, S21 transmission and its fit, TLS loss, Duffing shift.
//! * [`calibration`]: bias selection on the two-SQUID frequency surface
//!   and homogenisation of a whole array onto a frequency grid.
//! * [`shift_register`]: three-phase clocked QFP shift register model.
//! * [`readout`]: multiplexed readout chain, noise, discrimination and
//!   the SNR / bit-error budget.
//! * [`metrology`]: population curves, flux-noise runs, Welch PSD and
//!   the 1/f + white noise fit.
//! * [`planner`]: array scaling table and frequency grid allocation.
//! * [`io`]: the JSON and CSV exchange formats.

pub mod calibration;
mod error;
mod fit;
mod s21_fit;
pub mod io;
pub mod metrology;
pub mod planner;
pub mod readout;
pub mod shift_register;
pub mod squid;
pub mod units;

pub use error::{Error, Result};
pub use num_complex::Complex64;
