//! Decoder energy and time benchmarking.
//!
//! [`meter`] measures the energy of a decoder run from cumulative energy
//! counters, [`quality`] scores decoded output with YUV-PSNR, [`bd`] turns
//! rate, energy or time curves into Bjontegaard-Delta percentages,
//! [`pipeline`] runs an experiment plan end to end and [`report`] renders
//! the results as tables and plot-ready CSV.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bd;
pub mod meter;
pub mod pipeline;
pub mod quality;
pub mod report;
