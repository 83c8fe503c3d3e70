#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod controller;
pub mod dsp;
pub mod exec;
pub mod identification;
pub mod metrics;
pub mod plantsim;
pub mod plot;
pub mod transmission;
