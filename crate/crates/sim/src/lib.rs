//! Experiment harness for the robust precoding library: configuration,
//! grid runs, policy training, complexity tables and CSV output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod flops;
pub mod report;
pub mod selftest;
pub mod training;
