//! Benchmarking gradient-based evasion attacks under a per-sample query budget.
//!
//! The pipeline runs in five stages: a zoo of small classifiers is trained
//! ([`zoo`]), every attack ([`attacks`]) runs against every model through a
//! budgeted wrapper ([`tracker`]), per-sample best distances become robustness
//! curves that are compared against the ensemble lower envelope
//! ([`optimality`]), and the resulting scores are ranked and published by
//! [`bench`].

pub mod attacks;
pub mod autodiff;
pub mod bench;
pub mod digest;
pub mod norm;
pub mod optimality;
pub mod tracker;
pub mod zoo;
