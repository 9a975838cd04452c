//! Fault localization toolkit for model verification & validation.
//!
//! Two analysis backends share this crate:
//!
//! * **Reachability ranking** — build the discrete-time reachability graph of a
//!   Time Petri Net ([`tpn`]), find violation states, extract error traces and
//!   rank suspicious transitions by their fault contribution ([`ranking`]).
//!   [`deadlock`] provides the random process/resource test bed and the
//!   efficiency/effectiveness campaign harness.
//! * **Component diagnosis** — model each component of a dataflow system as a
//!   four-state hidden Markov model ([`hmm`], [`diagnosis`]), search an emission
//!   matrix that matches observed behavior, and rank suspect components by
//!   confidence and matching level. [`sim`] provides the random component-system
//!   test bed and the accuracy harness.
//!
//! All randomness is seeded explicitly; identical seeds give identical results,
//! including across the campaign runners' worker pools.

pub mod deadlock;
pub mod diagnosis;
pub mod hmm;
pub mod ranking;
pub mod rng;
pub mod sim;
pub mod tpn;
