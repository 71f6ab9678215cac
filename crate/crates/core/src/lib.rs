//! PoD-TPI: phase I dose finding with pending toxicity outcomes.
//!
//! The complete-data mTPI-2 rule lives in [`mtpi2`]. [`toxmodel`] turns
//! pending patients into a posterior over the decision mTPI-2 would make
//! once their outcomes are known, and [`engine`] applies the suspension and
//! safety rules on top. [`mtdselect`] picks the MTD at the end of a trial
//! and [`simulator`] runs operating-characteristic campaigns.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod mtdselect;
pub mod mtpi2;
pub mod simulator;
pub mod special;
pub mod toxmodel;
pub mod trial;

pub use error::{Error, Result};
pub use trial::{
    BetaPrior, Decision, DesignParams, DoseTally, Event, Outcome, PatientRecord, SuspendReason,
    TrialState, TrialStatus,
};
