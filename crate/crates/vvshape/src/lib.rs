//! Geometric constellation shaping over a Wiener phase noise channel with a
//! differentiable carrier phase recovery stage in the training loop.
//!
//! The crate is organized as a pipeline. [`constellation`] maps bit labels to
//! complex symbols, [`channel`] applies additive noise and a phase random
//! walk, [`cpe`] recovers the carrier phase (classic phase-raising or the
//! soft ring-selection variant), [`demapper`] turns derotated symbols into
//! bit LLRs, and [`trainer`] optimizes constellation, selection rings, and
//! demapper jointly by backpropagating through the whole chain. [`sweep`]
//! evaluates trained systems on a grid of operating points and [`checks`]
//! bundles fast self-tests for the command line.
//!
//! Everything that must be differentiated is written once, generically over
//! [`autodiff::Engine`], and runs on two backends: a recording [`autodiff::Tape`]
//! for gradients and a plain f64 evaluator for fast simulation. This keeps
//! the trained forward path and the validation path the same code.

pub mod autodiff;
pub mod channel;
pub mod checks;
pub mod constellation;
pub mod cpe;
pub mod demapper;

pub mod seeding;
pub mod sweep;
pub mod trainer;
pub mod tsv;
