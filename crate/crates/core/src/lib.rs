//! Energy-optimal periodic gaits for a planar five-link biped.
//!
//! The crate covers the whole pipeline: the rigid-body model with impacts,
//! forward-mode derivatives, direct-collocation transcription, an
//! interior-point NLP solver, closed-loop hybrid simulation, and the
//! robustness/efficiency sweeps built on top of them.

pub mod analysis;
pub mod autodiff;
pub mod model;
pub mod nlpsolve;
pub mod simulate;
pub mod transcription;

#[cfg(test)]
mod test_support;
