//! Softly masked language modelling for symbolic music.
//!
//! Notes are a fixed-size set of slots with pitch, onset and duration
//! attributes. Each slot carries a prior: for every attribute, the set of
//! values it may take. Training widens the priors of real excerpts at random
//! and teaches a transformer encoder to recover the truth; generation compiles
//! user constraints into priors and samples attributes one at a time, so every
//! output satisfies the constraints by construction.

pub mod exec;
pub mod numerics;
pub mod rng;
pub mod score;

pub use exec::Execution;
pub mod io;
pub mod masking;
pub mod net;
pub mod midi;
pub mod sampler;
pub mod train;
