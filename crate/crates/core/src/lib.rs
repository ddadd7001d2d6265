//! Heavy-ball momentum methods for constrained nonsmooth convex problems:
//! projections, objectives, optimizers, runtime invariant checks and trace I/O.

pub mod dataio;
pub mod diagnostics;
pub mod error;
pub mod optimizers;
pub mod problems;
pub mod projections;
pub mod vecmath;
pub mod verify;

pub use error::{Error, Result};
pub use optimizers::{run, EmaConfig, GradientMode, OptimizerKind, RunOutput, RunSpec, Schedule};
pub use problems::{HardFunctionProblem, HingeLossProblem, MaxLinearProblem, ProblemOracle};
pub use projections::FeasibleSet;
pub use vecmath::Vector;

/// RNG used for every seeded computation in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
