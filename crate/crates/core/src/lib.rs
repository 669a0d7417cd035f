//! Simulation of critical self-similar Markov trees (ssMt).
//!
//! A self-similar Markov tree is a random compact decorated real tree built
//! from a characteristic quadruplet `(sigma2, a, Lambda; alpha)`: a Gaussian
//! coefficient, a drift, a generalized Lévy measure governing moves and
//! births, and a self-similarity index. This crate constructs critical trees
//! branch by branch (Lévy paths, Lamperti time change, Ulam-tree genealogy),
//! computes their natural measures (gamma-length, truncated harmonic), runs
//! the fluctuation-theory estimation the harmonic measure depends on
//! (renewal functions of the spine), and provides statistical verification
//! harnesses: many-to-one identities, martingale constancy, barrier
//! truncation bounds, the spinal-decomposition equivalence test, and the
//! length-to-harmonic measure convergence experiment.
//!
//! Everything is deterministic given a master seed: replicas draw from
//! counter-derived RNG streams so parallel scheduling cannot change results.

pub mod error;
pub mod fluctuation;
pub mod genealogy;
pub mod levy_sim;
pub mod measures;
pub mod numeric;
pub mod quadruplet;
pub mod rng;
pub mod spine;
pub mod stats;
pub mod treefmt;

pub use error::SsmtError;
pub use quadruplet::CharQuadruplet;
