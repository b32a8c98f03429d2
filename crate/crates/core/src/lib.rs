//! Markov-modulated random affine recursions R_n = A_n R_{n-1} + B_n:
//! model validation, exact enumeration, Monte Carlo simulation, regime
//! classification, degeneracy detection and limit laws.

pub mod classify;
pub mod degeneracy;
pub mod examples;
pub mod law;
pub mod limits;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod simulate;

pub use law::{Atom, DiscreteLaw};
pub use model::{EdgeAtom, EdgeLaw, InitialLaw, Model, ModelError, ModelSpec, ValidationErrors};
