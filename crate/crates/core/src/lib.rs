//! Discounted continuous-time Markov decision processes whose costs are
//! bounded below by a weight function.
//!
//! The pipeline is
//!
//! 1. [`model`]: load and validate a finite CTMDP;
//! 2. [`conditions`]: check a drift certificate `(w, ρ, L)` and the optional
//!    Lyapunov certificates that rule out explosion;
//! 3. [`transform`]: reweight the generator by `w` and add a cemetery state;
//! 4. [`reduction`]: turn the transformed model into a total-cost DTMDP;
//! 5. [`solver`]: value iteration, policy evaluation, the occupation-measure
//!    LP and brute-force enumeration on the DTMDP.
//!
//! [`transition`], [`resolvent`] and [`simulator`] provide independent
//! oracles; [`verify`] ties them together.

pub mod conditions;
pub mod corpus;
mod linalg;
pub mod model;
pub mod policy;
pub mod reduction;
pub mod resolvent;
pub mod simulator;
pub mod solver;
pub mod transform;
pub mod transition;
pub mod verify;
