//! Coherent-state propagators from complex classical trajectories: the exact Fock-basis
//! value, the bare semiclassical sum, and a uniform Airy approximation built on the
//! conjugate Bargmann transform that stays finite through phase-space caustics.

pub mod core;
pub mod dynamics;
pub mod model;
pub mod oracle;
pub mod propagators;
pub mod specfun;
pub mod transforms;
