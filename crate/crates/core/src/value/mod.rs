//! Superhedging prices and robust primal/dual utility values on lattices.

mod dual;
mod lattice;
mod primal;
mod superhedge;
mod surface;
mod utility;

pub use dual::dual_value;
pub use lattice::{
    trinomial, Curve, DensityGrid, Interpolation, LatticeConfig, StateGrid, StateLattice, Stencil, UniformGrid,
    WealthGrid,
};
pub use primal::{initial_fractions, primal_value};
pub use superhedge::{
    audit_superhedge, audit_superhedge_exhaustive, superhedge, verify_superhedge, Payoff, SuperhedgeReport,
    MAX_EXHAUSTIVE_STEPS,
};
pub use surface::{Axis, Slice, SurfaceKind, ValueSurface};
pub use utility::{eval_conjugate, UtilitySpec};
