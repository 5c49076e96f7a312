//! The nonautonomous system: matrix sequence, two-sided propagator,
//! nonlinear perturbation and orbits.

mod examples;
mod linear;
mod nonlinear;

pub use examples::{make_example, ExampleKind, SaturatingParams};
pub use linear::{propagator, Extension, Generator, LinearSystem, Propagator, MAX_DIRECT_SPAN};
pub use nonlinear::{
    nonlinear_orbit, NonautonomousSystem, NonlinearKind, Nonlinearity, NonlinearityReport, Orbit,
    TANH2_SLOPE_SUP,
};
