//! Direct data-driven state-feedback synthesis for nonlinear systems via
//! their velocity form.
//!
//! The pipeline runs from one measured input–state sequence to a realized
//! nonlinear controller:
//!
//! 1. [`dictionary`] loads the raw samples, [`velocity`] differences them and
//!    attaches the scheduling signal produced by a [`basis`].
//! 2. [`datarep`] builds the data matrices, checks persistency of
//!    excitation, and represents closed loops purely from data.
//! 3. [`synthesis`] assembles and solves the LMI program over the vertices
//!    of the scheduling box ([`pbox`]) and recovers the velocity gains.
//! 4. [`control`] realizes the controller on the original plant and
//!    simulates closed loops.

// Links the system OpenBLAS used by the SDP backend.
extern crate openblas_src;

pub mod basis;
pub mod control;
pub mod datarep;
pub mod dictionary;
pub mod error;
pub mod linalg;
pub mod pbox;
pub mod plant;
pub mod synthesis;
pub mod velocity;

pub use error::{Error, Result};
