//! Nonsmooth Morse analysis of max/min selections of smooth functions on
//! constraint-defined manifolds.
//!
//! A scenario supplies smooth selection fields `f_1..f_m` and constraint
//! fields `g_1..g_c` as expressions, a selector (`max` or `min`) and a
//! bounding box. The library classifies the induced strata, locates Clarke
//! critical points of the selection, tests nondegeneracy, computes quadratic
//! indices and stratified handle classes, samples fibers, and checks the
//! critical-point profile that certifies an induced trisection on 4-manifolds.

pub mod csfun;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod nonsmooth;
pub mod report;
pub mod scenario;
pub mod search;
pub mod strata;

pub use error::{Error, Result};
pub use expr::{Jet2, SmoothMap};
pub use geometry::{Manifold, TangentBasis};
pub use csfun::{ActiveSet, CsFunction, IndexSet, Selector};
