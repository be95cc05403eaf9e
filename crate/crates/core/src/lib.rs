//! Numerical experiments on values of shifted indefinite quadratic forms at integer points.
//!
//! The crate is organised by concern:
//!
//! * [`forms`]: exact-rational quadratic forms, signature, duality and normalization.
//! * [`exponents`]: the exponent calculus as a function of signature.
//! * [`search`]: minimal `|Q(v+α) − ξ|` over integer balls and decay-exponent fits.
//! * [`lattice`]: enumeration of `SO⁺_Q(ℤ)`, stabilizers and torus shrinking-target runs.
//! * [`geometry`]: Cartan coordinates, KAK, Haar density, ball volumes and Monte Carlo overlaps.
//!
//! ```
//! use shiftform_core::forms::{QuadraticForm, Signature};
//! use shiftform_core::exponents::kappa0;
//! use num_rational::BigRational;
//!
//! let q1 = QuadraticForm::determinant_form();
//! assert_eq!(q1.signature(), Signature::new(2, 2));
//! assert_eq!(kappa0(q1.signature()).unwrap(), BigRational::from_integer(2.into()));
//! ```

pub mod exponents;
pub mod forms;
pub mod geometry;
pub mod lattice;
pub mod search;
pub mod seeds;
pub mod stats;

pub use exponents::{ExponentError, ExponentProfile};
pub use forms::{FormError, QuadraticForm, Rational, Signature, StandardNormalizer};
pub use geometry::{BallSpec, CartanVector, GeometryError, Kak};
pub use lattice::{CharacterSpec, LatticeElement, LatticeError, TargetSpec, TorusRun};
pub use search::{GapResult, SearchError, SearchProblem, Threshold};
