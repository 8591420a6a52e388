pub mod cli;
pub mod constants;
pub mod error;
pub mod functionals;
pub mod harmonic;
pub mod perturbation;
pub mod hopf;
pub mod output;
pub mod poly;
pub mod quad1d;
pub mod quadrature;
pub mod rescale;
pub mod space;
pub mod spectral;
pub mod stability;

pub use error::{Error, Result};
pub use space::{Algebra, RadialKernels, SpaceSpec};
