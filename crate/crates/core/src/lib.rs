//! Numerical toolkit for germs of distributions in one dimension: test
//! functions and their scalings, distributions of finite order, regularising
//! kernels with dyadic decompositions, homogeneity and coherence seminorm
//! estimates, reconstruction, the Schauder lift of coherent germs and the
//! multilevel construction on models.

pub mod distributions;
pub mod error;
pub mod fit;
pub mod germs;
pub mod jet;
pub mod kernels;
pub mod models;
pub mod quad;
pub mod reconstruction;
pub mod schauder;
pub mod testfn;

pub use error::{Error, Result};
