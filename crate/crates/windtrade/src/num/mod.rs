//! Shared numerical kernels: normal distribution functions, quadrature,
//! root finding, simplex minimization, isotonic regression, and seeded
//! random substreams.

pub mod hermite;
pub mod isotonic;
pub mod normal;
pub mod optim;
pub mod quad;
pub mod roots;
pub mod streams;
pub mod sum;
