//! Wind-production trading models: a truncated log-normal production law,
//! a martingale forecast process calibrated to forecast-error variances, and
//! optimal selling strategies on intraday markets with and without market
//! impact.
//!
//! The crate is organized bottom-up:
//!
//! - [`num`]: shared numerical kernels (quadrature, root finding, ...).
//! - [`dist`]: the production law and its latent log-normal factor.
//! - [`forecast`]: the forecast process, its variance schedule, and path
//!   simulation.
//! - [`calib`]: fitting the production law and the variance schedule to
//!   production/forecast records.
//! - [`penalty`], [`drift`], [`plan`]: penalty shapes, price-drift curves,
//!   and the trade-plan containers shared by all solvers.
//! - [`frictionless`]: optimal strategies without market impact (exact
//!   forecast, no forecast, and threshold policies under a dynamically
//!   updated forecast).
//! - [`impact`]: strategies under quadratic market impact (deterministic
//!   plans, an HJB grid solver, and a buy/sell variant).
//! - [`policy`]: the runtime-selectable strategy registry.
//! - [`mc`]: seeded Monte Carlo experiments comparing policies.

// Validation guards are written as negated comparisons (`!(x > 0.0)`) on
// purpose: they must reject NaN, which the un-negated form lets through.
// Index loops that step several arrays in lockstep keep the index.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calib;
pub mod dist;
pub mod drift;
pub mod forecast;
pub mod frictionless;
pub mod impact;
pub mod mc;
pub mod num;
pub mod penalty;
pub mod plan;
pub mod policy;
