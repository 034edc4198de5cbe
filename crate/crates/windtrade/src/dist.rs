//! The production model: a stylized power curve applied to a log-normal
//! latent wind factor, giving a truncated log-normal law on [0, 1] with
//! atoms at both endpoints.
//!
//! Two equivalent parameterizations are supported. The latent one
//! (`nu_x`, `x_min`, `x_max`) is physical: `X` is log-normal with unit mean
//! and log-volatility `nu_x`, and the curve clamps `(X - x_min)/(x_max -
//! x_min)` to [0, 1]. The canonical one (`mu`, `nu`, `zeta`) describes the
//! law of the output directly: `F = clamp(zeta + exp(mu + nu Z), 0, 1)` with
//! `Z` standard normal. Fitting works in canonical space; simulation and
//! forecasting work in latent space.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::num::normal;
use crate::num::quad;

pub const SQRT_2PI: f64 = 2.5066282746310002;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{name} = {value} outside domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
}

fn require(ok: bool, name: &'static str, value: f64, reason: &'static str) -> Result<(), DistError> {
    if ok {
        Ok(())
    } else {
        Err(DistError::InvalidParam { name, value, reason })
    }
}

/// The stylized power curve: zero below the cut-in speed `x_min`, rated
/// (one) above `x_max`, affine in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerCurve {
    x_min: f64,
    x_max: f64,
}

impl PowerCurve {
    pub fn new(x_min: f64, x_max: f64) -> Result<Self, DistError> {
        require(x_min.is_finite() && x_min > 0.0, "x_min", x_min, "must be positive")?;
        require(x_max.is_finite() && x_max > x_min, "x_max", x_max, "must exceed x_min")?;
        Ok(Self { x_min, x_max })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Normalized power produced at latent wind level `x`.
    pub fn f_prod(&self, x: f64) -> f64 {
        ((x - self.x_min) / (self.x_max - self.x_min)).clamp(0.0, 1.0)
    }
}

/// Latent-space parameters. `mu_x` is not stored: the convention
/// `mu_x = -nu_x^2 / 2` (unit-mean latent factor) is structural.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentParams {
    pub nu_x: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl LatentParams {
    pub fn new(nu_x: f64, x_min: f64, x_max: f64) -> Result<Self, DistError> {
        require(nu_x.is_finite() && nu_x > 0.0, "nu_x", nu_x, "must be positive")?;
        PowerCurve::new(x_min, x_max)?;
        Ok(Self { nu_x, x_min, x_max })
    }

    pub fn mu_x(&self) -> f64 {
        -self.nu_x * self.nu_x / 2.0
    }

    pub fn curve(&self) -> PowerCurve {
        PowerCurve {
            x_min: self.x_min,
            x_max: self.x_max,
        }
    }
}

/// Restricted moments of the production level below a cutoff `c`:
/// `prob = P[F < c]`, `first = E[F 1(F < c)]`, `second = E[F^2 1(F < c)]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PartialMoments {
    pub prob: f64,
    pub first: f64,
    pub second: f64,
}

/// Anything that behaves like a normalized-production law on [0, 1].
///
/// The no-forecast machinery (averaged penalties) only needs expectations
/// and restricted moments, so test laws (uniform, point mass) plug in next
/// to the fitted model.
pub trait ProductionLaw: Send + Sync {
    fn mean(&self) -> f64;

    /// `E[w(F)]` for an arbitrary bounded measurable `w` on [0, 1].
    fn expectation(&self, w: &dyn Fn(f64) -> f64) -> f64;

    /// Moments restricted to `{F < c}`; `c` may be any real.
    fn partial_moments(&self, c: f64) -> PartialMoments;

    fn second_moment(&self) -> f64 {
        self.expectation(&|y| y * y)
    }
}

/// The truncated log-normal law of normalized production:
/// `F = clamp(zeta + exp(mu + nu Z), 0, 1)`, `Z ~ N(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedLogNormal {
    mu: f64,
    nu: f64,
    zeta: f64,
}

impl TruncatedLogNormal {
    pub fn new(mu: f64, nu: f64, zeta: f64) -> Result<Self, DistError> {
        require(mu.is_finite(), "mu", mu, "must be finite")?;
        require(nu.is_finite() && nu > 0.0, "nu", nu, "must be positive")?;
        require(
            zeta.is_finite() && zeta < 0.0,
            "zeta",
            zeta,
            "must be negative (positive cut-in speed)",
        )?;
        Ok(Self { mu, nu, zeta })
    }

    pub fn from_latent(lat: &LatentParams) -> Result<Self, DistError> {
        let lat = LatentParams::new(lat.nu_x, lat.x_min, lat.x_max)?;
        let d = lat.x_max - lat.x_min;
        Self::new(lat.mu_x() - d.ln(), lat.nu_x, -lat.x_min / d)
    }

    /// Inverse of [`from_latent`](Self::from_latent) under the unit-mean
    /// convention. Total because construction enforces `zeta < 0`.
    pub fn to_latent(&self) -> LatentParams {
        // mu = mu_x - ln d and mu_x = -nu^2/2 pin d = exp(-nu^2/2 - mu).
        let d = (-self.nu * self.nu / 2.0 - self.mu).exp();
        LatentParams {
            nu_x: self.nu,
            x_min: -self.zeta * d,
            x_max: d * (1.0 - self.zeta),
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Standardized coordinate of an output level: `z` with `F = y` iff
    /// `Z = z` on the continuous part.
    fn z_of(&self, y: f64) -> f64 {
        ((y - self.zeta).ln() - self.mu) / self.nu
    }

    /// Probability masses at 0 and at 1.
    pub fn atoms(&self) -> (f64, f64) {
        let p0 = normal::cdf(self.z_of(0.0));
        let p1 = normal::sf(self.z_of(1.0));
        (p0, p1)
    }

    /// Lebesgue density of the continuous part on (0, 1); at exactly 0 and
    /// 1 the continuous extension is returned so quadrature can touch the
    /// endpoints.
    pub fn density(&self, y: f64) -> Result<f64, DistError> {
        if !(0.0..=1.0).contains(&y) {
            return Err(DistError::Domain {
                name: "y",
                value: y,
                domain: "[0, 1]",
            });
        }
        let s = y - self.zeta;
        let z = (s.ln() - self.mu) / self.nu;
        Ok((-z * z / 2.0).exp() / (s * self.nu * SQRT_2PI))
    }

    /// `P[F <= y]`, total on the real line (0 below 0, 1 at and above 1).
    pub fn cdf(&self, y: f64) -> f64 {
        if y < 0.0 {
            0.0
        } else if y >= 1.0 {
            1.0
        } else {
            normal::cdf(self.z_of(y))
        }
    }

    /// The quantile `zeta + exp(mu + nu inv_cdf(alpha))`, clamped to [0, 1].
    ///
    /// Defined for `alpha` between the atom masses `P0` and `1 - P1`; the
    /// clamp only absorbs floating error at those boundaries.
    pub fn quantile(&self, alpha: f64) -> Result<f64, DistError> {
        let (p0, p1) = self.atoms();
        // Tolerate tiny excursions from round-tripping through the CDF.
        let slack = 1e-12;
        if !(p0 - slack..=1.0 - p1 + slack).contains(&alpha) {
            return Err(DistError::Domain {
                name: "alpha",
                value: alpha,
                domain: "[P0, 1 - P1]",
            });
        }
        Ok((self.zeta + (self.mu + self.nu * normal::inv_cdf(alpha.clamp(0.0, 1.0))).exp()).clamp(0.0, 1.0))
    }

    /// One draw of normalized production.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.zeta + (self.mu + self.nu * z).exp()).clamp(0.0, 1.0)
    }

    pub fn variance(&self) -> f64 {
        let m = ProductionLaw::mean(self);
        self.second_moment() - m * m
    }
}

impl ProductionLaw for TruncatedLogNormal {
    fn mean(&self) -> f64 {
        // E[F] = P1 + zeta (Phi(z1) - Phi(z0)) + e^{mu + nu^2/2} (Phi(z1 - nu) - Phi(z0 - nu))
        // from integrating zeta + e^{mu + nu z} against the normal density
        // between the clamp boundaries.
        let (z0, z1) = (self.z_of(0.0), self.z_of(1.0));
        let dphi = |s: f64| normal::cdf(z1 - s) - normal::cdf(z0 - s);
        normal::sf(z1)
            + self.zeta * dphi(0.0)
            + (self.mu + self.nu * self.nu / 2.0).exp() * dphi(self.nu)
    }

    fn expectation(&self, w: &dyn Fn(f64) -> f64) -> f64 {
        let (p0, p1) = self.atoms();
        let continuous = quad::integrate(
            &|y: f64| {
                let s = y - self.zeta;
                let z = (s.ln() - self.mu) / self.nu;
                w(y) * (-z * z / 2.0).exp() / (s * self.nu * SQRT_2PI)
            },
            0.0,
            1.0,
            1e-10,
        );
        p0 * w(0.0) + p1 * w(1.0) + continuous
    }

    fn partial_moments(&self, c: f64) -> PartialMoments {
        if c <= 0.0 {
            return PartialMoments::default();
        }
        let z0 = self.z_of(0.0);
        let zc = if c >= 1.0 { self.z_of(1.0) } else { self.z_of(c) };
        let dphi = |s: f64| normal::cdf(zc - s) - normal::cdf(z0 - s);
        let e1 = (self.mu + self.nu * self.nu / 2.0).exp();
        let e2 = (2.0 * self.mu + 2.0 * self.nu * self.nu).exp();
        let p0 = normal::cdf(z0);
        let mut m = PartialMoments {
            prob: p0 + dphi(0.0),
            first: self.zeta * dphi(0.0) + e1 * dphi(self.nu),
            second: self.zeta * self.zeta * dphi(0.0) + 2.0 * self.zeta * e1 * dphi(self.nu)
                + e2 * dphi(2.0 * self.nu),
        };
        if c > 1.0 {
            // The atom at 1 lies strictly below the cutoff.
            let p1 = normal::sf(self.z_of(1.0));
            m.prob += p1;
            m.first += p1;
            m.second += p1;
        }
        m
    }

    fn second_moment(&self) -> f64 {
        self.partial_moments(f64::INFINITY).second
    }
}

/// `E[f_prod(X)^2]` in latent coordinates: the four-term closed form with
/// boundary arguments `d0 = (-ln a + 3 nu^2/2)/nu`, `d+- = (-ln a +- nu^2/2)/nu`
/// for `a` in `{x_min, x_max}`.
///
/// The middle term carries the coefficient `e^{nu^2}` (the second moment of
/// the unit-mean latent factor), not `e^{nu^2/2}`; with the latter the
/// expression fails a direct quadrature check by ~2e-2 on realistic
/// parameters, with the former it matches to machine precision.
pub fn second_moment_fprod(lat: &LatentParams) -> f64 {
    let nu2 = lat.nu_x * lat.nu_x;
    let d0 = |a: f64| (-a.ln() + 1.5 * nu2) / lat.nu_x;
    let dp = |a: f64| (-a.ln() + 0.5 * nu2) / lat.nu_x;
    let dm = |a: f64| (-a.ln() - 0.5 * nu2) / lat.nu_x;
    let d = lat.x_max - lat.x_min;
    normal::cdf(dm(lat.x_max))
        + nu2.exp() / (d * d) * (normal::cdf(d0(lat.x_min)) - normal::cdf(d0(lat.x_max)))
        - 2.0 * lat.x_min / (d * d) * (normal::cdf(dp(lat.x_min)) - normal::cdf(dp(lat.x_max)))
        + lat.x_min * lat.x_min / (d * d)
            * (normal::cdf(dm(lat.x_min)) - normal::cdf(dm(lat.x_max)))
}

/// Uniform production on [0, 1]; the worked no-forecast example uses it.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformLaw;

impl ProductionLaw for UniformLaw {
    fn mean(&self) -> f64 {
        0.5
    }

    fn expectation(&self, w: &dyn Fn(f64) -> f64) -> f64 {
        quad::integrate(&|y| w(y), 0.0, 1.0, 1e-12)
    }

    fn partial_moments(&self, c: f64) -> PartialMoments {
        let c = c.clamp(0.0, 1.0);
        PartialMoments {
            prob: c,
            first: c * c / 2.0,
            second: c * c * c / 3.0,
        }
    }

    fn second_moment(&self) -> f64 {
        1.0 / 3.0
    }
}

/// Point mass at a fixed production level; degenerate limit for tests.
#[derive(Debug, Clone, Copy)]
pub struct DegenerateLaw(pub f64);

impl ProductionLaw for DegenerateLaw {
    fn mean(&self) -> f64 {
        self.0
    }

    fn expectation(&self, w: &dyn Fn(f64) -> f64) -> f64 {
        w(self.0)
    }

    fn partial_moments(&self, c: f64) -> PartialMoments {
        if self.0 < c {
            PartialMoments {
                prob: 1.0,
                first: self.0,
                second: self.0 * self.0,
            }
        } else {
            PartialMoments::default()
        }
    }
}
