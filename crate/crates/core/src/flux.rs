//! Concave flux functions for the LWR model on a single road, together with
//! the demand (maximum outflow) and supply (maximum inflow) functions used at
//! the junction.
//!
//! A [`FluxModel`] is built from a [`FluxShape`] and caches the density of
//! maximum flux and the maximum flux itself. Every shape must satisfy
//! `f(0) = f(rho_jam) = 0` and `f'' < 0` on `[0, rho_jam]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack accepted on density inputs before they count as out of range.
const DENSITY_SLACK: f64 = 1e-12;
/// Relative slack accepted on flux inputs to [`FluxModel::invert`].
const FLUX_SLACK: f64 = 1e-12;
const BISECTION_STEPS: usize = 200;

/// Analytic family of a concave fundamental diagram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FluxShape {
    /// Greenshields: `f(rho) = v_free * rho * (1 - rho / rho_jam)`.
    Quadratic { v_free: f64, rho_jam: f64 },
    /// `f(rho) = v_free * rho * (1 - exp(stiffness * (rho / rho_jam - 1)))`.
    ///
    /// Strictly concave for every positive stiffness, with a skewed maximum;
    /// it has no closed-form inverse and exercises the generic code paths.
    Exponential {
        v_free: f64,
        rho_jam: f64,
        stiffness: f64,
    },
}

/// Free or congested side of the fundamental diagram.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Free,
    Congested,
}

/// A concave flux with cached maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FluxShape", into = "FluxShape")]
pub struct FluxModel {
    shape: FluxShape,
    rho_max: f64,
    f_max: f64,
}

impl TryFrom<FluxShape> for FluxModel {
    type Error = Error;

    fn try_from(shape: FluxShape) -> Result<Self> {
        FluxModel::new(shape)
    }
}

impl From<FluxModel> for FluxShape {
    fn from(model: FluxModel) -> Self {
        model.shape
    }
}

/// Greenshields flux `v_free * rho * (1 - rho / rho_jam)`.
pub fn make_quadratic_flux(v_free: f64, rho_jam: f64) -> Result<FluxModel> {
    FluxModel::new(FluxShape::Quadratic { v_free, rho_jam })
}

impl FluxModel {
    pub fn new(shape: FluxShape) -> Result<Self> {
        match shape {
            FluxShape::Quadratic { v_free, rho_jam } => {
                check_positive("v_free", v_free)?;
                check_positive("rho_jam", rho_jam)?;
                Ok(Self {
                    shape,
                    rho_max: 0.5 * rho_jam,
                    f_max: 0.25 * v_free * rho_jam,
                })
            }
            FluxShape::Exponential {
                v_free,
                rho_jam,
                stiffness,
            } => {
                check_positive("v_free", v_free)?;
                check_positive("rho_jam", rho_jam)?;
                check_positive("stiffness", stiffness)?;
                let mut model = Self {
                    shape,
                    rho_max: f64::NAN,
                    f_max: f64::NAN,
                };
                model.rho_max = model.locate_maximum();
                model.f_max = model.value(model.rho_max);
                Ok(model)
            }
        }
    }

    pub fn shape(&self) -> FluxShape {
        self.shape
    }

    pub fn rho_jam(&self) -> f64 {
        match self.shape {
            FluxShape::Quadratic { rho_jam, .. } | FluxShape::Exponential { rho_jam, .. } => {
                rho_jam
            }
        }
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    /// Flux at `rho`. No range check; callers validate with [`Self::check_density`].
    pub fn value(&self, rho: f64) -> f64 {
        match self.shape {
            FluxShape::Quadratic { v_free, rho_jam } => v_free * rho * (1.0 - rho / rho_jam),
            FluxShape::Exponential {
                v_free,
                rho_jam,
                stiffness,
            } => v_free * rho * -(stiffness * (rho / rho_jam - 1.0)).exp_m1(),
        }
    }

    /// Characteristic speed `f'(rho)`.
    pub fn derivative(&self, rho: f64) -> f64 {
        match self.shape {
            FluxShape::Quadratic { v_free, rho_jam } => v_free * (1.0 - 2.0 * rho / rho_jam),
            FluxShape::Exponential {
                v_free,
                rho_jam,
                stiffness,
            } => {
                let e = (stiffness * (rho / rho_jam - 1.0)).exp();
                v_free * (1.0 - e - rho * stiffness / rho_jam * e)
            }
        }
    }

    /// Largest characteristic speed in absolute value over `[0, rho_jam]`.
    ///
    /// `f'` is decreasing, so the extremes sit at the endpoints.
    pub fn max_speed(&self) -> f64 {
        self.derivative(0.0)
            .abs()
            .max(self.derivative(self.rho_jam()).abs())
    }

    /// Validates a density and snaps values within round-off of the bounds.
    pub fn check_density(&self, rho: f64) -> Result<f64> {
        let jam = self.rho_jam();
        let slack = DENSITY_SLACK * jam;
        if !(rho >= -slack && rho <= jam + slack) {
            return Err(Error::Domain {
                value: rho,
                rho_jam: jam,
            });
        }
        Ok(rho.clamp(0.0, jam))
    }

    /// Side of the diagram, with `rho_max` counted as free.
    pub fn regime(&self, rho: f64) -> Regime {
        if rho <= self.rho_max {
            Regime::Free
        } else {
            Regime::Congested
        }
    }

    /// Initial classification of an incoming road: free iff `rho < rho_max`.
    pub fn classify_incoming(&self, rho: f64) -> Regime {
        if rho < self.rho_max {
            Regime::Free
        } else {
            Regime::Congested
        }
    }

    /// Initial classification of an outgoing road: free iff `rho <= rho_max`.
    pub fn classify_outgoing(&self, rho: f64) -> Regime {
        self.regime(rho)
    }

    /// Maximum flux that can leave a road whose downstream trace is `rho`.
    pub fn demand(&self, rho: f64) -> Result<f64> {
        let rho = self.check_density(rho)?;
        Ok(self.demand_unchecked(rho))
    }

    /// Maximum flux that can enter a road whose upstream trace is `rho`.
    pub fn supply(&self, rho: f64) -> Result<f64> {
        let rho = self.check_density(rho)?;
        Ok(self.supply_unchecked(rho))
    }

    pub(crate) fn demand_unchecked(&self, rho: f64) -> f64 {
        if rho <= self.rho_max {
            self.value(rho)
        } else {
            self.f_max
        }
    }

    pub(crate) fn supply_unchecked(&self, rho: f64) -> f64 {
        if rho >= self.rho_max {
            self.value(rho)
        } else {
            self.f_max
        }
    }

    /// The unique density on `branch` carrying flux `phi`.
    pub fn invert(&self, phi: f64, branch: Regime) -> Result<f64> {
        let slack = FLUX_SLACK * self.f_max;
        if phi < -slack || phi.is_nan() {
            return Err(Error::NegativeFlux { value: phi });
        }
        if phi > self.f_max + slack {
            return Err(Error::InfeasibleFlux {
                value: phi,
                f_max: self.f_max,
            });
        }
        let phi = phi.clamp(0.0, self.f_max);
        match self.shape {
            FluxShape::Quadratic { v_free, rho_jam } => {
                // Roots of v*rho*(1 - rho/jam) = phi; the small root is written
                // in the cancellation-free form.
                let disc = (1.0 - 4.0 * phi / (v_free * rho_jam)).max(0.0).sqrt();
                Ok(match branch {
                    Regime::Free => 2.0 * phi / (v_free * (1.0 + disc)),
                    Regime::Congested => 0.5 * rho_jam * (1.0 + disc),
                })
            }
            FluxShape::Exponential { .. } => {
                let (lo, hi) = match branch {
                    Regime::Free => (0.0, self.rho_max),
                    Regime::Congested => (self.rho_max, self.rho_jam()),
                };
                // f - phi changes sign once on each monotone branch.
                let increasing = branch == Regime::Free;
                Ok(bisect(lo, hi, |rho| {
                    let above = self.value(rho) >= phi;
                    above == increasing
                }))
            }
        }
    }

    /// The density whose characteristic speed is `xi`, clamped to `[0, rho_jam]`.
    pub fn speed_inverse(&self, xi: f64) -> f64 {
        match self.shape {
            FluxShape::Quadratic { v_free, rho_jam } => {
                (0.5 * rho_jam * (1.0 - xi / v_free)).clamp(0.0, rho_jam)
            }
            FluxShape::Exponential { .. } => {
                let jam = self.rho_jam();
                if xi >= self.derivative(0.0) {
                    0.0
                } else if xi <= self.derivative(jam) {
                    jam
                } else {
                    // f' is decreasing.
                    bisect(0.0, jam, |rho| self.derivative(rho) <= xi)
                }
            }
        }
    }

    fn locate_maximum(&self) -> f64 {
        bisect(0.0, self.rho_jam(), |rho| self.derivative(rho) <= 0.0)
    }
}

/// Smallest point of `[lo, hi]` where the monotone predicate becomes true.
fn bisect(mut lo: f64, mut hi: f64, upper: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if upper(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {value}")))
    }
}
