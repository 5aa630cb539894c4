//! Exact solution of the scalar Riemann problem for a concave flux and the
//! Godunov interface flux.

use serde::{Deserialize, Serialize};

use crate::flux::FluxModel;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Wave {
    Constant,
    Shock { speed: f64 },
    Rarefaction { speed_lo: f64, speed_hi: f64 },
}

/// Self-similar solution `rho(x/t)` of a Riemann problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiemannFan {
    pub left: f64,
    pub right: f64,
    pub wave: Wave,
}

impl RiemannFan {
    /// Slowest and fastest signal speeds of the fan, `None` for a constant state.
    pub fn speed_range(&self) -> Option<(f64, f64)> {
        match self.wave {
            Wave::Constant => None,
            Wave::Shock { speed } => Some((speed, speed)),
            Wave::Rarefaction { speed_lo, speed_hi } => Some((speed_lo, speed_hi)),
        }
    }

    /// Density at `xi = x / t`. A point exactly on a shock takes the left state.
    pub fn evaluate(&self, model: &FluxModel, xi: f64) -> f64 {
        match self.wave {
            Wave::Constant => self.left,
            Wave::Shock { speed } => {
                if xi <= speed {
                    self.left
                } else {
                    self.right
                }
            }
            Wave::Rarefaction { speed_lo, speed_hi } => {
                if xi <= speed_lo {
                    self.left
                } else if xi >= speed_hi {
                    self.right
                } else {
                    // Inside the fan the state is bracketed by the end states.
                    model
                        .speed_inverse(xi)
                        .clamp(self.right.min(self.left), self.right.max(self.left))
                }
            }
        }
    }
}

/// Entropy solution of `rho_t + f(rho)_x = 0` with data `rho_l | rho_r`.
pub fn solve_riemann(model: &FluxModel, rho_l: f64, rho_r: f64) -> Result<RiemannFan> {
    let left = model.check_density(rho_l)?;
    let right = model.check_density(rho_r)?;
    let wave = if left == right {
        Wave::Constant
    } else if left < right {
        Wave::Shock {
            speed: (model.value(right) - model.value(left)) / (right - left),
        }
    } else {
        Wave::Rarefaction {
            speed_lo: model.derivative(left),
            speed_hi: model.derivative(right),
        }
    };
    Ok(RiemannFan { left, right, wave })
}

/// Free function form of [`RiemannFan::evaluate`].
pub fn evaluate_fan(fan: &RiemannFan, model: &FluxModel, xi: f64) -> f64 {
    fan.evaluate(model, xi)
}

/// Godunov flux `min(demand(rho_l), supply(rho_r))`.
pub fn godunov_flux(model: &FluxModel, rho_l: f64, rho_r: f64) -> Result<f64> {
    Ok(model.demand(rho_l)?.min(model.supply(rho_r)?))
}

/// Godunov flux on pre-validated densities; used in the inner loops of the scheme.
pub(crate) fn godunov_flux_unchecked(model: &FluxModel, rho_l: f64, rho_r: f64) -> f64 {
    model
        .demand_unchecked(rho_l)
        .min(model.supply_unchecked(rho_r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::{make_quadratic_flux, FluxShape};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> FluxModel {
        make_quadratic_flux(1.0, 1.0).unwrap()
    }

    #[test]
    fn shock_example() {
        let m = unit();
        let fan = solve_riemann(&m, 0.2, 0.8).unwrap();
        // Rankine-Hugoniot: the shock carries no net mass across x = speed * t.
        let Wave::Shock { speed } = fan.wave else {
            panic!("expected a shock, got {:?}", fan.wave)
        };
        assert_abs_diff_eq!(speed, 0.0, epsilon = 1e-15);
        let rh_residual = speed * (0.8 - 0.2) - (m.value(0.8) - m.value(0.2));
        assert!(rh_residual.abs() < 1e-15);
        assert_eq!(fan.evaluate(&m, -0.1), 0.2);
        assert_eq!(fan.evaluate(&m, 0.1), 0.8);
    }

    #[test]
    fn rarefaction_example() {
        let m = unit();
        let fan = solve_riemann(&m, 0.8, 0.2).unwrap();
        match fan.wave {
            Wave::Rarefaction { speed_lo, speed_hi } => {
                assert_abs_diff_eq!(speed_lo, -0.6, epsilon = 1e-15);
                assert_abs_diff_eq!(speed_hi, 0.6, epsilon = 1e-15);
            }
            other => panic!("expected a rarefaction, got {other:?}"),
        }
        assert_abs_diff_eq!(fan.evaluate(&m, 0.0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fan.evaluate(&m, 0.2), 0.4, epsilon = 1e-12);
        assert_eq!(fan.evaluate(&m, -0.7), 0.8);
        assert_eq!(fan.evaluate(&m, 0.7), 0.2);
    }

    #[test]
    fn constant_example() {
        let fan = solve_riemann(&unit(), 0.4, 0.4).unwrap();
        assert_eq!(fan.wave, Wave::Constant);
        assert_eq!(fan.evaluate(&unit(), 3.0), 0.4);
    }

    #[test]
    fn godunov_examples() {
        let m = unit();
        assert_abs_diff_eq!(godunov_flux(&m, 0.2, 0.8).unwrap(), 0.16, epsilon = 1e-15);
        assert_abs_diff_eq!(godunov_flux(&m, 0.8, 0.2).unwrap(), 0.25);
        assert_eq!(godunov_flux(&m, 0.0, 1.0).unwrap(), 0.0);
        assert!(solve_riemann(&m, 0.2, 1.5).is_err());
    }

    /// Flux of the exact fan at `x = 0`; for a stationary shock both sides agree.
    fn fan_flux_at_origin(m: &FluxModel, l: f64, r: f64) -> f64 {
        let fan = solve_riemann(m, l, r).unwrap();
        m.value(fan.evaluate(m, 0.0))
    }

    #[test]
    fn godunov_matches_fan_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let models = [
            unit(),
            make_quadratic_flux(2.0, 1.5).unwrap(),
            FluxModel::new(FluxShape::Exponential {
                v_free: 1.0,
                rho_jam: 1.0,
                stiffness: 4.0,
            })
            .unwrap(),
        ];
        for k in 0..10_000 {
            let m = &models[k % models.len()];
            let l = rng.gen::<f64>() * m.rho_jam();
            let r = rng.gen::<f64>() * m.rho_jam();
            let g = godunov_flux(m, l, r).unwrap();
            let fan = fan_flux_at_origin(m, l, r);
            assert!((g - fan).abs() < 1e-12, "l={l} r={r} godunov={g} fan={fan}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn consistency(u in 0.0f64..1.0) {
            let m = make_quadratic_flux(1.3, 0.9).unwrap();
            let rho = u * 0.9;
            prop_assert!((godunov_flux(&m, rho, rho).unwrap() - m.value(rho)).abs() < 1e-15);
        }

        #[test]
        fn godunov_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            let m = unit();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(godunov_flux(&m, lo, c).unwrap() <= godunov_flux(&m, hi, c).unwrap());
            prop_assert!(godunov_flux(&m, c, lo).unwrap() >= godunov_flux(&m, c, hi).unwrap());
        }

        #[test]
        fn fan_monotone_between_states(l in 0.0f64..1.0, r in 0.0f64..1.0, x1 in -2.0f64..2.0, x2 in -2.0f64..2.0) {
            let m = unit();
            let fan = solve_riemann(&m, l, r).unwrap();
            let (xa, xb) = (x1.min(x2), x1.max(x2));
            let (ra, rb) = (fan.evaluate(&m, xa), fan.evaluate(&m, xb));
            prop_assert!(ra >= l.min(r) && ra <= l.max(r));
            if l <= r {
                prop_assert!(ra <= rb);
            } else {
                prop_assert!(ra >= rb);
            }
            prop_assert_eq!(fan.evaluate(&m, -10.0), l);
            prop_assert_eq!(fan.evaluate(&m, 10.0), r);
        }
    }
}
