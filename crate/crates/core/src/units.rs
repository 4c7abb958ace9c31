//! Unit calibration for the iterative solvers.
//!
//! Physical scenarios can put the optimal transmit power many orders of
//! magnitude below `pmax` (micro-watts against a 4 W budget) while marginal
//! values sit in the tens. Penalty and step parameters such as `rho = 1`
//! only make sense once power and value are measured in units where the
//! problem is O(1). [`Units::calibrate`] picks those units from a 1-D
//! estimate along the uniform power direction.

use crate::model::Scenario;

/// How EU marginal utilities are combined when estimating the power scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Public-good provision: sum of marginal utilities.
    Sum,
    /// Private-good market: only the largest marginal utility buys.
    Max,
}

/// Power and value units: a quantity `x` in calibrated units is
/// `x * power` Watts or `x * value` utility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Units {
    pub power: f64,
    pub value: f64,
}

impl Units {
    pub const IDENTITY: Units = Units {
        power: 1.0,
        value: 1.0,
    };

    /// Total power `S` at which the aggregated marginal utility along the
    /// uniform direction meets the marginal cost, capped at `pmax`; value
    /// unit is `S` times that marginal value.
    pub fn calibrate(s: &Scenario, agg: Aggregation) -> Units {
        let n = s.n() as f64;
        let mean_gain: Vec<f64> = s.eus().iter().map(|eu| eu.gains.iter().sum::<f64>() / n).collect();
        let marginal_value = |total: f64| -> f64 {
            let terms = s
                .eus()
                .iter()
                .zip(&mean_gain)
                .map(|(eu, &h)| h * eu.utility.derivative_floored(h * total, f64::MIN_POSITIVE));
            match agg {
                Aggregation::Sum => terms.sum(),
                Aggregation::Max => terms.fold(0.0, f64::max),
            }
        };
        let excess = |total: f64| marginal_value(total) - s.cost().marginal(total);

        let pmax = s.pmax();
        let lo_bound = pmax * 1e-30;
        let power = if excess(pmax) >= 0.0 || excess(lo_bound) <= 0.0 {
            pmax
        } else {
            // Bisection on log(total).
            let (mut lo, mut hi) = (lo_bound.ln(), pmax.ln());
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if excess(mid.exp()) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-12 {
                    break;
                }
            }
            (0.5 * (lo + hi)).exp()
        };
        let marginal = marginal_value(power).max(s.cost().marginal(power));
        let value = power * marginal;
        Units {
            power,
            value: if value.is_finite() && value > 0.0 { value } else { 1.0 },
        }
    }

    /// Price (value per power) unit.
    pub fn price(&self) -> f64 {
        self.value / self.power
    }

    pub fn apply(&self, s: &Scenario) -> Scenario {
        s.rescaled(self.power, self.value)
    }
}
