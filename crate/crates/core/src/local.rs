//! Per-agent payoff maximizers shared by the distributed algorithms and the
//! equilibrium checks.
//!
//! Every problem here depends on the power vector only through a scalar
//! (received power `q` for an EU, total power for the ET), so the
//! stationarity conditions collapse to a monotone scalar equation solved by
//! bisection to floating-point resolution.

use crate::model::{project_feasible, ChannelSet, CostSpec, UtilitySpec};

/// Bisection for the root of a nondecreasing `f` on `[lo, hi]` with
/// `f(lo) <= 0 <= f(hi)`. Stops when the bracket no longer shrinks or is
/// within `rel` of its upper end.
pub(crate) fn bisect_increasing(mut lo: f64, mut hi: f64, rel: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= rel * hi.abs() {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest received power used when evaluating marginal utilities inside
/// iterative loops.
pub(crate) const Q_FLOOR: f64 = 1e-300;

/// EU best response on one channel: `argmax_{p in [0, upper]} U(h p) - rate p`.
/// Ties on a flat objective resolve to `upper` when `rate <= 0`.
pub fn eu_best_response_scalar(u: &UtilitySpec, gain: f64, rate: f64, upper: f64) -> f64 {
    if rate <= 0.0 {
        return upper;
    }
    if u.is_zero() || gain == 0.0 {
        return 0.0;
    }
    let slope = |p: f64| gain * u.derivative_floored(gain * p, Q_FLOOR) - rate;
    if slope(0.0) <= 0.0 {
        return 0.0;
    }
    if slope(upper) >= 0.0 {
        return upper;
    }
    bisect_increasing(0.0, upper, 1e-15, |p| -slope(p))
}

/// ET best response on one channel: `argmax_{p in [0, pmax]} -C(p) - rate p`.
/// A zero slope (linear cost exactly reimbursed) resolves to `pmax`.
pub fn et_best_response_scalar(c: &CostSpec, rate: f64, pmax: f64) -> f64 {
    let slope = |p: f64| -c.marginal(p) - rate;
    if slope(pmax) >= 0.0 {
        return pmax;
    }
    if slope(0.0) <= 0.0 {
        return 0.0;
    }
    bisect_increasing(0.0, pmax, 1e-15, |p| -slope(p))
}

/// EU proximal step:
/// `argmax_{0 <= p <= upper} U(h.p) - rates.p - rho/2 |p - anchor|^2`.
///
/// For a given marginal `d = U'(q)` the maximizer is
/// `p_n = clip(anchor_n + (h_n d - rates_n) / rho, 0, upper)`; the fixed
/// point `q = h.p(U'(q))` is found by bisection on `q`.
pub fn eu_prox(u: &UtilitySpec, gains: &[f64], rates: &[f64], anchor: &[f64], rho: f64, upper: f64) -> Vec<f64> {
    let response = |d: f64| -> Vec<f64> {
        gains
            .iter()
            .zip(rates)
            .zip(anchor)
            .map(|((&h, &r), &g)| (g + (h * d - r) / rho).clamp(0.0, upper))
            .collect()
    };
    if u.is_zero() || gains.iter().all(|&h| h == 0.0) {
        return response(0.0);
    }
    let q_of = |p: &[f64]| gains.iter().zip(p).map(|(h, x)| h * x).sum::<f64>();
    let excess = |q: f64| q - q_of(&response(u.derivative_floored(q, Q_FLOOR)));
    let hi = q_of(&vec![upper; gains.len()]);
    let q = if excess(0.0) >= 0.0 {
        0.0
    } else {
        bisect_increasing(0.0, hi, 1e-15, excess)
    };
    response(u.derivative_floored(q, Q_FLOOR))
}

/// ET proximal step:
/// `argmax_{p in P} -C(sum p) - rates.p - rho/2 |p - anchor|^2`.
///
/// With `theta = C'(S) + nu` the maximizer is
/// `p_n = clip(anchor_n - (rates_n + theta) / rho, 0, peak_n)`. The budget
/// multiplier `nu` is zero unless the unconstrained total exceeds `pmax`.
pub fn et_prox(c: &CostSpec, ch: &ChannelSet, rates: &[f64], anchor: &[f64], rho: f64) -> Vec<f64> {
    let response = |theta: f64| -> Vec<f64> {
        rates
            .iter()
            .zip(anchor)
            .zip(ch.peak())
            .map(|((&r, &g), &cap)| (g - (r + theta) / rho).clamp(0.0, cap))
            .collect()
    };
    let total = |p: &[f64]| p.iter().sum::<f64>();
    let peak_sum: f64 = ch.peak().iter().sum();
    let excess = |s: f64| s - total(&response(c.marginal(s)));
    let s_free = if excess(0.0) >= 0.0 {
        0.0
    } else {
        bisect_increasing(0.0, peak_sum, 1e-15, excess)
    };
    if s_free <= ch.pmax() {
        return project_feasible(&response(c.marginal(s_free)), ch);
    }
    let theta_lo = c.marginal(ch.pmax());
    let theta_hi = rates
        .iter()
        .zip(anchor)
        .map(|(&r, &g)| rho * g - r)
        .fold(theta_lo, f64::max);
    let theta = bisect_increasing(theta_lo, theta_hi, 1e-15, |t| ch.pmax() - total(&response(t)));
    project_feasible(&response(theta), ch)
}
