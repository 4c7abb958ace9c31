//! Centralized ground truth: social-welfare maximization over `P`, KKT
//! residuals, and the constrained Lindahl allocation.

use crate::error::{check_len, Result};
use crate::local::{bisect_increasing, Q_FLOOR};
use crate::model::{cost, marginal_utility, project_feasible, Scenario};
use crate::units::{Aggregation, Units};

/// `SW(p) = sum_k U_k(q_k(p)) - C(p)`.
pub fn social_welfare(s: &Scenario, p: &[f64]) -> Result<f64> {
    check_len(s.n(), p.len())?;
    let mut total = 0.0;
    for eu in s.eus() {
        total += eu.utility.value(crate::model::received_power(p, eu)?)?;
    }
    Ok(total - cost(s.cost(), p))
}

/// `grad SW(p)`, with alpha-fair derivatives evaluated at a floored `q`.
pub fn welfare_gradient(s: &Scenario, p: &[f64]) -> Vec<f64> {
    gradient_floored(s, p, Q_FLOOR)
}

/// Received power below which the search direction of [`solve_swm`] treats
/// marginal utilities as constant: a small fraction of the smallest received
/// power under a uniform unit allocation (calibrated units). Keeps steps
/// finite when an iterate leaves an alpha-fair EU with no power.
pub(crate) fn search_q_floor(s: &Scenario) -> f64 {
    let n = s.n() as f64;
    s.eus()
        .iter()
        .map(|eu| eu.gains.iter().sum::<f64>() / n)
        .filter(|q| *q > 0.0)
        .fold(f64::INFINITY, f64::min)
        .min(1.0)
        * 1e-10
}

fn gradient_floored(s: &Scenario, p: &[f64], floor: f64) -> Vec<f64> {
    let mut g = vec![-s.cost().marginal(p.iter().sum()); s.n()];
    for eu in s.eus() {
        let d = eu.utility.derivative_floored(eu.received_power(p), floor);
        for (gn, h) in g.iter_mut().zip(&eu.gains) {
            if *h != 0.0 {
                *gn += h * d;
            }
        }
    }
    g
}

/// Multipliers of the feasible set: `lambda_n` for `p_n <= peak_n`,
/// `mu_n` for `p_n >= 0`, `nu` for `sum p <= pmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct Duals {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: f64,
}

impl Duals {
    pub fn zeros(n: usize) -> Self {
        Self {
            lambda: vec![0.0; n],
            mu: vec![0.0; n],
            nu: 0.0,
        }
    }
}

/// Stationarity residual `|grad SW - lambda - nu + mu|_2` plus
/// complementary-slackness, dual-sign and primal-feasibility violations.
pub fn kkt_residual(s: &Scenario, p: &[f64], duals: &Duals) -> f64 {
    let ch = s.channels();
    let g = welfare_gradient(s, p);
    let total: f64 = p.iter().sum();
    let stationarity = g
        .iter()
        .enumerate()
        .map(|(n, gn)| {
            let r = gn - duals.lambda[n] - duals.nu + duals.mu[n];
            r * r
        })
        .sum::<f64>()
        .sqrt();
    let mut slack = (duals.nu * (total - ch.pmax())).abs() + (-duals.nu).max(0.0);
    slack += (total - ch.pmax()).max(0.0);
    for n in 0..s.n() {
        slack += (duals.lambda[n] * (p[n] - ch.peak()[n])).abs();
        slack += (duals.mu[n] * p[n]).abs();
        slack += (-duals.lambda[n]).max(0.0) + (-duals.mu[n]).max(0.0);
        slack += (-p[n]).max(0.0) + (p[n] - ch.peak()[n]).max(0.0);
    }
    stationarity + slack
}

/// Least-squares multipliers supported on the constraints active at `p`
/// (within `active_tol`), restricted to non-negative values.
pub fn fit_duals(s: &Scenario, p: &[f64], active_tol: f64) -> Duals {
    let ch = s.channels();
    let g = welfare_gradient(s, p);
    let at_zero: Vec<bool> = p.iter().map(|&x| x <= active_tol).collect();
    let at_peak: Vec<bool> = p.iter().zip(ch.peak()).map(|(&x, &c)| x >= c - active_tol).collect();
    let residual = |n: usize, nu: f64| {
        let x = g[n] - nu;
        match (at_zero[n], at_peak[n]) {
            (true, false) => x.max(0.0),
            (false, true) => x.min(0.0),
            (true, true) => 0.0,
            (false, false) => x,
        }
    };
    let sum_active = p.iter().sum::<f64>() >= ch.pmax() - active_tol;
    let nu = if sum_active {
        // d/dnu of sum r_n(nu)^2 is -2 sum r_n(nu), nondecreasing in nu.
        let slope = |nu: f64| -(0..s.n()).map(|n| residual(n, nu)).sum::<f64>();
        let hi = g.iter().cloned().fold(0.0, f64::max);
        if slope(0.0) >= 0.0 {
            0.0
        } else {
            bisect_increasing(0.0, hi, 1e-15, slope)
        }
    } else {
        0.0
    };
    let mut d = Duals::zeros(s.n());
    d.nu = nu;
    for n in 0..s.n() {
        let x = g[n] - nu;
        if at_zero[n] && x < 0.0 {
            d.mu[n] = -x;
        }
        if at_peak[n] && !at_zero[n] && x > 0.0 {
            d.lambda[n] = x;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub p_opt: Vec<f64>,
    pub sw: f64,
    pub duals: Duals,
    /// KKT residual measured in the calibrated units the solver works in.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// False when the welfare Hessian at `p_opt` is singular, so `p_opt` may
    /// not be the unique maximizer (received powers still are).
    pub strictly_concave: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 200_000,
        }
    }
}

/// Maximize `SW` over `P` by projected gradient ascent with
/// Barzilai-Borwein trial steps and Armijo backtracking along the
/// projection arc. Runs in calibrated units and maps back.
pub fn solve_swm(s: &Scenario, tol: f64) -> OracleSolution {
    solve_swm_with(s, OracleConfig { tol, ..Default::default() }, None)
}

/// [`solve_swm`] with an explicit iteration cap and starting point (Watts).
pub fn solve_swm_with(s: &Scenario, cfg: OracleConfig, start: Option<&[f64]>) -> OracleSolution {
    let units = Units::calibrate(s, Aggregation::Sum);
    let ns = units.apply(s);
    let ch = ns.channels();
    let n = ns.n();
    let sw = |p: &[f64]| social_welfare(&ns, p).unwrap_or(f64::NEG_INFINITY);

    let mut p = match start {
        Some(x) => project_feasible(&x.iter().map(|v| v / units.power).collect::<Vec<_>>(), ch),
        None => project_feasible(&vec![1.0 / n as f64; n], ch),
    };
    let mut f = sw(&p);
    let q_floor = search_q_floor(&ns);
    let mut g = gradient_floored(&ns, &p, q_floor);
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    let active_tol = 1e-12 * ch.pmax();

    while iterations < cfg.max_iters {
        let pg: f64 = project_feasible(&add(&p, &g, 1.0), ch)
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if pg <= cfg.tol {
            let d = fit_duals(&ns, &p, active_tol);
            if kkt_residual(&ns, &p, &d) <= cfg.tol {
                converged = true;
                break;
            }
        }
        iterations += 1;

        // Accept on the Armijo test, or when the directional derivative at
        // the candidate is still non-negative: by concavity the candidate then
        // improves on `p` even where welfare differences fall below rounding.
        let mut t = step;
        let mut accepted = None;
        for _ in 0..200 {
            let cand = project_feasible(&add(&p, &g, t), ch);
            let fc = sw(&cand);
            let g_cand = gradient_floored(&ns, &cand, q_floor);
            let d: Vec<f64> = cand.iter().zip(&p).map(|(c, x)| c - x).collect();
            let predicted: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            let end_slope: f64 = d.iter().zip(&g_cand).map(|(a, b)| a * b).sum();
            if fc.is_finite() && (fc >= f + 1e-4 * predicted || end_slope >= 0.0) {
                accepted = Some((cand, fc, g_cand));
                break;
            }
            t *= 0.5;
        }
        let Some((next, fnext, g_next)) = accepted else {
            break;
        };
        let sk: Vec<f64> = next.iter().zip(&p).map(|(a, b)| a - b).collect();
        let yk: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = sk.iter().zip(&yk).map(|(a, b)| a * b).sum();
        let ss: f64 = sk.iter().map(|a| a * a).sum();
        // Ascent on a concave function: s.y <= 0.
        step = if sy < 0.0 { (ss / -sy).clamp(1e-12, 1e12) } else { (t * 2.0).min(1e12) };
        p = next;
        f = fnext.max(f);
        g = g_next;
        if ss == 0.0 {
            break;
        }
    }

    let duals_scaled = fit_duals(&ns, &p, active_tol);
    let kkt = kkt_residual(&ns, &p, &duals_scaled);
    converged |= kkt <= cfg.tol;
    let p_opt: Vec<f64> = p.iter().map(|x| x * units.power).collect();
    let price = units.price();
    let duals = Duals {
        lambda: duals_scaled.lambda.iter().map(|x| x * price).collect(),
        mu: duals_scaled.mu.iter().map(|x| x * price).collect(),
        nu: duals_scaled.nu * price,
    };
    let strictly_concave = welfare_hessian_negative_definite(s, &p_opt);
    OracleSolution {
        sw: social_welfare(s, &p_opt).unwrap_or(f64::NAN),
        p_opt,
        duals,
        kkt_residual: kkt,
        iterations,
        converged,
        strictly_concave,
    }
}

fn add(p: &[f64], g: &[f64], t: f64) -> Vec<f64> {
    p.iter().zip(g).map(|(x, d)| x + t * d).collect()
}

/// Cholesky test of `-Hessian(SW)` at `p`.
fn welfare_hessian_negative_definite(s: &Scenario, p: &[f64]) -> bool {
    let n = s.n();
    let c = s.cost();
    let total: f64 = p.iter().sum();
    let cost_curv = if c.exponent > 1.0 && total > 0.0 {
        c.coeff * c.horizon * c.exponent * (c.exponent - 1.0) * total.powf(c.exponent - 2.0)
    } else {
        0.0
    };
    // m = -H = sum_k (-U_k'') h_k h_k^T + C'' 11^T
    let mut m = vec![vec![cost_curv; n]; n];
    for eu in s.eus() {
        let q = eu.received_power(p);
        if q <= 0.0 {
            continue;
        }
        let curv = -eu.utility.second_derivative(q);
        for i in 0..n {
            for j in 0..n {
                m[i][j] += curv * eu.gains[i] * eu.gains[j];
            }
        }
    }
    let scale = (0..n).map(|i| m[i][i].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return false;
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 1e-10 * scale {
                    return false;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    true
}

/// Tax rates and taxes of the constrained Lindahl allocation at `p_opt`.
#[derive(Debug, Clone, PartialEq)]
pub struct LindahlAllocation {
    pub p_opt: Vec<f64>,
    /// `rates[k][n]` for agents `k = 0..=K` (row 0 is the ET).
    pub rates: Vec<Vec<f64>>,
    pub taxes: Vec<Vec<f64>>,
}

/// EU rates are marginal utilities at `p_opt`; the ET rate is minus their sum.
pub fn lindahl_allocation(s: &Scenario, sol: &OracleSolution) -> Result<LindahlAllocation> {
    lindahl_at(s, &sol.p_opt)
}

pub fn lindahl_at(s: &Scenario, p: &[f64]) -> Result<LindahlAllocation> {
    let n = s.n();
    let mut rates = vec![vec![0.0; n]];
    for eu in s.eus() {
        rates.push(marginal_utility(eu, p)?);
    }
    for col in 0..n {
        rates[0][col] = -rates[1..].iter().map(|r| r[col]).sum::<f64>();
    }
    let taxes = rates
        .iter()
        .map(|r| r.iter().zip(p).map(|(a, b)| a * b).collect())
        .collect();
    Ok(LindahlAllocation {
        p_opt: p.to_vec(),
        rates,
        taxes,
    })
}
