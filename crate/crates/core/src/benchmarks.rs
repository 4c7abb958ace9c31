//! Baselines: the private-goods benchmark equilibrium (BE), distributed pure
//! optimization (DPO) on a star topology, and the virtual-agent transform
//! that lets single-EU economies run the ring mechanisms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::local::{et_prox, eu_prox};
use crate::model::{project_feasible, uniform, EuProfile, Scenario};
use crate::mpat::AdalConfig;
use crate::oracle::{search_q_floor, social_welfare, solve_swm};
use crate::trace::{guarded_rel_change, indexed, rel_gap, EquilibriumReport, Payoff, SolveTrace};
use crate::units::{Aggregation, Units};

/// Market outcome when every EU buys power privately at price `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkEquilibrium {
    pub p_be: Vec<f64>,
    /// `theta_n = max_k dU_k/dp_n` at `p_be`.
    pub theta: Vec<f64>,
    /// `demands[k][n]`, EUs only (row 0 is EU 1).
    pub demands: Vec<Vec<f64>>,
    pub sw: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeConfig {
    /// Initial step in calibrated units. The step halves when consecutive
    /// moves point in opposing directions and otherwise grows by 5%.
    pub alpha0: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub normalize: bool,
}

impl Default for BeConfig {
    fn default() -> Self {
        Self {
            alpha0: 0.5,
            eps: 1e-9,
            max_iters: 200_000,
            normalize: true,
        }
    }
}

/// Componentwise max over EUs of marginal utilities, and the EUs attaining it
/// on each channel (relative tie tolerance `1e-12`).
fn max_marginal(s: &Scenario, p: &[f64], q_floor: f64) -> (Vec<f64>, Vec<Vec<usize>>) {
    let n = s.n();
    let mut best = vec![0.0f64; n];
    let mut who: Vec<Vec<usize>> = vec![Vec::new(); n];
    let marginals: Vec<Vec<f64>> = s
        .eus()
        .iter()
        .map(|eu| {
            let d = eu.utility.derivative_floored(eu.received_power(p), q_floor);
            eu.gains.iter().map(|h| if *h == 0.0 { 0.0 } else { h * d }).collect()
        })
        .collect();
    for c in 0..n {
        let top = marginals.iter().map(|m| m[c]).fold(0.0, f64::max);
        best[c] = top;
        if top > 0.0 {
            who[c] = (0..marginals.len())
                .filter(|&k| marginals[k][c] >= top * (1.0 - 1e-12))
                .collect();
        }
    }
    (best, who)
}

/// Projected iteration `p <- Proj_P[p + alpha (max_k grad U_k - grad C)]`.
///
/// Each move is clipped to a trust region of `alpha * max(1, |p|_inf)` per
/// channel; `alpha` halves when consecutive moves oppose each other. The run
/// stops once the unit-step displacement `|Proj_P[p + F(p)] - p|` is within
/// `eps |p|` (guarded at zero), or after `max_iters`.
pub fn run_be(s: &Scenario, cfg: &BeConfig) -> Result<(SolveTrace, BenchmarkEquilibrium)> {
    if !(cfg.alpha0 > 0.0 && cfg.eps > 0.0) {
        return Err(contract("BE step and threshold must be positive"));
    }
    let units = if cfg.normalize {
        Units::calibrate(s, Aggregation::Max)
    } else {
        Units::IDENTITY
    };
    let ns = units.apply(s);
    let n = ns.n();
    let q_floor = search_q_floor(&ns);
    let field = |p: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let (theta, _) = max_marginal(&ns, p, q_floor);
        let mc = ns.cost().marginal(p.iter().sum());
        let f = theta.iter().map(|t| t - mc).collect();
        (theta, f)
    };

    let mut p = project_feasible(&vec![1.0 / n as f64; n], ns.channels());
    let mut alpha = cfg.alpha0;
    let mut last_move = vec![0.0; n];

    let mut columns: Vec<String> = indexed("p", 1..n + 1).collect();
    columns.extend(indexed("theta", 1..n + 1));
    columns.push("max_rel_change".into());
    let mut trace = SolveTrace::new(columns);
    let snapshot = |p: &[f64], theta: &[f64], change: f64| -> Vec<f64> {
        let mut row: Vec<f64> = p.iter().map(|x| x * units.power).collect();
        row.extend(theta.iter().map(|x| x * units.price()));
        row.push(change);
        row
    };

    let mut converged = false;
    let mut iterations = 0;
    loop {
        let (theta, f) = field(&p);
        let unit = project_feasible(&p.iter().zip(&f).map(|(x, d)| x + d).collect::<Vec<_>>(), ns.channels());
        let p_norm = norm(&p).max(1e-9);
        let change = norm(&unit.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>()) / p_norm;
        if iterations == 0 || iterations % 16 == 0 || change <= cfg.eps {
            trace.push(iterations, snapshot(&p, &theta, change));
        }
        if change <= cfg.eps {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iters {
            break;
        }
        iterations += 1;
        let radius = alpha * p.iter().cloned().fold(1.0, f64::max);
        let trial: Vec<f64> = p
            .iter()
            .zip(&f)
            .map(|(x, d)| x + (alpha * d).clamp(-radius, radius))
            .collect();
        let next = project_feasible(&trial, ns.channels());
        let mv: Vec<f64> = next.iter().zip(&p).map(|(a, b)| a - b).collect();
        let turn: f64 = mv.iter().zip(&last_move).map(|(a, b)| a * b).sum();
        alpha = if turn < 0.0 { alpha * 0.5 } else { (alpha * 1.05).min(cfg.alpha0 * 1e3) };
        last_move = mv;
        p = next;
    }

    let (theta, who) = max_marginal(&ns, &p, q_floor);
    let p_be: Vec<f64> = p.iter().map(|x| x * units.power).collect();
    let mut demands = vec![vec![0.0; n]; ns.k()];
    for c in 0..n {
        for &k in &who[c] {
            demands[k][c] = p_be[c] / who[c].len() as f64;
        }
    }
    let be = BenchmarkEquilibrium {
        sw: social_welfare(s, &p_be)?,
        theta: theta.iter().map(|t| t * units.price()).collect(),
        p_be,
        demands,
        iterations,
        converged,
    };
    Ok((trace, be))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Appends one EU with zero utility and zero gains.
pub fn add_virtual_agent(s: &Scenario) -> Scenario {
    let mut eus = s.eus().to_vec();
    eus.push(EuProfile::virtual_agent(s.n()));
    let mut pup = s.pup().to_vec();
    pup.push(pup.iter().cloned().fold(s.pmax(), f64::max));
    Scenario::new(s.channels().clone(), eus, *s.cost(), pup).expect("virtual agent keeps scenario valid")
}

/// ADAL on the star reformulation `pi_k = pi_0` (EU copies tied to the ET's
/// copy). The ET's local step sees all `K` penalties; prices `beta_k` move
/// with the local maximizers. Final power is the ET's copy.
pub fn run_dpo(s: &Scenario, cfg: &AdalConfig) -> Result<(SolveTrace, EquilibriumReport)> {
    cfg.validate()?;
    let k_eus = s.k();
    let n = s.n();
    let units = if cfg.normalize {
        Units::calibrate(s, Aggregation::Sum)
    } else {
        Units::IDENTITY
    };
    let ns = units.apply(s);
    let span = ns.pmax().min(cfg.init_span);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pi: Vec<Vec<f64>> = (0..=k_eus)
        .map(|_| (0..n).map(|_| uniform(&mut rng, 0.0, span)).collect())
        .collect();
    let mut beta: Vec<Vec<f64>> = (0..k_eus)
        .map(|_| (0..n).map(|_| uniform(&mut rng, -1.0, 1.0)).collect())
        .collect();
    pi[0] = project_feasible(&pi[0], ns.channels());

    let mut columns: Vec<String> = indexed("p", 1..n + 1).collect();
    columns.extend(["consistency_residual", "sw", "max_rel_change"].map(String::from));
    let mut trace = SolveTrace::new(columns);
    let snapshot = |pi: &[Vec<f64>], change: f64| -> Vec<f64> {
        let p: Vec<f64> = pi[0].iter().map(|x| x * units.power).collect();
        let residual = pi[1..]
            .iter()
            .flat_map(|row| row.iter().zip(&pi[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let sw = social_welfare(s, &p).unwrap_or(f64::NAN);
        let mut row = p;
        row.push(residual * units.power);
        row.push(sw);
        row.push(change);
        row
    };
    trace.push(0, snapshot(&pi, f64::NAN));

    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut hat = Vec::with_capacity(k_eus + 1);
        let et_rates: Vec<f64> = (0..n).map(|c| -beta.iter().map(|b| b[c]).sum::<f64>()).collect();
        let anchor: Vec<f64> = (0..n)
            .map(|c| pi[1..].iter().map(|r| r[c]).sum::<f64>() / k_eus as f64)
            .collect();
        hat.push(et_prox(ns.cost(), ns.channels(), &et_rates, &anchor, cfg.rho * k_eus as f64));
        for k in 1..=k_eus {
            let eu = ns.eu(k);
            hat.push(eu_prox(&eu.utility, &eu.gains, &beta[k - 1], &pi[0], cfg.rho, ns.pup()[k - 1]));
        }

        let mut price_ok = true;
        let mut power_ok = true;
        let mut max_change: f64 = 0.0;
        for k in 0..k_eus {
            for c in 0..n {
                let next = beta[k][c] + cfg.rho * cfg.sigma * (hat[k + 1][c] - hat[0][c]);
                let db = guarded_rel_change(next, beta[k][c]);
                price_ok &= db <= cfg.eps1;
                max_change = max_change.max(db);
                beta[k][c] = next;
            }
        }
        for (row, h) in pi.iter_mut().zip(&hat) {
            for c in 0..n {
                let next = row[c] + cfg.sigma * (h[c] - row[c]);
                let dg = guarded_rel_change(next, row[c]);
                power_ok &= dg <= cfg.eps2;
                max_change = max_change.max(dg);
                row[c] = next;
            }
        }
        trace.push(iterations, snapshot(&pi, max_change));
        if price_ok && power_ok {
            converged = true;
            break;
        }
    }

    let p: Vec<f64> = pi[0].iter().map(|x| x * units.power).collect();
    let price = units.price();
    let gamma: Vec<Vec<f64>> = pi.iter().map(|r| r.iter().map(|x| x * units.power).collect()).collect();
    let mut rates = vec![vec![0.0; n]];
    rates.extend(beta.iter().map(|r| r.iter().map(|x| x * price).collect::<Vec<_>>()));
    for c in 0..n {
        rates[0][c] = -rates[1..].iter().map(|r| r[c]).sum::<f64>();
    }
    let taxes: Vec<Vec<f64>> = rates
        .iter()
        .map(|r| r.iter().zip(&p).map(|(a, b)| a * b).collect())
        .collect();
    let payoffs = (0..=k_eus)
        .map(|k| crate::mpat::mpat_payoff(s, k, &p, &taxes[k]))
        .collect::<Vec<Payoff>>();
    let oracle = solve_swm(s, 1e-10);
    let sw = social_welfare(s, &p)?;
    let report = EquilibriumReport {
        converged,
        iterations,
        oracle_gap: p
            .iter()
            .zip(&oracle.p_opt)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
        rel_sw_gap: rel_gap(sw, oracle.sw),
        p,
        rates: rates.clone(),
        taxes,
        payoffs,
        sw,
        oracle_p: oracle.p_opt,
        oracle_sw: oracle.sw,
        ne: None,
        gamma,
        b: rates.clone(),
    };
    Ok((trace, report))
}
