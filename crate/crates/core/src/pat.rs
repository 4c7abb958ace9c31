//! Single-channel power-and-taxation (PAT) mechanism.
//!
//! Every agent `k in 0..=K` (agent 0 is the ET) submits a power proposal
//! `gamma_k` and a price proposal `b_k`. The ET transmits the mean proposal
//! and charges agent `k` the rate `b_{k+1} - b_{k+2}` (indices mod `K + 1`),
//! so rates, and therefore taxes, cancel for every message profile.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, contract, Error, Result};
use crate::local::{et_best_response_scalar, eu_best_response_scalar};
use crate::model::{uniform, Scenario};
use crate::oracle::{lindahl_at, social_welfare, solve_swm, LindahlAllocation};
use crate::trace::{guarded_rel_change, indexed, rel_gap, EquilibriumReport, NeReport, Payoff, SolveTrace};
use crate::units::{Aggregation, Units};

/// `omega(k + shift)` for agent `k` in a ring of `agents` participants.
pub(crate) fn ring(k: usize, shift: isize, agents: usize) -> usize {
    (k as isize + shift).rem_euclid(agents as isize) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatMessageProfile {
    pub gamma: Vec<f64>,
    pub b: Vec<f64>,
}

impl PatMessageProfile {
    pub fn new(gamma: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        check_len(gamma.len(), b.len())?;
        if gamma.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(contract("message profile entries must be finite"));
        }
        Ok(Self { gamma, b })
    }

    pub fn agents(&self) -> usize {
        self.gamma.len()
    }

    /// Adds `shift` to every price proposal.
    pub fn shift_prices(&self, shift: f64) -> Self {
        Self {
            gamma: self.gamma.clone(),
            b: self.b.iter().map(|b| b + shift).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatAllocation {
    pub p: f64,
    pub rates: Vec<f64>,
    pub taxes: Vec<f64>,
    /// Filled by [`PatAllocation::with_payoffs`]; empty otherwise.
    pub payoffs: Vec<Payoff>,
}

impl PatAllocation {
    pub fn with_payoffs(mut self, s: &Scenario) -> Self {
        self.payoffs = (0..self.rates.len())
            .map(|k| pat_payoff(s, k, self.p, self.taxes[k]))
            .collect();
        self
    }
}

/// Tax rates `R_k = b_{k+1} - b_{k+2}`.
pub fn tax_rates(b: &[f64]) -> Vec<f64> {
    let agents = b.len();
    (0..agents)
        .map(|k| b[ring(k, 1, agents)] - b[ring(k, 2, agents)])
        .collect()
}

/// Transmit power, rates and taxes for a message profile.
pub fn pat_outcome(m: &PatMessageProfile) -> Result<PatAllocation> {
    let agents = m.agents();
    check_len(agents, m.b.len())?;
    if agents < 3 {
        return Err(Error::VirtualAgentRequired { agents });
    }
    let p = m.gamma.iter().sum::<f64>() / agents as f64;
    let rates = tax_rates(&m.b);
    let taxes = rates.iter().map(|r| r * p).collect();
    Ok(PatAllocation {
        p,
        rates,
        taxes,
        payoffs: Vec::new(),
    })
}

/// `J_k(p, t_k)`: EU `U_k(h_k p) - t_k`; ET `-C(p) - t_0` on `P` and
/// [`Payoff::Infeasible`] outside it.
pub fn pat_payoff(s: &Scenario, k: usize, p: f64, t_k: f64) -> Payoff {
    if k == 0 {
        if p < 0.0 || p > s.pmax() || p > s.channels().peak()[0] {
            Payoff::Infeasible
        } else {
            Payoff::Finite(-s.cost().of_total(p) - t_k)
        }
    } else {
        let eu = s.eu(k);
        let q = eu.gains[0] * p.max(0.0);
        Payoff::Finite(eu.utility.value(q).unwrap_or(f64::NAN) - t_k)
    }
}

fn single_channel(s: &Scenario) -> Result<()> {
    if s.n() != 1 {
        return Err(contract(format!("PAT is single-channel, scenario has {} channels", s.n())));
    }
    Ok(())
}

/// Clipped payoff maximizer of agent `k` under rate `rate`: EUs over
/// `[0, P_k^up]`, the ET over `[0, pmax]`.
pub fn best_response_power(s: &Scenario, k: usize, rate: f64) -> Result<f64> {
    single_channel(s)?;
    if k > s.k() {
        return Err(contract(format!("agent {k} out of range 0..={}", s.k())));
    }
    Ok(if k == 0 {
        let cap = s.pmax().min(s.channels().peak()[0]);
        et_best_response_scalar(s.cost(), rate, cap)
    } else {
        let eu = s.eu(k);
        eu_best_response_scalar(&eu.utility, eu.gains[0], rate, s.pup()[k - 1])
    })
}

/// Checks every agent's best response at its rate against `p(m)`.
pub fn verify_ne(s: &Scenario, m: &PatMessageProfile, tol: f64) -> Result<NeReport> {
    check_len(s.agents(), m.agents())?;
    let out = pat_outcome(m)?;
    let gaps = (0..s.agents())
        .map(|k| best_response_power(s, k, out.rates[k]).map(|br| (br - out.p).abs()))
        .collect::<Result<Vec<_>>>()?;
    Ok(NeReport::new(gaps, tol, None))
}

/// `J_k(p*, t_k*) - J_k(0, 0)` for every agent.
pub fn participation_check(s: &Scenario, alloc: &PatAllocation) -> Vec<f64> {
    (0..alloc.rates.len())
        .map(|k| {
            let at_ne = pat_payoff(s, k, alloc.p, alloc.taxes[k]);
            let outside = pat_payoff(s, k, 0.0, 0.0);
            match (at_ne, outside) {
                (Payoff::Finite(a), Payoff::Finite(b)) => a - b,
                _ => f64::NEG_INFINITY,
            }
        })
        .collect()
}

/// Consistency prices reproducing the given rates:
/// `beta_0 = 0`, `beta_{k+1} = beta_k - R_k`, then `b_k = beta_{k-1}`.
pub(crate) fn prices_for_rates(rates: &[f64]) -> Vec<f64> {
    let agents = rates.len();
    let mut beta = vec![0.0; agents];
    for k in 0..agents - 1 {
        beta[k + 1] = beta[k] - rates[k];
    }
    (0..agents).map(|k| beta[ring(k, -1, agents)]).collect()
}

/// The equilibrium profile built from a Lindahl allocation: every agent
/// proposes `p^o` and prices are consistency prices reproducing the rates.
pub fn ne_profile_from_lindahl(la: &LindahlAllocation) -> PatMessageProfile {
    let rates: Vec<f64> = la.rates.iter().map(|r| r[0]).collect();
    PatMessageProfile {
        gamma: vec![la.p_opt[0]; rates.len()],
        b: prices_for_rates(&rates),
    }
}

/// Diminishing step `rho(tau) = rho0 * c / (c + tau)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub rho0: f64,
    pub c: f64,
}

impl StepSchedule {
    pub fn at(&self, tau: usize) -> f64 {
        self.rho0 * self.c / (self.c + tau as f64)
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { rho0: 1.0, c: 50.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DPatConfig {
    pub step: StepSchedule,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Run in calibrated units (see [`Units`]).
    pub normalize: bool,
    /// Initial power proposals are drawn from `[0, min(pmax, init_span)]`
    /// in solver units.
    pub init_span: f64,
    /// NE tolerance as a fraction of `pmax`.
    pub ne_tol: f64,
    /// Per-agent step damping: each price move is `rho(tau) * s_k` times the
    /// consistency gap, clipped to `rho(tau) * s_k * max(1, max_j |R_j|)`.
    /// `s_k` halves (down to 0.01) whenever the gap changes sign and
    /// otherwise recovers by 5% up to 1. Off gives the plain dual step.
    pub safeguard: bool,
}

impl Default for DPatConfig {
    fn default() -> Self {
        Self {
            step: StepSchedule::default(),
            eps1: 1e-6,
            eps2: 1e-6,
            max_iters: 100_000,
            seed: 0,
            normalize: true,
            init_span: 2.0,
            ne_tol: 1e-3,
            safeguard: true,
        }
    }
}

impl DPatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps1 > 0.0 && self.eps2 > 0.0) {
            return Err(contract("stopping thresholds must be positive"));
        }
        if !(self.step.rho0 > 0.0 && self.step.c > 0.0) {
            return Err(contract("step schedule parameters must be positive"));
        }
        Ok(())
    }
}

/// Distributed dual-gradient search for a PAT equilibrium.
///
/// Each round every agent best-responds to its current rate
/// (`gamma_k <- BR_k(R_k)`) and moves its price toward consistency of its
/// two predecessors (`b_k <- b_k + rho(tau) (gamma_{k-1} - gamma_{k-2})`).
/// Stops once every relative change is within `eps1` (prices) and `eps2`
/// (powers), or after `max_iters` rounds.
/// Bounds of the per-agent step damping used when `safeguard` is on.
const DAMPING_FLOOR: f64 = 0.01;
const DAMPING_GROWTH: f64 = 1.05;

pub fn run_dpat(s: &Scenario, cfg: &DPatConfig) -> Result<(SolveTrace, EquilibriumReport)> {
    single_channel(s)?;
    cfg.validate()?;
    let agents = s.agents();
    if agents < 3 {
        return Err(Error::VirtualAgentRequired { agents });
    }
    let units = if cfg.normalize {
        Units::calibrate(s, Aggregation::Sum)
    } else {
        Units::IDENTITY
    };
    let ns = units.apply(s);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let span = ns.pmax().min(cfg.init_span);
    let mut gamma: Vec<f64> = (0..agents).map(|_| uniform(&mut rng, 0.0, span)).collect();
    let mut b: Vec<f64> = (0..agents).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();

    let mut columns = vec!["p".to_string()];
    columns.extend(indexed("gamma", 0..agents));
    columns.extend(indexed("b", 0..agents));
    columns.push("max_rel_change".into());
    let mut trace = SolveTrace::new(columns);
    let snapshot = |gamma: &[f64], b: &[f64], change: f64| -> Vec<f64> {
        let mut row = vec![gamma.iter().sum::<f64>() / agents as f64 * units.power];
        row.extend(gamma.iter().map(|g| g * units.power));
        row.extend(b.iter().map(|x| x * units.price()));
        row.push(change);
        row
    };
    trace.push(0, snapshot(&gamma, &b, f64::NAN));

    let mut damping = vec![1.0f64; agents];
    let mut last_gap = vec![0.0f64; agents];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let rates = tax_rates(&b);
        let rho = cfg.step.at(iterations);
        let next_gamma = (0..agents)
            .map(|k| best_response_power(&ns, k, rates[k]))
            .collect::<Result<Vec<_>>>()?;
        let radius = rates.iter().fold(1.0f64, |m, r| m.max(r.abs()));
        let next_b: Vec<f64> = (0..agents)
            .map(|k| {
                let gap = gamma[ring(k, -1, agents)] - gamma[ring(k, -2, agents)];
                if !cfg.safeguard {
                    return b[k] + rho * gap;
                }
                if gap * last_gap[k] < 0.0 {
                    damping[k] = (damping[k] * 0.5).max(DAMPING_FLOOR);
                } else if gap != 0.0 {
                    damping[k] = (damping[k] * DAMPING_GROWTH).min(1.0);
                }
                last_gap[k] = gap;
                let r = rho * damping[k] * radius;
                b[k] + (rho * damping[k] * gap).clamp(-r, r)
            })
            .collect();

        let mut price_ok = true;
        let mut power_ok = true;
        let mut max_change: f64 = 0.0;
        for k in 0..agents {
            let db = guarded_rel_change(next_b[k], b[k]);
            let dg = guarded_rel_change(next_gamma[k], gamma[k]);
            price_ok &= db <= cfg.eps1;
            power_ok &= dg <= cfg.eps2;
            max_change = max_change.max(db).max(dg);
        }
        gamma = next_gamma;
        b = next_b;
        trace.push(iterations, snapshot(&gamma, &b, max_change));
        if price_ok && power_ok {
            converged = true;
            break;
        }
    }

    let profile = PatMessageProfile {
        gamma: gamma.iter().map(|g| g * units.power).collect(),
        b: b.iter().map(|x| x * units.price()).collect(),
    };
    let report = pat_report(s, &profile, converged, iterations, cfg.ne_tol)?;
    Ok((trace, report))
}

/// Allocation, payoffs, oracle comparison and NE check for a final profile.
pub fn pat_report(
    s: &Scenario,
    profile: &PatMessageProfile,
    converged: bool,
    iterations: usize,
    ne_tol: f64,
) -> Result<EquilibriumReport> {
    let alloc = pat_outcome(profile)?.with_payoffs(s);
    let oracle = solve_swm(s, 1e-10);
    let p = vec![alloc.p];
    let sw = social_welfare(s, &[alloc.p.clamp(0.0, s.pmax())])?;
    let ne = verify_ne(s, profile, ne_tol * s.pmax())?;
    Ok(EquilibriumReport {
        converged,
        iterations,
        oracle_gap: (alloc.p - oracle.p_opt[0]).abs(),
        rel_sw_gap: rel_gap(sw, oracle.sw),
        rates: alloc.rates.iter().map(|r| vec![*r]).collect(),
        taxes: alloc.taxes.iter().map(|t| vec![*t]).collect(),
        payoffs: alloc.payoffs,
        p,
        sw,
        oracle_p: oracle.p_opt,
        oracle_sw: oracle.sw,
        ne: Some(ne),
        gamma: profile.gamma.iter().map(|g| vec![*g]).collect(),
        b: profile.b.iter().map(|b| vec![*b]).collect(),
    })
}

/// Lindahl allocation of a single-channel scenario as a PAT allocation.
pub fn lindahl_pat_allocation(s: &Scenario, p: f64) -> Result<PatAllocation> {
    let la = lindahl_at(s, &[p])?;
    let rates: Vec<f64> = la.rates.iter().map(|r| r[0]).collect();
    let taxes = rates.iter().map(|r| r * p).collect();
    Ok(PatAllocation {
        p,
        rates,
        taxes,
        payoffs: Vec::new(),
    }
    .with_payoffs(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChannelSet, CostSpec, EuProfile, UtilitySpec};

    fn log() -> UtilitySpec {
        UtilitySpec::LogThroughput {
            wpt_time: 1.0,
            tx_time: 1.0,
            bandwidth: 1.0,
            gain: 1.0,
            noise: 1.0,
        }
    }

    /// Two `ln(1 + p)` EUs with cost `coeff * p^zeta`.
    fn two_eu(pmax: f64, zeta: f64, coeff: f64) -> Scenario {
        Scenario::with_pup_factor(
            ChannelSet::uniform(1, pmax).unwrap(),
            vec![EuProfile::new(vec![1.0], log()), EuProfile::new(vec![1.0], log())],
            CostSpec::new(coeff, zeta, 1.0).unwrap(),
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn outcome_examples() {
        let m = PatMessageProfile::new(vec![3.0, 3.0, 3.0], vec![1.0, 2.0, 3.0]).unwrap();
        let out = pat_outcome(&m).unwrap();
        assert_eq!(out.p, 3.0);
        assert_eq!(out.rates, vec![-1.0, 2.0, -1.0]);
        assert_eq!(out.taxes, vec![-3.0, 6.0, -3.0]);
        let m = PatMessageProfile::new(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(pat_outcome(&m), Err(Error::VirtualAgentRequired { agents: 2 }));
        assert!(PatMessageProfile::new(vec![1.0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn own_price_does_not_move_own_rate() {
        let b = vec![0.3, -1.2, 2.5, 0.7];
        let base = tax_rates(&b);
        for k in 0..b.len() {
            let mut bumped = b.clone();
            bumped[k] += 17.0;
            assert_eq!(tax_rates(&bumped)[k], base[k]);
        }
    }

    #[test]
    fn payoff_examples() {
        let s = two_eu(10.0, 1.0, 1.0);
        assert_eq!(pat_payoff(&s, 1, 0.0, 0.0), Payoff::Finite(0.0));
        assert_eq!(pat_payoff(&s, 0, 0.0, 0.0), Payoff::Finite(0.0));
        assert_eq!(pat_payoff(&s, 0, 11.0, 0.0), Payoff::Infeasible);
        let v = pat_payoff(&s, 1, 1.0, 0.5).finite().unwrap();
        assert!((v - (2f64.ln() - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn best_response_examples() {
        let s = two_eu(10.0, 1.0, 1.0);
        assert!((best_response_power(&s, 1, 0.5).unwrap() - 1.0).abs() < 1e-10);
        assert_eq!(best_response_power(&s, 2, -0.3).unwrap(), 100.0);
        assert_eq!(best_response_power(&s, 0, -1.0).unwrap(), 10.0);
        assert_eq!(best_response_power(&s, 0, 0.5).unwrap(), 0.0);
        assert!(best_response_power(&s, 3, 0.5).is_err());
    }

    #[test]
    fn lindahl_profile_is_an_equilibrium() {
        let s = two_eu(10.0, 2.0, 0.5);
        let sol = solve_swm(&s, 1e-12);
        let la = lindahl_at(&s, &sol.p_opt).unwrap();
        let m = ne_profile_from_lindahl(&la);
        let rep = verify_ne(&s, &m, 1e-6).unwrap();
        assert!(rep.is_ne, "{rep:?}");
        let shifted = verify_ne(&s, &m.shift_prices(4.2), 1e-6).unwrap();
        assert!(shifted.is_ne);

        let random = PatMessageProfile::new(vec![0.2, 3.0, 1.4], vec![0.1, -0.4, 0.9]).unwrap();
        let rep = verify_ne(&s, &random, 1e-6).unwrap();
        assert!(!rep.is_ne);
        assert!(rep.gaps.iter().any(|g| *g > 0.1));
        let rep_shifted = verify_ne(&s, &random.shift_prices(-3.0), 1e-6).unwrap();
        for (a, b) in rep.gaps.iter().zip(&rep_shifted.gaps) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn participation_at_lindahl_allocation() {
        let s = two_eu(10.0, 1.0, 1.0);
        let alloc = lindahl_pat_allocation(&s, 1.0).unwrap();
        let d = participation_check(&s, &alloc);
        let expected = 2f64.ln() - 0.5;
        assert!((d[1] - expected).abs() < 1e-12 && (d[2] - expected).abs() < 1e-12);
        // ET: reimbursed 1.0 per Watt against marginal cost 1.0.
        assert!(d[0].abs() < 1e-12);
        assert!(d.iter().all(|x| *x >= -1e-12));
    }

    #[test]
    fn dpat_zero_iterations_returns_initial_profile() {
        let s = two_eu(10.0, 2.0, 0.5);
        let cfg = DPatConfig {
            max_iters: 0,
            ..Default::default()
        };
        let (trace, rep) = run_dpat(&s, &cfg).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 0);
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn dpat_converges_to_interior_optimum() {
        // 2/(1+p) = p  =>  p = 1.
        let s = two_eu(10.0, 2.0, 0.5);
        let (_, rep) = run_dpat(&s, &DPatConfig::default()).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!((rep.p[0] - 1.0).abs() < 1e-3, "{:?}", rep.p);
        assert!(rep.ne.as_ref().unwrap().is_ne);
    }

    #[test]
    fn dpat_converges_to_binding_cap() {
        let s = two_eu(0.6, 2.0, 0.5);
        let (_, rep) = run_dpat(&s, &DPatConfig::default()).unwrap();
        assert!(rep.converged);
        assert!((rep.p[0] - 0.6).abs() < 1e-3, "{:?}", rep.p);
    }

    #[test]
    fn dpat_rejects_multichannel_and_small_rings() {
        let s = Scenario::with_pup_factor(
            ChannelSet::uniform(1, 1.0).unwrap(),
            vec![EuProfile::new(vec![1.0], log())],
            CostSpec::new(1.0, 2.0, 1.0).unwrap(),
            10.0,
        )
        .unwrap();
        assert!(matches!(
            run_dpat(&s, &DPatConfig::default()),
            Err(Error::VirtualAgentRequired { agents: 2 })
        ));
    }
}
