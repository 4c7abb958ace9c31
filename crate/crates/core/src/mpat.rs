//! Multi-channel PAT (MPAT) mechanism and the D-MPAT augmented-Lagrangian
//! search.
//!
//! MPAT applies the single-channel rules channel by channel: the ET transmits
//! `p_n = mean_k gamma_{k,n}` and charges `R_{k,n} = b_{k+1,n} - b_{k+2,n}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_len, contract, Error, Result};
use crate::local::{et_prox, eu_prox};
use crate::model::{uniform, Scenario};
use crate::oracle::{fit_duals, kkt_residual, social_welfare, solve_swm, LindahlAllocation};
use crate::pat::{prices_for_rates, ring, tax_rates};
use crate::trace::{guarded_rel_change, indexed, rel_gap, EquilibriumReport, NeReport, Payoff, SolveTrace};
use crate::units::{Aggregation, Units};

/// `(K+1) x N` matrices, agent 0 (the ET) first.
#[derive(Debug, Clone, PartialEq)]
pub struct MpatMessageProfile {
    pub gamma: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl MpatMessageProfile {
    pub fn new(gamma: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        check_len(gamma.len(), b.len())?;
        let n = gamma.first().map_or(0, Vec::len);
        for row in gamma.iter().chain(&b) {
            check_len(n, row.len())?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(contract("message profile entries must be finite"));
            }
        }
        Ok(Self { gamma, b })
    }

    pub fn agents(&self) -> usize {
        self.gamma.len()
    }

    pub fn channels(&self) -> usize {
        self.gamma.first().map_or(0, Vec::len)
    }

    /// Adds `shift[n]` to every price proposal on channel `n`.
    pub fn shift_prices(&self, shift: &[f64]) -> Self {
        Self {
            gamma: self.gamma.clone(),
            b: self
                .b
                .iter()
                .map(|row| row.iter().zip(shift).map(|(b, d)| b + d).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpatAllocation {
    pub p: Vec<f64>,
    pub rates: Vec<Vec<f64>>,
    pub taxes: Vec<Vec<f64>>,
    /// Filled by [`MpatAllocation::with_payoffs`]; empty otherwise.
    pub payoffs: Vec<Payoff>,
}

impl MpatAllocation {
    pub fn with_payoffs(mut self, s: &Scenario) -> Self {
        self.payoffs = (0..self.rates.len())
            .map(|k| mpat_payoff(s, k, &self.p, &self.taxes[k]))
            .collect();
        self
    }
}

fn column(rows: &[Vec<f64>], n: usize) -> Vec<f64> {
    rows.iter().map(|r| r[n]).collect()
}

/// Rate matrix from a price matrix, channel by channel.
pub fn tax_rate_matrix(b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let agents = b.len();
    let n = b.first().map_or(0, Vec::len);
    let mut rates = vec![vec![0.0; n]; agents];
    for c in 0..n {
        for (k, r) in tax_rates(&column(b, c)).into_iter().enumerate() {
            rates[k][c] = r;
        }
    }
    rates
}

pub fn mpat_outcome(m: &MpatMessageProfile) -> Result<MpatAllocation> {
    let agents = m.agents();
    check_len(agents, m.b.len())?;
    if agents < 3 {
        return Err(Error::VirtualAgentRequired { agents });
    }
    let n = m.channels();
    for row in m.gamma.iter().chain(&m.b) {
        check_len(n, row.len())?;
    }
    let p: Vec<f64> = (0..n)
        .map(|c| m.gamma.iter().map(|r| r[c]).sum::<f64>() / agents as f64)
        .collect();
    let rates = tax_rate_matrix(&m.b);
    let taxes = rates
        .iter()
        .map(|r| r.iter().zip(&p).map(|(a, b)| a * b).collect())
        .collect();
    Ok(MpatAllocation {
        p,
        rates,
        taxes,
        payoffs: Vec::new(),
    })
}

/// EU: `U_k(q_k(p)) - sum_n t_{k,n}`; ET: `-C(p) - sum_n t_{0,n}` on `P`,
/// [`Payoff::Infeasible`] outside it.
pub fn mpat_payoff(s: &Scenario, k: usize, p: &[f64], taxes: &[f64]) -> Payoff {
    let paid: f64 = taxes.iter().sum();
    if k == 0 {
        if s.channels().contains(p, 0.0) {
            Payoff::Finite(-crate::model::cost(s.cost(), p) - paid)
        } else {
            Payoff::Infeasible
        }
    } else {
        let q = s.eu(k).received_power(&p.iter().map(|x| x.max(0.0)).collect::<Vec<_>>());
        Payoff::Finite(s.eu(k).utility.value(q).unwrap_or(f64::NAN) - paid)
    }
}

/// `argmax_p J_k(p, R_k p) - rho/2 |p - anchor|^2`: EUs over
/// `[0, P_k^up]^N`, the ET over `P`.
pub fn adal_local_update(s: &Scenario, k: usize, rates: &[f64], anchor: &[f64], rho: f64) -> Result<Vec<f64>> {
    check_len(s.n(), rates.len())?;
    check_len(s.n(), anchor.len())?;
    if k > s.k() {
        return Err(contract(format!("agent {k} out of range 0..={}", s.k())));
    }
    if !(rho > 0.0) {
        return Err(contract("rho must be positive"));
    }
    Ok(local_update(s, k, rates, anchor, rho))
}

fn local_update(s: &Scenario, k: usize, rates: &[f64], anchor: &[f64], rho: f64) -> Vec<f64> {
    if k == 0 {
        et_prox(s.cost(), s.channels(), rates, anchor, rho)
    } else {
        let eu = s.eu(k);
        eu_prox(&eu.utility, &eu.gains, rates, anchor, rho, s.pup()[k - 1])
    }
}

/// Which penalty and price step D-MPAT uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdalVariant {
    /// Agent `k` is penalized only against `gamma_{k-1}`; prices move with
    /// the relaxed proposals `gamma(tau)`.
    OneSided,
    /// Each consistency constraint `pi_k = pi_{k-1}` is penalized in both
    /// local problems it couples; prices move with the local maximizers.
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdalConfig {
    pub rho: f64,
    pub sigma: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub variant: AdalVariant,
    /// Run in calibrated units (see [`Units`]).
    pub normalize: bool,
    /// Initial power proposals are drawn from `[0, min(pmax, init_span)]`
    /// in solver units.
    pub init_span: f64,
    /// NE tolerance as a fraction of `pmax`.
    pub ne_tol: f64,
}

impl Default for AdalConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            sigma: 0.25,
            eps1: 1e-6,
            eps2: 1e-6,
            max_iters: 50_000,
            seed: 0,
            variant: AdalVariant::OneSided,
            normalize: true,
            init_span: 2.0,
            ne_tol: 1e-3,
        }
    }
}

impl AdalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(contract("rho must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return Err(contract("sigma must lie in (0, 1/2)"));
        }
        if !(self.eps1 > 0.0 && self.eps2 > 0.0) {
            return Err(contract("stopping thresholds must be positive"));
        }
        Ok(())
    }
}

/// `L_rho(pi, beta) = sum_k L_{rho,k}` with
/// `L_{rho,k} = f_k(pi_k) - sum_n pi_{k,n}(beta_{k,n} - beta_{k+1,n})
///  - rho/2 sum_n (pi_{k,n} - pi_{k-1,n})^2`,
/// `f_0 = -C`, `f_k = U_k` for EUs.
pub fn augmented_lagrangian(s: &Scenario, pi: &[Vec<f64>], beta: &[Vec<f64>], rho: f64) -> Result<f64> {
    let agents = s.agents();
    check_len(agents, pi.len())?;
    check_len(agents, beta.len())?;
    let mut total = 0.0;
    for k in 0..agents {
        check_len(s.n(), pi[k].len())?;
        check_len(s.n(), beta[k].len())?;
        total += if k == 0 {
            -crate::model::cost(s.cost(), &pi[0])
        } else {
            let eu = s.eu(k);
            eu.utility.value(crate::model::received_power(&pi[k], eu)?)?
        };
        let next = ring(k, 1, agents);
        let prev = ring(k, -1, agents);
        for n in 0..s.n() {
            total -= pi[k][n] * (beta[k][n] - beta[next][n]);
            let d = pi[k][n] - pi[prev][n];
            total -= 0.5 * rho * d * d;
        }
    }
    Ok(total)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Maximizer of agent `k`'s unpenalized payoff nearest `start`, found by
/// proximal-point iterations. Returns the distance from `start`.
fn best_response_gap(s: &Scenario, k: usize, rates: &[f64], start: &[f64]) -> f64 {
    let mut x = start.to_vec();
    for _ in 0..20_000 {
        let next = local_update(s, k, rates, &x, 1.0);
        let step = max_abs_diff(&next, &x);
        x = next;
        if step <= 1e-13 * (1.0 + x.iter().cloned().fold(0.0, f64::max)) {
            break;
        }
    }
    max_abs_diff(&x, start)
}

/// Unilateral best-response check of an MPAT profile plus the KKT residual
/// of the welfare problem at `p(m)`. Gaps and `tol` are in Watts.
pub fn verify_mpat_ne(s: &Scenario, m: &MpatMessageProfile, tol: f64) -> Result<NeReport> {
    check_len(s.agents(), m.agents())?;
    check_len(s.n(), m.channels())?;
    let out = mpat_outcome(m)?;
    let units = Units::calibrate(s, Aggregation::Sum);
    let ns = units.apply(s);
    let p: Vec<f64> = out.p.iter().map(|x| x / units.power).collect();
    let gaps = (0..s.agents())
        .into_par_iter()
        .map(|k| {
            let rates: Vec<f64> = out.rates[k].iter().map(|r| r / units.price()).collect();
            best_response_gap(&ns, k, &rates, &p) * units.power
        })
        .collect();
    let duals = fit_duals(&ns, &p, 1e-9);
    let kkt = kkt_residual(&ns, &project_into(&ns, &p), &duals);
    Ok(NeReport::new(gaps, tol, Some(kkt)))
}

fn project_into(s: &Scenario, p: &[f64]) -> Vec<f64> {
    crate::model::project_feasible(p, s.channels())
}

/// Every agent proposes `p^o`; prices are consistency prices reproducing the
/// Lindahl rates on each channel.
pub fn mpat_profile_from_lindahl(la: &LindahlAllocation) -> MpatMessageProfile {
    let agents = la.rates.len();
    let n = la.p_opt.len();
    let mut b = vec![vec![0.0; n]; agents];
    for c in 0..n {
        for (k, v) in prices_for_rates(&column(&la.rates, c)).into_iter().enumerate() {
            b[k][c] = v;
        }
    }
    MpatMessageProfile {
        gamma: vec![la.p_opt.clone(); agents],
        b,
    }
}

/// State of an ADAL run in solver units.
struct AdalState {
    gamma: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

fn random_state(agents: usize, n: usize, span: f64, seed: u64) -> AdalState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = (0..agents)
        .map(|_| (0..n).map(|_| uniform(&mut rng, 0.0, span)).collect())
        .collect();
    let b = (0..agents)
        .map(|_| (0..n).map(|_| uniform(&mut rng, -1.0, 1.0)).collect())
        .collect();
    AdalState { gamma, b }
}

/// One synchronous D-MPAT round. Returns the local maximizers.
fn adal_round(s: &Scenario, st: &mut AdalState, cfg: &AdalConfig) -> Vec<Vec<f64>> {
    let agents = st.gamma.len();
    let n = s.n();
    let rates = tax_rate_matrix(&st.b);
    let gamma = &st.gamma;
    let hat: Vec<Vec<f64>> = (0..agents)
        .into_par_iter()
        .map(|k| {
            let prev = &gamma[ring(k, -1, agents)];
            match cfg.variant {
                AdalVariant::OneSided => local_update(s, k, &rates[k], prev, cfg.rho),
                AdalVariant::TwoSided => {
                    let next = &gamma[ring(k, 1, agents)];
                    let anchor: Vec<f64> = prev.iter().zip(next).map(|(a, c)| 0.5 * (a + c)).collect();
                    local_update(s, k, &rates[k], &anchor, 2.0 * cfg.rho)
                }
            }
        })
        .collect();
    let driver = match cfg.variant {
        AdalVariant::OneSided => st.gamma.clone(),
        AdalVariant::TwoSided => hat.clone(),
    };
    let step = cfg.rho * cfg.sigma;
    for k in 0..agents {
        let (p1, p2) = (ring(k, -1, agents), ring(k, -2, agents));
        for c in 0..n {
            st.b[k][c] += step * (driver[p1][c] - driver[p2][c]);
            st.gamma[k][c] += cfg.sigma * (hat[k][c] - st.gamma[k][c]);
        }
    }
    hat
}

fn consistency_residual(gamma: &[Vec<f64>]) -> f64 {
    let agents = gamma.len();
    (0..agents)
        .map(|k| max_abs_diff(&gamma[k], &gamma[ring(k, -1, agents)]))
        .fold(0.0, f64::max)
}

/// D-MPAT: relaxed local maximizations with consistency penalties and
/// price steps, until every relative change of `b` is within `eps1` and of
/// `gamma` within `eps2`, or `max_iters` rounds.
pub fn run_dmpat(s: &Scenario, cfg: &AdalConfig) -> Result<(SolveTrace, EquilibriumReport)> {
    cfg.validate()?;
    let agents = s.agents();
    if agents < 3 {
        return Err(Error::VirtualAgentRequired { agents });
    }
    let n = s.n();
    let units = if cfg.normalize {
        Units::calibrate(s, Aggregation::Sum)
    } else {
        Units::IDENTITY
    };
    let ns = units.apply(s);
    let mut st = random_state(agents, n, ns.pmax().min(cfg.init_span), cfg.seed);
    st.gamma[0] = project_into(&ns, &st.gamma[0]);

    let mut columns: Vec<String> = indexed("p", 1..n + 1).collect();
    columns.extend(["consistency_residual", "sw", "max_rel_change"].map(String::from));
    let mut trace = SolveTrace::new(columns);
    let snapshot = |st: &AdalState, change: f64| -> Vec<f64> {
        let p: Vec<f64> = (0..n)
            .map(|c| st.gamma.iter().map(|r| r[c]).sum::<f64>() / agents as f64 * units.power)
            .collect();
        let sw = social_welfare(s, &project_into(s, &p)).unwrap_or(f64::NAN);
        let mut row = p;
        row.push(consistency_residual(&st.gamma) * units.power);
        row.push(sw);
        row.push(change);
        row
    };
    trace.push(0, snapshot(&st, f64::NAN));

    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let prev = AdalState {
            gamma: st.gamma.clone(),
            b: st.b.clone(),
        };
        adal_round(&ns, &mut st, cfg);
        debug_assert!(ns.channels().contains(&st.gamma[0], 1e-9));
        let mut price_ok = true;
        let mut power_ok = true;
        let mut max_change: f64 = 0.0;
        for k in 0..agents {
            for c in 0..n {
                let db = guarded_rel_change(st.b[k][c], prev.b[k][c]);
                let dg = guarded_rel_change(st.gamma[k][c], prev.gamma[k][c]);
                price_ok &= db <= cfg.eps1;
                power_ok &= dg <= cfg.eps2;
                max_change = max_change.max(db).max(dg);
            }
        }
        trace.push(iterations, snapshot(&st, max_change));
        if price_ok && power_ok {
            converged = true;
            break;
        }
    }

    let profile = MpatMessageProfile {
        gamma: st
            .gamma
            .iter()
            .map(|r| r.iter().map(|x| x * units.power).collect())
            .collect(),
        b: st
            .b
            .iter()
            .map(|r| r.iter().map(|x| x * units.price()).collect())
            .collect(),
    };
    let report = mpat_report(s, &profile, converged, iterations, cfg.ne_tol)?;
    Ok((trace, report))
}

/// Allocation, payoffs, oracle comparison and NE check for a final profile.
pub fn mpat_report(
    s: &Scenario,
    profile: &MpatMessageProfile,
    converged: bool,
    iterations: usize,
    ne_tol: f64,
) -> Result<EquilibriumReport> {
    let alloc = mpat_outcome(profile)?.with_payoffs(s);
    let oracle = solve_swm(s, 1e-10);
    let sw = social_welfare(s, &project_into(s, &alloc.p))?;
    let ne = verify_mpat_ne(s, profile, ne_tol * s.pmax())?;
    Ok(EquilibriumReport {
        converged,
        iterations,
        oracle_gap: max_abs_diff(&alloc.p, &oracle.p_opt),
        rel_sw_gap: rel_gap(sw, oracle.sw),
        p: alloc.p,
        rates: alloc.rates,
        taxes: alloc.taxes,
        payoffs: alloc.payoffs,
        sw,
        oracle_p: oracle.p_opt,
        oracle_sw: oracle.sw,
        ne: Some(ne),
        gamma: profile.gamma.clone(),
        b: profile.b.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChannelSet, CostSpec, EuProfile, UtilitySpec};
    use crate::oracle::lindahl_at;

    fn log() -> UtilitySpec {
        UtilitySpec::LogThroughput {
            wpt_time: 1.0,
            tx_time: 1.0,
            bandwidth: 1.0,
            gain: 1.0,
            noise: 1.0,
        }
    }

    fn scenario(gains: Vec<Vec<f64>>, pmax: f64, coeff: f64, zeta: f64) -> Scenario {
        let n = gains[0].len();
        let eus = gains
            .into_iter()
            .map(|h| {
                if h.iter().all(|x| *x == 0.0) {
                    EuProfile::virtual_agent(n)
                } else {
                    EuProfile::new(h, log())
                }
            })
            .collect();
        Scenario::with_pup_factor(
            ChannelSet::uniform(n, pmax).unwrap(),
            eus,
            CostSpec::new(coeff, zeta, 1.0).unwrap(),
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn outcome_examples() {
        let m = MpatMessageProfile::new(
            vec![vec![2.0, 2.0]; 3],
            vec![vec![1.0, 0.3], vec![2.0, -0.7], vec![3.0, 5.0]],
        )
        .unwrap();
        let out = mpat_outcome(&m).unwrap();
        assert_eq!(out.p, vec![2.0, 2.0]);
        assert_eq!(column(&out.rates, 0), vec![-1.0, 2.0, -1.0]);
        for c in 0..2 {
            assert!(column(&out.rates, c).iter().sum::<f64>().abs() < 1e-15);
        }
        assert!(MpatMessageProfile::new(vec![vec![1.0]; 3], vec![vec![1.0, 2.0]; 3]).is_err());
    }

    #[test]
    fn local_update_examples() {
        let s = scenario(vec![vec![1.0], vec![1.0]], 10.0, 0.5, 2.0);
        let p = adal_local_update(&s, 1, &[0.5], &[1.0], 1.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-10);
        let s = scenario(vec![vec![1.0, 1.0], vec![0.0, 0.0]], 10.0, 0.5, 2.0);
        let p = adal_local_update(&s, 2, &[0.0, 0.0], &[0.7, -0.4], 1.0).unwrap();
        assert_eq!(p, vec![0.7, 0.0]);
        let p = adal_local_update(&s, 0, &[-50.0, -50.0], &[9.0, 9.0], 1.0).unwrap();
        assert!(s.channels().contains(&p, 1e-12));
    }

    #[test]
    fn augmented_lagrangian_at_consensus_is_welfare() {
        let s = scenario(vec![vec![1.0, 0.4], vec![0.2, 1.0]], 4.0, 0.5, 2.0);
        let p = vec![0.8, 1.1];
        let pi = vec![p.clone(); 3];
        let beta = vec![vec![0.3, -2.0], vec![1.5, 0.1], vec![-0.7, 0.9]];
        let al = augmented_lagrangian(&s, &pi, &beta, 1.0).unwrap();
        let sw = social_welfare(&s, &p).unwrap();
        assert!((al - sw).abs() < 1e-12);

        let mut off = pi.clone();
        off[1][0] += 0.3;
        let with_penalty = augmented_lagrangian(&s, &off, &beta, 1.0).unwrap();
        let plain = augmented_lagrangian(&s, &off, &beta, 0.0).unwrap();
        // Two constraints touch agent 1: (pi_1 - pi_0) and (pi_2 - pi_1).
        assert!((plain - with_penalty - 0.09).abs() < 1e-12);
    }

    #[test]
    fn lindahl_profile_passes_ne_check() {
        let s = scenario(vec![vec![1.0, 0.0], vec![0.5, 1.0]], 4.0, 0.5, 2.0);
        let sol = solve_swm(&s, 1e-12);
        let la = lindahl_at(&s, &sol.p_opt).unwrap();
        let m = mpat_profile_from_lindahl(&la);
        let rep = verify_mpat_ne(&s, &m, 1e-6).unwrap();
        assert!(rep.is_ne, "{rep:?}");
        assert!(rep.kkt_residual.unwrap() < 1e-6);
        assert!(verify_mpat_ne(&s, &m.shift_prices(&[2.0, -1.0]), 1e-6).unwrap().is_ne);
        let mut bad = m.clone();
        bad.gamma[1][0] += 0.5;
        assert!(!verify_mpat_ne(&s, &bad, 1e-6).unwrap().is_ne);
    }

    fn grid_oracle(s: &Scenario, step: f64) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        let steps = (s.pmax() / step) as usize;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let p = [i as f64 * step, j as f64 * step];
                let v = social_welfare(s, &p).unwrap();
                if v > best.0 {
                    best = (v, p[0], p[1]);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn dmpat_matches_grid_oracle_with_zero_gain_channel() {
        let s = scenario(vec![vec![1.0, 0.0], vec![0.5, 1.0]], 2.0, 0.5, 2.0);
        let (_, rep) = run_dmpat(&s, &AdalConfig::default()).unwrap();
        assert!(rep.converged, "{rep:?}");
        let (g0, g1) = grid_oracle(&s, 1e-3);
        assert!((rep.p[0] - g0).abs() < 2e-3 && (rep.p[1] - g1).abs() < 2e-3, "{:?} vs {g0},{g1}", rep.p);
        assert!(rep.rel_sw_gap < 1e-3);
        assert!(rep.ne.unwrap().is_ne);
    }

    #[test]
    fn dmpat_zero_utilities_transmit_nothing() {
        let s = scenario(vec![vec![0.0, 0.0], vec![0.0, 0.0]], 2.0, 0.5, 2.0);
        let (_, rep) = run_dmpat(&s, &AdalConfig::default()).unwrap();
        assert!(rep.p.iter().all(|x| x.abs() < 1e-4), "{:?}", rep.p);
    }

    #[test]
    fn dmpat_max_iters_zero_is_not_converged() {
        let s = scenario(vec![vec![1.0, 0.5], vec![0.5, 1.0]], 2.0, 0.5, 2.0);
        let cfg = AdalConfig {
            max_iters: 0,
            ..Default::default()
        };
        let (trace, rep) = run_dmpat(&s, &cfg).unwrap();
        assert!(!rep.converged);
        assert_eq!(trace.len(), 1);
    }
}
