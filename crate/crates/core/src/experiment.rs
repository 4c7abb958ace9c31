//! Batch experiments: sample scenarios over a parameter grid, run the oracle
//! and the requested mechanisms, and emit one CSV row per run.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::benchmarks::{add_virtual_agent, run_be, run_dpo, BeConfig};
use crate::error::{contract, Error, Result};
use crate::model::{utility, CostSpec, Scenario, ScenarioGenSpec, sample_scenario};
use crate::mpat::{run_dmpat, AdalConfig};
use crate::oracle::{solve_swm, OracleSolution};
use crate::pat::{run_dpat, DPatConfig};
use crate::text::{DocWriter, Document, TextFormat};
use crate::trace::{fmt_num, rel_gap, EquilibriumReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mechanism {
    Mpat,
    Be,
    Dpo,
    Pat,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Mpat => "mpat",
            Mechanism::Be => "be",
            Mechanism::Dpo => "dpo",
            Mechanism::Pat => "pat",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mpat" => Ok(Mechanism::Mpat),
            "be" => Ok(Mechanism::Be),
            "dpo" => Ok(Mechanism::Dpo),
            "pat" => Ok(Mechanism::Pat),
            other => Err(format!("unknown mechanism `{other}` (mpat, be, dpo, pat)")),
        }
    }
}

/// Solver settings shared by every run of a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub eps1: f64,
    pub eps2: f64,
    pub max_iters: usize,
    pub oracle_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps1: 1e-6,
            eps2: 1e-6,
            max_iters: 50_000,
            oracle_tol: 1e-10,
        }
    }
}

/// A grid of scenario parameters, a trial count per grid cell and the
/// mechanisms to compare.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub ks: Vec<usize>,
    /// Channels used; the first `n` entries of `carriers`.
    pub n: usize,
    pub carriers: Vec<f64>,
    pub pmaxs: Vec<f64>,
    pub probs: Vec<f64>,
    pub radii: Vec<f64>,
    pub trials: usize,
    /// Trial `t` of every cell uses seed `seed_base + t`.
    pub seed_base: u64,
    pub mechanisms: Vec<Mechanism>,
    pub tolerances: Tolerances,
    pub alpha: f64,
    pub cost: CostSpec,
    /// Fill the `wall_ms` column; otherwise it is 0 and output is reproducible.
    pub timing: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        let g = ScenarioGenSpec::default();
        Self {
            ks: vec![5, 10, 15],
            n: g.carriers.len(),
            carriers: g.carriers,
            pmaxs: vec![g.pmax],
            probs: vec![g.prob],
            radii: vec![g.radius],
            trials: 100,
            seed_base: 0,
            mechanisms: vec![Mechanism::Mpat, Mechanism::Be],
            tolerances: Tolerances::default(),
            alpha: g.alpha,
            cost: g.cost,
            timing: false,
        }
    }
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub k: usize,
    pub pmax: f64,
    pub prob: f64,
    pub radius: f64,
}

impl ExperimentPlan {
    /// Cells in output order: K outermost, then `P_max`, prob, r.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &k in &self.ks {
            for &pmax in &self.pmaxs {
                for &prob in &self.probs {
                    for &radius in &self.radii {
                        out.push(Cell { k, pmax, prob, radius });
                    }
                }
            }
        }
        out
    }

    pub fn gen_spec(&self, cell: &Cell, seed: u64) -> ScenarioGenSpec {
        ScenarioGenSpec {
            k: cell.k,
            prob: cell.prob,
            radius: cell.radius,
            carriers: self.carriers[..self.n.min(self.carriers.len())].to_vec(),
            pmax: cell.pmax,
            alpha: self.alpha,
            cost: self.cost,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(contract("trials must be at least 1"));
        }
        if self.n == 0 || self.n > self.carriers.len() {
            return Err(contract(format!(
                "n = {} needs between 1 and {} carriers",
                self.n,
                self.carriers.len()
            )));
        }
        if self.mechanisms.is_empty() {
            return Err(contract("no mechanisms requested"));
        }
        if self.mechanisms.contains(&Mechanism::Pat) && self.n != 1 {
            return Err(contract("mechanism pat is single-channel, plan has n > 1"));
        }
        if [&self.ks.len(), &self.pmaxs.len(), &self.probs.len(), &self.radii.len()]
            .iter()
            .any(|l| **l == 0)
        {
            return Err(contract("every sweep axis needs at least one value"));
        }
        let t = &self.tolerances;
        if !(t.eps1 > 0.0 && t.eps2 > 0.0 && t.oracle_tol > 0.0) {
            return Err(contract("tolerances must be positive"));
        }
        for cell in self.cells() {
            self.gen_spec(&cell, self.seed_base).validate()?;
        }
        Ok(())
    }
}

impl TextFormat for ExperimentPlan {
    const KIND: &'static str = "plan";

    fn write_fields(&self, w: &mut DocWriter) {
        w.items("k", &self.ks);
        w.int("n", self.n);
        w.list("carriers", &self.carriers);
        w.list("pmax", &self.pmaxs);
        w.list("prob", &self.probs);
        w.list("r", &self.radii);
        w.int("trials", self.trials);
        w.int("seed", self.seed_base);
        w.items("mechanisms", &self.mechanisms);
        w.num("eps1", self.tolerances.eps1);
        w.num("eps2", self.tolerances.eps2);
        w.int("max_iters", self.tolerances.max_iters);
        w.num("oracle_tol", self.tolerances.oracle_tol);
        w.num("alpha", self.alpha);
        w.num("cost.e", self.cost.coeff);
        w.num("cost.zeta", self.cost.exponent);
        w.num("cost.t", self.cost.horizon);
        w.bool("timing", self.timing);
    }

    /// Only the sweep axes, `trials`, `seed` and `mechanisms` are required;
    /// everything else falls back to [`ExperimentPlan::default`].
    fn read_fields(doc: &Document) -> Result<Self> {
        let d = ExperimentPlan::default();
        let opt_f64 = |key: &str, default: f64| if doc.has(key) { doc.f64(key) } else { Ok(default) };
        let mechanisms = doc
            .words("mechanisms")?
            .iter()
            .map(|w| {
                w.parse().map_err(|msg| Error::InvalidValue {
                    key: "mechanisms".into(),
                    msg,
                })
            })
            .collect::<Result<Vec<Mechanism>>>()?;
        let cost = CostSpec::new(
            opt_f64("cost.e", d.cost.coeff)?,
            opt_f64("cost.zeta", d.cost.exponent)?,
            opt_f64("cost.t", d.cost.horizon)?,
        )
        .map_err(|e| Error::InvalidValue {
            key: "cost".into(),
            msg: e.to_string(),
        })?;
        let plan = ExperimentPlan {
            ks: doc.usize_list("k")?,
            n: doc.usize("n")?,
            carriers: if doc.has("carriers") { doc.list("carriers")? } else { d.carriers },
            pmaxs: doc.list("pmax")?,
            probs: doc.list("prob")?,
            radii: doc.list("r")?,
            trials: doc.usize("trials")?,
            seed_base: doc.u64("seed")?,
            mechanisms,
            tolerances: Tolerances {
                eps1: opt_f64("eps1", d.tolerances.eps1)?,
                eps2: opt_f64("eps2", d.tolerances.eps2)?,
                max_iters: if doc.has("max_iters") { doc.usize("max_iters")? } else { d.tolerances.max_iters },
                oracle_tol: opt_f64("oracle_tol", d.tolerances.oracle_tol)?,
            },
            alpha: opt_f64("alpha", d.alpha)?,
            cost,
            timing: if doc.has("timing") { doc.bool("timing")? } else { false },
        };
        plan.validate().map_err(|e| Error::InvalidValue {
            key: "plan".into(),
            msg: e.to_string(),
        })?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub seed: u64,
    pub k: usize,
    pub n: usize,
    pub pmax: f64,
    pub prob: f64,
    pub r: f64,
    pub mechanism: Mechanism,
    pub iterations: usize,
    pub converged: bool,
    pub sw: f64,
    pub eu_avg_payoff: f64,
    pub oracle_sw: f64,
    pub rel_gap: f64,
    pub wall_ms: f64,
}

pub const CSV_HEADER: &str = "seed,K,N,P_max,prob,r,mechanism,iterations,converged,sw,eu_avg_payoff,oracle_sw,rel_gap,wall_ms";

impl ExperimentRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.k,
            self.n,
            fmt_num(self.pmax),
            fmt_num(self.prob),
            fmt_num(self.r),
            self.mechanism,
            self.iterations,
            self.converged,
            fmt_num(self.sw),
            fmt_num(self.eu_avg_payoff),
            fmt_num(self.oracle_sw),
            fmt_num(self.rel_gap),
            fmt_num(self.wall_ms),
        )
    }
}

pub fn rows_to_csv(rows: &[ExperimentRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

struct RunOutcome {
    iterations: usize,
    converged: bool,
    sw: f64,
    eu_avg_payoff: f64,
}

impl RunOutcome {
    fn failed() -> Self {
        Self {
            iterations: 0,
            converged: false,
            sw: f64::NAN,
            eu_avg_payoff: f64::NAN,
        }
    }

    /// Averages over the first `k` EUs so an appended virtual agent is ignored.
    fn from_report(r: &EquilibriumReport, k: usize) -> Self {
        let eus = &r.payoffs[1..=k];
        Self {
            iterations: r.iterations,
            converged: r.converged,
            sw: r.sw,
            eu_avg_payoff: eus.iter().map(|p| p.as_f64()).sum::<f64>() / k as f64,
        }
    }
}

fn run_mechanism(plan: &ExperimentPlan, s: &Scenario, mech: Mechanism, seed: u64) -> Result<RunOutcome> {
    let t = &plan.tolerances;
    let k = s.k();
    let padded;
    let with_virtual = if k < 2 {
        padded = add_virtual_agent(s);
        &padded
    } else {
        s
    };
    let adal = AdalConfig {
        eps1: t.eps1,
        eps2: t.eps2,
        max_iters: t.max_iters,
        seed,
        ..Default::default()
    };
    match mech {
        Mechanism::Mpat => Ok(RunOutcome::from_report(&run_dmpat(with_virtual, &adal)?.1, k)),
        Mechanism::Dpo => Ok(RunOutcome::from_report(&run_dpo(s, &adal)?.1, k)),
        Mechanism::Pat => {
            let cfg = DPatConfig {
                eps1: t.eps1,
                eps2: t.eps2,
                max_iters: t.max_iters,
                seed,
                ..Default::default()
            };
            Ok(RunOutcome::from_report(&run_dpat(with_virtual, &cfg)?.1, k))
        }
        Mechanism::Be => {
            let cfg = BeConfig {
                max_iters: t.max_iters.max(BeConfig::default().max_iters),
                ..Default::default()
            };
            let (_, be) = run_be(s, &cfg)?;
            let mut total = 0.0;
            for (eu, x) in s.eus().iter().zip(&be.demands) {
                let paid: f64 = x.iter().zip(&be.theta).map(|(x, th)| x * th).sum();
                total += utility(&eu.utility, eu.received_power(&be.p_be)).unwrap_or(f64::NEG_INFINITY) - paid;
            }
            Ok(RunOutcome {
                iterations: be.iterations,
                converged: be.converged,
                sw: be.sw,
                eu_avg_payoff: total / k as f64,
            })
        }
    }
}

fn run_trial(plan: &ExperimentPlan, cell: &Cell, trial: usize) -> Vec<ExperimentRow> {
    let seed = plan.seed_base.wrapping_add(trial as u64);
    let scenario = sample_scenario(&plan.gen_spec(cell, seed));
    let oracle: Option<OracleSolution> = scenario
        .as_ref()
        .ok()
        .map(|s| solve_swm(s, plan.tolerances.oracle_tol));
    let oracle_sw = oracle.as_ref().map_or(f64::NAN, |o| o.sw);
    plan.mechanisms
        .iter()
        .map(|&mech| {
            let start = Instant::now();
            let out = match &scenario {
                Ok(s) => run_mechanism(plan, s, mech, seed).unwrap_or_else(|_| RunOutcome::failed()),
                Err(_) => RunOutcome::failed(),
            };
            let wall_ms = if plan.timing {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            ExperimentRow {
                seed,
                k: cell.k,
                n: plan.n,
                pmax: cell.pmax,
                prob: cell.prob,
                r: cell.radius,
                mechanism: mech,
                iterations: out.iterations,
                converged: out.converged,
                sw: out.sw,
                eu_avg_payoff: out.eu_avg_payoff,
                oracle_sw,
                rel_gap: rel_gap(out.sw, oracle_sw),
                wall_ms,
            }
        })
        .collect()
}

/// Runs every cell and trial in parallel and returns rows ordered by
/// (cell, trial, mechanism as listed in the plan). Failed runs appear with
/// `converged = false` and NaN metrics.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<Vec<ExperimentRow>> {
    plan.validate()?;
    let jobs: Vec<(Cell, usize)> = plan
        .cells()
        .into_iter()
        .flat_map(|c| (0..plan.trials).map(move |t| (c, t)))
        .collect();
    let rows: Vec<Vec<ExperimentRow>> = jobs.par_iter().map(|(c, t)| run_trial(plan, c, *t)).collect();
    Ok(rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            ks: vec![3],
            n: 2,
            trials: 1,
            seed_base: 11,
            mechanisms: vec![Mechanism::Mpat],
            ..Default::default()
        }
    }

    #[test]
    fn single_mpat_run_matches_oracle() {
        let rows = run_experiment(&small_plan()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].converged);
        assert!(rows[0].rel_gap <= 1e-3, "{:?}", rows[0]);
        assert_eq!(rows[0].wall_ms, 0.0);
    }

    #[test]
    fn output_is_reproducible_and_ordered() {
        let plan = ExperimentPlan {
            ks: vec![2, 4],
            trials: 2,
            mechanisms: vec![Mechanism::Be, Mechanism::Mpat, Mechanism::Dpo],
            ..small_plan()
        };
        let a = rows_to_csv(&run_experiment(&plan).unwrap());
        let b = rows_to_csv(&run_experiment(&plan).unwrap());
        assert_eq!(a, b);
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + 2 * 2 * 3);
        let keys: Vec<(String, String, String)> = lines[1..]
            .iter()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[1].to_string(), f[0].to_string(), f[6].to_string())
            })
            .collect();
        assert_eq!(keys[0], ("2".into(), "11".into(), "be".into()));
        assert_eq!(keys[2], ("2".into(), "11".into(), "dpo".into()));
        assert_eq!(keys[3], ("2".into(), "12".into(), "be".into()));
        assert_eq!(keys[6], ("4".into(), "11".into(), "be".into()));
    }

    #[test]
    fn mpat_dominates_benchmark_per_instance() {
        let plan = ExperimentPlan {
            ks: vec![5, 10],
            trials: 2,
            mechanisms: vec![Mechanism::Mpat, Mechanism::Be],
            ..small_plan()
        };
        let rows = run_experiment(&plan).unwrap();
        for pair in rows.chunks(2) {
            assert!(pair[0].converged && pair[0].rel_gap <= 1e-3);
            assert!(pair[0].sw >= pair[1].sw - 1e-9 * pair[1].sw.abs(), "{pair:?}");
        }
    }

    #[test]
    fn single_eu_uses_a_virtual_agent() {
        let plan = ExperimentPlan {
            ks: vec![1],
            n: 1,
            mechanisms: vec![Mechanism::Pat, Mechanism::Mpat],
            ..small_plan()
        };
        let rows = run_experiment(&plan).unwrap();
        // The dual-gradient solver needs strictly concave payoffs; the
        // virtual agent's best response is bang-bang, so only mpat settles.
        assert!(!rows[0].converged);
        assert!(rows[1].converged && rows[1].rel_gap <= 1e-3, "{rows:?}");
    }

    #[test]
    fn plan_text_round_trip_and_defaults() {
        let plan = small_plan();
        assert_eq!(ExperimentPlan::from_text(&plan.to_text()).unwrap(), plan);
        let minimal = "format = wptmech/1\nkind = plan\nk = [5, 10]\nn = 4\npmax = [4]\nprob = [0.8]\nr = [5]\ntrials = 3\nseed = 7\nmechanisms = [mpat, be]\n";
        let p = ExperimentPlan::from_text(minimal).unwrap();
        assert_eq!(p.ks, vec![5, 10]);
        assert_eq!(p.tolerances, Tolerances::default());
        let bad = minimal.replace("[mpat, be]", "[mpat, auction]");
        assert!(matches!(ExperimentPlan::from_text(&bad), Err(Error::InvalidValue { key, .. }) if key == "mechanisms"));
        let zero = minimal.replace("trials = 3", "trials = 0");
        assert!(matches!(ExperimentPlan::from_text(&zero), Err(Error::InvalidValue { key, .. }) if key == "plan"));
        let pat = minimal.replace("[mpat, be]", "[pat]");
        assert!(ExperimentPlan::from_text(&pat).is_err());
    }
}
