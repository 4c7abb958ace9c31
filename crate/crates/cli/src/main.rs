use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wpt_mech::benchmarks::{run_be, run_dpo, BeConfig};
use wpt_mech::experiment::{rows_to_csv, run_experiment, ExperimentPlan};
use wpt_mech::model::{sample_scenario, Scenario, ScenarioGenSpec};
use wpt_mech::mpat::{run_dmpat, verify_mpat_ne, AdalConfig, AdalVariant, MpatMessageProfile};
use wpt_mech::oracle::solve_swm;
use wpt_mech::pat::{run_dpat, verify_ne, DPatConfig, PatMessageProfile};
use wpt_mech::text::{Document, TextFormat};
use wpt_mech::trace::{EquilibriumReport, NeReport, SolveTrace};

/// Public-goods mechanisms for wireless power transfer.
///
/// Every flag can also be set through `WPTMECH_<FLAG>`, e.g. `WPTMECH_MAX_ITERS`.
#[derive(Debug, Parser)]
#[command(name = "wptmech", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Centralized welfare maximum (oracle).
    Solve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Distributed single-channel mechanism.
    Dpat {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Distributed multi-channel mechanism.
    Dmpat {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_enum, env = "WPTMECH_VARIANT", default_value_t = Variant::OneSided)]
        variant: Variant,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Private-goods benchmark equilibrium.
    Be {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Distributed welfare optimization without a mechanism.
    Dpo {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Nash-equilibrium check of a saved message profile.
    Verify {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// `pat_profile` or `mpat_profile` file.
        #[arg(long, env = "WPTMECH_PROFILE")]
        profile: PathBuf,
        /// Best-response tolerance as a fraction of `pmax`.
        #[arg(long, env = "WPTMECH_TOL", default_value_t = 1e-3)]
        tol: f64,
    },
    /// Batch experiment from a plan file; CSV to `--out` or stdout.
    Experiment {
        #[arg(long, env = "WPTMECH_PLAN")]
        plan: PathBuf,
        /// Overrides the plan's seed base.
        #[arg(long, env = "WPTMECH_SEED")]
        seed: Option<u64>,
        /// Overrides the plan's trials per cell.
        #[arg(long, env = "WPTMECH_TRIALS")]
        trials: Option<usize>,
        #[arg(long, env = "WPTMECH_EPS1")]
        eps1: Option<f64>,
        #[arg(long, env = "WPTMECH_EPS2")]
        eps2: Option<f64>,
        #[arg(long, env = "WPTMECH_MAX_ITERS")]
        max_iters: Option<usize>,
        /// Fill the wall_ms column.
        #[arg(long, env = "WPTMECH_TIMING")]
        timing: bool,
        #[arg(long, env = "WPTMECH_OUT")]
        out: Option<PathBuf>,
    },
    /// Sample a scenario file.
    Gen {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, env = "WPTMECH_OUT")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Variant {
    OneSided,
    TwoSided,
}

/// A scenario file, or the parameters to sample one.
#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long, env = "WPTMECH_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Sampling seed; also seeds solver initialization.
    #[arg(long, env = "WPTMECH_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "WPTMECH_K", default_value_t = 10)]
    k: usize,
    /// Channels, taken from 865, 890, 915, 950 MHz in order.
    #[arg(long, env = "WPTMECH_N", default_value_t = 4)]
    n: usize,
    #[arg(long, env = "WPTMECH_PMAX", default_value_t = 4.0)]
    pmax: f64,
    #[arg(long, env = "WPTMECH_PROB", default_value_t = 0.8)]
    prob: f64,
    #[arg(long, env = "WPTMECH_RADIUS", default_value_t = 5.0)]
    radius: f64,
    #[arg(long, env = "WPTMECH_ALPHA", default_value_t = 0.5)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, env = "WPTMECH_EPS1")]
    eps1: Option<f64>,
    #[arg(long, env = "WPTMECH_EPS2")]
    eps2: Option<f64>,
    #[arg(long, env = "WPTMECH_MAX_ITERS")]
    max_iters: Option<usize>,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Result file in the text format.
    #[arg(long, env = "WPTMECH_OUT")]
    out: Option<PathBuf>,
    /// Per-iteration CSV.
    #[arg(long, env = "WPTMECH_TRACE")]
    trace: Option<PathBuf>,
}

/// Failure with its exit status: 1 for bad input, 2 for non-convergence.
struct Failure {
    code: u8,
    msg: String,
}

type CliResult<T> = Result<T, Failure>;

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure {
        code: 1,
        msg: e.to_string(),
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn load_text<T: TextFormat>(path: &Path) -> CliResult<T> {
    T::from_text(&read(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

impl ScenarioArgs {
    fn load(&self) -> CliResult<Scenario> {
        if let Some(path) = &self.scenario {
            return load_text(path);
        }
        let mut spec = ScenarioGenSpec {
            seed: self.seed,
            k: self.k,
            pmax: self.pmax,
            prob: self.prob,
            radius: self.radius,
            alpha: self.alpha,
            ..Default::default()
        };
        if self.n == 0 || self.n > spec.carriers.len() {
            return Err(input(format!("--n must lie in 1..={}", spec.carriers.len())));
        }
        spec.carriers.truncate(self.n);
        sample_scenario(&spec).map_err(input)
    }
}

/// Four decimals in the readable range, scientific otherwise.
fn short(x: f64) -> String {
    if x == 0.0 || (1e-3..1e4).contains(&x.abs()) {
        format!("{x:.4}")
    } else {
        format!("{x:.4e}")
    }
}

fn short_vec(v: &[f64]) -> String {
    if v.len() == 1 {
        short(v[0])
    } else {
        format!("[{}]", v.iter().map(|x| short(*x)).collect::<Vec<_>>().join(", "))
    }
}

fn finish_trace(out: &OutArgs, trace: &SolveTrace) -> CliResult<()> {
    match &out.trace {
        Some(path) => write(path, &trace.to_csv()),
        None => Ok(()),
    }
}

fn print_ne(ne: &NeReport) {
    println!("NE = {} (max gap {}, tol {})", ne.is_ne, short(ne.max_gap()), short(ne.tol));
}

fn print_report(r: &EquilibriumReport) {
    println!("p = {}", short_vec(&r.p));
    println!("SW = {}", short(r.sw));
    println!("p^o = {}", short_vec(&r.oracle_p));
    println!("SW^o = {}", short(r.oracle_sw));
    println!("rel SW gap = {}", short(r.rel_sw_gap));
    println!("iterations = {}", r.iterations);
    println!("converged = {}", r.converged);
    if let Some(ne) = &r.ne {
        print_ne(ne);
    }
}

fn converged(ok: bool, what: &str) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(Failure {
            code: 2,
            msg: format!("{what} did not converge"),
        })
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen { scenario, out } => {
            let text = scenario.load()?.to_text();
            match out {
                Some(path) => write(&path, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Solve { scenario, out } => {
            let s = scenario.load()?;
            let sol = solve_swm(&s, 1e-10);
            println!("p^o = {}", short_vec(&sol.p_opt));
            println!("SW = {}", short(sol.sw));
            println!("kkt residual = {}", short(sol.kkt_residual));
            println!("converged = {}", sol.converged);
            if let Some(path) = &out.out {
                write(path, &sol.to_text())?;
            }
            converged(sol.converged, "oracle")
        }
        Command::Dpat { scenario, solver, out } => {
            let s = scenario.load()?;
            let d = DPatConfig::default();
            let cfg = DPatConfig {
                eps1: solver.eps1.unwrap_or(d.eps1),
                eps2: solver.eps2.unwrap_or(d.eps2),
                max_iters: solver.max_iters.unwrap_or(d.max_iters),
                seed: scenario.seed,
                ..d
            };
            let (trace, r) = run_dpat(&s, &cfg).map_err(input)?;
            print_report(&r);
            finish_trace(&out, &trace)?;
            if let Some(path) = &out.out {
                let profile = PatMessageProfile::new(
                    r.gamma.iter().map(|g| g[0]).collect(),
                    r.b.iter().map(|b| b[0]).collect(),
                )
                .map_err(input)?;
                write(path, &profile.to_text())?;
            }
            converged(r.converged, "D-PAT")
        }
        Command::Dmpat {
            scenario,
            solver,
            variant,
            out,
        } => {
            let s = scenario.load()?;
            let cfg = adal_config(&solver, scenario.seed, variant);
            let (trace, r) = run_dmpat(&s, &cfg).map_err(input)?;
            print_report(&r);
            finish_trace(&out, &trace)?;
            if let Some(path) = &out.out {
                let profile = MpatMessageProfile::new(r.gamma.clone(), r.b.clone()).map_err(input)?;
                write(path, &profile.to_text())?;
            }
            converged(r.converged, "D-MPAT")
        }
        Command::Dpo { scenario, solver, out } => {
            let s = scenario.load()?;
            let cfg = adal_config(&solver, scenario.seed, Variant::OneSided);
            let (trace, r) = run_dpo(&s, &cfg).map_err(input)?;
            print_report(&r);
            finish_trace(&out, &trace)?;
            converged(r.converged, "DPO")
        }
        Command::Be { scenario, solver, out } => {
            let s = scenario.load()?;
            let d = BeConfig::default();
            let cfg = BeConfig {
                eps: solver.eps1.unwrap_or(d.eps),
                max_iters: solver.max_iters.unwrap_or(d.max_iters),
                ..d
            };
            let (trace, be) = run_be(&s, &cfg).map_err(input)?;
            println!("p_be = {}", short_vec(&be.p_be));
            println!("theta = {}", short_vec(&be.theta));
            println!("SW = {}", short(be.sw));
            println!("iterations = {}", be.iterations);
            println!("converged = {}", be.converged);
            finish_trace(&out, &trace)?;
            if let Some(path) = &out.out {
                write(path, &be.to_text())?;
            }
            converged(be.converged, "benchmark equilibrium")
        }
        Command::Verify { scenario, profile, tol } => {
            let s = scenario.load()?;
            let text = read(&profile)?;
            let with_path = |e: wpt_mech::Error| input(format!("{}: {e}", profile.display()));
            let doc = Document::parse(&text).map_err(with_path)?;
            let tol = tol * s.pmax();
            let report = match doc.kind().map_err(with_path)? {
                "pat_profile" => {
                    let m = PatMessageProfile::from_document(&doc).map_err(with_path)?;
                    verify_ne(&s, &m, tol).map_err(input)?
                }
                "mpat_profile" => {
                    let m = MpatMessageProfile::from_document(&doc).map_err(with_path)?;
                    verify_mpat_ne(&s, &m, tol).map_err(input)?
                }
                other => {
                    return Err(input(format!(
                        "{}: invalid value for `kind`: expected pat_profile or mpat_profile, found `{other}`",
                        profile.display()
                    )))
                }
            };
            for (k, g) in report.gaps.iter().enumerate() {
                println!("agent {k}: gap = {}", short(*g));
            }
            if let Some(kkt) = report.kkt_residual {
                println!("kkt residual = {}", short(kkt));
            }
            print_ne(&report);
            if report.is_ne {
                Ok(())
            } else {
                Err(Failure {
                    code: 2,
                    msg: "profile is not a Nash equilibrium".into(),
                })
            }
        }
        Command::Experiment {
            plan,
            seed,
            trials,
            eps1,
            eps2,
            max_iters,
            timing,
            out,
        } => {
            let mut p: ExperimentPlan = load_text(&plan)?;
            if let Some(seed) = seed {
                p.seed_base = seed;
            }
            p.trials = trials.unwrap_or(p.trials);
            let t = &mut p.tolerances;
            t.eps1 = eps1.unwrap_or(t.eps1);
            t.eps2 = eps2.unwrap_or(t.eps2);
            t.max_iters = max_iters.unwrap_or(t.max_iters);
            p.timing |= timing;
            let rows = run_experiment(&p).map_err(input)?;
            let csv = rows_to_csv(&rows);
            match out {
                Some(path) => write(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

fn adal_config(solver: &SolverArgs, seed: u64, variant: Variant) -> AdalConfig {
    let d = AdalConfig::default();
    AdalConfig {
        eps1: solver.eps1.unwrap_or(d.eps1),
        eps2: solver.eps2.unwrap_or(d.eps2),
        max_iters: solver.max_iters.unwrap_or(d.max_iters),
        seed,
        variant: match variant {
            Variant::OneSided => AdalVariant::OneSided,
            Variant::TwoSided => AdalVariant::TwoSided,
        },
        ..d
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
