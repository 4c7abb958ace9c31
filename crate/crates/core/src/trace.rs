//! Iteration traces and end-of-run reports shared by the distributed solvers.

use std::fmt::Write as _;
use std::io;

/// Numbers in every CSV and text artifact: 17 significant digits,
/// scientific notation, `.` as decimal separator.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Per-iteration snapshots. The first CSV column is always `iter`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveTrace {
    pub columns: Vec<String>,
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl SolveTrace {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, iter: usize, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((iter, values));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Column values across all rows.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|(_, v)| v[idx]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (iter, values) in &self.rows {
            let _ = write!(out, "{iter}");
            for v in values {
                out.push(',');
                out.push_str(&fmt_num(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, w: &mut impl io::Write) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

/// Helper for indexed column names such as `gamma_0..gamma_K`.
pub(crate) fn indexed(prefix: &str, range: std::ops::Range<usize>) -> impl Iterator<Item = String> + '_ {
    range.map(move |i| format!("{prefix}_{i}"))
}

/// An agent's payoff. Infeasible ET transmissions carry an infinite penalty,
/// kept out of arithmetic and ordered below every finite payoff.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Payoff {
    Infeasible,
    Finite(f64),
}

impl Payoff {
    pub fn finite(self) -> Option<f64> {
        match self {
            Payoff::Finite(v) => Some(v),
            Payoff::Infeasible => None,
        }
    }

    /// The value, with the infeasible sentinel mapped to `-inf` for display.
    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Unilateral best-response check of a message profile.
#[derive(Debug, Clone, PartialEq)]
pub struct NeReport {
    /// `|p(m) - best response of agent k at R_k(m)|`, per agent (agent 0 first).
    pub gaps: Vec<f64>,
    pub tol: f64,
    pub is_ne: bool,
    /// KKT residual of the welfare problem at `p(m)` (multi-channel check only).
    pub kkt_residual: Option<f64>,
}

impl NeReport {
    pub fn new(gaps: Vec<f64>, tol: f64, kkt_residual: Option<f64>) -> Self {
        let is_ne = gaps.iter().all(|g| *g <= tol);
        Self {
            gaps,
            tol,
            is_ne,
            kkt_residual,
        }
    }

    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().cloned().fold(0.0, f64::max)
    }
}

/// Outcome of a distributed run.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub converged: bool,
    pub iterations: usize,
    /// Final transmit power (Watts).
    pub p: Vec<f64>,
    /// `rates[k][n]`, agent 0 first.
    pub rates: Vec<Vec<f64>>,
    pub taxes: Vec<Vec<f64>>,
    pub payoffs: Vec<Payoff>,
    pub sw: f64,
    pub oracle_p: Vec<f64>,
    pub oracle_sw: f64,
    /// `max_n |p_n - p^o_n|`.
    pub oracle_gap: f64,
    /// `|sw - oracle_sw| / max(|oracle_sw|, 1e-12)`.
    pub rel_sw_gap: f64,
    pub ne: Option<NeReport>,
    /// Final power proposals `gamma[k][n]` (Watts); for DPO the agents' copies.
    pub gamma: Vec<Vec<f64>>,
    /// Final price proposals `b[k][n]`; for DPO the consistency prices with
    /// the ET's row holding their negated sum.
    pub b: Vec<Vec<f64>>,
}

impl EquilibriumReport {
    /// Mean payoff of the EUs (agents `1..=K`); infeasible payoffs count as `-inf`.
    pub fn eu_avg_payoff(&self) -> f64 {
        let eus = &self.payoffs[1..];
        if eus.is_empty() {
            return 0.0;
        }
        eus.iter().map(|p| p.as_f64()).sum::<f64>() / eus.len() as f64
    }
}

pub fn rel_gap(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(1e-12)
}

/// Relative change guarded against zero previous values:
/// `|x - prev| / max(|prev|, 1e-9)`.
pub(crate) fn guarded_rel_change(x: f64, prev: f64) -> f64 {
    (x - prev).abs() / prev.abs().max(1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_has_17_significant_digits() {
        assert_eq!(fmt_num(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_num(-0.1), "-1.0000000000000001e-1");
        assert_eq!(fmt_num(f64::NEG_INFINITY), "-inf");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn csv_layout() {
        let mut t = SolveTrace::new(vec!["p".into(), "max_rel_change".into()]);
        t.push(0, vec![1.5, 0.25]);
        t.push(1, vec![1.0, 0.0]);
        assert_eq!(
            t.to_csv(),
            "iter,p,max_rel_change\n0,1.5000000000000000e0,2.5000000000000000e-1\n1,1.0000000000000000e0,0.0000000000000000e0\n"
        );
        assert_eq!(t.column("p"), Some(vec![1.5, 1.0]));
    }

    #[test]
    fn infeasible_payoff_orders_below_everything() {
        assert!(Payoff::Infeasible < Payoff::Finite(f64::MIN));
        assert!(Payoff::Finite(-1.0) < Payoff::Finite(0.0));
    }
}
