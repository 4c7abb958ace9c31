//! Flat `key = value` text format shared by scenarios, solver outputs,
//! message profiles and experiment plans.
//!
//! ```text
//! # comment
//! format = wptmech/1
//! kind = scenario
//! k = 2
//! peak = [4.0000000000000000e0]
//! eu[0].utility.kind = log_throughput
//! ```
//!
//! Keys are unique. Values are numbers, words, booleans or bracketed lists.
//! Numbers are written with 17 significant digits, so parse and serialize
//! round-trip exactly. Every decoding error names the offending key or line.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::benchmarks::BenchmarkEquilibrium;
use crate::error::{Error, Result};
use crate::model::{ChannelSet, CostSpec, EuProfile, Scenario, UtilitySpec};
use crate::mpat::MpatMessageProfile;
use crate::oracle::{Duals, LindahlAllocation, OracleSolution};
use crate::pat::PatMessageProfile;
use crate::trace::fmt_num;

pub const FORMAT: &str = "wptmech/1";

/// A parsed document: keys with their raw values and line numbers.
#[derive(Debug, Default)]
pub struct Document {
    entries: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '[' | ']' | '-'))
}

fn invalid(key: &str, msg: impl Into<String>) -> Error {
    Error::InvalidValue {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_number(key: &str, raw: &str) -> Result<f64> {
    match raw {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| invalid(key, format!("`{raw}` is not a number"))),
    }
}

fn split_list<'a>(key: &str, raw: &'a str) -> Result<Vec<&'a str>> {
    let inner = raw
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| invalid(key, "expected a bracketed list"))?
        .trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    let items: Vec<&str> = inner.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(invalid(key, "empty list item"));
    }
    Ok(items)
}

impl Document {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Syntax {
                line: line_no,
                msg: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !valid_key(key) {
                return Err(Error::Syntax {
                    line: line_no,
                    msg: format!("invalid key `{key}`"),
                });
            }
            if value.is_empty() {
                return Err(invalid(key, "empty value"));
            }
            if entries.insert(key.to_string(), (line_no, value.to_string())).is_some() {
                return Err(Error::Syntax {
                    line: line_no,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        let doc = Document {
            entries,
            used: RefCell::default(),
        };
        let format = doc.str("format")?;
        if format != FORMAT {
            return Err(invalid("format", format!("unsupported format `{format}`, expected `{FORMAT}`")));
        }
        Ok(doc)
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn raw(&self, key: &str) -> Result<&str> {
        let (_, v) = self.entries.get(key).ok_or_else(|| Error::MissingKey(key.to_string()))?;
        self.used.borrow_mut().insert(key.to_string());
        Ok(v)
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        self.raw(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        parse_number(key, self.raw(key)?)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| invalid(key, format!("`{raw}` is not a non-negative integer")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| invalid(key, format!("`{raw}` is not a non-negative integer")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(invalid(key, format!("`{other}` is not true/false"))),
        }
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        split_list(key, self.raw(key)?)?
            .into_iter()
            .map(|item| parse_number(key, item))
            .collect()
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        split_list(key, self.raw(key)?)?
            .into_iter()
            .map(|item| {
                item.parse()
                    .map_err(|_| invalid(key, format!("`{item}` is not a non-negative integer")))
            })
            .collect()
    }

    pub fn words(&self, key: &str) -> Result<Vec<String>> {
        Ok(split_list(key, self.raw(key)?)?.into_iter().map(String::from).collect())
    }

    /// Rows `prefix[0]`, `prefix[1]`, ... up to `rows`.
    pub fn matrix(&self, prefix: &str, rows: usize) -> Result<Vec<Vec<f64>>> {
        (0..rows).map(|i| self.list(&format!("{prefix}[{i}]"))).collect()
    }

    /// Number of consecutive indexed rows `prefix[0]`, `prefix[1]`, ...
    pub fn count_rows(&self, prefix: &str) -> usize {
        (0..).take_while(|i| self.has(&format!("{prefix}[{i}]"))).count()
    }

    /// Checks the `kind` header.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        let found = self.str("kind")?;
        if found != kind {
            return Err(invalid("kind", format!("expected `{kind}`, found `{found}`")));
        }
        Ok(())
    }

    pub fn kind(&self) -> Result<&str> {
        self.str("kind")
    }

    /// Fails on the first key no decoder read.
    pub fn ensure_all_used(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _)| !used.contains(*k)) {
            Some((k, (line, _))) => Err(Error::Syntax {
                line: *line,
                msg: format!("unknown key `{k}`"),
            }),
            None => Ok(()),
        }
    }
}

/// Ordered writer for the same format.
#[derive(Debug)]
pub struct DocWriter {
    out: String,
}

impl DocWriter {
    pub fn new(kind: &str) -> Self {
        let mut w = DocWriter { out: String::new() };
        w.word("format", FORMAT);
        w.word("kind", kind);
        w
    }

    pub fn word(&mut self, key: &str, value: &str) {
        let _ = writeln!(self.out, "{key} = {value}");
    }

    pub fn num(&mut self, key: &str, value: f64) {
        self.word(key, &fmt_num(value));
    }

    pub fn int(&mut self, key: &str, value: impl std::fmt::Display) {
        self.word(key, &value.to_string());
    }

    pub fn bool(&mut self, key: &str, value: bool) {
        self.word(key, if value { "true" } else { "false" });
    }

    pub fn list(&mut self, key: &str, values: &[f64]) {
        let items: Vec<String> = values.iter().map(|v| fmt_num(*v)).collect();
        self.word(key, &format!("[{}]", items.join(", ")));
    }

    pub fn items<T: std::fmt::Display>(&mut self, key: &str, values: &[T]) {
        let items: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.word(key, &format!("[{}]", items.join(", ")));
    }

    pub fn matrix(&mut self, prefix: &str, rows: &[Vec<f64>]) {
        for (i, row) in rows.iter().enumerate() {
            self.list(&format!("{prefix}[{i}]"), row);
        }
    }

    pub fn finish(self) -> String {
        self.out
    }
}

/// Types with a text representation.
pub trait TextFormat: Sized {
    const KIND: &'static str;

    fn write_fields(&self, w: &mut DocWriter);

    /// Decodes from a document whose header was already checked.
    fn read_fields(doc: &Document) -> Result<Self>;

    fn to_text(&self) -> String {
        let mut w = DocWriter::new(Self::KIND);
        self.write_fields(&mut w);
        w.finish()
    }

    fn from_document(doc: &Document) -> Result<Self> {
        doc.expect_kind(Self::KIND)?;
        let v = Self::read_fields(doc)?;
        doc.ensure_all_used()?;
        Ok(v)
    }

    fn from_text(text: &str) -> Result<Self> {
        Self::from_document(&Document::parse(text)?)
    }
}

fn write_utility(w: &mut DocWriter, prefix: &str, u: &UtilitySpec) {
    match *u {
        UtilitySpec::AlphaFair {
            energy_rate,
            battery,
            alpha,
            horizon,
        } => {
            w.word(&format!("{prefix}.kind"), "alpha_fair");
            w.num(&format!("{prefix}.energy_rate"), energy_rate);
            w.num(&format!("{prefix}.battery"), battery);
            w.num(&format!("{prefix}.alpha"), alpha);
            w.num(&format!("{prefix}.t"), horizon);
        }
        UtilitySpec::LogThroughput {
            wpt_time,
            tx_time,
            bandwidth,
            gain,
            noise,
        } => {
            w.word(&format!("{prefix}.kind"), "log_throughput");
            w.num(&format!("{prefix}.t1"), wpt_time);
            w.num(&format!("{prefix}.t2"), tx_time);
            w.num(&format!("{prefix}.bandwidth"), bandwidth);
            w.num(&format!("{prefix}.gain"), gain);
            w.num(&format!("{prefix}.noise"), noise);
        }
        UtilitySpec::Zero => w.word(&format!("{prefix}.kind"), "zero"),
    }
}

fn read_utility(doc: &Document, prefix: &str) -> Result<UtilitySpec> {
    let key = |name: &str| format!("{prefix}.{name}");
    let kind_key = key("kind");
    let u = match doc.str(&kind_key)? {
        "alpha_fair" => UtilitySpec::AlphaFair {
            energy_rate: doc.f64(&key("energy_rate"))?,
            battery: doc.f64(&key("battery"))?,
            alpha: doc.f64(&key("alpha"))?,
            horizon: doc.f64(&key("t"))?,
        },
        "log_throughput" => UtilitySpec::LogThroughput {
            wpt_time: doc.f64(&key("t1"))?,
            tx_time: doc.f64(&key("t2"))?,
            bandwidth: doc.f64(&key("bandwidth"))?,
            gain: doc.f64(&key("gain"))?,
            noise: doc.f64(&key("noise"))?,
        },
        "zero" => UtilitySpec::Zero,
        other => {
            return Err(invalid(
                &kind_key,
                format!("unknown utility `{other}` (alpha_fair, log_throughput, zero)"),
            ))
        }
    };
    u.validate().map_err(|e| invalid(prefix, e.to_string()))?;
    Ok(u)
}

fn expect_len(key: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(invalid(key, format!("expected {expected} entries, got {got}")))
    }
}

impl TextFormat for Scenario {
    const KIND: &'static str = "scenario";

    fn write_fields(&self, w: &mut DocWriter) {
        w.int("k", self.k());
        w.int("n", self.n());
        w.num("pmax", self.pmax());
        w.list("peak", self.channels().peak());
        w.num("cost.e", self.cost().coeff);
        w.num("cost.zeta", self.cost().exponent);
        w.num("cost.t", self.cost().horizon);
        w.list("pup", self.pup());
        for (i, eu) in self.eus().iter().enumerate() {
            w.list(&format!("eu[{i}].h"), &eu.gains);
            write_utility(w, &format!("eu[{i}].utility"), &eu.utility);
        }
    }

    fn read_fields(doc: &Document) -> Result<Self> {
        let k = doc.usize("k")?;
        let n = doc.usize("n")?;
        if k == 0 {
            return Err(invalid("k", "at least one EU is required"));
        }
        if n == 0 {
            return Err(invalid("n", "at least one channel is required"));
        }
        let pmax = doc.f64("pmax")?;
        let peak = doc.list("peak")?;
        expect_len("peak", n, peak.len())?;
        let channels = ChannelSet::new(peak, pmax).map_err(|e| invalid("peak", e.to_string()))?;
        let cost = CostSpec::new(doc.f64("cost.e")?, doc.f64("cost.zeta")?, doc.f64("cost.t")?)
            .map_err(|e| invalid("cost", e.to_string()))?;
        let pup = doc.list("pup")?;
        expect_len("pup", k, pup.len())?;
        let mut eus = Vec::with_capacity(k);
        for i in 0..k {
            let hkey = format!("eu[{i}].h");
            let gains = doc.list(&hkey)?;
            expect_len(&hkey, n, gains.len())?;
            let utility = read_utility(doc, &format!("eu[{i}].utility"))?;
            eus.push(EuProfile::new(gains, utility));
        }
        if doc.has(&format!("eu[{k}].h")) {
            return Err(invalid(&format!("eu[{k}].h"), format!("more EUs than k = {k}")));
        }
        Scenario::new(channels, eus, cost, pup).map_err(|e| match e {
            Error::Contract(msg) if msg.contains("power-proposal") => invalid("pup", msg),
            Error::Contract(msg) => invalid("eu", msg),
            other => other,
        })
    }
}

impl TextFormat for OracleSolution {
    const KIND: &'static str = "oracle";

    fn write_fields(&self, w: &mut DocWriter) {
        w.list("p_opt", &self.p_opt);
        w.num("sw", self.sw);
        w.list("duals.lambda", &self.duals.lambda);
        w.list("duals.mu", &self.duals.mu);
        w.num("duals.nu", self.duals.nu);
        w.num("kkt_residual", self.kkt_residual);
        w.int("iterations", self.iterations);
        w.bool("converged", self.converged);
        w.bool("strictly_concave", self.strictly_concave);
    }

    fn read_fields(doc: &Document) -> Result<Self> {
        let p_opt = doc.list("p_opt")?;
        let lambda = doc.list("duals.lambda")?;
        let mu = doc.list("duals.mu")?;
        expect_len("duals.lambda", p_opt.len(), lambda.len())?;
        expect_len("duals.mu", p_opt.len(), mu.len())?;
        Ok(OracleSolution {
            sw: doc.f64("sw")?,
            duals: Duals {
                lambda,
                mu,
                nu: doc.f64("duals.nu")?,
            },
            p_opt,
            kkt_residual: doc.f64("kkt_residual")?,
            iterations: doc.usize("iterations")?,
            converged: doc.bool("converged")?,
            strictly_concave: doc.bool("strictly_concave")?,
        })
    }
}

fn read_rows(doc: &Document, prefix: &str, cols: usize) -> Result<Vec<Vec<f64>>> {
    let rows = doc.count_rows(prefix);
    let m = doc.matrix(prefix, rows)?;
    for (i, row) in m.iter().enumerate() {
        expect_len(&format!("{prefix}[{i}]"), cols, row.len())?;
    }
    Ok(m)
}

impl TextFormat for LindahlAllocation {
    const KIND: &'static str = "lindahl";

    fn write_fields(&self, w: &mut DocWriter) {
        w.list("p_opt", &self.p_opt);
        w.matrix("rates", &self.rates);
        w.matrix("taxes", &self.taxes);
    }

    fn read_fields(doc: &Document) -> Result<Self> {
        let p_opt = doc.list("p_opt")?;
        let rates = read_rows(doc, "rates", p_opt.len())?;
        let taxes = read_rows(doc, "taxes", p_opt.len())?;
        expect_len("taxes", rates.len(), taxes.len())?;
        Ok(LindahlAllocation { p_opt, rates, taxes })
    }
}

impl TextFormat for BenchmarkEquilibrium {
    const KIND: &'static str = "benchmark_equilibrium";

    fn write_fields(&self, w: &mut DocWriter) {
        w.list("p_be", &self.p_be);
        w.list("theta", &self.theta);
        w.matrix("demands", &self.demands);
        w.num("sw", self.sw);
        w.int("iterations", self.iterations);
        w.bool("converged", self.converged);
    }

    fn read_fields(doc: &Document) -> Result<Self> {
        let p_be = doc.list("p_be")?;
        let theta = doc.list("theta")?;
        expect_len("theta", p_be.len(), theta.len())?;
        Ok(BenchmarkEquilibrium {
            demands: read_rows(doc, "demands", p_be.len())?,
            p_be,
            theta,
            sw: doc.f64("sw")?,
            iterations: doc.usize("iterations")?,
            converged: doc.bool("converged")?,
        })
    }
}

impl TextFormat for PatMessageProfile {
    const KIND: &'static str = "pat_profile";

    fn write_fields(&self, w: &mut DocWriter) {
        w.list("gamma", &self.gamma);
        w.list("b", &self.b);
    }

    fn read_fields(doc: &Document) -> Result<Self> {
        let gamma = doc.list("gamma")?;
        let b = doc.list("b")?;
        expect_len("b", gamma.len(), b.len())?;
        PatMessageProfile::new(gamma, b).map_err(|e| invalid("gamma", e.to_string()))
    }
}

impl TextFormat for MpatMessageProfile {
    const KIND: &'static str = "mpat_profile";

    fn write_fields(&self, w: &mut DocWriter) {
        w.matrix("gamma", &self.gamma);
        w.matrix("b", &self.b);
    }

    fn read_fields(doc: &Document) -> Result<Self> {
        let rows = doc.count_rows("gamma");
        if rows == 0 {
            return Err(Error::MissingKey("gamma[0]".into()));
        }
        let n = doc.list("gamma[0]")?.len();
        let gamma = read_rows(doc, "gamma", n)?;
        let b = read_rows(doc, "b", n)?;
        expect_len("b", rows, b.len())?;
        MpatMessageProfile::new(gamma, b).map_err(|e| invalid("gamma", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_scenario, ScenarioGenSpec};
    use proptest::prelude::*;

    fn two_eu() -> Scenario {
        let log = UtilitySpec::LogThroughput {
            wpt_time: 1.0,
            tx_time: 1.0,
            bandwidth: 1.0,
            gain: 1.0,
            noise: 1.0,
        };
        Scenario::with_pup_factor(
            ChannelSet::uniform(1, 10.0).unwrap(),
            vec![EuProfile::new(vec![1.0], log.clone()), EuProfile::new(vec![1.0], log)],
            CostSpec::new(1.0, 1.0, 1.0).unwrap(),
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn scenario_text_layout() {
        let text = two_eu().to_text();
        assert!(text.starts_with("format = wptmech/1\nkind = scenario\nk = 2\nn = 1\n"));
        assert!(text.contains("\neu[1].utility.kind = log_throughput\n"));
        assert!(text.contains("\npeak = [1.0000000000000000e1]\n"));
        assert_eq!(Scenario::from_text(&text).unwrap(), two_eu());
    }

    #[test]
    fn sampled_scenario_round_trips_bitwise() {
        let s = sample_scenario(&ScenarioGenSpec {
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        let text = s.to_text();
        let back = Scenario::from_text(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn diagnostics_name_the_key() {
        let text = two_eu().to_text();
        let broken = text.replace("cost.zeta = 1.0000000000000000e0", "cost.zeta = abc");
        match Scenario::from_text(&broken) {
            Err(Error::InvalidValue { key, .. }) => assert_eq!(key, "cost.zeta"),
            other => panic!("{other:?}"),
        }
        let missing = text.replace("pmax = 1.0000000000000000e1\n", "");
        assert_eq!(Scenario::from_text(&missing), Err(Error::MissingKey("pmax".into())));
        let extra = format!("{text}cost.typo = 1\n");
        assert!(matches!(Scenario::from_text(&extra), Err(Error::Syntax { msg, .. }) if msg.contains("cost.typo")));
        let wrong_len = text.replace("eu[0].h = [1.0000000000000000e0]", "eu[0].h = [1.0, 2.0]");
        assert!(matches!(Scenario::from_text(&wrong_len), Err(Error::InvalidValue { key, .. }) if key == "eu[0].h"));
        let bad_format = text.replace("wptmech/1", "wptmech/9");
        assert!(matches!(Scenario::from_text(&bad_format), Err(Error::InvalidValue { key, .. }) if key == "format"));
        assert!(matches!(Document::parse("format = wptmech/1\nno equals here"), Err(Error::Syntax { line: 2, .. })));
        let dup = "format = wptmech/1\nkind = scenario\nkind = scenario\n";
        assert!(matches!(Document::parse(dup), Err(Error::Syntax { line: 3, .. })));
        let wrong_kind = PatMessageProfile::new(vec![1.0; 3], vec![0.0; 3]).unwrap().to_text();
        assert!(matches!(Scenario::from_text(&wrong_kind), Err(Error::InvalidValue { key, .. }) if key == "kind"));
    }

    #[test]
    fn outputs_round_trip() {
        let s = two_eu();
        let sol = crate::oracle::solve_swm(&s, 1e-10);
        assert_eq!(OracleSolution::from_text(&sol.to_text()).unwrap(), sol);
        let la = crate::oracle::lindahl_allocation(&s, &sol).unwrap();
        assert_eq!(LindahlAllocation::from_text(&la.to_text()).unwrap(), la);
        let (_, be) = crate::benchmarks::run_be(&s, &Default::default()).unwrap();
        assert_eq!(BenchmarkEquilibrium::from_text(&be.to_text()).unwrap(), be);
        let m = MpatMessageProfile::new(vec![vec![1.0, 2.0]; 3], vec![vec![-0.5, 0.25]; 3]).unwrap();
        assert_eq!(MpatMessageProfile::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = format!("# header\n\n{}\n# trailing\n", two_eu().to_text());
        assert_eq!(Scenario::from_text(&text).unwrap(), two_eu());
    }

    proptest! {
        #[test]
        fn numbers_round_trip(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            let text = PatMessageProfile::new(vec![x, 0.0, -x], vec![x; 3]).unwrap().to_text();
            let back = PatMessageProfile::from_text(&text).unwrap();
            prop_assert_eq!(back.gamma[0].to_bits(), x.to_bits());
            prop_assert_eq!(back.gamma[2].to_bits(), (-x).to_bits());
        }

        #[test]
        fn sampled_scenarios_round_trip(seed in any::<u64>(), k in 1usize..6, n in 1usize..5) {
            let mut spec = ScenarioGenSpec { seed, k, ..Default::default() };
            spec.carriers.truncate(n);
            let s = sample_scenario(&spec).unwrap();
            prop_assert_eq!(Scenario::from_text(&s.to_text()).unwrap(), s);
        }

        #[test]
        fn parser_never_panics(text in "\\PC{0,200}") {
            let _ = Scenario::from_text(&text);
            let _ = MpatMessageProfile::from_text(&format!("format = wptmech/1\nkind = mpat_profile\n{text}"));
        }
    }
}
