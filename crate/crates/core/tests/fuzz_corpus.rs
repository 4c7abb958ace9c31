//! Every checked-in fuzz seed must decode with the parser its target drives.

use std::fs;
use std::path::{Path, PathBuf};

use wpt_mech::benchmarks::BenchmarkEquilibrium;
use wpt_mech::experiment::ExperimentPlan;
use wpt_mech::model::Scenario;
use wpt_mech::mpat::MpatMessageProfile;
use wpt_mech::oracle::{LindahlAllocation, OracleSolution};
use wpt_mech::pat::PatMessageProfile;
use wpt_mech::text::{Document, TextFormat};

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let text = fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn document_seeds_parse() {
    for (p, text) in seeds("document") {
        Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn typed_seeds_decode() {
    for (p, text) in seeds("scenario") {
        Scenario::from_text(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, text) in seeds("plan") {
        ExperimentPlan::from_text(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, text) in seeds("profile") {
        let ok = PatMessageProfile::from_text(&text).is_ok() || MpatMessageProfile::from_text(&text).is_ok();
        assert!(ok, "{}", p.display());
    }
    for (p, text) in seeds("solution") {
        let ok = OracleSolution::from_text(&text).is_ok()
            || LindahlAllocation::from_text(&text).is_ok()
            || BenchmarkEquilibrium::from_text(&text).is_ok();
        assert!(ok, "{}", p.display());
    }
}
