#![no_main]

use libfuzzer_sys::fuzz_target;
use wpt_mech::benchmarks::BenchmarkEquilibrium;
use wpt_mech::oracle::{LindahlAllocation, OracleSolution};
use wpt_mech::text::TextFormat;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = OracleSolution::from_text(text);
        let _ = LindahlAllocation::from_text(text);
        let _ = BenchmarkEquilibrium::from_text(text);
    }
});
