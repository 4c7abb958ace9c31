#![no_main]

use libfuzzer_sys::fuzz_target;
use wpt_mech::experiment::ExperimentPlan;
use wpt_mech::text::TextFormat;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(plan) = ExperimentPlan::from_text(text) {
            let back = ExperimentPlan::from_text(&plan.to_text()).expect("round trip");
            assert_eq!(back, plan);
            let _ = plan.cells();
        }
    }
});
