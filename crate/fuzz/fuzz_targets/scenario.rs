#![no_main]

use libfuzzer_sys::fuzz_target;
use wpt_mech::model::Scenario;
use wpt_mech::text::TextFormat;

// Anything accepted must re-serialize to an equal scenario.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = Scenario::from_text(text) {
            let back = Scenario::from_text(&s.to_text()).expect("round trip");
            assert_eq!(back, s);
        }
    }
});
