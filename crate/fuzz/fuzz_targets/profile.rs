#![no_main]

use libfuzzer_sys::fuzz_target;
use wpt_mech::mpat::{mpat_outcome, MpatMessageProfile};
use wpt_mech::pat::{pat_outcome, PatMessageProfile};
use wpt_mech::text::TextFormat;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = PatMessageProfile::from_text(text) {
            let _ = pat_outcome(&m);
        }
        if let Ok(m) = MpatMessageProfile::from_text(text) {
            let _ = mpat_outcome(&m);
        }
    }
});
