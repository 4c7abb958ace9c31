#![no_main]

use libfuzzer_sys::fuzz_target;
use wpt_mech::text::Document;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(doc) = Document::parse(text) {
            let _ = doc.kind();
            let _ = doc.list("p_opt");
            let _ = doc.usize_list("k");
            let _ = doc.words("mechanisms");
            let _ = doc.ensure_all_used();
        }
    }
});
