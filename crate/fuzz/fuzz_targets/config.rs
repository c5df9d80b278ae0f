#![no_main]

use libfuzzer_sys::fuzz_target;
use otcf::data::{parse_config, parse_delimiter, parse_label_map, Schema};

fuzz_target!(|text: &str| {
    if let Ok(cfg) = parse_config(text) {
        let _ = Schema::from_config(&cfg);
    }
    let _ = parse_label_map(text);
    let _ = parse_delimiter(text);
});
