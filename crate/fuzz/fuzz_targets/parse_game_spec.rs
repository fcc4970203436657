#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Parsing must never panic, and anything that validates must survive a
    // serialize/parse round trip unchanged.
    if let Ok(spec) = qre_igt::files::parse_game_spec(data) {
        let json = qre_igt::files::game_spec_to_json(&spec, None).unwrap();
        let reparsed = qre_igt::files::parse_game_spec(json.as_bytes()).unwrap();
        assert_eq!(reparsed, spec);
    }
});
