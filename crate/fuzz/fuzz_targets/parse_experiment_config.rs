#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(config) = qre_igt::files::parse_experiment_config(data) {
        // A config that parses must also survive re-serialization.
        let json = serde_json::to_vec(&config).unwrap();
        qre_igt::files::parse_experiment_config(&json).unwrap();
    }
});
