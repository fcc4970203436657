#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Both Markov dataset CSV schemas share the parser.
    let _ = qre_igt::files::parse_count_rows(data, "state,a,b,count");
    let _ = qre_igt::files::parse_count_rows(data, "state,a,b,next_state,count");
});
