#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = qre_igt::files::parse_matrix_counts(data) {
        // A document that validates yields dense per-player count tables.
        assert!(!rows.counts_a.is_empty());
        assert!(!rows.counts_b.is_empty());
    }
});
