//! Fuzzes the aggregate-query JSON parser: arbitrary bytes must produce
//! either a query or an error, never a panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(q) = kgapprox::query::parse_query(text) {
            // Anything that parses must also survive validation and
            // decomposition without panicking.
            let _ = q.validate();
            let _ = kgapprox::query::decompose(&q);
        }
    }
});
