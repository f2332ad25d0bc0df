//! Fuzzes the predicate-similarity table loader: range checks, self-pair
//! and conflicting-duplicate rejection must hold for arbitrary input.

#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::Cursor;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = kgapprox::semantics::load_simtable_from_reader(Cursor::new(data), "simtable.tsv")
    {
        // Every loaded similarity must come back clamped into (0, 1].
        if let kgapprox::semantics::SimilarityProvider::Table { known, .. } = &p {
            if let (Some(a), Some(b)) = (known.iter().next(), known.iter().last()) {
                let s = kgapprox::semantics::predicate_similarity(&p, a, b, 1e-4).unwrap();
                assert!(s >= 1e-4 && s <= 1.0);
            }
        }
    }
});
