//! Fuzzes the predicate-embedding loader: dimension mismatches, zero
//! vectors, and non-finite components must be rejected, not crash.

#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::Cursor;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) =
        kgapprox::semantics::load_embeddings_from_reader(Cursor::new(data), "embeddings.tsv")
    {
        if let kgapprox::semantics::SimilarityProvider::Embeddings { vectors, .. } = &p {
            if let (Some(a), Some(b)) = (
                vectors.keys().next(),
                vectors.keys().last(),
            ) {
                // Cosine of finite non-zero vectors, clamped: always (0, 1].
                let s = kgapprox::semantics::predicate_similarity(&p, a, b, 1e-4).unwrap();
                assert!(s >= 1e-4 && s <= 1.0);
            }
        }
    }
});
