//! Fuzzes the synthetic-graph spec parser and its feasibility checks.
//! Generation itself is only attempted for specs small enough to build
//! instantly, so the fuzzer exercises the generator without timing out.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = kgapprox::synth::parse_generator_spec(text) {
            let background: usize = spec.types.values().sum();
            let planted: usize = spec
                .planted
                .as_ref()
                .map(|p| p.correct + p.incorrect + 1)
                .unwrap_or(0);
            if background + planted <= 200 && spec.edges <= 1_000 {
                let _ = kgapprox::synth::generate_synthetic_kg(&spec, 0);
            }
        }
    }
});
