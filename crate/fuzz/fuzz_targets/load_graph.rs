//! Fuzzes the three-file TSV graph loader. The input is split into the
//! nodes, edges, and attrs files at the first two NUL bytes, so one corpus
//! entry exercises cross-file invariants (dangling edge endpoints, attrs on
//! unknown nodes, duplicate ids).

#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::Cursor;

fuzz_target!(|data: &[u8]| {
    let mut parts = data.splitn(3, |b| *b == 0);
    let nodes = parts.next().unwrap_or_default();
    let edges = parts.next().unwrap_or_default();
    let attrs = parts.next().unwrap_or_default();
    if let Ok(g) = kgapprox::graph::load_graph_from_readers(
        Cursor::new(nodes),
        "nodes.tsv",
        Cursor::new(edges),
        "edges.tsv",
        Cursor::new(attrs),
        "attrs.tsv",
    ) {
        // A graph that loads must round-trip through the writer.
        let mut n = Vec::new();
        let mut e = Vec::new();
        let mut a = Vec::new();
        kgapprox::graph::save_graph(&g, &mut n, &mut e, &mut a).unwrap();
        kgapprox::graph::load_graph_from_readers(
            Cursor::new(n.as_slice()),
            "nodes.tsv",
            Cursor::new(e.as_slice()),
            "edges.tsv",
            Cursor::new(a.as_slice()),
            "attrs.tsv",
        )
        .unwrap();
    }
});
