//! Knowledge-graph storage and traversal.
//!
//! A [`KnowledgeGraph`] is loaded once from TSV files and never mutated
//! afterwards, so it can be shared freely across query sessions. Traversal is
//! direction-agnostic: the adjacency index lists every edge at both
//! endpoints, with the predicate label retained for similarity scoring.
//!
//! ## File formats
//!
//! - `nodes.tsv`: `node_id <TAB> name <TAB> type1|type2|...`
//! - `edges.tsv`: `src_id <TAB> predicate <TAB> dst_id`
//! - `attrs.tsv`: `node_id <TAB> attr_name <TAB> numeric_value`
//!
//! Blank lines are ignored. Any other deviation is reported with its row
//! number.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense handle for a node; indexes into [`KnowledgeGraph::nodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

/// Dense handle for an edge; indexes into [`KnowledgeGraph::edges`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    /// Identifier from the source file, kept for output and diagnostics.
    pub id: String,
    pub name: String,
    pub types: BTreeSet<String>,
    pub attrs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub predicate: String,
    /// True only for the synthetic anchor self-loop injected by the sampler;
    /// never set on ingested data.
    pub is_self_loop: bool,
}

/// Immutable, fully indexed graph.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(EdgeId, NodeId)>>,
    name_index: HashMap<(String, String), NodeId>,
}

impl KnowledgeGraph {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0 as usize]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0 as usize]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    /// Edges incident to `id`, both directions, each entry `(edge, neighbor)`.
    pub fn neighbors(&self, id: NodeId) -> &[(EdgeId, NodeId)] {
        &self.adjacency[id.0 as usize]
    }

    /// Looks a node up by its source-file identifier. Linear scan; intended
    /// for tests and fixtures, not hot paths.
    pub fn node_by_source_id(&self, id: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| n.id == id)
            .map(|i| NodeId(i as u32))
    }

    /// Given node endpoint `at` of edge `e`, returns the other endpoint.
    pub fn other_endpoint(&self, e: EdgeId, at: NodeId) -> NodeId {
        let edge = self.edge(e);
        if edge.src == at {
            edge.dst
        } else {
            edge.src
        }
    }
}

/// n-bounded neighborhood around a mapping node.
#[derive(Debug, Clone)]
pub struct BoundedRegion {
    pub anchor: NodeId,
    pub hop_limit: usize,
    /// Every node within `hop_limit` undirected hops of the anchor,
    /// the anchor included. Ordered for deterministic iteration.
    pub members: BTreeSet<NodeId>,
    /// Members whose type set intersects the target types, anchor excluded,
    /// ascending by id. `candidate_count` is this list's length.
    pub candidates: Vec<NodeId>,
}

impl BoundedRegion {
    /// |A|, the basis for desired-sample-size computation.
    pub fn candidate_count(&self) -> usize {
        self.candidates.len()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.members.contains(&id)
    }
}

struct GraphBuilder {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    by_source_id: HashMap<String, NodeId>,
}

impl GraphBuilder {
    fn new() -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            edges: Vec::new(),
            by_source_id: HashMap::new(),
        }
    }

    fn add_node(&mut self, node: Node) -> Result<NodeId> {
        if self.by_source_id.contains_key(&node.id) {
            return Err(Error::DuplicateNodeId(node.id));
        }
        let id = NodeId(self.nodes.len() as u32);
        self.by_source_id.insert(node.id.clone(), id);
        self.nodes.push(node);
        Ok(id)
    }

    fn finish(self) -> KnowledgeGraph {
        let mut adjacency = vec![Vec::new(); self.nodes.len()];
        for (i, edge) in self.edges.iter().enumerate() {
            let e = EdgeId(i as u32);
            adjacency[edge.src.0 as usize].push((e, edge.dst));
            if edge.src != edge.dst {
                adjacency[edge.dst.0 as usize].push((e, edge.src));
            }
        }
        let mut name_index = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            for ty in &node.types {
                // First writer wins; the unique-name assumption makes a
                // collision an input-data bug, not a load error.
                name_index
                    .entry((node.name.clone(), ty.clone()))
                    .or_insert(NodeId(i as u32));
            }
        }
        KnowledgeGraph {
            nodes: self.nodes,
            edges: self.edges,
            adjacency,
            name_index,
        }
    }
}

fn split3(line: &str) -> Option<(&str, &str, &str)> {
    let mut parts = line.split('\t');
    let a = parts.next()?;
    let b = parts.next()?;
    let c = parts.next()?;
    if parts.next().is_some() {
        return None;
    }
    Some((a, b, c))
}

fn malformed(path: &str, line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedLine {
        path: path.to_string(),
        line,
        reason: reason.into(),
    }
}

/// Loads a graph from the three standard TSV files.
pub fn load_graph(
    nodes_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
    attrs_path: impl AsRef<Path>,
) -> Result<KnowledgeGraph> {
    let open = |p: &Path| -> Result<BufReader<File>> {
        File::open(p)
            .map(BufReader::new)
            .map_err(|e| Error::io(p.display().to_string(), e))
    };
    let nodes_path = nodes_path.as_ref();
    let edges_path = edges_path.as_ref();
    let attrs_path = attrs_path.as_ref();
    load_graph_from_readers(
        open(nodes_path)?,
        &nodes_path.display().to_string(),
        open(edges_path)?,
        &edges_path.display().to_string(),
        open(attrs_path)?,
        &attrs_path.display().to_string(),
    )
}

/// Reader-based loader behind [`load_graph`]; the `*_label` arguments name
/// the inputs in error messages.
pub fn load_graph_from_readers(
    nodes: impl BufRead,
    nodes_label: &str,
    edges: impl BufRead,
    edges_label: &str,
    attrs: impl BufRead,
    attrs_label: &str,
) -> Result<KnowledgeGraph> {
    let mut builder = GraphBuilder::new();

    for (idx, line) in nodes.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| Error::io(nodes_label, e))?;
        if line.is_empty() {
            continue;
        }
        let (id, name, types) = split3(&line)
            .ok_or_else(|| malformed(nodes_label, row, "expected 3 tab-separated fields"))?;
        if id.is_empty() {
            return Err(malformed(nodes_label, row, "empty node id"));
        }
        let types: BTreeSet<String> = types
            .split('|')
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        if types.is_empty() {
            return Err(malformed(nodes_label, row, "node has no types"));
        }
        builder.add_node(Node {
            id: id.to_string(),
            name: name.to_string(),
            types,
            attrs: BTreeMap::new(),
        })?;
    }

    for (idx, line) in edges.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| Error::io(edges_label, e))?;
        if line.is_empty() {
            continue;
        }
        let (src, predicate, dst) = split3(&line)
            .ok_or_else(|| malformed(edges_label, row, "expected 3 tab-separated fields"))?;
        if predicate.is_empty() {
            return Err(malformed(edges_label, row, "empty predicate"));
        }
        let resolve = |id: &str| {
            builder.by_source_id.get(id).copied().ok_or_else(|| Error::DanglingEdge {
                path: edges_label.to_string(),
                line: row,
                node: id.to_string(),
            })
        };
        let (src, dst) = (resolve(src)?, resolve(dst)?);
        builder.edges.push(Edge {
            src,
            dst,
            predicate: predicate.to_string(),
            is_self_loop: false,
        });
    }

    for (idx, line) in attrs.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| Error::io(attrs_label, e))?;
        if line.is_empty() {
            continue;
        }
        let (id, attr, value) = split3(&line)
            .ok_or_else(|| malformed(attrs_label, row, "expected 3 tab-separated fields"))?;
        let node = builder.by_source_id.get(id).copied().ok_or_else(|| {
            malformed(attrs_label, row, format!("attribute references unknown node `{id}`"))
        })?;
        let parsed: f64 = value.parse().map_err(|_| Error::NonNumericAttribute {
            path: attrs_label.to_string(),
            line: row,
            attr: attr.to_string(),
            value: value.to_string(),
        })?;
        if !parsed.is_finite() {
            return Err(Error::NonNumericAttribute {
                path: attrs_label.to_string(),
                line: row,
                attr: attr.to_string(),
                value: value.to_string(),
            });
        }
        builder.nodes[node.0 as usize]
            .attrs
            .insert(attr.to_string(), parsed);
    }

    Ok(builder.finish())
}

/// Writes a graph back to the three TSV writers. Inverse of
/// [`load_graph_from_readers`] up to row order.
pub fn save_graph(
    g: &KnowledgeGraph,
    mut nodes: impl Write,
    mut edges: impl Write,
    mut attrs: impl Write,
) -> std::io::Result<()> {
    for node in &g.nodes {
        let types: Vec<&str> = node.types.iter().map(String::as_str).collect();
        writeln!(nodes, "{}\t{}\t{}", node.id, node.name, types.join("|"))?;
    }
    for edge in &g.edges {
        writeln!(
            edges,
            "{}\t{}\t{}",
            g.node(edge.src).id,
            edge.predicate,
            g.node(edge.dst).id
        )?;
    }
    for node in &g.nodes {
        for (attr, value) in &node.attrs {
            writeln!(attrs, "{}\t{}\t{}", node.id, attr, value)?;
        }
    }
    Ok(())
}

/// Finds the mapping node: name equal, type set intersecting `types`.
/// Multiple matches cannot occur under the unique-name assumption.
pub fn resolve_specific_node(
    g: &KnowledgeGraph,
    name: &str,
    types: &BTreeSet<String>,
) -> Result<NodeId> {
    for ty in types {
        if let Some(&id) = g.name_index.get(&(name.to_string(), ty.clone())) {
            return Ok(id);
        }
    }
    Err(Error::NoMappingNode {
        name: name.to_string(),
        types: types.iter().cloned().collect(),
    })
}

/// BFS out to `n` undirected hops from `anchor`, collecting the region
/// members and the candidate answers (target-typed members, anchor excluded).
pub fn bounded_region(
    g: &KnowledgeGraph,
    anchor: NodeId,
    n: usize,
    target_types: &BTreeSet<String>,
) -> Result<BoundedRegion> {
    if n == 0 {
        return Err(Error::DomainError("hop limit n must be >= 1".into()));
    }
    let mut members = BTreeSet::new();
    members.insert(anchor);
    let mut queue = VecDeque::new();
    queue.push_back((anchor, 0usize));
    while let Some((u, depth)) = queue.pop_front() {
        if depth == n {
            continue;
        }
        for &(_, v) in g.neighbors(u) {
            if members.insert(v) {
                queue.push_back((v, depth + 1));
            }
        }
    }
    let candidates = members
        .iter()
        .copied()
        .filter(|&u| u != anchor && !g.node(u).types.is_disjoint(target_types))
        .collect();
    Ok(BoundedRegion {
        anchor,
        hop_limit: n,
        members,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn from_strs(nodes: &str, edges: &str, attrs: &str) -> Result<KnowledgeGraph> {
        load_graph_from_readers(
            Cursor::new(nodes),
            "nodes.tsv",
            Cursor::new(edges),
            "edges.tsv",
            Cursor::new(attrs),
            "attrs.tsv",
        )
    }

    /// Fig. 3 shape: Germany with five neighbors, three automobiles, two of
    /// them one hop further out.
    pub(crate) fn fig3() -> KnowledgeGraph {
        let nodes = "\
u_1\tGermany\tCountry
u_2\tVolkswagen\tCompany
u_3\tAudi_TT\tAutomobile
u_4\tBMW_320\tAutomobile
u_5\tBMW\tCompany
u_6\tBMW_X6\tAutomobile
u_7\tAngela_Merkel\tPerson
u_8\tCET\tTimeZone
";
        let edges = "\
u_2\tcountry\tu_1
u_4\tassembly\tu_1
u_5\theadquarter\tu_1
u_7\tleader\tu_1
u_8\ttimezone\tu_1
u_3\tassembly\tu_2
u_6\tassembly\tu_5
";
        let attrs = "\
u_3\tprice\t40000
u_4\tprice\t36000
u_6\tprice\t48144
";
        from_strs(nodes, edges, attrs).unwrap()
    }

    fn types(list: &[&str]) -> BTreeSet<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn empty_inputs_load_as_empty_graph() {
        let g = from_strs("", "", "").unwrap();
        assert_eq!(g.node_count(), 0);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn fig3_loads_with_expected_shape() {
        let g = fig3();
        assert_eq!(g.node_count(), 8);
        assert_eq!(g.edge_count(), 7);
        let u1 = g.node_by_source_id("u_1").unwrap();
        assert_eq!(g.neighbors(u1).len(), 5);
        assert_eq!(g.node(u1).name, "Germany");
    }

    #[test]
    fn dangling_edge_is_rejected() {
        let err = from_strs("u_1\ta\tT\n", "u_1\tp\tu_99\n", "").unwrap_err();
        assert!(matches!(err, Error::DanglingEdge { ref node, .. } if node == "u_99"));
    }

    #[test]
    fn duplicate_node_id_is_rejected() {
        let err = from_strs("u_1\ta\tT\nu_1\tb\tT\n", "", "").unwrap_err();
        assert!(matches!(err, Error::DuplicateNodeId(ref id) if id == "u_1"));
    }

    #[test]
    fn non_numeric_attribute_is_rejected() {
        let err = from_strs("u_1\ta\tT\n", "", "u_1\tprice\tcheap\n").unwrap_err();
        assert!(matches!(err, Error::NonNumericAttribute { .. }));
        let err = from_strs("u_1\ta\tT\n", "", "u_1\tprice\tNaN\n").unwrap_err();
        assert!(matches!(err, Error::NonNumericAttribute { .. }));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = from_strs("u_1\ta\tT\nu_2 b T\n", "", "").unwrap_err();
        match err {
            Error::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn resolve_finds_germany_by_type() {
        let g = fig3();
        let id = resolve_specific_node(&g, "Germany", &types(&["Country"])).unwrap();
        assert_eq!(g.node(id).id, "u_1");

        let err = resolve_specific_node(&g, "Germany", &types(&["Automobile"])).unwrap_err();
        assert!(matches!(err, Error::NoMappingNode { .. }));

        let err = resolve_specific_node(&g, "", &BTreeSet::new()).unwrap_err();
        assert!(matches!(err, Error::NoMappingNode { .. }));
    }

    #[test]
    fn fig3_region_covers_graph_with_three_candidates() {
        let g = fig3();
        let u1 = g.node_by_source_id("u_1").unwrap();
        let region = bounded_region(&g, u1, 2, &types(&["Automobile"])).unwrap();
        assert_eq!(region.members.len(), 8);
        assert_eq!(region.candidate_count(), 3);
        let names: Vec<&str> = region
            .candidates
            .iter()
            .map(|&id| g.node(id).id.as_str())
            .collect();
        assert_eq!(names, ["u_3", "u_4", "u_6"]);
    }

    #[test]
    fn region_rejects_zero_hop_limit() {
        let g = fig3();
        let u1 = g.node_by_source_id("u_1").unwrap();
        assert!(bounded_region(&g, u1, 0, &BTreeSet::new()).is_err());
    }

    #[test]
    fn isolated_anchor_yields_singleton_region() {
        let g = from_strs("u_1\ta\tT\nu_2\tb\tT\n", "", "").unwrap();
        let u1 = g.node_by_source_id("u_1").unwrap();
        let region = bounded_region(&g, u1, 3, &types(&["T"])).unwrap();
        assert_eq!(region.members.len(), 1);
        assert_eq!(region.candidate_count(), 0);
    }

    #[test]
    fn region_members_grow_monotonically_with_n() {
        let g = fig3();
        let u1 = g.node_by_source_id("u_1").unwrap();
        let target = types(&["Automobile"]);
        let mut previous = BTreeSet::new();
        for n in 1..=4 {
            let region = bounded_region(&g, u1, n, &target).unwrap();
            assert!(previous.is_subset(&region.members), "n={n}");
            previous = region.members;
        }
    }

    #[test]
    fn reachability_is_symmetric_under_undirected_traversal() {
        let g = fig3();
        let target = BTreeSet::new();
        for u in g.node_ids() {
            let from_u = bounded_region(&g, u, 2, &target).unwrap();
            for v in g.node_ids() {
                let from_v = bounded_region(&g, v, 2, &target).unwrap();
                assert_eq!(from_u.contains(v), from_v.contains(u), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn save_then_load_round_trips() {
        let g = fig3();
        let (mut n, mut e, mut a) = (Vec::new(), Vec::new(), Vec::new());
        save_graph(&g, &mut n, &mut e, &mut a).unwrap();
        let g2 = from_strs(
            std::str::from_utf8(&n).unwrap(),
            std::str::from_utf8(&e).unwrap(),
            std::str::from_utf8(&a).unwrap(),
        )
        .unwrap();
        assert_eq!(g.node_count(), g2.node_count());
        assert_eq!(g.edge_count(), g2.edge_count());
        for (id, node) in g.nodes.iter().enumerate() {
            let other = g2.node(NodeId(id as u32));
            assert_eq!(node.id, other.id);
            assert_eq!(node.types, other.types);
            assert_eq!(node.attrs, other.attrs);
        }
    }
}
