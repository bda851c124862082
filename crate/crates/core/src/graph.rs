//! Compressed-row adjacency plus the degree and triangle statistics the
//! propagation operators are built from.

use std::fmt;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Insert `(v, u)` for every input `(u, v)` before deduplication.
    pub symmetrize: bool,
    /// Store `(v, v)` exactly once for every node.
    pub add_self_loops: bool,
}

impl BuildOptions {
    pub fn undirected_with_self_loops() -> Self {
        BuildOptions {
            symmetrize: true,
            add_self_loops: true,
        }
    }
}

/// Immutable sparse adjacency in CSR form. Rows are sorted and duplicate-free.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrGraph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    is_undirected: bool,
    has_self_loops: bool,
}

/// Sorts, deduplicates and packs an edge list.
pub fn build_csr(edges: &[(usize, usize)], num_nodes: usize, opts: BuildOptions) -> Result<CsrGraph> {
    if num_nodes == 0 {
        if edges.is_empty() {
            return Err(Error::input("empty graph: no edges and num_nodes == 0"));
        }
        return Err(Error::input("num_nodes == 0 but edges were supplied"));
    }
    for &(u, v) in edges {
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::input(format!(
                "edge ({u}, {v}) has an endpoint outside 0..{num_nodes}"
            )));
        }
    }

    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(
        edges.len() * if opts.symmetrize { 2 } else { 1 } + if opts.add_self_loops { num_nodes } else { 0 },
    );
    for &(u, v) in edges {
        pairs.push((u, v));
        if opts.symmetrize && u != v {
            pairs.push((v, u));
        }
    }
    if opts.add_self_loops {
        pairs.extend((0..num_nodes).map(|v| (v, v)));
    }
    pairs.sort_unstable();
    pairs.dedup();

    let mut row_offsets = vec![0usize; num_nodes + 1];
    for &(u, _) in &pairs {
        row_offsets[u + 1] += 1;
    }
    for i in 0..num_nodes {
        row_offsets[i + 1] += row_offsets[i];
    }
    let col_indices: Vec<usize> = pairs.iter().map(|&(_, v)| v).collect();

    let mut g = CsrGraph {
        num_nodes,
        row_offsets,
        col_indices,
        is_undirected: false,
        has_self_loops: false,
    };
    g.is_undirected = opts.symmetrize || g.is_structurally_symmetric();
    g.has_self_loops = (0..num_nodes).all(|v| g.has_edge(v, v));
    Ok(g)
}

impl CsrGraph {
    /// Assembles a graph from raw parts without checking anything.
    /// Use [`validate`] to inspect the result.
    pub fn from_raw_parts(
        num_nodes: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        is_undirected: bool,
        has_self_loops: bool,
    ) -> Self {
        CsrGraph {
            num_nodes,
            row_offsets,
            col_indices,
            is_undirected,
            has_self_loops,
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Stored entries, counting both directions of an undirected edge and self-loops.
    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn is_undirected(&self) -> bool {
        self.is_undirected
    }

    pub fn has_self_loops(&self) -> bool {
        self.has_self_loops
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    #[inline]
    pub fn row_range(&self, v: usize) -> std::ops::Range<usize> {
        self.row_offsets[v]..self.row_offsets[v + 1]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// All stored `(u, v)` entries in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| self.neighbors(u).iter().map(move |&v| (u, v)))
    }

    /// Undirected edges `u < v`, excluding self-loops.
    pub fn undirected_edge_count(&self) -> usize {
        self.edges().filter(|&(u, v)| u < v).count()
    }

    fn is_structurally_symmetric(&self) -> bool {
        self.edges().all(|(u, v)| self.has_edge(v, u))
    }
}

/// Augmented degrees `d̃_v` (row counts of `Ã = I + A`).
#[derive(Clone, Debug, PartialEq)]
pub struct DegreeVector {
    pub values: Vec<f64>,
}

pub fn augmented_degrees(g: &CsrGraph) -> Result<DegreeVector> {
    if !g.has_self_loops() {
        return Err(Error::contract(
            "augmented degrees need a graph built with self-loops",
        ));
    }
    let values = (0..g.num_nodes())
        .map(|v| g.row_range(v).len() as f64)
        .collect();
    Ok(DegreeVector { values })
}

/// Per-edge triangle counts (`A^tri`) aligned with `col_indices`, and their row sums.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleWeights {
    pub edge_weights: Vec<u32>,
    pub node_totals: Vec<f64>,
}

/// Counts, for every stored edge `(u, v)` with `u != v`, the common neighbours
/// of `u` and `v` by merging the two sorted rows. Self-loops never contribute
/// and carry weight 0.
pub fn count_edge_triangles(g: &CsrGraph) -> Result<TriangleWeights> {
    if !g.is_undirected() {
        return Err(Error::contract("triangle counting needs an undirected graph"));
    }
    let mut edge_weights = vec![0u32; g.nnz()];
    let mut node_totals = vec![0.0; g.num_nodes()];
    for u in 0..g.num_nodes() {
        let nu = g.neighbors(u);
        let mut total = 0u64;
        for (k, &v) in nu.iter().enumerate() {
            if v == u {
                continue;
            }
            let w = sorted_intersection_excluding(nu, g.neighbors(v), u, v);
            edge_weights[g.row_offsets[u] + k] = w;
            total += w as u64;
        }
        node_totals[u] = total as f64;
    }
    Ok(TriangleWeights {
        edge_weights,
        node_totals,
    })
}

fn sorted_intersection_excluding(a: &[usize], b: &[usize], x: usize, y: usize) -> u32 {
    let (mut i, mut j, mut count) = (0, 0, 0u32);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                if a[i] != x && a[i] != y {
                    count += 1;
                }
                i += 1;
                j += 1;
            }
        }
    }
    count
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    RowOffsetsLength { expected: usize, found: usize },
    RowOffsetsDecreasing { row: usize },
    NnzMismatch { last_offset: usize, nnz: usize },
    ColumnOutOfRange { row: usize, col: usize },
    DuplicateEntry { row: usize, col: usize },
    UnsortedRow { row: usize },
    MissingReverseEdge { u: usize, v: usize },
    MissingSelfLoop { node: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowOffsetsLength { expected, found } => {
                write!(f, "row_offsets has length {found}, expected {expected}")
            }
            Violation::RowOffsetsDecreasing { row } => {
                write!(f, "row_offsets decreases at row {row}")
            }
            Violation::NnzMismatch { last_offset, nnz } => {
                write!(f, "row_offsets[N] = {last_offset} but nnz = {nnz}")
            }
            Violation::ColumnOutOfRange { row, col } => {
                write!(f, "row {row} references node {col} outside the graph")
            }
            Violation::DuplicateEntry { row, col } => write!(f, "duplicate edge ({row}, {col})"),
            Violation::UnsortedRow { row } => write!(f, "row {row} is not sorted"),
            Violation::MissingReverseEdge { u, v } => {
                write!(f, "undirected graph stores ({u}, {v}) but not ({v}, {u})")
            }
            Violation::MissingSelfLoop { node } => {
                write!(f, "graph flagged with self-loops lacks ({node}, {node})")
            }
        }
    }
}

/// Lists every broken [`CsrGraph`] invariant; empty iff the graph is well formed.
pub fn validate(g: &CsrGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = g.num_nodes;
    if g.row_offsets.len() != n + 1 {
        out.push(Violation::RowOffsetsLength {
            expected: n + 1,
            found: g.row_offsets.len(),
        });
        return out;
    }
    let mut monotone = true;
    for r in 0..n {
        if g.row_offsets[r + 1] < g.row_offsets[r] {
            out.push(Violation::RowOffsetsDecreasing { row: r });
            monotone = false;
        }
    }
    if g.row_offsets[n] != g.col_indices.len() {
        out.push(Violation::NnzMismatch {
            last_offset: g.row_offsets[n],
            nnz: g.col_indices.len(),
        });
    }
    if !monotone || g.row_offsets[n] > g.col_indices.len() || g.row_offsets[0] != 0 {
        return out;
    }

    let mut rows_ok = true;
    for r in 0..n {
        let row = g.neighbors(r);
        for w in row.windows(2) {
            if w[0] == w[1] {
                out.push(Violation::DuplicateEntry { row: r, col: w[0] });
            } else if w[0] > w[1] {
                out.push(Violation::UnsortedRow { row: r });
                rows_ok = false;
            }
        }
        for &c in row {
            if c >= n {
                out.push(Violation::ColumnOutOfRange { row: r, col: c });
                rows_ok = false;
            }
        }
    }
    if !rows_ok {
        return out;
    }
    if g.is_undirected {
        for (u, v) in g.edges() {
            if !g.has_edge(v, u) {
                out.push(Violation::MissingReverseEdge { u, v });
            }
        }
    }
    if g.has_self_loops {
        for v in 0..n {
            if !g.has_edge(v, v) {
                out.push(Violation::MissingSelfLoop { node: v });
            }
        }
    }
    out
}

/// Parses the `u<TAB>v` edge-list format. Blank lines and `#` comments are skipped;
/// any whitespace separates the two endpoints.
pub fn read_edge_list(reader: impl BufRead) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::input(format!("edge list line {}: {e}", lineno + 1)))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut it = t.split_whitespace();
        let parse = |s: Option<&str>| -> Result<usize> {
            s.ok_or_else(|| Error::input(format!("edge list line {}: expected two node ids", lineno + 1)))?
                .parse::<usize>()
                .map_err(|e| Error::input(format!("edge list line {}: {e}", lineno + 1)))
        };
        let u = parse(it.next())?;
        let v = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::input(format!(
                "edge list line {}: more than two fields",
                lineno + 1
            )));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn read_edge_file(path: &Path) -> Result<Vec<(usize, usize)>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_edge_list(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn undirected_loops(edges: &[(usize, usize)], n: usize) -> CsrGraph {
        build_csr(edges, n, BuildOptions::undirected_with_self_loops()).unwrap()
    }

    fn complete(n: usize) -> CsrGraph {
        let mut e = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                e.push((u, v));
            }
        }
        build_csr(&e, n, BuildOptions { symmetrize: true, add_self_loops: false }).unwrap()
    }

    #[test]
    fn smallest_graph_with_loops() {
        let g = undirected_loops(&[(0, 1)], 2);
        assert_eq!(g.neighbors(0), &[0, 1]);
        assert_eq!(g.neighbors(1), &[0, 1]);
        assert_eq!(g.nnz(), 4);
        assert!(g.is_undirected() && g.has_self_loops());
    }

    #[test]
    fn duplicates_collapse() {
        let opts = BuildOptions { symmetrize: true, add_self_loops: false };
        let g = build_csr(&[(0, 1), (1, 0), (0, 1)], 2, opts).unwrap();
        assert_eq!(g.nnz(), 2);
        assert!(!g.has_self_loops());
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            build_csr(&[(0, 2)], 2, BuildOptions::default()),
            Err(Error::Input(_))
        ));
        assert!(matches!(build_csr(&[], 0, BuildOptions::default()), Err(Error::Input(_))));
        // isolated nodes are fine
        let g = build_csr(&[], 3, BuildOptions::undirected_with_self_loops()).unwrap();
        assert_eq!(g.nnz(), 3);
    }

    #[test]
    fn degree_examples() {
        assert_eq!(augmented_degrees(&undirected_loops(&[(0, 1)], 2)).unwrap().values, vec![2.0, 2.0]);
        assert_eq!(augmented_degrees(&undirected_loops(&[], 1)).unwrap().values, vec![1.0]);
        let k3 = undirected_loops(&[(0, 1), (1, 2), (0, 2)], 3);
        // dense Ã of K3 is all ones: each row has three entries
        assert_eq!(augmented_degrees(&k3).unwrap().values, vec![3.0; 3]);
        assert!(matches!(augmented_degrees(&complete(3)), Err(Error::Contract(_))));
    }

    #[test]
    fn triangle_examples() {
        // K3 and K4 values were enumerated over all node triples
        let t3 = count_edge_triangles(&complete(3)).unwrap();
        assert!(t3.edge_weights.iter().all(|&w| w == 1));
        assert_eq!(t3.node_totals, vec![2.0; 3]);

        let t4 = count_edge_triangles(&complete(4)).unwrap();
        assert!(t4.edge_weights.iter().all(|&w| w == 2));
        assert_eq!(t4.node_totals, vec![6.0; 4]);

        let p = count_edge_triangles(&undirected_loops(&[(0, 1)], 2)).unwrap();
        assert!(p.edge_weights.iter().all(|&w| w == 0));

        let directed = build_csr(&[(0, 1)], 2, BuildOptions::default()).unwrap();
        assert!(matches!(count_edge_triangles(&directed), Err(Error::Contract(_))));
    }

    #[test]
    fn self_loops_do_not_change_triangle_counts() {
        let e = [(0, 1), (1, 2), (0, 2), (2, 3)];
        let a = count_edge_triangles(&undirected_loops(&e, 4)).unwrap();
        let b = count_edge_triangles(
            &build_csr(&e, 4, BuildOptions { symmetrize: true, add_self_loops: false }).unwrap(),
        )
        .unwrap();
        assert_eq!(a.node_totals, b.node_totals);
    }

    #[test]
    fn validate_examples() {
        let k3 = undirected_loops(&[(0, 1), (1, 2), (0, 2)], 3);
        assert!(validate(&k3).is_empty());

        let asym = CsrGraph::from_raw_parts(2, vec![0, 1, 1], vec![1], true, false);
        assert_eq!(validate(&asym), vec![Violation::MissingReverseEdge { u: 0, v: 1 }]);
        assert!(validate(&asym)[0].to_string().contains("(0, 1)"));

        let decreasing = CsrGraph::from_raw_parts(2, vec![0, 2, 1], vec![0, 1], false, false);
        assert!(validate(&decreasing)
            .iter()
            .any(|v| matches!(v, Violation::RowOffsetsDecreasing { row: 1 })));

        let dup = CsrGraph::from_raw_parts(1, vec![0, 2], vec![0, 0], false, true);
        assert!(validate(&dup).contains(&Violation::DuplicateEntry { row: 0, col: 0 }));

        let oob = CsrGraph::from_raw_parts(1, vec![0, 1], vec![3], false, false);
        assert!(validate(&oob).contains(&Violation::ColumnOutOfRange { row: 0, col: 3 }));
    }

    #[test]
    fn edge_list_parsing() {
        let text = "# header\n0\t1\n\n2 3\n";
        assert_eq!(read_edge_list(text.as_bytes()).unwrap(), vec![(0, 1), (2, 3)]);
        assert!(read_edge_list("0\tx\n".as_bytes()).is_err());
        assert!(read_edge_list("0\n".as_bytes()).is_err());
    }

    fn brute_triangles(g: &CsrGraph) -> Vec<u32> {
        let n = g.num_nodes();
        let adj = |a: usize, b: usize| a != b && g.has_edge(a, b);
        g.edges()
            .map(|(u, v)| {
                if u == v {
                    return 0;
                }
                (0..n).filter(|&w| w != u && w != v && adj(u, w) && adj(v, w)).count() as u32
            })
            .collect()
    }

    fn arb_edges(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1..=max_n).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..(n * 3))))
    }

    proptest! {
        #[test]
        fn edge_set_round_trips((n, edges) in arb_edges(30), sym in any::<bool>()) {
            let g = build_csr(&edges, n, BuildOptions { symmetrize: sym, add_self_loops: false }).unwrap();
            let mut expect: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
            if sym {
                expect.extend(edges.iter().map(|&(u, v)| (v, u)));
            }
            let got: BTreeSet<(usize, usize)> = g.edges().collect();
            prop_assert_eq!(got, expect);
            prop_assert!(validate(&g).is_empty());
        }

        #[test]
        fn triangles_match_brute_force((n, edges) in arb_edges(50)) {
            let g = undirected_loops(&edges, n);
            let t = count_edge_triangles(&g).unwrap();
            prop_assert_eq!(&t.edge_weights, &brute_triangles(&g));
            for (u, v) in g.edges() {
                let i = g.row_offsets()[u] + g.neighbors(u).binary_search(&v).unwrap();
                let j = g.row_offsets()[v] + g.neighbors(v).binary_search(&u).unwrap();
                prop_assert_eq!(t.edge_weights[i], t.edge_weights[j]);
            }
            for v in 0..n {
                let s: u32 = g.row_range(v).map(|k| t.edge_weights[k]).sum();
                prop_assert_eq!(t.node_totals[v], s as f64);
            }
        }

        #[test]
        fn degrees_sum_to_nnz((n, edges) in arb_edges(40)) {
            let g = undirected_loops(&edges, n);
            let d = augmented_degrees(&g).unwrap();
            prop_assert_eq!(d.values.iter().sum::<f64>(), g.nnz() as f64);
            prop_assert!(d.values.iter().all(|&x| x >= 1.0));
        }
    }
}
