//! Text dataset directories.
//!
//! ```text
//! edges.tsv     one "u<TAB>v" pair per line, '#' comments allowed
//! features.txt  whitespace-separated floats, one node per line
//! labels.txt    one integer class per line (-1 marks an unlabeled node)
//! splits.txt    one of train / val / test / none per line
//! ```
//! The node count is the number of feature rows.

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{build_csr, read_edge_list, BuildOptions, CsrGraph};
use crate::matrix::Matrix;
use crate::train::Splits;

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.txt";
pub const LABELS_FILE: &str = "labels.txt";
pub const SPLITS_FILE: &str = "splits.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    pub build: BuildOptions,
    /// Scale every feature row to sum to one (rows summing to zero are kept).
    pub normalize_features: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            build: BuildOptions::undirected_with_self_loops(),
            normalize_features: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: CsrGraph,
    pub features: Matrix,
    /// `None` for unlabeled nodes, which may not appear in any split.
    pub labels: Vec<Option<usize>>,
    pub num_classes: usize,
    pub splits: Splits,
    /// Edge lines in the input file, before symmetrization and deduplication.
    pub listed_edges: usize,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Labels with unlabeled nodes mapped to class 0. Safe for training
    /// because unlabeled nodes are never in a split.
    pub fn dense_labels(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.unwrap_or(0)).collect()
    }

    /// Undirected pairs `u < v`, self-loops excluded.
    pub fn num_edges(&self) -> usize {
        self.graph.undirected_edge_count()
    }
}

fn read_text(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(dir: &Path, opts: LoadOptions) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::input(format!("dataset directory {} does not exist", dir.display())));
    }
    parse_dataset(
        &read_text(dir, EDGES_FILE)?,
        &read_text(dir, FEATURES_FILE)?,
        &read_text(dir, LABELS_FILE)?,
        &read_text(dir, SPLITS_FILE)?,
        opts,
    )
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_features(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in content_lines(text) {
        let row = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::input(format!("{FEATURES_FILE} line {lineno}: '{t}': {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("{FEATURES_FILE} line {lineno}: non-finite value")));
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::input(format!(
                    "{FEATURES_FILE} line {lineno}: {} values, expected {}",
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::input(format!("{FEATURES_FILE} has no rows")));
    }
    if rows[0].is_empty() {
        return Err(Error::input(format!("{FEATURES_FILE} rows have no values")));
    }
    Ok(Matrix::from_rows(&rows))
}

pub fn parse_labels(text: &str) -> Result<Vec<Option<usize>>> {
    content_lines(text)
        .map(|(lineno, line)| match line.parse::<i64>() {
            Ok(-1) => Ok(None),
            Ok(y) if y >= 0 => Ok(Some(y as usize)),
            Ok(y) => Err(Error::input(format!("{LABELS_FILE} line {lineno}: label {y} is out of range"))),
            Err(e) => Err(Error::input(format!("{LABELS_FILE} line {lineno}: '{line}': {e}"))),
        })
        .collect()
}

pub fn parse_splits(text: &str) -> Result<Splits> {
    let mut s = Splits { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (lineno, line) in content_lines(text) {
        let (tr, va, te) = match line {
            "train" => (true, false, false),
            "val" => (false, true, false),
            "test" => (false, false, true),
            "none" => (false, false, false),
            other => {
                return Err(Error::input(format!(
                    "{SPLITS_FILE} line {lineno}: '{other}' is not train, val, test or none"
                )))
            }
        };
        s.train.push(tr);
        s.val.push(va);
        s.test.push(te);
    }
    Ok(s)
}

pub fn parse_dataset(edges: &str, features: &str, labels: &str, splits: &str, opts: LoadOptions) -> Result<Dataset> {
    let mut features = parse_features(features)?;
    let n = features.rows();
    let edge_list = read_edge_list(edges.as_bytes())?;
    if let Some((i, &(u, v))) = edge_list.iter().enumerate().find(|(_, &(u, v))| u >= n || v >= n) {
        return Err(Error::input(format!(
            "{EDGES_FILE} edge #{} ({u}, {v}) names a node outside 0..{n}",
            i + 1
        )));
    }
    let graph = build_csr(&edge_list, n, opts.build)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(Error::input(format!("{LABELS_FILE} has {} entries for {n} nodes", labels.len())));
    }
    let splits = parse_splits(splits)?;
    if splits.num_nodes() != n {
        return Err(Error::input(format!("{SPLITS_FILE} has {} entries for {n} nodes", splits.num_nodes())));
    }
    splits.check(n)?;
    for v in 0..n {
        if labels[v].is_none() && (splits.train[v] || splits.val[v] || splits.test[v]) {
            return Err(Error::input(format!("node {v} is in a split but has no label")));
        }
    }
    let num_classes = labels.iter().flatten().max().map_or(0, |&m| m + 1);
    if num_classes == 0 {
        return Err(Error::input("no labeled nodes"));
    }
    if opts.normalize_features {
        for v in 0..n {
            let row = features.row_mut(v);
            let sum: f64 = row.iter().sum();
            if sum != 0.0 {
                row.iter_mut().for_each(|x| *x /= sum);
            }
        }
    }
    Ok(Dataset { graph, features, labels, num_classes, splits, listed_edges: edge_list.len() })
}

/// Summary printed by dataset validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSummary {
    pub nodes: usize,
    pub edges: usize,
    pub listed_edges: usize,
    pub features: usize,
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "nodes={} edges={} listed_edges={} features={} classes={} train={} val={} test={}",
            self.nodes, self.edges, self.listed_edges, self.features, self.classes, self.train, self.val, self.test
        )
    }
}

pub fn summarize(ds: &Dataset) -> DatasetSummary {
    let count = |m: &[bool]| m.iter().filter(|&&b| b).count();
    DatasetSummary {
        nodes: ds.num_nodes(),
        edges: ds.num_edges(),
        listed_edges: ds.listed_edges,
        features: ds.num_features(),
        classes: ds.num_classes,
        train: count(&ds.splits.train),
        val: count(&ds.splits.val),
        test: count(&ds.splits.test),
    }
}

/// Writes `ds` in the directory format (used by fixture generators).
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    use std::fmt::Write as _;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut edges = String::new();
    for (u, v) in ds.graph.edges() {
        if u < v {
            let _ = writeln!(edges, "{u}\t{v}");
        }
    }
    let mut features = String::new();
    for v in 0..ds.num_nodes() {
        let row: Vec<String> = ds.features.row(v).iter().map(|x| x.to_string()).collect();
        let _ = writeln!(features, "{}", row.join(" "));
    }
    let mut labels = String::new();
    let mut splits = String::new();
    for v in 0..ds.num_nodes() {
        let _ = writeln!(labels, "{}", ds.labels[v].map_or(-1, |y| y as i64));
        let tag = if ds.splits.train[v] {
            "train"
        } else if ds.splits.val[v] {
            "val"
        } else if ds.splits.test[v] {
            "test"
        } else {
            "none"
        };
        let _ = writeln!(splits, "{tag}");
    }
    for (name, text) in [(EDGES_FILE, edges), (FEATURES_FILE, features), (LABELS_FILE, labels), (SPLITS_FILE, splits)] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
