//! Bundled and generated datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{parse_dataset, Dataset, LoadOptions};
use crate::error::Result;
use crate::graph::build_csr;
use crate::matrix::Matrix;
use crate::train::Splits;

const TOY_EDGES: &str = include_str!("../fixtures/toy/edges.tsv");
const TOY_FEATURES: &str = include_str!("../fixtures/toy/features.txt");
const TOY_LABELS: &str = include_str!("../fixtures/toy/labels.txt");
const TOY_SPLITS: &str = include_str!("../fixtures/toy/splits.txt");

/// Two 4-cliques joined by the edge (3, 4); one class per clique, four
/// features. The bridge nodes carry features that point at the other class.
pub fn toy_dataset(opts: LoadOptions) -> Dataset {
    parse_dataset(TOY_EDGES, TOY_FEATURES, TOY_LABELS, TOY_SPLITS, opts).expect("bundled toy dataset is valid")
}

/// Shape of a generated citation-style graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub classes: usize,
    pub vocabulary: usize,
    /// Undirected edges to draw (duplicates and self-pairs are dropped).
    pub edges: usize,
    /// Probability that an edge stays inside its class.
    pub homophily: f64,
    pub words_per_node: usize,
    /// Probability a word is drawn from the node's class topic instead of the
    /// whole vocabulary.
    pub topic_strength: f64,
    pub train_per_class: usize,
    pub val: usize,
    pub test: usize,
}

impl SyntheticSpec {
    /// Sized like the common 2708-node, 7-class citation benchmark.
    pub fn citation() -> Self {
        SyntheticSpec {
            nodes: 2708,
            classes: 7,
            vocabulary: 1433,
            edges: 5278,
            homophily: 0.7,
            words_per_node: 18,
            topic_strength: 0.3,
            train_per_class: 20,
            val: 500,
            test: 1000,
        }
    }

    pub fn small(nodes: usize, classes: usize) -> Self {
        SyntheticSpec {
            nodes,
            classes,
            vocabulary: 16,
            edges: nodes * 2,
            homophily: 0.9,
            words_per_node: 6,
            topic_strength: 0.5,
            train_per_class: nodes / classes / 2,
            val: nodes / 4,
            test: nodes / 4,
        }
    }
}

/// Random graph with class-homophilous edges and bag-of-words features.
/// Splits: the first `train_per_class` nodes of each class, then `val`, then
/// `test` further nodes, in node order.
pub fn synthetic_citation(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.nodes;
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..spec.classes)).collect();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); spec.classes];
    for (v, &y) in labels.iter().enumerate() {
        by_class[y].push(v);
    }

    let mut edges = Vec::with_capacity(spec.edges);
    for _ in 0..spec.edges {
        let u = rng.gen_range(0..n);
        let v = if rng.gen_bool(spec.homophily) {
            *by_class[labels[u]].choose(&mut rng).expect("u is in its class")
        } else {
            rng.gen_range(0..n)
        };
        if u != v {
            edges.push((u, v));
        }
    }
    let listed_edges = edges.len();
    let graph = build_csr(&edges, n, LoadOptions::default().build)?;

    let mut words: Vec<usize> = (0..spec.vocabulary).collect();
    words.shuffle(&mut rng);
    let topic = spec.vocabulary / spec.classes;
    let mut features = Matrix::zeros(n, spec.vocabulary);
    for v in 0..n {
        for _ in 0..spec.words_per_node {
            let w = if rng.gen_bool(spec.topic_strength) {
                words[labels[v] * topic + rng.gen_range(0..topic.max(1))]
            } else {
                rng.gen_range(0..spec.vocabulary)
            };
            features.set(v, w, 1.0);
        }
    }

    let mut splits = Splits { train: vec![false; n], val: vec![false; n], test: vec![false; n] };
    let mut seen = vec![0usize; spec.classes];
    let mut rest = Vec::new();
    for v in 0..n {
        if seen[labels[v]] < spec.train_per_class {
            seen[labels[v]] += 1;
            splits.train[v] = true;
        } else {
            rest.push(v);
        }
    }
    for &v in rest.iter().take(spec.val) {
        splits.val[v] = true;
    }
    for &v in rest.iter().skip(spec.val).take(spec.test) {
        splits.test[v] = true;
    }

    Ok(Dataset {
        graph,
        features,
        labels: labels.into_iter().map(Some).collect(),
        num_classes: spec.classes,
        splits,
        listed_edges,
    })
}
