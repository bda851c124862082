//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! The citation-benchmark criteria read a dataset directory from
//! `$GMLP_CORA_DIR` (default `data/cora` at the workspace root). When it is
//! absent they fail and report the same protocol on a synthetic stand-in.
//! `$GMLP_SYNTHETIC_TRIALS` sets the stand-in trial count (default 2).

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::gradcheck::{self, Case};
use common::{dense_propagate, random_features, RandomGraph};
use gmlp_core::dataset::{load_dataset, Dataset, LoadOptions};
use gmlp_core::matrix::Matrix;
use gmlp_core::fixtures::{synthetic_citation, toy_dataset, SyntheticSpec};
use gmlp_core::model::{forward, schedule_alpha, Variant, VariantConfig};
use gmlp_core::pipeline::{cost_model, partition_nodes, precompute_batched, CostInputs, CostScheme, PartitionScheme};
use gmlp_core::propagation::{make_operator, propagate, OperatorKind};
use gmlp_core::train::{run_trials, train, TrainConfig, TrialSummary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn propagation_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let g = RandomGraph::generate(&mut rng, 64);
        let csr = g.csr();
        let steps = rng.gen_range(0..=8);
        let d = rng.gen_range(1..=5);
        let x = random_features(&mut rng, g.n, d);
        for kind in OperatorKind::ALL {
            let alpha = (kind == OperatorKind::Ppr).then(|| rng.gen_range(0.05..=1.0));
            let ms = propagate(&make_operator(&csr, kind, alpha).unwrap(), &x, steps).unwrap();
            for (got, want) in ms.steps().iter().zip(dense_propagate(&g, kind, alpha, &x, steps)) {
                worst = worst.max(got.max_abs_diff(&want));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs < 10.0,
        format!("200 random graphs x 4 operators, max error {worst:.2e} (<= 1e-6), {secs:.2}s (< 10s)"),
    )
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let mut worst = (0.0f64, String::new());
    let (mut skipped, mut total) = (0, 0);
    for cfg in gradcheck::configs().into_iter().filter(|c| c.variant == Variant::Full) {
        for seed in 0..20 {
            let case = Case::new(cfg.clone(), seed, 3);
            total += case.params.num_parameters();
            let (rel, name, kinks) = case.check();
            skipped += kinks;
            if rel > worst.0 {
                worst = (rel, format!("{name} ({} / {}, seed {seed})", cfg.message_agg, cfg.reference));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst.0 <= gradcheck::TOL && skipped * 200 <= total && secs < 30.0,
        format!(
            "FULL model, 20 seeds per configuration, worst relative error {:.2e} (<= 1e-4) on {}; \
             {skipped}/{total} entries skipped at ReLU/max kinks; {secs:.2}s (< 30s)",
            worst.0, worst.1
        ),
    )
}

fn fixture_graphs() -> Vec<(&'static str, Dataset)> {
    vec![
        ("toy", toy_dataset(LoadOptions::default())),
        ("synthetic-small", synthetic_citation(&SyntheticSpec::small(90, 3), 4).unwrap()),
        ("synthetic-citation", synthetic_citation(&SyntheticSpec::citation(), 1).unwrap()),
    ]
}

/// First 16 feature columns; narrow inputs keep the citation-sized fixture quick.
fn narrow(ds: &Dataset) -> Matrix {
    Matrix::from_fn(ds.num_nodes(), ds.num_features().min(16), |i, j| ds.features.get(i, j))
}

fn bit_identity() -> Outcome {
    let mut runs = 0;
    for (name, ds) in fixture_graphs() {
        let n = ds.num_nodes();
        let x = narrow(&ds);
        for kind in OperatorKind::ALL {
            let alpha = (kind == OperatorKind::Ppr).then_some(0.1);
            let op = make_operator(&ds.graph, kind, alpha).unwrap();
            let reference = propagate(&op, &x, 3).unwrap();
            for w in [1, 2, 4] {
                let plan = partition_nodes(&ds.graph, w, PartitionScheme::Range).unwrap();
                for batch in [1, (n / 3).max(1), n] {
                    let (ms, _) = precompute_batched(&op, &x, 3, &plan, batch).unwrap();
                    if ms.steps() != reference.steps() {
                        return outcome(false, format!("{name} {kind} W={w} batch={batch} differs from propagate"));
                    }
                    runs += 1;
                }
            }
        }
    }
    outcome(true, format!("{runs} runs (3 fixtures x 4 operators x W in {{1,2,4}} x 3 batch sizes) bit-identical"))
}

fn cost_model_reproduction() -> Outcome {
    let mut checked = 0;
    for (name, ds) in fixture_graphs() {
        let x = narrow(&ds);
        let op = make_operator(&ds.graph, OperatorKind::AugNormAdj, None).unwrap();
        for steps in [1, 3] {
            let plan = partition_nodes(&ds.graph, 2, PartitionScheme::Hash).unwrap();
            let (_, report) = precompute_batched(&op, &x, steps, &plan, 64).unwrap();
            let inputs = CostInputs {
                nodes: ds.num_nodes() as u64,
                edges: op.nnz() as u64,
                dim: x.cols() as u64,
                prop_layers: steps as u64,
                update_layers: 2,
                epochs: 200,
                fanout: 10,
            };
            let predicted = cost_model(&inputs, CostScheme::Fmp).comm_entries;
            let measured = (report.pulled + report.local) as u128;
            if measured != predicted {
                return outcome(false, format!("{name} T={steps}: measured {measured} != predicted {predicted}"));
            }
            checked += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let c = CostInputs {
            nodes: rng.gen_range(1..10_000_000),
            edges: rng.gen_range(1..1_000_000_000),
            dim: rng.gen_range(1..10_000),
            prop_layers: rng.gen_range(1..20),
            update_layers: rng.gen_range(1..5),
            epochs: rng.gen_range(1..10_000),
            fanout: rng.gen_range(1..30),
        };
        let nmp = cost_model(&c, CostScheme::Nmp).comm_entries;
        let fmp = cost_model(&c, CostScheme::Fmp).comm_entries;
        if nmp != fmp * c.epochs as u128 {
            return outcome(false, format!("NMP/FMP ratio is not T_epochs for {c:?}"));
        }
    }
    outcome(
        true,
        format!("measured traffic equals FMP prediction on {checked} runs; NMP/FMP = T_epochs on 10000 random inputs"),
    )
}

fn cora_dir() -> PathBuf {
    std::env::var_os("GMLP_CORA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/cora"))
}

fn load_cora() -> Option<Dataset> {
    let dir = cora_dir();
    dir.is_dir().then(|| {
        load_dataset(&dir, LoadOptions { normalize_features: true, ..LoadOptions::default() })
            .unwrap_or_else(|e| panic!("{} exists but does not load: {e}", dir.display()))
    })
}

/// Citation-sized synthetic graph with row-normalised features, matching how
/// the real dataset is loaded.
fn synthetic_stand_in() -> Dataset {
    let mut ds = synthetic_citation(&SyntheticSpec::citation(), 1).unwrap();
    for v in 0..ds.num_nodes() {
        let row = ds.features.row_mut(v);
        let s: f64 = row.iter().sum();
        if s != 0.0 {
            row.iter_mut().for_each(|x| *x /= s);
        }
    }
    ds
}

fn synthetic_trials() -> usize {
    std::env::var("GMLP_SYNTHETIC_TRIALS").ok().and_then(|s| s.parse().ok()).unwrap_or(2)
}

fn gu(steps: usize) -> VariantConfig {
    VariantConfig { variant: Variant::Gu, steps, ..VariantConfig::default() }
}

fn full(steps: usize) -> VariantConfig {
    VariantConfig { variant: Variant::Full, steps, ..VariantConfig::default() }
}

fn trials(ds: &Dataset, vcfg: &VariantConfig, n: usize) -> TrialSummary {
    let op = make_operator(&ds.graph, vcfg.graph_agg, vcfg.restart_alpha).unwrap();
    let ms = propagate(&op, &ds.features, vcfg.steps).unwrap();
    run_trials(&TrainConfig::default(), vcfg, &ms, &ds.dense_labels(), &ds.splits, n).unwrap()
}

/// Returns the GU T=2 runs too, which the robustness check reuses.
fn accuracy_protocol(ds: &Dataset, n: usize) -> (bool, String, TrialSummary) {
    let gu2 = trials(ds, &gu(2), n);
    let full5 = trials(ds, &full(5), n);
    let pass = gu2.mean >= 0.78 && full5.mean >= 0.80 && full5.mean >= gu2.mean;
    let detail = format!("GU T=2 {gu2} (>= 0.78); FULL T=5 {full5} (>= 0.80, >= GU)");
    (pass, detail, gu2)
}

fn robustness_protocol(ds: &Dataset, n: usize, gu2: &TrialSummary) -> (bool, String) {
    let full2 = trials(ds, &full(2), n);
    let full10 = trials(ds, &full(10), n);
    let gu10 = trials(ds, &gu(10), n);
    let drop = (full2.mean - full10.mean) * 100.0;
    let gu_drop = (gu2.mean - gu10.mean) * 100.0;
    (
        drop <= 1.5,
        format!(
            "FULL T=2 {full2}, T=10 {full10}: drop {drop:.2} points (<= 1.5); \
             GU T=2 {:.4}, T=10 {gu10}: drop {gu_drop:.2} points (reported)",
            gu2.mean
        ),
    )
}

fn citation_criteria() -> (Outcome, Outcome) {
    match load_cora() {
        Some(ds) => {
            let t5 = Instant::now();
            let (pass5, detail5, gu2) = accuracy_protocol(&ds, 10);
            let secs = t5.elapsed().as_secs_f64();
            let c5 = outcome(pass5 && secs < 600.0, format!("{detail5}; {secs:.0}s (< 600s)"));
            let (pass6, detail6) = robustness_protocol(&ds, 5, &gu2);
            (c5, outcome(pass6, detail6))
        }
        None => {
            let missing = format!("citation dataset missing at {}", cora_dir().display());
            let n = synthetic_trials();
            let ds = synthetic_stand_in();
            let (pass5, detail5, gu2) = accuracy_protocol(&ds, n);
            let (pass6, detail6) = robustness_protocol(&ds, n, &gu2);
            (
                outcome(
                    false,
                    format!(
                        "{missing}; synthetic stand-in ({n} trials, thresholds {}): {detail5}",
                        if pass5 { "met" } else { "not met" }
                    ),
                ),
                outcome(
                    false,
                    format!(
                        "{missing}; synthetic stand-in ({n} trials, bound {}): {detail6}",
                        if pass6 { "met" } else { "not met" }
                    ),
                ),
            )
        }
    }
}

fn schedule_endpoints() -> Outcome {
    let endpoints = [1, 2, 7, 200, 1000]
        .iter()
        .all(|&te| schedule_alpha(0, te) == 1.0 && schedule_alpha(te, te) == 0.0);
    let mut zero = true;
    for cfg in gradcheck::configs().into_iter().filter(|c| c.variant == Variant::Full) {
        for seed in 0..5 {
            let g = Case::new(cfg.clone(), seed, 0).analytic();
            zero &= g
                .tensors()
                .iter()
                .filter(|t| t.group.is_sga_only())
                .all(|t| t.data.iter().all(|&v| v == 0.0));
        }
    }
    outcome(
        endpoints && zero,
        format!("alpha_0 = 1 and alpha_Te = 0 exactly: {endpoints}; SGA-only gradients exactly 0 at alpha = 1: {zero}"),
    )
}

fn attention_sanity() -> Outcome {
    let ds = toy_dataset(LoadOptions { normalize_features: true, ..LoadOptions::default() });
    let vcfg = full(6);
    let op = make_operator(&ds.graph, vcfg.graph_agg, None).unwrap();
    let ms = propagate(&op, &ds.features, 6).unwrap();
    let labels = ds.dense_labels();
    let seeds = 5;
    let mut mean = vec![0.0; 7];
    for seed in 0..seeds {
        // two validation nodes saturate at once and ties keep the earliest
        // epoch; validating only at the end analyses the fully trained model
        let cfg = TrainConfig { seed, epochs: 200, eval_every: 200, ..TrainConfig::default() };
        let (params, _) = train(&cfg, &vcfg, &ms, &labels, &ds.splits).unwrap();
        let trace = forward(&params, &vcfg, &ms, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let w = trace.attn.expect("FULL produces attention weights").mean_per_step();
        for (m, x) in mean.iter_mut().zip(w) {
            *m += x / seeds as f64;
        }
    }
    let early = mean[1] + mean[2];
    let last = mean[6];
    outcome(
        early >= 1.0 / 7.0,
        format!(
            "toy two-clique FULL T=6, {seeds} seeds: mean attention on steps 1+2 = {early:.4} \
             (>= 1/7), on step 6 = {last:.4} (steps 1+2 {} step 6); per step {:?}",
            if early > last { "exceed" } else { "do not exceed" },
            mean.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |k: usize, o: Outcome| {
        println!("{} criterion {k}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, o));
    };
    report(1, propagation_oracle());
    report(2, gradient_check());
    report(3, bit_identity());
    report(4, cost_model_reproduction());
    let (c5, c6) = citation_criteria();
    report(5, c5);
    report(6, c6);
    report(7, schedule_endpoints());
    report(8, attention_sanity());
    let secs = started.elapsed().as_secs_f64();
    report(
        9,
        outcome(
            secs < 900.0,
            format!(
                "property suites run as separate targets of the same `cargo test` command; \
                 acceptance took {secs:.0}s (< 900s)"
            ),
        ),
    );
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(k, _)| *k).collect();
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
