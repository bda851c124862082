//! `gmlp`: precompute graph messages, train and evaluate classifiers on them,
//! benchmark repeated runs and query the communication cost model.
//!
//! Exit codes: 0 ok, 1 usage, 2 input/config error, 3 numeric error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmlp_core::config::{RunConfig, KEYS};
use gmlp_core::dataset::{load_dataset, summarize, Dataset, LoadOptions};
use gmlp_core::fixtures::toy_dataset;
use gmlp_core::formats::{load_checkpoint, load_message_set, save_checkpoint, save_message_set};
use gmlp_core::graph::validate;
use gmlp_core::pipeline::{cost_model, measure_precompute, partition_nodes, CostInputs, CostScheme};
use gmlp_core::propagation::{make_operator, MessageSet};
use gmlp_core::train::{evaluate, run_trials, train};
use gmlp_core::{Error, Result};

#[derive(Parser)]
#[command(name = "gmlp", version, about = "Graph message precompute and MLP training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate features and write the message set plus a traffic report.
    Precompute {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for messages.fmpm and cost_report.json.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Train a model; writes checkpoint.fmpp and history.csv.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Precomputed message set; computed on the fly when omitted.
        #[arg(long)]
        messages: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Print the accuracy of a checkpoint on one split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        messages: Option<PathBuf>,
        /// train | val | test
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Repeat training over `trials` seeds and print mean ± std test accuracy.
    Bench {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Compare forward flops and communication of the four training schemes.
    CostModel(CostArgs),
    /// Load and check a dataset directory, then print its summary.
    Validate {
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory, `toy` for the bundled fixture, or a name looked up
    /// under $GMLP_DATA_DIR or ./data.
    #[arg(long)]
    dataset: String,
    #[command(flatten)]
    config: ConfigArgs,
}

/// Layering: defaults, then `--config`, then `--set`, then named flags.
#[derive(Args)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any configuration key, e.g. `--set weight_decay=0.001` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// gu | gmu | full
    #[arg(long)]
    variant: Option<String>,
    /// aug_norm_adj | random_walk | ppr | triangle
    #[arg(long)]
    agg: Option<String>,
    /// PPR restart probability.
    #[arg(long)]
    restart_alpha: Option<String>,
    /// concat | mean_pool | max_pool | gating (gmu only)
    #[arg(long)]
    message_agg: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// range | hash
    #[arg(long)]
    partition: Option<String>,
    #[arg(long)]
    trials: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => Some(std::fs::read_to_string(path).map_err(|e| io_error(path, e))?),
            None => None,
        };
        let mut overrides = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        let named = [
            ("variant", &self.variant),
            ("agg", &self.agg),
            ("restart_alpha", &self.restart_alpha),
            ("message_agg", &self.message_agg),
            ("steps", &self.steps),
            ("hidden", &self.hidden),
            ("dropout", &self.dropout),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("weight_decay", &self.weight_decay),
            ("patience", &self.patience),
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("partition", &self.partition),
            ("trials", &self.trials),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                overrides.push((k.to_string(), v.clone()));
            }
        }
        let cfg = RunConfig::resolve(file.as_deref(), &overrides)?;
        cfg.check()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct CostArgs {
    /// Nodes.
    #[arg(long = "N")]
    nodes: u64,
    /// Edges (nonzeros of the propagation operator).
    #[arg(long = "M")]
    edges: u64,
    /// Feature width.
    #[arg(long = "d")]
    dim: u64,
    /// Propagation layers.
    #[arg(long = "Lp", default_value_t = 2)]
    prop_layers: u64,
    /// Update (MLP) layers.
    #[arg(long = "Lu", default_value_t = 2)]
    update_layers: u64,
    #[arg(long, default_value_t = 100)]
    epochs: u64,
    /// Sampling fanout for the sampled scheme.
    #[arg(long = "k", default_value_t = 10)]
    fanout: u64,
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn resolve_dataset(name: &str, cfg: &RunConfig) -> Result<Dataset> {
    let opts = LoadOptions { normalize_features: cfg.normalize_features, ..LoadOptions::default() };
    let direct = Path::new(name);
    if direct.is_dir() {
        return load_dataset(direct, opts);
    }
    if name == "toy" {
        return Ok(toy_dataset(opts));
    }
    let root = std::env::var_os("GMLP_DATA_DIR").map_or_else(|| PathBuf::from("data"), PathBuf::from);
    let dir = root.join(name);
    if dir.is_dir() {
        return load_dataset(&dir, opts);
    }
    Err(Error::Input(format!(
        "dataset '{name}' not found (tried ./{name} and {}); convert it with scripts/convert_planetoid.py",
        dir.display()
    )))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn precompute(ds: &Dataset, cfg: &RunConfig) -> Result<(MessageSet, String, f64)> {
    let v = &cfg.variant;
    let op = make_operator(&ds.graph, v.graph_agg, v.restart_alpha)?;
    let plan = partition_nodes(&ds.graph, cfg.workers, cfg.partition)?;
    let m = measure_precompute(&op, &ds.features, v.steps, &plan, cfg.precompute_batch)?;
    Ok((m.messages, m.report.to_json(), m.wall_ms))
}

fn messages_for(ds: &Dataset, cfg: &RunConfig, path: Option<&Path>) -> Result<MessageSet> {
    let ms = match path {
        Some(p) => load_message_set(p)?,
        None => precompute(ds, cfg)?.0,
    };
    if ms.num_nodes() != ds.num_nodes() || ms.dim() != ds.num_features() {
        return Err(Error::Input(format!(
            "message set is {}x{} but the dataset has {} nodes and {} features",
            ms.num_nodes(),
            ms.dim(),
            ds.num_nodes(),
            ds.num_features()
        )));
    }
    if ms.depth() != cfg.variant.steps {
        return Err(Error::Input(format!(
            "message set has {} steps but steps = {}",
            ms.depth(),
            cfg.variant.steps
        )));
    }
    Ok(ms)
}

fn split_mask<'a>(ds: &'a Dataset, split: &str) -> Result<&'a [bool]> {
    match split {
        "train" => Ok(&ds.splits.train),
        "val" => Ok(&ds.splits.val),
        "test" => Ok(&ds.splits.test),
        other => Err(Error::Input(format!("unknown split '{other}', expected train, val or test"))),
    }
}

fn cost_table(args: &CostArgs) -> String {
    let inputs = CostInputs {
        nodes: args.nodes,
        edges: args.edges,
        dim: args.dim,
        prop_layers: args.prop_layers,
        update_layers: args.update_layers,
        epochs: args.epochs,
        fanout: args.fanout,
    };
    let mut out = String::new();
    let _ = writeln!(out, "{:<6} {:>28} {:>28}", "scheme", "forward_flops", "comm_entries");
    for scheme in CostScheme::ALL {
        let e = cost_model(&inputs, scheme);
        let _ = writeln!(out, "{:<6} {:>28} {:>28}", scheme.to_string(), e.forward_flops, e.comm_entries);
    }
    let nmp = cost_model(&inputs, CostScheme::Nmp).comm_entries;
    let fmp = cost_model(&inputs, CostScheme::Fmp).comm_entries;
    if fmp == 0 {
        let _ = writeln!(out, "comm ratio NMP/FMP: undefined (FMP traffic is zero)");
    } else if nmp % fmp == 0 {
        let _ = writeln!(out, "comm ratio NMP/FMP: {}", nmp / fmp);
    } else {
        let _ = writeln!(out, "comm ratio NMP/FMP: {:.4}", nmp as f64 / fmp as f64);
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Precompute { data, out_dir } => {
            let cfg = data.config.resolve()?;
            let ds = resolve_dataset(&data.dataset, &cfg)?;
            let (ms, report, wall_ms) = precompute(&ds, &cfg)?;
            create_dir(&out_dir)?;
            let ms_path = out_dir.join("messages.fmpm");
            save_message_set(&ms_path, &ms)?;
            let report_path = out_dir.join("cost_report.json");
            std::fs::write(&report_path, report + "\n").map_err(|e| io_error(&report_path, e))?;
            println!(
                "wrote {} (N={} d={} T={}) and {} in {wall_ms:.1} ms",
                ms_path.display(),
                ms.num_nodes(),
                ms.dim(),
                ms.depth(),
                report_path.display()
            );
        }
        Command::Train { data, messages, out_dir } => {
            let cfg = data.config.resolve()?;
            let ds = resolve_dataset(&data.dataset, &cfg)?;
            let ms = messages_for(&ds, &cfg, messages.as_deref())?;
            let labels = ds.dense_labels();
            let (params, history) = train(&cfg.train, &cfg.variant, &ms, &labels, &ds.splits)?;
            create_dir(&out_dir)?;
            save_checkpoint(&out_dir.join("checkpoint.fmpp"), &params)?;
            history.write_csv(&out_dir.join("history.csv"))?;
            let test = if ds.splits.test.iter().any(|&t| t) {
                format!("{:.4}", evaluate(&params, &cfg.variant, &ms, &labels, &ds.splits.test)?)
            } else {
                "n/a".to_string()
            };
            println!(
                "best epoch {} of {}: val accuracy {:.4}, test accuracy {test}{}",
                history.best_epoch,
                history.epochs.len(),
                history.best_val_accuracy,
                if history.stopped_early { " (stopped early)" } else { "" }
            );
        }
        Command::Eval { data, checkpoint, messages, split } => {
            let cfg = data.config.resolve()?;
            let ds = resolve_dataset(&data.dataset, &cfg)?;
            let mask = split_mask(&ds, &split)?;
            let ms = messages_for(&ds, &cfg, messages.as_deref())?;
            let params = load_checkpoint(&checkpoint, &cfg.variant, ms.dim())?;
            let acc = evaluate(&params, &cfg.variant, &ms, &ds.dense_labels(), mask)?;
            println!("{split} accuracy {acc:.4}");
        }
        Command::Bench { data } => {
            let cfg = data.config.resolve()?;
            let ds = resolve_dataset(&data.dataset, &cfg)?;
            let ms = messages_for(&ds, &cfg, None)?;
            let summary = run_trials(&cfg.train, &cfg.variant, &ms, &ds.dense_labels(), &ds.splits, cfg.trials)?;
            for (seed, acc) in summary.seeds.iter().zip(&summary.test_accuracies) {
                println!("seed {seed}: test accuracy {acc:.4}");
            }
            println!("test accuracy {:.4} ± {:.4} over {} trials", summary.mean, summary.std, cfg.trials);
        }
        Command::CostModel(args) => print!("{}", cost_table(&args)),
        Command::Validate { data } => {
            let cfg = data.config.resolve()?;
            let ds = resolve_dataset(&data.dataset, &cfg)?;
            let problems = validate(&ds.graph);
            if !problems.is_empty() {
                return Err(Error::Input(format!("graph is malformed: {}", problems.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))));
            }
            println!("ok: {}", summarize(&ds));
        }
    }
    Ok(())
}

fn key_help() -> String {
    let mut s = String::from("Configuration keys (for --config files and --set):\n");
    for (key, doc) in KEYS {
        let _ = writeln!(s, "  {key:<20} {doc}");
    }
    s
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            if code == 0 && matches!(e.kind(), clap::error::ErrorKind::DisplayHelp) {
                println!("\n{}", key_help());
            }
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
