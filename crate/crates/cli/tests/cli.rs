use std::path::Path;
use std::process::{Command, Output};

fn gmlp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmlp"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GMLP_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn header_steps(path: &Path) -> u32 {
    let bytes = std::fs::read(path).unwrap();
    assert_eq!(&bytes[0..4], b"FMPM");
    u32::from_le_bytes(bytes[16..20].try_into().unwrap())
}

#[test]
fn precompute_writes_messages_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmlp(&["precompute", "--dataset", "toy", "--agg", "aug_norm_adj", "--steps", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(header_steps(&dir.path().join("out/messages.fmpm")), 3);
    let report = std::fs::read_to_string(dir.path().join("out/cost_report.json")).unwrap();
    for key in ["\"pulled\"", "\"pushed\"", "\"local\"", "\"flops\"", "\"per_step\""] {
        assert!(report.contains(key), "{report}");
    }
}

#[test]
fn cost_model_prints_the_epoch_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmlp(
        &["cost-model", "--N", "2708", "--M", "5429", "--d", "1433", "--Lp", "2", "--Lu", "2", "--epochs", "100"],
        dir.path(),
    );
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("comm ratio NMP/FMP: 100\n"), "{out}");
    for scheme in ["NMP", "DNMP", "FMP", "sage"] {
        assert!(out.contains(scheme), "{out}");
    }
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = gmlp(&["train", "--bogus"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("Usage"));
    assert_eq!(gmlp(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(gmlp(&[], dir.path()).status.code(), Some(1));
    let help = gmlp(&["--help"], dir.path());
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("precompute"));
}

#[test]
fn validate_accepts_the_toy_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmlp(&["validate", "--dataset", "toy"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("nodes=8"));
}

fn write_toy(dir: &Path) {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/toy");
    std::fs::create_dir_all(dir).unwrap();
    for f in ["edges.tsv", "features.txt", "labels.txt", "splits.txt"] {
        std::fs::copy(src.join(f), dir.join(f)).unwrap();
    }
}

#[test]
fn validate_rejects_corrupted_directories_as_input_errors() {
    let root = tempfile::tempdir().unwrap();
    let corruptions: [(&str, &str, &str); 4] = [
        ("features.txt", "0 1 0 0", "0 1 0"),
        ("labels.txt", "1\n1\n1\n1", "1\n1\n1\n-3"),
        ("splits.txt", "val", "validation"),
        ("edges.tsv", "3\t4", "3\t40"),
    ];
    for (i, (file, from, to)) in corruptions.iter().enumerate() {
        let dir = root.path().join(format!("bad{i}"));
        write_toy(&dir);
        let text = std::fs::read_to_string(dir.join(file)).unwrap();
        assert!(text.contains(from));
        std::fs::write(dir.join(file), text.replacen(from, to, 1)).unwrap();
        let o = gmlp(&["validate", "--dataset", dir.to_str().unwrap()], root.path());
        assert_eq!(o.status.code(), Some(2), "{file}: {}", stderr(&o));
        assert!(stderr(&o).contains("input error"), "{}", stderr(&o));
    }
    let missing = root.path().join("missing");
    write_toy(&missing);
    std::fs::remove_file(missing.join("labels.txt")).unwrap();
    let o = gmlp(&["validate", "--dataset", missing.to_str().unwrap()], root.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("labels.txt"));

    let o = gmlp(&["validate", "--dataset", "no-such-dataset"], root.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn datasets_resolve_under_the_data_directory() {
    let root = tempfile::tempdir().unwrap();
    write_toy(&root.path().join("data/mini"));
    let o = gmlp(&["validate", "--dataset", "mini"], root.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let pre = gmlp(&["precompute", "--dataset", "toy", "--steps", "2"], p);
    assert!(pre.status.success(), "{}", stderr(&pre));
    let args = ["--dataset", "toy", "--steps", "2", "--epochs", "30", "--seed", "3"];
    let mut train = vec!["train", "--messages", "out/messages.fmpm"];
    train.extend(args);
    let o = gmlp(&train, p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("best epoch"));
    let csv = std::fs::read_to_string(p.join("out/history.csv")).unwrap();
    assert!(csv.starts_with("epoch,train_loss,val_acc,alpha_t,wall_ms\n"));

    let mut eval = vec!["eval", "--checkpoint", "out/checkpoint.fmpp", "--split", "val"];
    eval.extend(args);
    let e = gmlp(&eval, p);
    assert!(e.status.success(), "{}", stderr(&e));
    assert!(stdout(&e).starts_with("val accuracy "));

    // a checkpoint for one architecture does not load into another
    let mut wrong = vec!["eval", "--checkpoint", "out/checkpoint.fmpp", "--hidden", "7"];
    wrong.extend(args);
    assert_eq!(gmlp(&wrong, p).status.code(), Some(2));

    // messages with the wrong depth are refused
    let mut deep = vec!["train", "--messages", "out/messages.fmpm", "--dataset", "toy", "--steps", "3"];
    deep.extend(["--epochs", "2"]);
    assert_eq!(gmlp(&deep, p).status.code(), Some(2));
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("run.cfg"), "# test\nsteps = 4\nagg = random_walk\n").unwrap();

    let o = gmlp(&["precompute", "--dataset", "toy", "--config", "run.cfg"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(header_steps(&p.join("out/messages.fmpm")), 4);

    let o = gmlp(&["precompute", "--dataset", "toy", "--config", "run.cfg", "--steps", "2"], p);
    assert!(o.status.success());
    assert_eq!(header_steps(&p.join("out/messages.fmpm")), 2);

    let o = gmlp(&["precompute", "--dataset", "toy", "--config", "run.cfg", "--set", "steps=1"], p);
    assert!(o.status.success());
    assert_eq!(header_steps(&p.join("out/messages.fmpm")), 1);

    let o = gmlp(&["precompute", "--dataset", "toy"], p);
    assert!(o.status.success());
    assert_eq!(header_steps(&p.join("out/messages.fmpm")), 5);

    std::fs::write(p.join("bad.cfg"), "stepz = 4\n").unwrap();
    let o = gmlp(&["precompute", "--dataset", "toy", "--config", "bad.cfg"], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stepz"));
}

#[test]
fn inconsistent_variants_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmlp(&["train", "--dataset", "toy", "--variant", "gmu", "--message-agg", "attention"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config error"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_with_the_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmlp(
        &["train", "--dataset", "toy", "--lr", "1e300", "--set", "optimizer=sgd", "--epochs", "5"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("numeric error"));
}

#[test]
fn bench_prints_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmlp(&["bench", "--dataset", "toy", "--trials", "3", "--epochs", "20"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("seed ")).count(), 3);
    assert!(out.contains(" ± ") && out.contains("over 3 trials"), "{out}");
}
