use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 8] = [
    "--set",
    "data.n_train=12",
    "--set",
    "data.n_test=6",
    "--set",
    "train.iterations=20",
    "--set",
    "train.lr_drop_at=15",
];

fn wsod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsod"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn with_out<'a>(cmd: &'a str, out: &'a Path) -> Vec<&'a str> {
    let mut v = vec![cmd, "--out", out.to_str().unwrap()];
    v.extend(SMALL);
    v
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let o = wsod(&["gen-data", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        fs::read(out.join("dataset.json")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn train_eval_infer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert!(wsod(&with_out("train", out)).status.success());
    for f in ["checkpoint.bin", "train_log.jsonl", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = wsod(&with_out("eval", out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    for key in [
        "per_class_ap",
        "map",
        "corloc",
        "ilc_accuracy",
        "config_digest",
    ] {
        assert!(metrics.get(key).is_some(), "{key}");
    }
    let evaluated = fs::read(out.join("detections.txt")).unwrap();
    assert!(wsod(&with_out("infer", out)).status.success());
    assert_eq!(fs::read(out.join("detections.txt")).unwrap(), evaluated);

    // the written config reproduces the run
    let replay = dir.path().join("replay");
    let cfg = out.join("config.toml");
    let o = wsod(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        replay.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(
        fs::read(replay.join("checkpoint.bin")).unwrap(),
        fs::read(out.join("checkpoint.bin")).unwrap()
    );
}

#[test]
fn plot_data_series() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with_out("plot-data", dir.path());
    args.extend(["--every", "10"]);
    assert!(wsod(&args).status.success());
    let text = fs::read_to_string(dir.path().join("ilc_series.tsv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration\tpipeline\tmidn\tscc");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("20\t"));
}

#[test]
fn exit_codes() {
    let o = wsod(&["train", "--set", "train.bogus=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.bogus"));
    let o = wsod(&["train", "--set", "train.lr=fast"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.lr"));
    assert_eq!(wsod(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        wsod(&["eval", "--checkpoint", "/nonexistent/ckpt"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(wsod(&["check"]).status.code(), Some(0));
}

#[test]
fn diverging_training_exits_numerically() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with_out("train", dir.path());
    args.extend(["--set", "train.lr=1e200", "--set", "train.momentum=0.0"]);
    let o = wsod(&args);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
