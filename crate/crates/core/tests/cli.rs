use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[synth]
num_reports = 200

[embed.walk]
walks_per_node = 2
walk_length = 10

[embed.skipgram]
dims = 8
window = 3

[route]
threshold = 0.5
"#;

fn urbanfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urbanfuse")).args(args).output().unwrap()
}

fn run_all(config: &Path, dir: &Path) {
    let dir = dir.to_str().unwrap();
    let config = config.to_str().unwrap();
    for stage in ["synth", "featurize", "graph", "embed", "train", "evaluate", "route", "fuse-search"] {
        let mut args = vec!["--config", config, "--seed", "11", "--out-dir", dir, stage];
        if stage == "fuse-search" {
            args.extend(["--budget", "6"]);
        }
        let out = urbanfuse(&args);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.starts_with(&format!("{stage}:")), "{stdout}");
    }
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn full_pipeline_runs_and_repeats_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.toml");
    fs::write(&config, SMALL).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_all(&config, &a);
    run_all(&config, &b);

    let ta = tree(&a);
    for f in ["eval/metrics.json", "eval/leaderboard.csv", "models/fusion.json", "search/leaderboard.csv", "route/decisions.jsonl"] {
        assert!(ta.contains_key(f), "missing {f}");
    }
    let board = String::from_utf8(ta["search/leaderboard.csv"].clone()).unwrap();
    assert_eq!(board.lines().count(), 7);
    assert!(board.starts_with("rank,classifier,features,weighted_f1,macro_f1,micro_f1,accuracy"));

    let tb = tree(&b);
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ta {
        assert!(bytes == &tb[name], "{name} differs between runs");
    }
}

#[test]
fn missing_model_points_at_train() {
    let tmp = tempfile::tempdir().unwrap();
    let out = urbanfuse(&["--seed", "1", "--out-dir", tmp.path().to_str().unwrap(), "evaluate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run `train` first"), "{err}");
}

#[test]
fn seed_is_required() {
    let tmp = tempfile::tempdir().unwrap();
    let out = urbanfuse(&["--out-dir", tmp.path().to_str().unwrap(), "synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    fs::write(&config, "seed = 1\nbogus = 2\n").unwrap();
    let out = urbanfuse(&["--config", config.to_str().unwrap(), "show-config"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn show_config_round_trips() {
    let out = urbanfuse(&["--seed", "4", "show-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = urbanfuse::pipeline::PipelineConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.seed, Some(4));
}
