use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 1

[synthetic]
items = 400
clusters = 8
cycle_len = 4
users = 40
min_seq_len = 10
max_seq_len = 14

[tokenizer]
epochs = 3
init_items = 200

[tokenizer.shape]
codebook_sizes = [8, 8, 8]

[gr]
epochs = 1

[gr.shape]
width = 16
heads = 2
layers = 1
ffn_width = 32
max_history = 6

[retrieval]
beam_width = 10
budget = 40
top_k = 10
per_sid = 4

[experiment]
replicates = 1
shape_sweep_k = [4, 8]
history_lengths = [2, 6]
depth = [4, 10]
breadth = [10, 4]
budget = 40
"#;

fn sidkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sidkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = setup();
    for stage in ["synth", "train-tokenizer", "tokenize", "build-index", "metrics", "train-gr", "retrieve"] {
        let o = sidkit(dir.path(), &["--config", "c.toml", "--out", "o", stage]);
        assert_eq!(code(&o), 0, "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let out = dir.path().join("o");
    for f in ["tokenizer.sidf", "tokenizer_log.csv", "sids.tsv", "rejects.tsv", "index.tsv", "metrics.csv", "gr.sidg", "gr_log.csv", "retrieval.tsv", "gr_metrics.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# config_hash=") && metrics.contains(",seed=1\n"));
    let sids = std::fs::read_to_string(out.join("sids.tsv")).unwrap();
    assert_eq!(sids.lines().count(), 401);
    assert!(!out.join(".sidkit.lock").exists());
}

#[test]
fn experiments_rerun_identically_and_report() {
    let dir = setup();
    for out in ["a", "b"] {
        for e in ["shape_sweep", "depth_breadth"] {
            let o = sidkit(dir.path(), &["--config", "c.toml", "--out", out, "experiment", e]);
            assert_eq!(code(&o), 0, "{e}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
    for e in ["shape_sweep", "depth_breadth"] {
        let a = std::fs::read(dir.path().join(format!("a/experiments/{e}.csv"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b/experiments/{e}.csv"))).unwrap();
        assert_eq!(a, b, "{e}");
    }
    let o = sidkit(dir.path(), &["--config", "c.toml", "--out", "a", "report"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("shape_sweep") && text.contains("depth_breadth") && text.contains("Baseline"));
    assert!(dir.path().join("a/report.txt").is_file());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = setup();
    assert_eq!(code(&sidkit(dir.path(), &["--config", "c.toml", "--out", "o", "synth"])), 0);
    let o = sidkit(dir.path(), &["--config", "c.toml", "--out", "o", "--seed", "77", "train-tokenizer"]);
    assert_eq!(code(&o), 0);
    let log = std::fs::read_to_string(dir.path().join("o/tokenizer_log.csv")).unwrap();
    assert!(log.lines().next().unwrap().ends_with(",seed=77"));
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = setup();
    assert_eq!(code(&sidkit(dir.path(), &["no-such-command"])), 1);
    assert_eq!(code(&sidkit(dir.path(), &["experiment", "nope"])), 1);
    assert_eq!(code(&sidkit(dir.path(), &["--help"])), 0);
    std::fs::write(dir.path().join("bad.toml"), "seed = 1\ntypo_key = 3\n").unwrap();
    let o = sidkit(dir.path(), &["--config", "bad.toml", "synth"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo_key"));
    assert_eq!(code(&sidkit(dir.path(), &["--config", "missing.toml", "synth"])), 1);
    // `ingest` without a [data] section
    assert_eq!(code(&sidkit(dir.path(), &["--config", "c.toml", "--out", "o", "ingest"])), 1);
}

#[test]
fn missing_or_malformed_data_exits_2() {
    let dir = setup();
    let o = sidkit(dir.path(), &["--config", "c.toml", "--out", "o", "train-tokenizer"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("synth"));
    assert_eq!(code(&sidkit(dir.path(), &["--config", "c.toml", "--out", "o", "synth"])), 0);
    std::fs::write(dir.path().join("o/corpus/metadata.tsv"), "item_id\trelevance\tfreshness\n0\tx\t1\n").unwrap();
    let o = sidkit(dir.path(), &["--config", "c.toml", "--out", "o", "train-tokenizer"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("metadata.tsv:2:"));
}

#[test]
fn divergence_exits_3() {
    let dir = setup();
    let cfg = CONFIG.replace("epochs = 3\ninit_items = 200", "epochs = 3\ninit_items = 200\nlr = 1e9");
    std::fs::write(dir.path().join("hot.toml"), cfg).unwrap();
    assert_eq!(code(&sidkit(dir.path(), &["--config", "hot.toml", "--out", "o", "synth"])), 0);
    let o = sidkit(dir.path(), &["--config", "hot.toml", "--out", "o", "train-tokenizer"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn held_lock_is_refused() {
    let dir = setup();
    std::fs::create_dir_all(dir.path().join("o")).unwrap();
    std::fs::write(dir.path().join("o/.sidkit.lock"), "1").unwrap();
    let o = sidkit(dir.path(), &["--config", "c.toml", "--out", "o", "synth"]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lock"));
}

#[test]
fn ingest_reads_configured_files() {
    let dir = setup();
    assert_eq!(code(&sidkit(dir.path(), &["--config", "c.toml", "--out", "gen", "synth"])), 0);
    let data = r#"
[data]
metadata = "gen/corpus/metadata.tsv"
events = "gen/corpus/events.tsv"
modalities = [
  { name = "image", path = "gen/corpus/image.semb" },
  { name = "text", path = "gen/corpus/text.semb" },
]
"#;
    std::fs::write(dir.path().join("d.toml"), format!("{CONFIG}{data}")).unwrap();
    let o = sidkit(dir.path(), &["--config", "d.toml", "--out", "o", "ingest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["image.semb", "text.semb", "metadata.tsv", "events.tsv"] {
        let a = std::fs::read(dir.path().join("gen/corpus").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("o/corpus").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}
