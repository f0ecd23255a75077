use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use toneprobe::synth::{SynthSpec, SynthSummary};

fn toneprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toneprobe"))
        .args(args)
        .env_remove("TONEPROBE_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = toneprobe(args);
    assert!(
        out.status.success(),
        "{args:?}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_corpus(dir: &Path) -> (PathBuf, SynthSummary) {
    let mut spec = SynthSpec::uniform(2.0, 4, 3);
    spec.language = "toy".into();
    let spec_path = dir.join("spec.json");
    std::fs::write(&spec_path, spec.to_json()).unwrap();
    let corpus = dir.join("corpus");
    ok(&["synth", "--spec", s(&spec_path), "--out-dir", s(&corpus)]);
    let summary: SynthSummary =
        serde_json::from_str(&std::fs::read_to_string(corpus.join("summary.json")).unwrap()).unwrap();
    (corpus, summary)
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn full_pipeline_by_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, summary) = synth_corpus(dir.path());
    let manifest = corpus.join("toy.csv");
    let ingest = dir.path().join("ingest");
    ok(&[
        "ingest",
        "--manifest",
        s(&manifest),
        "--inventory",
        "L,H,R,F",
        "--out",
        s(&ingest),
    ]);

    let rows = read_csv(&ingest.join("accounting.csv"));
    for row in &rows[..rows.len() - 1] {
        let t = &summary.per_tone[&row[0]];
        assert_eq!(row[1], t.count.to_string());
        assert_eq!(row[2], format!("{:.2}", t.seconds / 60.0));
    }
    let total = rows.last().unwrap();
    assert_eq!(total[0], "total");
    assert_eq!(total[1], summary.n_tokens.to_string());
    assert_eq!(total[2], format!("{:.2}", summary.total_seconds / 60.0));
    assert!(ingest.join("run_config.json").is_file());
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ingest.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["subcommand"], "ingest");

    let tokens = ingest.join("tokens.csv");
    let pool = dir.path().join("pool");
    let emb = corpus.join("emb/synth");
    ok(&[
        "pool",
        "--tokens",
        s(&tokens),
        "--emb-dir",
        s(&emb),
        "--layers",
        "1..4",
        "--out",
        s(&pool),
    ]);
    assert!(pool.join("features.tpft").is_file());

    let folds = dir.path().join("folds");
    ok(&[
        "folds",
        "--tokens",
        s(&tokens),
        "--drops",
        s(&pool.join("drops.csv")),
        "--out",
        s(&folds),
    ]);
    let eval = dir.path().join("eval");
    ok(&[
        "--jobs",
        "2",
        "eval",
        "--features",
        s(&pool.join("features.tpft")),
        "--plan",
        s(&folds.join("plan.json")),
        "--out",
        s(&eval),
    ]);
    let results = read_csv(&eval.join("results_long.csv"));
    assert_eq!(results.len(), 4 * 4);
    assert!(results.iter().all(|r| r[0] == "pool"));

    let report = dir.path().join("report");
    ok(&[
        "report",
        "--results",
        s(&eval.join("results.json")),
        "--out-dir",
        s(&report),
    ]);
    for name in [
        "aggregate.csv",
        "best_layers.csv",
        "heatmap.csv",
        "layer_curve_pool.svg",
    ] {
        assert!(report.join(name).is_file(), "{name}");
    }
}

#[test]
fn duration_threshold_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, summary) = synth_corpus(dir.path());
    let manifest = corpus.join("toy.csv");
    let count = |min: &str| {
        let out = dir.path().join(format!("ingest-{min}"));
        ok(&[
            "ingest",
            "--manifest",
            s(&manifest),
            "--inventory",
            "L,H,R,F",
            "--min-dur",
            min,
            "--out",
            s(&out),
        ]);
        read_csv(&out.join("tokens.csv")).len()
    };
    assert_eq!(count("0"), summary.n_tokens);
    assert_eq!(count("0.05"), summary.n_tokens);
    assert!(count("0.2") < summary.n_tokens);
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = synth_corpus(dir.path());
    let manifest = corpus.join("toy.csv");
    let out = dir.path().join("x");
    let bad_tier = toneprobe(&[
        "ingest",
        "--manifest",
        s(&manifest),
        "--inventory",
        "L,H,R,F",
        "--tier",
        "nope",
        "--out",
        s(&out),
    ]);
    assert!(!bad_tier.status.success());
    assert!(!bad_tier.stderr.is_empty());
    let no_inventory = toneprobe(&["ingest", "--manifest", s(&manifest), "--out", s(&out)]);
    assert!(!no_inventory.status.success());
    let zero_jobs = toneprobe(&[
        "--jobs",
        "0",
        "ingest",
        "--manifest",
        s(&manifest),
        "--inventory",
        "L,H,R,F",
        "--out",
        s(&out),
    ]);
    assert!(!zero_jobs.status.success());
    assert!(!toneprobe(&["eval"]).status.success());
}

#[test]
fn synth_is_reproducible_and_seed_env_is_honoured() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ca, _) = synth_corpus(a.path());
    let (cb, _) = synth_corpus(b.path());
    let mut fa = files(&ca);
    let mut fb = files(&cb);
    fa.remove(Path::new("run_config.json"));
    fb.remove(Path::new("run_config.json"));
    assert!(fa.len() > 3);
    assert_eq!(fa, fb);

    let tokens_dir = a.path().join("ingest");
    ok(&[
        "ingest",
        "--manifest",
        s(&ca.join("toy.csv")),
        "--inventory",
        "L,H,R,F",
        "--out",
        s(&tokens_dir),
    ]);
    let plan_dir = a.path().join("folds");
    let out = Command::new(env!("CARGO_BIN_EXE_toneprobe"))
        .args([
            "folds",
            "--tokens",
            s(&tokens_dir.join("tokens.csv")),
            "--out",
            s(&plan_dir),
        ])
        .env("TONEPROBE_SEED", "977")
        .output()
        .unwrap();
    assert!(out.status.success());
    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(plan_dir.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["seed"], 977);
}
