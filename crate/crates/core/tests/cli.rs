use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fedrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedrank"))
        .args(args)
        .env_remove("FEDRANK_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fedrank(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    fedrank(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small embedded synthetic dataset.
fn dataset(dir: &Path) -> PathBuf {
    let ds = dir.join("ds");
    ok(&["synth", "--out", s(&ds), "--queries", "12", "--topics", "2", "--resources-per-topic", "3"]);
    ok(&["embed", "--dataset", s(&ds), "--dim", "16"]);
    ds
}

#[test]
fn help_version_and_usage_errors() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["train", "--help"]), 0);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["bogus"]), 1);
    assert_eq!(code(&["ingest", "--queries", "x"]), 1);
    assert_eq!(code(&["evaluate", "--dataset", "x", "--epochs", "many"]), 1);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path());
    for f in ["queries.tsv", "qrels.txt", "doc_map.tsv", "documents.tsv", "manifest.txt", "queries.emb", "documents.emb"] {
        assert!(ds.join(f).exists(), "{f}");
    }

    let graph = dir.path().join("g.bin");
    let res = dir.path().join("res.emb");
    let stats = ok(&["build-graph", "--dataset", s(&ds), "--out", s(&graph), "--resource-store", s(&res)]);
    let lines: Vec<&str> = stats.lines().collect();
    assert_eq!(lines[0], "resource_nodes\tquery_nodes\tqr_edges\trr_edges");
    let counts: Vec<usize> = lines[1].split('\t').map(|x| x.parse().unwrap()).collect();
    assert_eq!(&counts[..2], &[6, 12]);
    assert!(counts[2] >= 12);
    assert!(counts[3] <= 15);

    let single = dir.path().join("single");
    ok(&["train", "--graph", s(&graph), "--epochs", "4", "--out", s(&single)]);
    let loss = std::fs::read_to_string(single.join("loss.tsv")).unwrap();
    assert_eq!(loss.lines().count(), 5);

    let ranked = ok(&[
        "rank", "--checkpoint", s(&single.join("model.ckpt")), "--resource-store", s(&res),
        "--query-embedding", s(&ds.join("queries.emb")), "--query-id", "Q0003", "--top", "4",
    ]);
    let rows: Vec<&str> = ranked.lines().collect();
    assert_eq!(rows[0], "rank\tresource_id\tscore");
    assert_eq!(rows.len(), 5);
    let by_text = ok(&["rank", "--checkpoint", s(&single.join("model.ckpt")), "--resource-store", s(&res), "--query-text", "t0q1 t0q2"]);
    assert_eq!(by_text.lines().count(), 7);

    let eval = ok(&[
        "evaluate", "--dataset", s(&ds), "--folds", "3", "--epochs", "3", "--metrics", "ndcg@5,np@5,p@3",
    ]);
    let means: Vec<&str> = eval.lines().filter(|l| l.contains("\tmean\t")).collect();
    assert_eq!(means.len(), 9);
    for r in ["fedgnn", "fedbert", "random"] {
        assert!(means.iter().any(|l| l.starts_with(r)), "{r}");
    }
    let linear = ok(&["evaluate", "--dataset", s(&ds), "--folds", "3", "--rankers", "fedbert", "--linear-gain"]);
    assert!(linear.contains("nDCGlin\t10"));

    let broker_dir = dir.path().join("broker");
    let broker = ok(&["broker-sim", "--dataset", s(&ds), "--folds", "3", "--top-t", "1,6", "--out", s(&broker_dir)]);
    let rows: Vec<&str> = broker.lines().collect();
    assert_eq!(rows[0], "T\tbackend\tranker\tP@10");
    assert_eq!(rows.len(), 3);
    assert!(broker_dir.join("runs-T6.tsv").exists());
}

#[test]
fn cross_validation_outputs_and_settings() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path());
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "# shared settings\nlr = 0.01\nepochs = 9\nfolds = 3\naggregator = mean\n").unwrap();
    let out = dir.path().join("cv");
    ok(&["train", "--dataset", s(&ds), "--config", s(&conf), "--epochs", "2", "--out", s(&out)]);
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("lr = 0.01"), "{manifest}");
    assert!(manifest.contains("epochs = 2"));
    assert!(manifest.contains("folds = 3"));
    assert!(manifest.contains("aggregator = mean"));
    for i in 1..=3 {
        for suffix in ["ckpt", "loss.tsv", "resources.emb"] {
            assert!(out.join(format!("fold{i}.{suffix}")).exists());
        }
        let loss = std::fs::read_to_string(out.join(format!("fold{i}.loss.tsv"))).unwrap();
        assert_eq!(loss.lines().count(), 3);
    }
    let folds = std::fs::read_to_string(out.join("folds.tsv")).unwrap();
    assert_eq!(folds.lines().count(), 13);

    let env_out = dir.path().join("env");
    let run = Command::new(env!("CARGO_BIN_EXE_fedrank"))
        .args(["train", "--dataset", s(&ds), "--epochs", "1", "--folds", "2", "--out", s(&env_out)])
        .env("FEDRANK_SEED", "41")
        .output()
        .unwrap();
    assert!(run.status.success());
    let manifest = std::fs::read_to_string(env_out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 41"), "{manifest}");
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path());
    let bad_conf = dir.path().join("bad.conf");
    std::fs::write(&bad_conf, "learning_rate = 0.1\n").unwrap();
    assert_eq!(code(&["train", "--dataset", s(&ds), "--config", s(&bad_conf), "--out", "x"]), 1);
    assert_eq!(code(&["evaluate", "--dataset", s(&ds), "--lambda", "2"]), 1);
    assert_eq!(code(&["evaluate", "--dataset", s(&ds), "--metrics", "ndcg@0"]), 1);

    assert_eq!(code(&["evaluate", "--dataset", s(&dir.path().join("missing"))]), 2);
    let qrels = dir.path().join("qrels.txt");
    std::fs::write(&qrels, "Q1 0 d1\n").unwrap();
    let queries = dir.path().join("q.tsv");
    std::fs::write(&queries, "Q1\thello\n").unwrap();
    let map = dir.path().join("map.tsv");
    std::fs::write(&map, "d1\tR1\n").unwrap();
    let out = dir.path().join("ingested");
    assert_eq!(
        code(&["ingest", "--queries", s(&queries), "--qrels", s(&qrels), "--doc-map", s(&map), "--out", s(&out)]),
        2
    );
    let other = dir.path().join("other");
    ok(&["embed", "--dataset", s(&ds), "--dim", "8", "--out", s(&other)]);
    assert_eq!(
        code(&[
            "embed", "--dataset", s(&ds), "--mode", "import",
            "--query-store", s(&other.join("queries.emb")),
            "--doc-store", s(&ds.join("documents.emb")),
            "--out", s(&dir.path().join("imported")),
        ]),
        2
    );

    assert_eq!(code(&["evaluate", "--dataset", s(&ds), "--rankers", "fedgnn", "--folds", "2", "--epochs", "5", "--lr", "1e300"]), 3);
}
