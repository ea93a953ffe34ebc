use std::path::Path;
use std::process::{Command, Output};

fn drcodes(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drcodes"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = drcodes(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn synth(root: &Path) -> String {
    let data = root.join("data");
    ok(&data, &["synth", "--classes", "2", "--instances", "3", "--angles=-10,0;0,0;10,0", "--diameter", "96"]);
    data.to_str().unwrap().to_string()
}

#[test]
fn stage_by_stage_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = synth(root);
    assert!(root.join("data/manifest.json").is_file());

    let desc = root.join("desc");
    ok(&desc, &["extract", "--dataset", &data]);
    let desc = desc.to_str().unwrap();

    let models = root.join("models");
    ok(&models, &["gmm", "--dataset", &data, "--descriptors", desc, "--k", "4", "--pca-dim", "16"]);
    assert!(models.join("pca.model").is_file() && models.join("gmm.model").is_file());

    let enc = root.join("enc");
    ok(&enc, &["encode", "--dataset", &data, "--descriptors", desc, "--models", models.to_str().unwrap()]);

    let emb = root.join("emb");
    let encoded = enc.join("encoded.vec");
    ok(&emb, &["embed", "--encoded", encoded.to_str().unwrap(), "--bits", "256", "--itq-iters", "5"]);
    let codes = emb.join("codes.bin");
    let codes = codes.to_str().unwrap();

    let idx = root.join("idx");
    ok(&idx, &["index", "build", "--dataset", &data, "--codes", codes]);
    let index = idx.join("index.bin");

    // every query is also indexed, so the nearest neighbour is itself
    let q = root.join("q");
    let stdout = ok(&q, &["query", "--index", index.to_str().unwrap(), "--codes", codes, "--k", "1", "--dataset", &data]);
    assert!(stdout.contains("precision 1"), "{stdout}");
    let csv = std::fs::read_to_string(q.join("predictions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 18);

    let q2 = root.join("q2");
    ok(&q2, &["index", "query", "--index", index.to_str().unwrap(), "--codes", codes, "--k", "1"]);
    // without a dataset the truth columns stay empty
    let predicted = |text: &str| -> Vec<String> {
        text.lines().skip(1).map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect()
    };
    assert_eq!(predicted(&std::fs::read_to_string(q2.join("predictions.csv")).unwrap()), predicted(&csv));

    let t = root.join("t");
    ok(&t, &["tsne", "--dataset", &data, "--codes", codes, "--perplexity", "5", "--iters", "300"]);
    assert_eq!(std::fs::read_to_string(t.join("tsne.csv")).unwrap().lines().count(), 1 + 18);
}

#[test]
fn vlad_stages_chain_as_well() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = synth(root);
    let desc = root.join("desc");
    ok(&desc, &["extract", "--dataset", &data]);
    let models = root.join("models");
    let desc = desc.to_str().unwrap();
    ok(&models, &["gmm", "--dataset", &data, "--descriptors", desc, "--k", "4", "--pca-dim", "16", "--vlad"]);
    assert!(models.join("kmeans.model").is_file());
    let enc = root.join("enc");
    ok(&enc, &["encode", "--dataset", &data, "--descriptors", desc, "--models", models.to_str().unwrap(), "--vlad"]);
    let emb = root.join("emb");
    let encoded = enc.join("encoded.vec");
    ok(&emb, &["embed", "--encoded", encoded.to_str().unwrap(), "--bits", "128", "--method", "drc"]);
    assert!(emb.join("codes.bin").is_file());
}

#[test]
fn eval_writes_a_report_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = synth(root);
    let cfg = root.join("cfg.json");
    std::fs::write(&cfg, r#"{"pca_dim": 16, "gmm_k": 4, "bits": 256, "itq_iters": 5, "k": 3, "tsne": {"perplexity": 5, "iters": 300}}"#).unwrap();
    let cfg = cfg.to_str().unwrap();

    let (a, b) = (root.join("a"), root.join("b"));
    for out in [&a, &b] {
        ok(out, &["--config", cfg, "eval", "--dataset", &data]);
    }
    let report = std::fs::read_to_string(a.join("report.json")).unwrap();
    assert_eq!(report, std::fs::read_to_string(b.join("report.json")).unwrap());
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["folds"].as_array().unwrap().len(), 6);
    assert_eq!(json["histogram"]["edges"].as_array().unwrap().len(), 15);
    assert!(a.join("tsne.csv").is_file());

    let c = root.join("c");
    ok(&c, &["--config", cfg, "--seed", "9", "eval", "--dataset", &data]);
    assert_ne!(report, std::fs::read_to_string(c.join("report.json")).unwrap());
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();

    // usage errors come from the argument parser
    assert_eq!(drcodes(root, &["frobnicate"]).status.code(), Some(2));

    let cfg = root.join("bad.json");
    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let data = synth(root);
    let o = drcodes(root, &["--config", cfg.to_str().unwrap(), "eval", "--dataset", &data]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let missing = root.join("nowhere");
    assert_eq!(drcodes(root, &["extract", "--dataset", missing.to_str().unwrap()]).status.code(), Some(3));

    let o = drcodes(root, &["synth", "--classes", "1"]);
    assert_eq!(o.status.code(), Some(2));

    let o = drcodes(root, &["eval", "--dataset", &data, "--tsne"]);
    assert_eq!(o.status.code(), Some(2), "perplexity 30 is too large for 18 disks");

    let garbage = root.join("garbage.vec");
    std::fs::write(&garbage, b"not a container").unwrap();
    assert_eq!(drcodes(root, &["embed", "--encoded", garbage.to_str().unwrap()]).status.code(), Some(3));
}
