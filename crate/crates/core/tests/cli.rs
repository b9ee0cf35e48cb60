use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_semisam"));
    c.env("RUST_LOG", "warn");
    c
}

fn synth(out: &Path, extra: &[&str]) -> std::process::Output {
    bin()
        .args(["synth", "--out", out.to_str().unwrap(), "--n", "6", "--shape", "20", "--radius", "3,5", "--seed", "2"])
        .args(extra)
        .output()
        .unwrap()
}

fn write_config(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

const CONFIG: &str = r#"{"strategy":"mt","batch_size":2,"patch_size":[8,8,8],"t_max":5,"seed":4,
"depth":2,"base_width":2,"val_every":0,"binarization_threshold":0.3,
"generalists":[{"backend":"oracle","flip_rate":0.05,"radius":1}]}"#;

#[test]
fn synth_partitions_train_split() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = bin().args(["synth", "--out", out.to_str().unwrap(), "--n", "30", "--shape", "16", "--radius", "3,5", "--labeled-count", "1"]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = semisam::data::Manifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.train.labeled.len(), 1);
    assert_eq!(m.train.unlabeled.len(), 29);
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(synth(&a, &[]).status.success());
    assert!(synth(&b, &[]).status.success());
    let h = |p: &Path| semisam::data::file_hash(&p.join("manifest.json")).unwrap();
    assert_eq!(h(&a), h(&b));
    for f in ["case_000.nii.gz", "case_005_mask.nii.gz"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn synth_rejects_zero_labeled() {
    let dir = tempfile::tempdir().unwrap();
    let o = synth(&dir.path().join("d"), &["--labeled-count", "0"]);
    assert!(!o.status.success());
}

#[test]
fn malformed_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.json");
    write_config(&c, "{\"strategy\": \"mt\", ");
    let o = bin().args(["train", "--config", c.to_str().unwrap(), "--data", "x", "--out", "y"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    write_config(&c, CONFIG);
    let o = bin()
        .args(["train", "--config", c.to_str().unwrap(), "--override", "strategy=none", "--data", "x", "--out", "y"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("strategy"));
}

#[test]
fn missing_dataset_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.json");
    write_config(&c, CONFIG);
    let o = bin()
        .args(["train", "--config", c.to_str().unwrap(), "--data", dir.path().join("nope").to_str().unwrap()])
        .args(["--out", dir.path().join("run").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_infer_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(synth(&data, &["--test-count", "2"]).status.success());
    let c = dir.path().join("c.json");
    write_config(&c, CONFIG);
    let run = dir.path().join("run");
    let o = bin()
        .args(["train", "--config", c.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", run.to_str().unwrap()])
        .args(["--override", "use_generalist_regularization=true"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["run_manifest.json", "config.json", "log.csv", "checkpoints/final.ckpt", "complete.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "t,lr,lambda,beta,sup,unsup,sam_total,total,val_dice");
    assert_eq!(log.lines().count(), 6);
    let snapshot: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot["use_generalist_regularization"], true);

    let csv = dir.path().join("report.csv");
    let ckpt = run.join("checkpoints/final.ckpt");
    let o = bin()
        .args(["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", csv.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(&csv).unwrap();
    assert!(report.starts_with("case_id,dice,jaccard,hd95,asd"));
    assert_eq!(report.lines().count(), 1 + 2 + 2);

    let prob = dir.path().join("p.nii.gz");
    let mask = dir.path().join("m.nii.gz");
    let o = bin()
        .args(["infer", "--checkpoint", ckpt.to_str().unwrap(), "--input", data.join("case_005.nii.gz").to_str().unwrap()])
        .args(["--out", prob.to_str().unwrap(), "--mask-out", mask.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p = semisam::data::load_volume(&prob).unwrap();
    assert_eq!(p.shape(), [20, 20, 20]);
    assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(semisam::data::load_mask(&mask).unwrap().shape(), [20, 20, 20]);
}

#[test]
fn override_toggles_only_generalist_term() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(synth(&data, &[]).status.success());
    let c = dir.path().join("c.json");
    write_config(&c, CONFIG);
    let train = |name: &str, extra: &[&str]| {
        let run = dir.path().join(name);
        let o = bin()
            .args(["train", "--config", c.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", run.to_str().unwrap()])
            .args(["--override", "use_generalist_regularization=true"])
            .args(extra)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(run.join("log.csv")).unwrap()
    };
    let off = train("off", &["--override", "beta_max=0"]);
    let on = train("on", &[]);
    let col = |log: &str, i: usize| log.lines().skip(1).map(|l| l.split(',').nth(i).unwrap().to_string()).collect::<Vec<_>>();
    assert!(col(&off, 6).iter().all(|v| v == "0"));
    assert!(col(&on, 6).iter().any(|v| v != "0"));
    // the first step sees identical parameters, so the supervised term agrees
    assert_eq!(col(&off, 4)[0], col(&on, 4)[0]);
}
