use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};
use tempfile::TempDir;
use trex_core::nn::{
    load_model, save_model, train_classifier, Checkpoint, DatasetRecipe, LossKind, TrainConfig,
};

fn trexd(cmd: &str, spec: &Path, out: &Path, extra: &[&str]) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_trexd"))
        .arg(cmd)
        .arg("--spec")
        .arg(spec)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    status.status.code().unwrap()
}

fn write_spec(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn logistic_spec(kind: &str, extra: Value) -> Value {
    let mut v = json!({
        "spec_version": 1,
        "kind": kind,
        "classifier": { "weight": [[-2.0, 2.0]], "bias": [0.0, 0.0] },
        "generator": { "source": "identity", "dim": 1 },
        "sampler": { "kind": "hmc", "step_size": 0.05, "leapfrog_steps": 10, "burn_in": 100, "seed": 1 },
        "n_keep": 200
    });
    for (k, x) in extra.as_object().unwrap() {
        v[k] = x.clone();
    }
    v
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let no_recipe = write_spec(
        dir.path(),
        "a.json",
        &json!({ "spec_version": 1, "train": { "m": { "loss": "cross-entropy" } } }),
    );
    assert_eq!(trexd("train", &no_recipe, &out, &[]), 2);
    assert!(!out.exists(), "nothing is written on a config error");

    fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(trexd("sample", &dir.path().join("bad.json"), &out, &[]), 2);
    assert_eq!(
        trexd("sample", &dir.path().join("missing.json"), &out, &[]),
        2
    );

    let unknown = write_spec(
        dir.path(),
        "u.json",
        &logistic_spec("high_conf", json!({ "classes": [1], "colour": 3 })),
    );
    assert_eq!(trexd("sample", &unknown, &out, &[]), 2);
    let missing_model = write_spec(
        dir.path(),
        "m.json",
        &logistic_spec(
            "high_conf",
            json!({ "classes": [1], "classifier": "nope.trexmdl" }),
        ),
    );
    assert_eq!(trexd("sample", &missing_model, &out, &[]), 2);
    let wrong_version = write_spec(
        dir.path(),
        "v.json",
        &logistic_spec("high_conf", json!({ "spec_version": 9, "classes": [1] })),
    );
    assert_eq!(trexd("sample", &wrong_version, &out, &[]), 2);

    // A classifier stuck at (0.5, 0.5) can never reach class 1 with high confidence.
    let flat = write_spec(
        dir.path(),
        "f.json",
        &logistic_spec(
            "high_conf",
            json!({ "classes": [1], "classifier": { "weight": [[0.0, 0.0]], "bias": [0.0, 0.0] } }),
        ),
    );
    assert_eq!(trexd("sample", &flat, &out, &[]), 3);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(
        summary
            .lines()
            .nth(1)
            .unwrap()
            .ends_with(",false,mean deviation"),
        "{summary}"
    );

    let ok = write_spec(
        dir.path(),
        "ok.json",
        &logistic_spec("high_conf", json!({ "classes": [1] })),
    );
    assert_eq!(trexd("sample", &ok, &dir.path().join("ok"), &[]), 0);
}

#[test]
fn training_is_reproducible_and_manifest_accuracy_checks_out() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(
        dir.path(),
        "train.json",
        &json!({
            "spec_version": 1,
            "dataset": { "recipe_id": "blobs", "seed": 3, "K": 3, "n": 600 },
            "train": { "m": { "loss": "cross-entropy", "epochs": 5, "seed": 2 } }
        }),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(trexd("train", &spec, &a, &[]), 0);
    assert_eq!(trexd("train", &spec, &b, &[]), 0);
    assert_eq!(tree(&a), tree(&b));
    assert_eq!(
        trexd("train", &spec, &dir.path().join("c"), &["--seed", "5"]),
        0
    );
    assert_ne!(
        fs::read(a.join("m.trexmdl")).unwrap(),
        fs::read(dir.path().join("c/m.trexmdl")).unwrap()
    );

    let manifest: Value =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let clf = load_model(a.join("m.trexmdl"))
        .unwrap()
        .into_classifier()
        .unwrap();
    let (_, test) = DatasetRecipe::new("blobs", 3, 3, 600, 0)
        .generate()
        .unwrap()
        .split(0.2);
    let acc = clf.accuracy(&test).unwrap();
    assert_eq!(
        manifest["models"]["m"]["metrics"]["held_out_accuracy"]
            .as_f64()
            .unwrap(),
        acc
    );
    assert_eq!(manifest["n_test"].as_u64().unwrap() as usize, test.len());
}

/// Reference predicate, written separately from the runner's.
fn reference_scan(conf: &[f64], label: usize) -> (Option<(usize, usize)>, Option<usize>) {
    let mut ranked: Vec<(f64, usize)> = conf.iter().cloned().zip(0..).collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let ambiguous = (ranked.len() >= 2
        && ranked[..2].iter().all(|(v, _)| *v >= 0.40 && *v <= 0.60)
        && ranked[2..].iter().all(|(v, _)| *v < 0.40))
    .then(|| (ranked[0].1.min(ranked[1].1), ranked[0].1.max(ranked[1].1)));
    let (top, pred) = ranked[0];
    let wrong = (pred != label && top >= 0.85).then_some(pred);
    (ambiguous, wrong)
}

#[test]
fn scan_counts_match_reference_predicate() {
    let dir = TempDir::new().unwrap();
    let data = DatasetRecipe::new("blobs", 8, 3, 900, 0)
        .generate()
        .unwrap();
    let (clf, _) = train_classifier(
        &data,
        &TrainConfig {
            epochs: 3,
            ..Default::default()
        },
    )
    .unwrap();
    save_model(
        dir.path().join("m.trexmdl"),
        &Checkpoint::Classifier(clf.clone()),
    )
    .unwrap();
    let spec = write_spec(
        dir.path(),
        "scan.json",
        &json!({
            "spec_version": 1,
            "kind": "testset_scan",
            "classifier": "m.trexmdl",
            "dataset": { "recipe_id": "blobs", "seed": 99, "K": 3, "n": 2000 }
        }),
    );
    let out = dir.path().join("out");
    assert_eq!(trexd("scan", &spec, &out, &[]), 0);
    let report: Value = serde_json::from_slice(&fs::read(out.join("scan.json")).unwrap()).unwrap();

    let test = DatasetRecipe::new("blobs", 99, 3, 2000, 0)
        .generate()
        .unwrap();
    let mut pairs: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    let mut wrong: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (x, &y)) in test.inputs().iter().zip(test.labels()).enumerate() {
        let (a, w) = reference_scan(clf.classify(x).unwrap().data(), y);
        if let Some(p) = a {
            pairs.entry(p).or_default().push(i);
        }
        if let Some(c) = w {
            wrong.entry(c).or_default().push(i);
        }
    }
    assert!(!wrong.is_empty() || !pairs.is_empty());
    for entry in report["ambiguous"].as_array().unwrap() {
        let p = (
            entry["pair"][0].as_u64().unwrap() as usize,
            entry["pair"][1].as_u64().unwrap() as usize,
        );
        let items: Vec<usize> = serde_json::from_value(entry["items"].clone()).unwrap();
        assert_eq!(items, pairs.get(&p).cloned().unwrap_or_default());
        assert_eq!(entry["count"].as_u64().unwrap() as usize, items.len());
    }
    for entry in report["misclassified"].as_array().unwrap() {
        let c = entry["class"].as_u64().unwrap() as usize;
        let items: Vec<usize> = serde_json::from_value(entry["items"].clone()).unwrap();
        assert_eq!(items, wrong.get(&c).cloned().unwrap_or_default());
    }
}

#[test]
fn interpolation_emits_eleven_sample_sets() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(
        dir.path(),
        "i.json",
        &logistic_spec("interpolate", json!({ "pairs": [[0, 1]] })),
    );
    let out = dir.path().join("out");
    let code = trexd("sample", &spec, &out, &[]);
    assert!(code == 0 || code == 3);
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 12);
    for a in ["0", "0.1", "0.4", "0.5", "1"] {
        let samples = fs::read_to_string(out.join(format!("alpha_{a}/samples.csv"))).unwrap();
        assert_eq!(samples.lines().count(), 201);
        assert!(out.join(format!("alpha_{a}/summary.csv")).exists());
    }
}

#[test]
fn sampling_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(
        dir.path(),
        "p.json",
        &logistic_spec("ambiguous_pair", json!({ "pairs": [[0, 1]], "chains": 2 })),
    );
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    assert_eq!(trexd("sample", &spec, &a, &[]), 0);
    assert_eq!(trexd("sample", &spec, &b, &[]), 0);
    assert_eq!(trexd("sample", &spec, &c, &["--seed", "2"]), 0);
    let ta = tree(&a);
    assert!(ta.contains_key(Path::new("samples.csv")) && ta.contains_key(Path::new("summary.csv")));
    assert_eq!(ta, tree(&b));
    assert_ne!(
        ta[Path::new("samples.csv")],
        tree(&c)[Path::new("samples.csv")]
    );
    // Two chains of 200 records each.
    assert_eq!(
        String::from_utf8_lossy(&ta[Path::new("samples.csv")])
            .lines()
            .count(),
        401
    );
}

/// Small glyph models trained through the CLI.
fn glyph_models(dir: &Path) -> PathBuf {
    let spec = write_spec(
        dir,
        "train.json",
        &json!({
            "spec_version": 1,
            "dataset": { "recipe_id": "glyphs", "seed": 7, "K": 10, "n": 1000, "side": 16 },
            "train": {
                "classifier": { "loss": "cross-entropy", "epochs": 10, "seed": 1 },
                "vae": { "loss": "elbo", "epochs": 10, "seed": 1, "learning_rate": 0.003, "hidden": [64] }
            }
        }),
    );
    let models = dir.join("models");
    assert_eq!(trexd("train", &spec, &models, &[]), 0);
    let data = DatasetRecipe::new("glyphs", 7, 10, 1000, 16)
        .generate()
        .unwrap();
    let shifted = data.relabel(|_, y| (y + 1) % 10).unwrap();
    let (clf, _) = train_classifier(
        &shifted,
        &TrainConfig {
            epochs: 10,
            loss: LossKind::CrossEntropy,
            seed: 1,
            ..Default::default()
        },
    )
    .unwrap();
    save_model(models.join("shifted.trexmdl"), &Checkpoint::Classifier(clf)).unwrap();
    models
}

fn compare_spec(b: &str) -> Value {
    json!({
        "spec_version": 1,
        "kind": "compare_classifiers",
        "classifier": "models/classifier.trexmdl",
        "classifier_b": b,
        "generator": { "source": "vae", "path": "models/vae.trexmdl" },
        "sampler": { "kind": "hmc", "step_size": 0.05, "leapfrog_steps": 10, "burn_in": 100, "seed": 3 },
        "anneal": { "sigmas": [0.5, 0.1, 0.05], "segment_iterations": 100 },
        "n_keep": 100,
        "labels_per_class": 10
    })
}

#[test]
fn classifier_comparison() {
    let dir = TempDir::new().unwrap();
    glyph_models(dir.path());
    let same = write_spec(
        dir.path(),
        "same.json",
        &compare_spec("models/classifier.trexmdl"),
    );
    let out = dir.path().join("same");
    assert_eq!(trexd("compare", &same, &out, &[]), 0);
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "model,0,1,2,3,4,5,6,7,8,9,All");
    assert_eq!(rows[1].strip_prefix("a,"), rows[2].strip_prefix("b,"));

    let shifted = write_spec(
        dir.path(),
        "shifted.json",
        &compare_spec("models/shifted.trexmdl"),
    );
    let out = dir.path().join("shifted");
    assert_eq!(trexd("compare", &shifted, &out, &[]), 0);
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let all = |row: &str| row.rsplit(',').next().unwrap().parse::<f64>().unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert!(all(rows[2]) < all(rows[1]), "{csv}");
}

#[test]
fn saliency_outputs() {
    let dir = TempDir::new().unwrap();
    let data = DatasetRecipe::new("scenes", 1, 4, 300, 32)
        .generate()
        .unwrap();
    let (clf, _) = train_classifier(
        &data,
        &TrainConfig {
            epochs: 1,
            hidden: vec![16],
            ..Default::default()
        },
    )
    .unwrap();
    save_model(dir.path().join("c.trexmdl"), &Checkpoint::Classifier(clf)).unwrap();
    let spec = write_spec(
        dir.path(),
        "s.json",
        &json!({
            "spec_version": 1,
            "kind": "saliency",
            "classifier": "c.trexmdl",
            "saliency": {
                "class": 1,
                "samples": 5,
                "input": { "scene": [
                    { "shape": "square", "color": 3, "size": 4.0, "cx": 10.0, "cy": 10.0 },
                    { "shape": "disc", "color": 2, "size": 3.5, "cx": 22.0, "cy": 20.0 }
                ] }
            }
        }),
    );
    let out = dir.path().join("out");
    assert_eq!(trexd("saliency", &spec, &out, &[]), 0);
    let pgm = fs::read(out.join("saliency.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(pgm.len(), b"P5\n32 32\n255\n".len() + 1024);
    let csv = fs::read_to_string(out.join("saliency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 32);
    assert!(csv
        .lines()
        .all(|l| l.split(',').all(|v| v.parse::<f64>().unwrap() >= 0.0)));
    let removal = fs::read_to_string(out.join("removal.csv")).unwrap();
    assert_eq!(removal.lines().count(), 3);
}
