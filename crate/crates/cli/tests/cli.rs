use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cerberus::imageio::{load_manifest, write_ppm16};
use cerberus::metrics::aggregate;
use cerberus::nncore::{load_checkpoint, ArchConfig, Model};
use cerberus::patches::read_tensor_file;
use cerberus::train::validation_errors;
use cerberus::LinearImage;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cerberus"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Dataset {
    dir: TempDir,
}

impl Dataset {
    fn new(count: usize) -> Self {
        let dir = TempDir::new().unwrap();
        let out = dir.path().join("ds");
        ok(&[
            "synth",
            "--out",
            s(&out),
            "--count",
            &count.to_string(),
            "--width",
            "200",
            "--height",
            "160",
            "--seed",
            "3",
        ]);
        Self { dir }
    }

    fn images(&self) -> PathBuf {
        self.dir.path().join("ds")
    }

    fn manifest(&self) -> PathBuf {
        self.images().join("manifest.csv")
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn patches(&self, out: &str, mode: &str, seed: &str) -> String {
        ok(&[
            "patches",
            "--manifest",
            s(&self.manifest()),
            "--images",
            s(&self.images()),
            "--out",
            s(&self.path(out)),
            "--mode",
            mode,
            "--seed",
            seed,
            "--count",
            "4",
            "--sides",
            "64,128",
            "--val-side",
            "128",
        ])
    }
}

#[test]
fn analyze_writes_three_files() {
    let d = Dataset::new(4);
    let out = d.path("an");
    ok(&["analyze", "--manifest", s(&d.manifest()), "--out", s(&out)]);
    for f in ["scatter.csv", "maxhist.csv", "clusters.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let scatter = fs::read_to_string(out.join("scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 5);
}

#[test]
fn usage_errors_exit_2() {
    let out = run(&["analyze", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--manifest"));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        run(&[
            "patches",
            "--manifest",
            "m",
            "--images",
            "i",
            "--out",
            "o",
            "--mode",
            "test"
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn unreadable_image_exits_1_naming_path() {
    let d = Dataset::new(2);
    fs::remove_file(d.images().join("scene_00001.ppm")).unwrap();
    let out = run(&["analyze", "--manifest", s(&d.manifest()), "--out", s(&d.path("an"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scene_00001.ppm"));
}

#[test]
fn patch_counts_and_determinism() {
    let d = Dataset::new(10);
    assert_eq!(d.patches("t1.ccpt", "train", "5").trim(), "40");
    assert_eq!(d.patches("t2.ccpt", "train", "5").trim(), "40");
    assert_eq!(
        fs::read(d.path("t1.ccpt")).unwrap(),
        fs::read(d.path("t2.ccpt")).unwrap()
    );
    assert_eq!(d.patches("v.ccpt", "val", "5").trim(), "10");
    assert_eq!(read_tensor_file(d.path("v.ccpt")).unwrap().len(), 10);
    d.patches("t3.ccpt", "train", "6");
    assert_ne!(
        fs::read(d.path("t1.ccpt")).unwrap(),
        fs::read(d.path("t3.ccpt")).unwrap()
    );
}

#[test]
fn default_counts_follow_reference_values() {
    let d = Dataset::new(2);
    let out = ok(&[
        "patches",
        "--manifest",
        s(&d.manifest()),
        "--images",
        s(&d.images()),
        "--out",
        s(&d.path("t.ccpt")),
        "--mode",
        "train",
        "--sides",
        "64",
    ]);
    assert_eq!(out.trim(), "200");
}

fn train_args<'a>(d: &'a Dataset, out: &'a str, extra: &[&'a str]) -> Vec<String> {
    let mut v: Vec<String> = [
        "train",
        "--train",
        s(&d.path("t.ccpt")),
        "--val",
        s(&d.path("v.ccpt")),
        "--out",
        &d.path(out).to_string_lossy(),
        "--batch",
        "8",
        "--patience",
        "0",
    ]
    .iter()
    .map(|x| x.to_string())
    .collect();
    v.extend(extra.iter().map(|x| x.to_string()));
    v
}

fn ok_owned(args: Vec<String>) -> String {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&refs)
}

#[test]
fn train_is_deterministic_and_reproducible() {
    let d = Dataset::new(6);
    d.patches("t.ccpt", "train", "1");
    d.patches("v.ccpt", "val", "1");
    ok_owned(train_args(
        &d,
        "a.ccnn",
        &["--runs", "1", "--epochs", "3", "--seed", "4"],
    ));
    let hist_a = fs::read_to_string(d.path("history.csv")).unwrap();
    ok_owned(train_args(
        &d,
        "b.ccnn",
        &["--runs", "1", "--epochs", "3", "--seed", "4"],
    ));
    let hist_b = fs::read_to_string(d.path("history.csv")).unwrap();
    assert_eq!(fs::read(d.path("a.ccnn")).unwrap(), fs::read(d.path("b.ccnn")).unwrap());
    assert_eq!(hist_a, hist_b);
    assert_eq!(hist_a.lines().count(), 4);

    // the best epoch's median is recomputable from the checkpoint and val file
    let model = load_checkpoint(d.path("a.ccnn"), Some(&ArchConfig::default())).unwrap();
    let val = read_tensor_file(d.path("v.ccpt")).unwrap();
    let median = aggregate(&validation_errors(&model, &val).unwrap()).unwrap().median;
    let best = hist_a
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(median, best);
}

#[test]
fn zero_epochs_writes_initial_model() {
    let d = Dataset::new(3);
    d.patches("t.ccpt", "train", "1");
    d.patches("v.ccpt", "val", "1");
    let out = ok_owned(train_args(
        &d,
        "m.ccnn",
        &["--runs", "1", "--epochs", "0", "--seed", "9"],
    ));
    assert!(out.contains("selected seed 9"));
    let loaded = load_checkpoint(d.path("m.ccnn"), None).unwrap();
    assert_eq!(loaded, Model::new(ArchConfig::default(), 9).unwrap());
    assert_eq!(fs::read_to_string(d.path("history.csv")).unwrap().lines().count(), 1);
}

#[test]
fn eval_outputs_and_errors() {
    let d = Dataset::new(4);
    let out = d.path("ev");
    let stdout = ok(&[
        "eval",
        "--manifest",
        s(&d.manifest()),
        "--images",
        s(&d.images()),
        "--estimator",
        "constant",
        "--out",
        s(&out),
    ]);
    let json: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(
        keys,
        [
            "best25_deg",
            "count",
            "mean_deg",
            "median_deg",
            "trimean_deg",
            "worst25_deg"
        ]
    );
    assert_eq!(json["count"], 4);
    let saved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(saved, json);
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count(), 5);

    let missing = run(&[
        "eval",
        "--manifest",
        s(&d.manifest()),
        "--images",
        s(&d.images()),
        "--estimator",
        &format!("model:{}", s(&d.path("nope.ccnn"))),
        "--out",
        s(&out),
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.ccnn"));

    let bad = run(&[
        "eval",
        "--manifest",
        s(&d.manifest()),
        "--images",
        s(&d.images()),
        "--estimator",
        "magic",
        "--out",
        s(&out),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn augment_copy_and_determinism() {
    let d = Dataset::new(3);
    let (manifest, images) = (d.manifest(), d.images());
    let base = [
        "augment",
        "--manifest",
        s(&manifest),
        "--images",
        s(&images),
        "--seed",
        "2",
    ];
    let a0 = d.path("a0");
    ok(&[&base[..], &["--out", s(&a0), "--per-image", "0"]].concat());
    let copy = load_manifest(a0.join("manifest.csv")).unwrap();
    assert_eq!(copy, load_manifest(d.manifest()).unwrap());

    let (a1, a2) = (d.path("a1"), d.path("a2"));
    ok(&[&base[..], &["--out", s(&a1), "--per-image", "2"]].concat());
    ok(&[&base[..], &["--out", s(&a2), "--per-image", "2"]].concat());
    let m1 = fs::read(a1.join("manifest.csv")).unwrap();
    assert_eq!(m1, fs::read(a2.join("manifest.csv")).unwrap());
    assert_eq!(load_manifest(a1.join("manifest.csv")).unwrap().len(), 9);
    assert_eq!(
        fs::read(a1.join("scene_00001_aug001.ppm")).unwrap(),
        fs::read(a2.join("scene_00001_aug001.ppm")).unwrap()
    );
}

#[test]
fn skip_policy_drops_saturated_images() {
    let dir = TempDir::new().unwrap();
    let images = dir.path().join("img");
    fs::create_dir_all(&images).unwrap();
    // ISO 200 saturates at 15306; the second image is clipped
    write_ppm16(
        &LinearImage::filled(8, 8, [1000.0, 2000.0, 3000.0]).unwrap(),
        images.join("a.ppm"),
    )
    .unwrap();
    write_ppm16(
        &LinearImage::filled(8, 8, [15306.0, 2000.0, 3000.0]).unwrap(),
        images.join("b.ppm"),
    )
    .unwrap();
    fs::write(
        images.join("manifest.csv"),
        "path,lr,lg,lb,rr,rg,rb,dominant,iso\na.ppm,0.2,0.5,0.3,0.2,0.5,0.3,left,200\nb.ppm,0.2,0.5,0.3,0.2,0.5,0.3,left,200\n",
    )
    .unwrap();
    let out = dir.path().join("aug");
    let manifest = images.join("manifest.csv");
    let res = run(&[
        "augment",
        "--manifest",
        s(&manifest),
        "--images",
        s(&images),
        "--out",
        s(&out),
        "--per-image",
        "4",
        "--gain-min",
        "0.5",
        "--gain-max",
        "0.9",
        "--sat-policy",
        "skip",
        "--seed",
        "1",
    ]);
    assert!(res.status.success());
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert_eq!(stderr.matches("skipped b.ppm").count(), 4, "{stderr}");
    assert_eq!(load_manifest(out.join("manifest.csv")).unwrap().len(), 2 + 4);
}
