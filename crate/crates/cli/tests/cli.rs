use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
subsample_cell = 0.5

[scene]
extent = 24.0
buildings = 1
trees = 2
cars = 2
poles = 2
scale = 1.0

[network]
encoder = [8, 8]
decoder = [8]
k = 6

[pretrain]
epochs = 1
steps_per_epoch = 4
batch_size = 2
points = 64
radius = 5.0

[stream]
batch_size = 2
points = 64
radius = 5.0
batches_per_domain = 2
"#;

fn apcotta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apcotta"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = apcotta(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(dir: &Path, args: &[&str], category: &str) {
    let out = apcotta(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(
        stderr.starts_with(&format!("error: {category}: ")),
        "{stderr}"
    );
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn file_workflow_end_to_end() {
    let tmp = workspace();
    let d = tmp.path();
    let cfg = ["--config", "small.toml"];
    let with =
        |rest: &[&str]| -> Vec<String> { cfg.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run = |rest: &[&str]| {
        let args = with(rest);
        ok(d, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    assert!(run(&["synth", "--out", "scene.xyzl"]).starts_with("wrote "));
    let pre = run(&[
        "pretrain",
        "--cloud",
        "scene.xyzl",
        "--epochs",
        "2",
        "--out",
        "src.ckpt",
    ]);
    assert_eq!(pre.lines().count(), 2);
    let listing = run(&[
        "corrupt",
        "--cloud",
        "scene.xyzl",
        "--profile",
        "h3d",
        "--severity",
        "2",
        "--out-dir",
        "bench",
    ]);
    assert_eq!(listing.lines().count(), 7);
    assert!(d.join("bench/manifest.json").exists());

    let csv = run(&[
        "adapt",
        "--ckpt",
        "src.ckpt",
        "--manifest",
        "bench",
        "--method",
        "apcotta",
        "--report",
        "rep",
    ]);
    assert!(csv.lines().count() > 7);
    assert!(d.join("rep/apcotta.csv").exists());
    assert_eq!(
        fs::read_to_string(d.join("rep/apcotta.diagnostics.jsonl"))
            .unwrap()
            .lines()
            .count(),
        14
    );

    // Switching every component off must change nothing about determinism.
    let a = run(&[
        "adapt",
        "--ckpt",
        "src.ckpt",
        "--manifest",
        "bench/manifest.json",
        "--no-dstl",
        "--no-ebcl",
        "--no-rpi",
        "--report",
        "r1",
    ]);
    let b = run(&[
        "adapt",
        "--ckpt",
        "src.ckpt",
        "--manifest",
        "bench/manifest.json",
        "--no-dstl",
        "--no-ebcl",
        "--no-rpi",
        "--report",
        "r2",
    ]);
    assert_eq!(a, b);

    let abl = run(&[
        "ablate",
        "--ckpt",
        "src.ckpt",
        "--manifest",
        "bench",
        "--report",
        "rep",
    ]);
    assert_eq!(abl.lines().count(), 5);
    let sweep = run(&[
        "sweep",
        "--ckpt",
        "src.ckpt",
        "--manifest",
        "bench",
        "--param",
        "alpha",
        "--values",
        "0.9,0.99",
        "--report",
        "rep",
    ]);
    assert_eq!(sweep.lines().count(), 3);
    assert!(d.join("rep/sweep_alpha.csv").exists());
}

#[test]
fn eval_scores_prediction_files() {
    let tmp = workspace();
    let d = tmp.path();
    ok(
        d,
        &["--config", "small.toml", "synth", "--out", "scene.xyzl"],
    );
    let labels: Vec<String> = fs::read_to_string(d.join("scene.xyzl"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().last().unwrap().to_string())
        .collect();
    fs::write(d.join("perfect.txt"), labels.join("\n")).unwrap();
    let json = ok(
        d,
        &["eval", "--pred", "perfect.txt", "--truth", "scene.xyzl"],
    );
    assert!(json.contains("\"oa\": 1.0"), "{json}");
    assert!(json.contains("\"miou\": 1.0"), "{json}");

    fs::write(d.join("short.txt"), labels[1..].join("\n")).unwrap();
    fails_with(
        d,
        &["eval", "--pred", "short.txt", "--truth", "scene.xyzl"],
        "shape",
    );
    fs::write(d.join("bad.txt"), "zero\n").unwrap();
    fails_with(
        d,
        &["eval", "--pred", "bad.txt", "--truth", "scene.xyzl"],
        "parse",
    );
}

#[test]
fn errors_are_single_categorised_lines() {
    let tmp = workspace();
    let d = tmp.path();
    fails_with(d, &["--config", "missing.toml", "config"], "io");
    fails_with(d, &["--set", "adapt.tau=-1", "config"], "validation");
    fails_with(d, &["--set", "adapt.tau", "config"], "config");
    fs::write(d.join("broken.toml"), "[adapt\n").unwrap();
    fails_with(d, &["--config", "broken.toml", "config"], "config");
    fails_with(
        d,
        &["pretrain", "--cloud", "nope.xyzl", "--out", "x.ckpt"],
        "io",
    );
    fs::write(d.join("junk.ckpt"), "not a checkpoint").unwrap();
    fs::create_dir(d.join("bench")).unwrap();
    fails_with(
        d,
        &[
            "adapt",
            "--ckpt",
            "junk.ckpt",
            "--manifest",
            "bench",
            "--report",
            "r",
        ],
        "checkpoint",
    );
}

#[test]
fn overrides_apply_on_top_of_the_file() {
    let tmp = workspace();
    let d = tmp.path();
    let text = ok(
        d,
        &[
            "--config",
            "small.toml",
            "--seed",
            "42",
            "--set",
            "adapt.tau=0.6",
            "config",
        ],
    );
    assert!(text.contains("master = 42"));
    assert!(text.contains("tau = 0.6"));
    assert!(text.contains("extent = 24.0"));
    assert!(text.contains("momentum = 0.98"));
}
