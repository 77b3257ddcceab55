use std::path::Path;
use std::process::{Command, Output};

use robust_inversion::degrade::{inpaint_mask, CompositionSpec};
use robust_inversion::Image;

fn rgi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgi"))
        .args(args)
        .output()
        .expect("spawn rgi")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// 32 px generator with 8 channels; small enough for a full restore.
fn small_checkpoint(dir: &Path) -> std::path::PathBuf {
    let ckpt = dir.join("g.ckpt");
    let out = rgi(&[
        "gen-weights",
        "--seed",
        "3",
        "--out",
        p(&ckpt),
        "--resolution",
        "32",
        "--channels",
        "8",
        "--latent-dim",
        "16",
        "--mapping-layers",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    ckpt
}

const INPAINT_XS: &str = r#"{"ops":[{"kind":"inpaint","level":"XS","seed":9}]}"#;

#[test]
fn sample_degrade_restore_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = small_checkpoint(dir.path());
    let clean = dir.path().join("clean.ppm");
    let degraded = dir.path().join("degraded.ppm");
    let restored = dir.path().join("restored.ppm");
    let trace = dir.path().join("trace.csv");

    assert_eq!(
        code(&rgi(&["sample", "--ckpt", p(&ckpt), "--seed", "5", "--out", p(&clean)])),
        0
    );
    assert_eq!(
        code(&rgi(&[
            "degrade",
            "--input",
            p(&clean),
            "--spec",
            INPAINT_XS,
            "--out",
            p(&degraded)
        ])),
        0
    );

    let spec = CompositionSpec::from_json(INPAINT_XS).unwrap();
    let mask = inpaint_mask(&spec, 32, 32).unwrap().unwrap();
    assert_eq!(mask.strokes.len(), 1);
    let img = Image::load(&degraded).unwrap();
    let plane = 32 * 32;
    for (i, &m) in mask.masked.iter().enumerate() {
        if m {
            assert!((0..3).all(|c| img.data()[c * plane + i] == 0.0));
        }
    }

    let out = rgi(&[
        "restore",
        "--ckpt",
        p(&ckpt),
        "--target",
        p(&degraded),
        "--spec",
        INPAINT_XS,
        "--seed",
        "1",
        "--out",
        p(&restored),
        "--trace",
        p(&trace),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let restored = Image::load(&restored).unwrap();
    assert_eq!((restored.height(), restored.width()), (32, 32));

    let mut rows = csv::Reader::from_path(&trace).unwrap();
    assert_eq!(rows.headers().unwrap(), vec!["step", "phase", "loss"]);
    let rows: Vec<csv::StringRecord> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 450);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap().is_finite()));
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("x.ppm");
    Image::filled(16, 16, 0.5).save(&img).unwrap();
    let out = dir.path().join("y.ppm");
    for spec in [
        "{not json",
        r#"{"ops":[{"kind":"blur"}]}"#,
        r#"{"ops":[{"kind":"deartifact","quality":0}]}"#,
        r#"{"ops":[{"kind":"denoise","level":"M"}]}"#,
        r#"{"ops":[{"kind":"inpaint","level":"M","seed":1},{"kind":"upsample","level":"S","seed":1}]}"#,
    ] {
        let r = rgi(&["degrade", "--input", p(&img), "--spec", spec, "--out", p(&out)]);
        assert_eq!(code(&r), 1, "{spec}: {}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(code(&rgi(&["degrade", "--bogus"])), 1);
    assert_eq!(code(&rgi(&[])), 1);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let out = dir.path().join("o.ppm");
    assert_eq!(
        code(&rgi(&[
            "sample",
            "--ckpt",
            p(&missing),
            "--seed",
            "1",
            "--out",
            p(&out)
        ])),
        2
    );
    let unwritable = dir.path().join("no/such/dir/o.ppm");
    let ckpt = small_checkpoint(dir.path());
    assert_eq!(
        code(&rgi(&[
            "sample",
            "--ckpt",
            p(&ckpt),
            "--seed",
            "1",
            "--out",
            p(&unwritable)
        ])),
        2
    );
}

#[test]
fn corrupt_checkpoint_is_rejected_as_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.ppm");
    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(
        code(&rgi(&[
            "sample",
            "--ckpt",
            p(&garbage),
            "--seed",
            "1",
            "--out",
            p(&out)
        ])),
        1
    );
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&rgi(&["--help"])), 0);
    assert_eq!(code(&rgi(&["restore", "--help"])), 0);
}

#[test]
fn benchmark_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = small_checkpoint(dir.path());
    let plan = dir.path().join("plan.json");
    std::fs::write(
        &plan,
        r#"{"cells":[{"task":"deartifact","levels":["M"]},{"composition":"NP"}],"images":2,"base_seed":4,
            "schedule":{"phases":[{"rate":0.08,"steps":4},{"rate":0.02,"steps":4},{"rate":0.005,"steps":4}]},
            "crops_per_image":4,"crop_size":16}"#,
    )
    .unwrap();
    let out = dir.path().join("bench");
    let r = rgi(&["benchmark", "--ckpt", p(&ckpt), "--plan", p(&plan), "--out", p(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let samples = std::fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 5);
}
