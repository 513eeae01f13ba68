use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--preset=smoke",
    "--set=data.n_singers=5",
    "--set=data.clips_per_singer=3",
    "--set=data.n_unseen=2",
    "--set=data.test_clips_per_singer=1",
    "--set=data.clip_secs=1.0",
    "--set=schedule.steps=20",
    "--set=vae_train.speaker_steps=4",
    "--set=vae_train.steps=6",
    "--set=vae_train.batch=2",
    "--set=vae_train.crop_frames=16",
    "--set=vae_train.log_every=2",
    "--set=vae_train.checkpoint_every=4",
    "--set=ldm_train.steps=6",
    "--set=ldm_train.batch=2",
    "--set=ldm_train.crop_frames=16",
    "--set=ldm_train.log_every=2",
    "--set=ldm_train.checkpoint_every=4",
];

fn lsvc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsvc"))
        .current_dir(dir)
        .env_remove("LSVC_OUT")
        .args(TINY)
        .arg("--out-root=.")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = lsvc(dir, args);
    assert!(
        out.status.success(),
        "lsvc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn csv_steps(path: &Path) -> Vec<usize> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect()
}

fn first_clip(dir: &Path, split: &str) -> String {
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("data/manifest.json")).unwrap()).unwrap();
    let entry = manifest
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["split"] == split)
        .unwrap();
    format!("data/{}", entry["path"].as_str().unwrap())
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lsvc(dir.path(), &["no-such-command"])), 2);
    assert_eq!(code(&lsvc(dir.path(), &["convert", "--source", "a.wav"])), 2);
    assert_eq!(code(&lsvc(dir.path(), &["--set=vae_train.nope=1", "synth-data"])), 2);
    assert_eq!(code(&lsvc(dir.path(), &["--set=vae_train.batch=0", "synth-data"])), 2);
    assert_eq!(code(&lsvc(dir.path(), &["--help"])), 0);
}

#[test]
fn guidance_weight_defaults_to_point_three() {
    let dir = tempfile::tempdir().unwrap();
    let help = String::from_utf8(ok(dir.path(), &["convert", "--help"]).stdout).unwrap();
    assert!(help.contains("[default: 0.3]"), "{help}");
}

#[test]
fn training_the_denoiser_first_is_a_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lsvc(dir.path(), &["train-ldm"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-vae"));
    assert_eq!(code(&lsvc(dir.path(), &["train-vae"])), 3);
}

#[test]
fn missing_reference_is_reported_before_models_load() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth-data"]);
    let src = first_clip(dir.path(), "train");
    // No checkpoints exist, so loading models would fail with exit 3.
    let out = lsvc(dir.path(), &["convert", "--source", &src, "--ref", "missing.wav", "--out", "o.wav"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.wav"));
}

#[test]
fn unseen_scenario_needs_an_unseen_split() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--set=data.n_unseen=0", "synth-data"]);
    let out = lsvc(dir.path(), &["--set=data.n_unseen=0", "evaluate", "--scenario", "unseen"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth-data"]);
    assert!(d.join("data/singers.json").exists());
    ok(d, &["train-vae"]);
    ok(d, &["train-ldm"]);

    // 4 speaker + 6 VAE steps, logged every 2; 6 LDM steps.
    assert_eq!(csv_steps(&d.join("vae_loss.csv")), vec![0, 2, 4, 6, 8]);
    assert_eq!(csv_steps(&d.join("ldm_loss.csv")), vec![0, 2, 4]);

    let src = first_clip(d, "train");
    let reference = first_clip(d, "test-seen");
    ok(d, &["convert", "--source", &src, "--ref", &reference, "--out", "out/c.wav"]);
    assert!(d.join("out/c.wav").exists());
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/c.json")).unwrap()).unwrap();
    assert_eq!(sidecar["w"], 0.3);
    assert_eq!(sidecar["denoiser_calls"], 40);

    ok(d, &["evaluate", "--scenario", "both"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/report.json")).unwrap()).unwrap();
    let rows = report["trials"].as_array().unwrap().len();
    assert_eq!(rows + report["failure_count"].as_u64().unwrap() as usize, 12);
    assert!(d.join("eval/metrics_seen.svg").exists());
    assert!(d.join("eval/metrics_unseen.svg").exists());

    // A finished checkpoint is left alone.
    let before = std::fs::read(d.join("vae.ckpt")).unwrap();
    ok(d, &["train-vae"]);
    assert_eq!(std::fs::read(d.join("vae.ckpt")).unwrap(), before);
}

#[test]
fn interrupted_training_resumes_to_the_same_state() {
    let whole = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    for d in [whole.path(), split.path()] {
        ok(d, &["synth-data"]);
    }
    ok(whole.path(), &["train-vae"]);
    ok(whole.path(), &["train-ldm"]);

    let s = split.path();
    ok(s, &["train-vae", "--stop-after", "3"]);
    ok(s, &["train-vae", "--stop-after", "4"]);
    ok(s, &["train-vae"]);
    ok(s, &["train-ldm", "--stop-after", "3"]);
    ok(s, &["train-ldm"]);

    for f in ["vae.ckpt", "vae_loss.csv", "ldm.ckpt", "ldm_loss.csv"] {
        assert_eq!(
            std::fs::read(whole.path().join(f)).unwrap(),
            std::fs::read(s.join(f)).unwrap(),
            "{f} differs after resuming"
        );
    }
}
