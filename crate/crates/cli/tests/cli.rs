//! End-to-end pipeline smoke at a tiny scale, driving the binary the way a
//! user would: generate -> pretrain -> extract -> retrieve -> classdist ->
//! report.

use std::path::Path;
use std::process::{Command, Output};

fn signrep(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signrep"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tiny_config(dir: &Path) -> String {
    let cfg = dir.join("run.cfg");
    std::fs::write(
        &cfg,
        "\
data_dir = data
out_dir = run
classes = 3
samples_per_class = 4
video_frames = 32
frame_height = 16
frame_width = 16
clip_frames = 8
patch_t = 2
patch_s = 4
embed_dim = 16
blocks = 1
heads = 4
decoder_hidden = 16
decoder_dim = 8
steps = 25
batch_pairs = 2
eval_every = 10
eval_stride = 8
eval_dict_per_class = 2
stride = 4
finetune_steps = 20
",
    )
    .unwrap();
    cfg.display().to_string()
}

#[test]
fn full_pipeline_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = tiny_config(root);

    assert_ok(
        &signrep(&["generate", "--config", &cfg, "--dump-priors"], root),
        "generate",
    );
    assert!(root.join("data/manifest.json").exists());
    assert!(root.join("data/priors_0000.json").exists());

    let manifest_before = std::fs::read(root.join("data/manifest.json")).unwrap();
    let pose_before = std::fs::read(root.join("data/pose/0000.srps")).unwrap();
    assert_ok(&signrep(&["pretrain", "--config", &cfg], root), "pretrain");
    for artifact in [
        "run/training_log.csv",
        "run/checkpoint_best.srck",
        "run/checkpoint_last.srck",
        "run/resolved_config.txt",
    ] {
        assert!(root.join(artifact).exists(), "{artifact} missing");
    }
    // commands never mutate their inputs
    assert_eq!(manifest_before, std::fs::read(root.join("data/manifest.json")).unwrap());
    assert_eq!(pose_before, std::fs::read(root.join("data/pose/0000.srps")).unwrap());

    assert_ok(
        &signrep(
            &[
                "extract",
                "--config",
                &cfg,
                "--checkpoint",
                "run/checkpoint_best.srck",
                "--manifest",
                "data/manifest.json",
            ],
            root,
        ),
        "extract",
    );
    for artifact in [
        "run/features_train_weighted.srft",
        "run/features_train_avg.srft",
        "run/features_test_weighted.srft",
        "run/features_test_avg.srft",
    ] {
        assert!(root.join(artifact).exists(), "{artifact} missing");
    }

    assert_ok(&signrep(&["retrieve", "--config", &cfg], root), "retrieve");
    let metrics1 = std::fs::read(root.join("run/metrics.csv")).unwrap();
    let header = String::from_utf8_lossy(&metrics1);
    assert!(header.starts_with("dcg,mrr,rec1,rec5\n"), "{header}");
    assert!(root.join("run/topk.csv").exists());

    // rerunning retrieve on the same stores is byte-identical
    assert_ok(&signrep(&["retrieve", "--config", &cfg], root), "retrieve again");
    let metrics2 = std::fs::read(root.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics1, metrics2);

    // the unweighted variant reads the avg stores
    assert_ok(
        &signrep(&["retrieve", "--config", &cfg, "--weighted", "false"], root),
        "retrieve avg",
    );

    assert_ok(&signrep(&["classdist", "--config", &cfg], root), "classdist");
    let phi = std::fs::read_to_string(root.join("run/phi.csv")).unwrap();
    assert!(phi.starts_with("class,p0,p1,p2\n"));
    assert_eq!(phi.lines().count(), 4, "header plus one row per class");
    let tau = std::fs::read_to_string(root.join("run/tau.csv")).unwrap();
    for line in tau.lines().skip(1) {
        let t: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.001..=0.1).contains(&t));
    }

    assert_ok(&signrep(&["report", "--config", &cfg], root), "report");
    assert!(root.join("run/summary.txt").exists());
    assert!(root.join("run/loss_curve.csv").exists());
}

#[test]
fn unknown_config_key_is_a_hard_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("bad.cfg"), "mystery_key = 1\n").unwrap();
    let out = signrep(&["generate", "--config", "bad.cfg"], root);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery_key"));
}

#[test]
fn missing_manifest_is_a_diagnostic_not_a_panic() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = tiny_config(root);
    let out = signrep(&["pretrain", "--config", &cfg], root);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("manifest"), "stderr: {stderr}");
}

#[test]
fn checkpoint_config_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = tiny_config(root);
    assert_ok(&signrep(&["generate", "--config", &cfg], root), "generate");
    assert_ok(&signrep(&["pretrain", "--config", &cfg], root), "pretrain");
    // same checkpoint, conflicting encoder geometry
    let cfg2 = root.join("other.cfg");
    let text = std::fs::read_to_string(root.join("run.cfg")).unwrap();
    std::fs::write(&cfg2, text.replace("embed_dim = 16", "embed_dim = 32")).unwrap();
    let out = signrep(
        &[
            "extract",
            "--config",
            "other.cfg",
            "--checkpoint",
            "run/checkpoint_best.srck",
            "--manifest",
            "data/manifest.json",
        ],
        root,
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("does not match"), "stderr: {stderr}");
}

#[test]
fn defaults_listing_covers_the_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = signrep(&["defaults"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["steps", "w_cov", "psi_hand_dist", "tau_grid_step", "stride"] {
        assert!(text.contains(&format!("{key} = ")), "{key} undocumented");
    }
}
