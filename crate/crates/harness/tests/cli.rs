use std::path::Path;
use std::process::{Command, Output};

use fire_core::metrics::dfi;
use fire_core::params::WeightTensor;
use fire_harness::checkpoint::{checkpoint_dir, load_checkpoint};

fn fire(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fire"))
        .args(args)
        .env("FIRE_OUTPUT_ROOT", out_root)
        .output()
        .expect("spawn fire")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"
name = "smoke"
seeds = [7]
output_dir = "smoke"

[model]
hidden = [16]

[train]
epochs_per_chunk = 2

[reinit]
method = "shrink_perturb"

[stream]
num_chunks = 2

[stream.dataset]
samples_per_class = 20
test_per_class = 5
"#;

#[test]
fn run_orthogonalize_metrics_and_report() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("smoke.toml");
    std::fs::write(&cfg, CONFIG).unwrap();

    let o = fire(&["run", cfg.to_str().unwrap()], root.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("smoke"));
    let out = root.path().join("smoke");
    assert!(out.join("smoke-seed7.csv").exists());

    let ck = checkpoint_dir(&out, "smoke-seed7", 1, "final");
    let o = fire(&["orthogonalize", ck.to_str().unwrap(), "--iters", "30"], root.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let params = load_checkpoint(&ck).unwrap().params;
    let WeightTensor::Dense(w) = &params.layers[0].weights else {
        panic!("dense layer expected")
    };
    // 16 x 32 input layer scaled by sqrt(16/32): Gram of the smaller side is I/2.
    assert!((dfi(&w.scale(2f64.sqrt())) - 0.0).abs() < 1e-8);

    let o = fire(&["metrics", ck.to_str().unwrap(), "--format", "csv"], root.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("layer,dfi,srank,dormant,min_activity"));
    assert_eq!(text.lines().count(), 3);

    let o = fire(&["report", "smoke"], root.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("summary.csv").exists());
}

#[test]
fn seed_and_output_flags_override_the_config() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("smoke.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let elsewhere = root.path().join("elsewhere");
    let o = fire(
        &[
            "run",
            cfg.to_str().unwrap(),
            "--seed",
            "3",
            "--out",
            elsewhere.to_str().unwrap(),
        ],
        root.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(elsewhere.join("smoke-seed3.csv").exists());
    assert!(!root.path().join("smoke").exists());
}

#[test]
fn verify_exits_zero_when_all_bounds_hold() {
    let root = tempfile::tempdir().unwrap();
    let o = fire(&["verify"], root.path());
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.matches(" PASS ").count(), 6, "{text}");
}

#[test]
fn errors_are_reported_with_nonzero_exit() {
    let root = tempfile::tempdir().unwrap();
    let bad = root.path().join("bad.toml");
    std::fs::write(&bad, "seedz = [1]\n").unwrap();
    let o = fire(&["run", bad.to_str().unwrap()], root.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = fire(&["metrics", root.path().join("missing").to_str().unwrap()], root.path());
    assert!(!o.status.success());
    let o = fire(&["report", "nothing-here"], root.path());
    assert!(!o.status.success());
}
