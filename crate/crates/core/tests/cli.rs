use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hsi-unfold");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("HSI_UNFOLD_DATA").output().expect("spawn binary")
}

/// Report and diagnostics together.
fn stdout(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path) {
    let o = run(&["--seed", "5", "simulate", "--generate", "3", "--size", "16", "--bands", "3", "--out", p(dir)]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn simulate_with_noise_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let read = |name: &str| {
        let out = tmp.path().join(name);
        let o = run(&["--seed", "9", "simulate", "--data", p(&data), "--out", p(&out), "--noise-bits", "11"]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        std::fs::read(out.join("scene0.y.hsc")).unwrap()
    };
    assert_eq!(read("a"), read("b"));
    // Different seeds draw different noise.
    let o = run(&["--seed", "10", "simulate", "--data", p(&data), "--out", p(&tmp.path().join("c")), "--noise-bits", "11"]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(read("a"), std::fs::read(tmp.path().join("c/scene0.y.hsc")).unwrap());
}

#[test]
fn noiseless_simulation_ignores_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let mut outs = Vec::new();
    for seed in ["1", "2"] {
        let out = tmp.path().join(seed);
        assert_eq!(run(&["--seed", seed, "simulate", "--data", p(&data), "--out", p(&out)]).status.code(), Some(0));
        outs.push(std::fs::read(out.join("scene1.y.hsc")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn missing_mask_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    std::fs::remove_file(data.join("mask.hsc")).unwrap();
    let o = run(&["simulate", "--data", p(&data), "--out", p(&tmp.path().join("y"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mask"), "{}", stdout(&o));
}

#[test]
fn data_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let o = Command::new(BIN)
        .args(["simulate", "--out", p(&tmp.path().join("y"))])
        .env("HSI_UNFOLD_DATA", &data)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(run(&["simulate", "--out", p(&tmp.path().join("z"))]).status.code(), Some(2));
}

fn psnrs(dir: &Path) -> Vec<f64> {
    std::fs::read_to_string(dir.join("metrics.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn reconstruct_equivalences_and_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let rec = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec!["reconstruct", "--data", p(&data), "--out", p(&out)];
        if !extra.contains(&"--stages") {
            args.extend(["--stages", "8"]);
        }
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        out
    };
    let hqs = rec("hqs", &["--framework", "hqs"]);
    let r2 = rec("r2", &["--framework", "r2admm", "--gamma", "0"]);
    for s in ["scene0", "scene2"] {
        let f = format!("{s}.hsc");
        assert_eq!(std::fs::read(hqs.join(&f)).unwrap(), std::fs::read(r2.join(&f)).unwrap());
    }
    let r1 = rec("r1", &["--framework", "r2admm", "--gamma", "1"]);
    let admm = rec("admm", &["--framework", "admm"]);
    assert_eq!(std::fs::read(r1.join("scene1.hsc")).unwrap(), std::fs::read(admm.join("scene1.hsc")).unwrap());

    let z0 = rec("z0", &["--stages", "0"]);
    let full = rec("full", &["--stages", "40"]);
    assert!(std::fs::read_to_string(z0.join("scene0.diagnostics.csv")).unwrap().lines().count() == 1);
    for (base, solved) in psnrs(&z0).into_iter().zip(psnrs(&full)) {
        assert!(solved > base + 3.0, "ADMM-TV {solved} dB vs Φᵀy {base} dB");
    }
    let diag = std::fs::read_to_string(full.join("scene0.diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 41);
    assert!(diag.starts_with("stage,primal_residual,psnr"));
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, format!("data = {:?}\n[reconstruct]\nframework = \"hqs\"\nstages = 0\n", p(&data))).unwrap();
    let a = tmp.path().join("a");
    assert_eq!(run(&["--config", p(&cfg), "reconstruct", "--out", p(&a)]).status.code(), Some(0));
    let b = tmp.path().join("b");
    assert_eq!(run(&["--config", p(&cfg), "reconstruct", "--out", p(&b), "--stages", "5"]).status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(a.join("scene0.diagnostics.csv")).unwrap().lines().count(), 1);
    assert_eq!(std::fs::read_to_string(b.join("scene0.diagnostics.csv")).unwrap().lines().count(), 6);

    std::fs::write(&cfg, "[reconstruct]\nbogus = 1\n").unwrap();
    let o = run(&["--config", p(&cfg), "reconstruct", "--data", p(&data), "--out", p(&a)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("bogus"));
}

#[test]
fn train_then_reconstruct_from_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let out = tmp.path().join("train");
    let o = run(&[
        "--seed", "2", "train", "--data", p(&data), "--out", p(&out), "--epochs", "1", "--steps-per-epoch", "3", "--batch-size", "2",
        "--crop", "16", "--stages", "2", "--ffn", "no-dw", "--drop-path", "0.1,0.2", "--kernel-size", "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let log = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let ckpt = out.join("last.hsck");
    let rec = tmp.path().join("rec");
    let o = run(&["reconstruct", "--data", p(&data), "--out", p(&rec), "--checkpoint", p(&ckpt)]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(psnrs(&rec).len(), 3);
    assert_eq!(std::fs::read_to_string(rec.join("scene0.diagnostics.csv")).unwrap().lines().count(), 3);

    let o = run(&["reconstruct", "--data", p(&data), "--out", p(&rec), "--checkpoint", p(&ckpt), "--stages", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stdout(&o);
    assert!(msg.contains('2') && msg.contains('3'), "{msg}");
    let o = run(&["reconstruct", "--data", p(&data), "--out", p(&rec), "--checkpoint", p(&ckpt), "--framework", "hqs"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("r2admm") && stdout(&o).contains("hqs"));

    // Same seed, same run.
    let again = tmp.path().join("again");
    let o = run(&[
        "--seed", "2", "train", "--data", p(&data), "--out", p(&again), "--epochs", "1", "--steps-per-epoch", "3", "--batch-size", "2",
        "--crop", "16", "--stages", "2", "--ffn", "no-dw", "--drop-path", "0.1,0.2", "--kernel-size", "5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(ckpt).unwrap(), std::fs::read(again.join("last.hsck")).unwrap());
}

#[test]
fn band_mismatch_names_both_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let other = tmp.path().join("other");
    let o = run(&["simulate", "--generate", "2", "--size", "16", "--bands", "4", "--out", p(&other)]);
    assert_eq!(o.status.code(), Some(0));
    let out = tmp.path().join("train");
    let o = run(&["train", "--data", p(&other), "--out", p(&out), "--epochs", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = run(&["reconstruct", "--data", p(&data), "--out", p(&tmp.path().join("r")), "--checkpoint", p(&out.join("last.hsck"))]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stdout(&o);
    assert!(msg.contains("channels") && msg.contains('4') && msg.contains('3'), "{msg}");
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let o = run(&["train", "--data", p(&data), "--out", p(&tmp.path().join("t")), "--framework", "sgd"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stdout(&o);
    for k in ["hqs", "admm", "r2admm", "gap", "plain"] {
        assert!(msg.contains(k), "{msg}");
    }
    assert_eq!(run(&["train", "--data", p(&data), "--out", "x", "--ffn", "wide"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "spectral"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn verify_suites() {
    let o = run(&["verify", "adjoint"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("PASS phi adjoint"));
    let o = run(&["verify", "gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}
