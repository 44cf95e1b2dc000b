use std::path::Path;
use std::process::{Command, Output};

fn vad(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vad"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = vad(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: &str = "latent_dim = 3\ndecoder_hidden = [8]\nencoder_hidden = [8]\nmax_epochs = 5\ninfer_max_steps = 20\nbatch_size = 16\n";

#[test]
fn generate_mask_train_infer_impute_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.toml"), SMALL).unwrap();
    ok(&["gen-data", "--rows", "60", "--dim", "6", "--independent", "3", "--seed", "1", "--out", "truth.csv"], d);
    let header = std::fs::read_to_string(d.join("truth.csv")).unwrap();
    assert!(header.starts_with("dim_0,dim_1,dim_2,dim_3,dim_4,dim_5\n"));
    assert!(!header.contains('\r'));

    ok(&["mask", "--like", "truth.csv", "--rate", "0.3", "--seed", "2", "--out", "mask.csv"], d);
    let mask = std::fs::read_to_string(d.join("mask.csv")).unwrap();
    assert!(mask.lines().skip(1).all(|l| l.split(',').all(|c| c == "0" || c == "1")));

    for model in ["vad", "vae"] {
        let ckpt = format!("{model}.ckpt");
        ok(
            &[
                "train", "--model", model, "--data", "truth.csv", "--masks", "mask.csv", "--config", "cfg.toml",
                "--out", &ckpt, "--metrics-out", "train.csv", "--seed", "3",
            ],
            d,
        );
        let metrics = std::fs::read_to_string(d.join("train.csv")).unwrap();
        assert!(metrics.starts_with("model,r_train,r_test,seed,mse_incomplete,mse_missing,mse_full,lower_bound,seconds"));
        assert!(metrics.lines().nth(1).unwrap().starts_with(model));

        ok(&["infer", "--checkpoint", &ckpt, "--data", "truth.csv", "--masks", "mask.csv", "--out", "q.csv", "--seed", "4"], d);
        ok(
            &[
                "impute", "--checkpoint", &ckpt, "--posteriors", "q.csv", "--data", "truth.csv", "--masks", "mask.csv",
                "--out", "filled.csv", "--seed", "4",
            ],
            d,
        );
        ok(&["impute", "--checkpoint", &ckpt, "--posteriors", "q.csv", "--out", "decoded.csv"], d);
        let out = ok(&["eval", "--decoded", "decoded.csv", "--truth", "truth.csv", "--masks", "mask.csv", "--seed", "0"], d);
        let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        for key in ["incomplete", "missing", "full"] {
            assert!(json[key].as_f64().is_some_and(f64::is_finite), "{model} {key}: {json}");
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Unknown flag and bad config both map to 2.
    assert_eq!(vad(&["train", "--bogus"], d).status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "latent_dim = 0\n").unwrap();
    std::fs::write(d.join("x.csv"), "dim_0,dim_1\n1,2\n3,\n").unwrap();
    let out = vad(&["train", "--data", "x.csv", "--config", "bad.toml", "--out", "m.ckpt"], d);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(vad(&["mask", "--rows", "2", "--out", "m.csv"], d).status.code(), Some(2));

    // Malformed data maps to 3.
    std::fs::write(d.join("bad.csv"), "dim_0,dim_1\n1,abc\n").unwrap();
    let out = vad(&["train", "--data", "bad.csv", "--out", "m.ckpt"], d);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv"));
    std::fs::write(d.join("junk.ckpt"), "not a checkpoint").unwrap();
    let out = vad(&["infer", "--checkpoint", "junk.ckpt", "--data", "x.csv", "--out", "q.csv"], d);
    assert_eq!(out.status.code(), Some(3));

    // Overflowing values make the loss non-finite: 4.
    std::fs::write(d.join("huge.csv"), "dim_0,dim_1\n1e200,-1e200\n2e200,3e200\n").unwrap();
    let out = vad(&["train", "--data", "huge.csv", "--epochs", "2", "--out", "m.ckpt"], d);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn tiny_experiment_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.toml"), SMALL).unwrap();
    ok(
        &[
            "experiment", "--id", "2", "--mode", "train-only", "--rows", "80", "--dim", "6", "--independent", "3", "--rates", "0.2,0.5",
            "--runs", "2", "--config", "cfg.toml", "--seed", "5", "--out", "exp.csv",
        ],
        d,
    );
    let csv = std::fs::read_to_string(d.join("exp.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    // Two models, two training rates, two test runs.
    assert_eq!(lines.len(), 1 + 2 * 2 * 2);
    for l in &lines[1..] {
        let cells: Vec<&str> = l.split(',').collect();
        assert_eq!(cells[2], "0.0", "train-only tests complete data: {l}");
        assert_eq!(cells[8], "", "seconds stay empty without --record-time");
    }
}
