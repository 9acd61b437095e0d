use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smoothcert::data::{load_checkpoint, save_checkpoint, CERTIFICATION_HEADER, CURVE_HEADER, METRICS_HEADER};
use smoothcert::nn::MlpModel;
use smoothcert::spectral::regularizer_and_gradient;
use tempfile::TempDir;

const SYNTH: &str = "3,2,240,0.08,5";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_smoothcert"));
    c.env_remove("SMOOTHCERT_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn smoothcert")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// A short training run shared by the tests that need a model.
fn trained(dir: &Path) -> PathBuf {
    ok(
        dir,
        &[
            "train", "--synth", SYNTH, "--hidden", "12", "--epochs", "4", "--batch-size", "16", "--lr-drops", "",
            "--seed", "2", "--out", "tr",
        ],
    );
    dir.join("tr/model.ckpt")
}

#[test]
fn train_writes_checkpoints_metrics_and_config() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    let tr = tmp.path().join("tr");
    let metrics = fs::read_to_string(tr.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for (e, row) in rows.iter().enumerate() {
        let (model, header) = load_checkpoint(tr.join(format!("checkpoints/epoch-{e:03}.ckpt"))).unwrap();
        assert_eq!(header.metadata["epoch"], e);
        assert_eq!(model.dims(), vec![3, 12, 3]);
        assert!(row[4] >= 0.0);
    }
    // The regularizer logged for epoch e+1 is computed on the weights saved
    // at the end of epoch e.
    for e in 0..3 {
        let (model, _) = load_checkpoint(tr.join(format!("checkpoints/epoch-{e:03}.ckpt"))).unwrap();
        assert_eq!(regularizer_and_gradient(&model).value, rows[e + 1][3]);
    }
    let resolved = fs::read_to_string(tr.join("resolved_config.toml")).unwrap();
    for key in ["epochs = 4", "alpha = 0.1", "sigma2 = 0.12", "momentum = 0.9", "seed = 2", "batch_size = 16"] {
        assert!(resolved.contains(key), "{key} missing from\n{resolved}");
    }
    assert!(tr.join("spectral.json").is_file());
}

#[test]
fn training_is_bit_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    trained(a.path());
    trained(b.path());
    assert_eq!(
        fs::read(a.path().join("tr/model.ckpt")).unwrap(),
        fs::read(b.path().join("tr/model.ckpt")).unwrap()
    );
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["train", "--images", "nope.idx", "--labels", "nope.idx", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
    let out = run(tmp.path(), &["train", "--out", "x"]);
    assert_eq!(code(&out), 2);
    let out = run(tmp.path(), &["train", "--synth", SYNTH, "--bogus-flag", "--out", "x"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn divergence_is_a_computational_failure() {
    let tmp = TempDir::new().unwrap();
    let out = run(
        tmp.path(),
        &[
            "train", "--synth", SYNTH, "--hidden", "8", "--epochs", "5", "--lr", "1e200", "--momentum", "0",
            "--out", "dv",
        ],
    );
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn certify_outputs_are_byte_identical_across_reruns_and_worker_counts() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    let base = [
        "certify", "--synth", SYNTH, "--checkpoint", "tr/model.ckpt", "--sigma2", "0.04", "--n", "3000",
        "--subsample", "40", "--seed", "7",
    ];
    let with = |extra: &[&str]| -> Vec<String> { base.iter().chain(extra).map(|s| s.to_string()).collect() };
    let a = with(&["--out", "c", "--workers", "1"]);
    ok(tmp.path(), &a.iter().map(String::as_str).collect::<Vec<_>>());
    let files = ["certify.csv", "curve.csv", "curve.svg", "summary.json", "resolved_config.toml"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(tmp.path().join("c").join(f)).unwrap()).collect();
    let b = with(&["--out", "c", "--workers", "3"]);
    ok(tmp.path(), &b.iter().map(String::as_str).collect::<Vec<_>>());
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&fs::read(tmp.path().join("c").join(f)).unwrap(), bytes, "{f} changed");
    }

    let csv = String::from_utf8(first[0].clone()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CERTIFICATION_HEADER));
    assert_eq!(lines.count(), 40);
    let curve = String::from_utf8(first[1].clone()).unwrap();
    assert!(curve.starts_with(CURVE_HEADER));
    let acc: Vec<f64> = curve.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(acc.len(), 101);
    assert!(acc.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn subsample_depends_on_seed_only() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    let ids = |out: &str, seed: &str| -> Vec<String> {
        ok(
            tmp.path(),
            &[
                "certify", "--synth", SYNTH, "--checkpoint", "tr/model.ckpt", "--sigma2", "0.04", "--n", "200",
                "--subsample", "10", "--seed", seed, "--out", out,
            ],
        );
        fs::read_to_string(tmp.path().join(out).join("certify.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().to_string())
            .collect()
    };
    assert_eq!(ids("s1", "7"), ids("s2", "7"));
    assert_ne!(ids("s1", "7"), ids("s3", "8"));
}

#[test]
fn config_file_precedence_and_seed_fallback() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    fs::write(
        tmp.path().join("run.toml"),
        format!(
            "synth = \"{SYNTH}\"\ncheckpoint = \"tr/model.ckpt\"\nn = 300\nout = \"cf\"\n\n[certify]\nsigma2 = 0.05\nsubsample = 12\n\n[train]\nepochs = 99\n"
        ),
    )
    .unwrap();
    let resolved = || fs::read_to_string(tmp.path().join("cf/resolved_config.toml")).unwrap();

    // File values apply; the flag wins over the file.
    ok(tmp.path(), &["certify", "--config", "run.toml", "--n", "400"]);
    let r = resolved();
    assert!(r.contains("n = 400") && r.contains("sigma2 = 0.05") && r.contains("subsample = 12"), "{r}");
    assert!(r.contains("seed = 0"));

    // The environment supplies the seed only when neither flag nor file does.
    let env_run = |extra: &[&str]| {
        let mut args = vec!["certify", "--config", "run.toml"];
        args.extend(extra);
        let out = bin().current_dir(tmp.path()).env("SMOOTHCERT_SEED", "5").args(&args).output().unwrap();
        assert!(out.status.success());
        resolved()
    };
    assert!(env_run(&[]).contains("seed = 5"));
    assert!(env_run(&["--seed", "9"]).contains("seed = 9"));
    let mut text = fs::read_to_string(tmp.path().join("run.toml")).unwrap();
    text.insert_str(0, "seed = 11\n");
    fs::write(tmp.path().join("run.toml"), text).unwrap();
    assert!(env_run(&[]).contains("seed = 11"));

    // The recorded config replays the run exactly.
    fs::copy(tmp.path().join("cf/resolved_config.toml"), tmp.path().join("replay.toml")).unwrap();
    ok(tmp.path(), &["certify", "--config", "replay.toml", "--out", "cf2"]);
    assert_eq!(
        fs::read(tmp.path().join("cf/certify.csv")).unwrap(),
        fs::read(tmp.path().join("cf2/certify.csv")).unwrap()
    );

    fs::write(tmp.path().join("bad.toml"), "bogus = 1\n").unwrap();
    let out = run(tmp.path(), &["certify", "--config", "bad.toml"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    let args = ["certify", "--synth", SYNTH, "--checkpoint", "tr/model.ckpt", "--sigma2", "0.05", "--out", "cx"];
    let out = bin().current_dir(tmp.path()).env("SMOOTHCERT_SEED", "x").args(args).output().unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn help_lists_defaults() {
    let help = |sub: &str| String::from_utf8(bin().args([sub, "--help"]).output().unwrap().stdout).unwrap();
    let train = help("train");
    for d in ["[default: 30]", "[default: 256]", "[default: 0.1]", "[default: 0.9]", "[default: 0.12]", "[default: 10:10,20:10]"] {
        assert!(train.contains(d), "train --help lacks {d}");
    }
    let sigma = help("sigma");
    for d in ["[default: 0.02]", "[default: 50]"] {
        assert!(sigma.contains(d), "sigma --help lacks {d}");
    }
    let certify = help("certify");
    for d in ["[default: 100]", "[default: 100000]", "[default: 0.001]"] {
        assert!(certify.contains(d), "certify --help lacks {d}");
    }
    assert_eq!(bin().args(["certify", "--help"]).output().unwrap().status.code(), Some(0));
}

#[test]
fn sigma_prints_selection_and_writes_trace() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    let stdout = ok(
        tmp.path(),
        &[
            "sigma", "--synth", SYNTH, "--checkpoint", "tr/model.ckpt", "--samples", "8", "--grid-points", "10",
            "--tolerance", "0.05", "--full-scan", "--out", "sg",
        ],
    );
    let chosen: f64 = stdout.trim().parse().unwrap();
    let trace = fs::read_to_string(tmp.path().join("sg/sigma_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 11);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("sg/sigma.json")).unwrap()).unwrap();
    assert_eq!(json["sigma2"].as_f64(), Some(chosen));

    // The selection feeds straight into certify.
    ok(
        tmp.path(),
        &[
            "certify", "--synth", SYNTH, "--checkpoint", "tr/model.ckpt", "--sigma-file", "sg/sigma.json", "--n",
            "200", "--subsample", "5", "--out", "c",
        ],
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("c/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["sigma2_weight"].as_f64(), Some(chosen));
}

#[test]
fn sigma_on_fresh_random_weights_is_flagged() {
    // A freshly initialized wide network: even the smallest perturbation
    // reshuffles its arbitrary decision regions.
    let tmp = TempDir::new().unwrap();
    let model = MlpModel::init(&[2, 256, 256, 3], true, 1).unwrap();
    save_checkpoint(tmp.path().join("rand.ckpt"), &model, serde_json::Value::Null).unwrap();
    let out = run(
        tmp.path(),
        &[
            "sigma", "--synth", SYNTH, "--checkpoint", "rand.ckpt", "--samples", "20", "--grid-points", "10",
            "--grid-max", "1", "--tolerance", "0.001", "--out", "sg",
        ],
    );
    assert_eq!(code(&out), 0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("sg/sigma.json")).unwrap()).unwrap();
    assert_eq!(json["flagged"], true);
    assert_eq!(json["sigma2"].as_f64(), Some(0.1));
}

#[test]
fn bound_report_and_scaled_layer_monotonicity() {
    let tmp = TempDir::new().unwrap();
    let ckpt = trained(tmp.path());
    let (model, _) = load_checkpoint(&ckpt).unwrap();
    save_checkpoint(tmp.path().join("scaled.ckpt"), &model.with_scaled_layer(0, 2.0), serde_json::Value::Null).unwrap();
    let report = |ckpt: &str, out: &str| -> serde_json::Value {
        let text = ok(
            tmp.path(),
            &[
                "bound", "--synth", SYNTH, "--checkpoint", ckpt, "--gamma", "0.5", "--delta", "0.1", "--margin-loss",
                "0.2", "--pa", "0.9", "--pb", "0.1", "--out", out,
            ],
        );
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        let file: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join(out).join("bound.json")).unwrap()).unwrap();
        assert_eq!(parsed, file);
        parsed
    };
    let base = report("tr/model.ckpt", "b1");
    let scaled = report("scaled.ckpt", "b2");
    assert!(scaled["psi"].as_f64().unwrap() < base["psi"].as_f64().unwrap());
    assert!(scaled["phi"].as_f64().unwrap() > base["phi"].as_f64().unwrap());
    // Inputs are echoed.
    assert_eq!(base["inputs"]["gamma"].as_f64(), Some(0.5));
    assert_eq!(base["inputs"]["delta"].as_f64(), Some(0.1));
    assert_eq!(base["inputs"]["m"].as_u64(), Some(240));
    assert_eq!(base["inputs"]["d"].as_u64(), Some(3));
    assert_eq!(base["empirical_margin_loss"].as_f64(), Some(0.2));
    assert!(base["bound_value"].as_f64().unwrap() >= 0.2);
    assert!(base["eps_x"].as_f64().unwrap() > 0.0);

    let out = run(
        tmp.path(),
        &["bound", "--synth", SYNTH, "--checkpoint", "tr/model.ckpt", "--gamma", "0", "--out", "b3"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
}

#[test]
fn bound_estimates_margin_loss_when_not_given() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    let text = ok(
        tmp.path(),
        &["bound", "--synth", SYNTH, "--checkpoint", "tr/model.ckpt", "--margin-votes", "20", "--out", "b"],
    );
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let loss = v["empirical_margin_loss"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&loss));
    assert!(v["eps_x"].is_null());
}

#[test]
fn report_merges_runs_and_reinterpolates_mismatched_grids() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    for (out, max) in [("ca", "1.0"), ("cb", "1.5")] {
        ok(
            tmp.path(),
            &[
                "certify", "--synth", SYNTH, "--checkpoint", "tr/model.ckpt", "--sigma2", "0.04", "--n", "500",
                "--subsample", "20", "--radius-max", max, "--radius-steps", "10", "--out", out,
            ],
        );
    }
    ok(tmp.path(), &["report", "ca", "cb", "tr", "--out", "rp"]);
    let rp = tmp.path().join("rp");
    let curves = fs::read_to_string(rp.join("curves.csv")).unwrap();
    let mut lines = curves.lines();
    assert_eq!(lines.next(), Some("radius,ca,cb"));
    // Union of {0, 0.1, …, 1.0} and {0, 0.15, …, 1.5}.
    assert!(lines.count() > 11);
    assert!(fs::read_to_string(rp.join("notes.txt")).unwrap().contains("re-interpolated"));
    let trends = fs::read_to_string(rp.join("spectral_trends.csv")).unwrap();
    assert_eq!(trends.lines().count(), 1 + 4);
    let svg = fs::read_to_string(rp.join("curves.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);

    // A single input passes straight through.
    ok(tmp.path(), &["report", "ca", "--out", "single"]);
    let single = fs::read_to_string(tmp.path().join("single/curves.csv")).unwrap();
    let orig = fs::read_to_string(tmp.path().join("ca/curve.csv")).unwrap();
    assert_eq!(single.lines().skip(1).collect::<Vec<_>>(), orig.lines().skip(1).collect::<Vec<_>>());
    assert!(!tmp.path().join("single/notes.txt").exists());

    fs::create_dir(tmp.path().join("empty")).unwrap();
    assert_eq!(code(&run(tmp.path(), &["report", "empty", "--out", "r2"])), 2);
}
