mod common;

use std::fs;
use std::path::Path;

use common::{cli, cli_ok, s, TINY_TRAIN_TOML};
use lai_fusion::cli::{sidecar, RunManifest, RUN_MANIFEST_FILE};
use lai_fusion::dataio::{load_tilepack, save_tilepack, Split};
use lai_fusion::model::load_params;
use lai_fusion::tensor::OpKind;

fn gen(out: &Path, extra: &[&str]) {
    let mut args = vec![
        "gen-data",
        "--seed",
        "3",
        "--tile-size",
        "16",
        "--n-train",
        "6",
        "--n-eval",
        "3",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    cli_ok(&args);
}

#[test]
fn gen_data_writes_four_packs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gen(&a, &[]);
    gen(&b, &[]);
    let train = load_tilepack(a.join("train")).unwrap();
    assert_eq!(train.samples.len(), 6);
    assert_eq!(train.tile_size, 16);
    for split in Split::EVAL {
        let pack = load_tilepack(a.join(split.name())).unwrap();
        assert_eq!(pack.split, split);
        assert_eq!(pack.samples.len(), 3);
    }
    for split in ["train", "non_cloudy", "cloudy", "unique_areas"] {
        for f in [
            "manifest.json",
            "s1.bin",
            "s2_lai.bin",
            "masks.bin",
            "target.bin",
        ] {
            let (x, y) = (a.join(split).join(f), b.join(split).join(f));
            assert_eq!(
                fs::read(&x).unwrap(),
                fs::read(&y).unwrap(),
                "{}",
                x.display()
            );
        }
    }
    let manifest = RunManifest::read(&a.join(RUN_MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.seed, Some(3));
    assert_eq!(manifest.artifacts.len(), 4);
}

#[test]
fn invalid_cloud_fraction_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let r = cli(&["gen-data", "--cloud-fraction", "1.5", "--out", s(&out)]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("cloud"), "{}", r.stderr);
    assert!(!out.exists());
}

#[test]
fn gradcheck_lists_every_op_once_and_passes() {
    let r = cli_ok(&["gradcheck", "--seeds", "1"]);
    for kind in OpKind::ALL {
        let n = r
            .stdout
            .lines()
            .filter(|l| l.split_whitespace().next() == Some(kind.name()))
            .count();
        assert_eq!(n, 1, "{} in\n{}", kind.name(), r.stdout);
    }
    assert!(r.stdout.contains("combined_loss_model"));
}

#[test]
fn corrupted_conv_backward_fails_naming_conv2d() {
    let r = cli(&["gradcheck", "--seeds", "1", "--corrupt-op", "conv2d"]);
    assert_eq!(r.code, 1, "{}", r.stdout);
    let last = r.stdout.lines().last().unwrap();
    assert!(
        last.starts_with("gradcheck FAILED") && last.contains("conv2d"),
        "{last}"
    );
}

fn parse_metrics(stdout: &str) -> (f64, f64) {
    let last = stdout.lines().last().unwrap();
    let mut it = last
        .split_whitespace()
        .map(|kv| kv.split_once('=').unwrap().1.parse::<f64>().unwrap());
    (it.next().unwrap(), it.next().unwrap())
}

#[test]
fn eval_on_own_predictions_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, &[]);
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY_TRAIN_TOML).unwrap();
    let ckpt = dir.path().join("enc1");
    cli_ok(&[
        "pretrain",
        "--encoder",
        "1",
        "--data",
        s(&data),
        "--out",
        s(&ckpt),
        "--config",
        s(&cfg),
        "--max-steps",
        "2",
    ]);

    // Fixture: targets replaced by the checkpoint's own predictions.
    let loaded = load_params(&ckpt).unwrap();
    let pack_dir = data.join("non_cloudy");
    let mut pack = load_tilepack(&pack_dir).unwrap();
    let refs: Vec<_> = pack.samples.iter().collect();
    let preds = loaded.predict(&refs).unwrap();
    for (sample, p) in pack.samples.iter_mut().zip(preds) {
        sample.lai_target = p;
    }
    let fixture = dir.path().join("fixture");
    save_tilepack(&fixture, &pack).unwrap();

    let r = cli_ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&fixture)]);
    assert_eq!(parse_metrics(&r.stdout), (0.0, 1.0), "{}", r.stdout);

    // The untouched pack gives an imperfect but finite score.
    let report = dir.path().join("eval.csv");
    let r = cli_ok(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&data),
        "--out",
        s(&report),
    ]);
    let (rmse, r2) = parse_metrics(&r.stdout);
    assert!(rmse > 0.0 && rmse.is_finite() && r2 < 1.0, "{}", r.stdout);
    assert!(report.is_file() && sidecar(&report).is_file());
}

#[test]
fn corrupt_inputs_map_to_format_and_io_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, &[]);
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY_TRAIN_TOML).unwrap();
    let ckpt = dir.path().join("enc2");
    cli_ok(&[
        "pretrain",
        "--encoder",
        "2",
        "--data",
        s(&data),
        "--out",
        s(&ckpt),
        "--config",
        s(&cfg),
        "--max-steps",
        "1",
    ]);

    let target = data.join("cloudy").join("target.bin");
    let bytes = fs::read(&target).unwrap();
    fs::write(&target, &bytes[..bytes.len() - 4]).unwrap();
    let r = cli(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&data),
        "--split",
        "cloudy",
    ]);
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert!(r.stderr.contains("target"), "{}", r.stderr);

    let r = cli(&[
        "eval",
        "--ckpt",
        s(&dir.path().join("missing")),
        "--data",
        s(&data),
    ]);
    assert_eq!(r.code, 3, "{}", r.stderr);

    let r = cli(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&data),
        "--split",
        "sunny",
    ]);
    assert_eq!(r.code, 2, "{}", r.stderr);
}

#[test]
fn pipeline_runs_end_to_end_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let (data, tiny, enc1, enc2, full) =
        (p("data"), p("tiny.toml"), p("enc1"), p("enc2"), p("full"));
    let (ablation, mlr) = (p("ablation.csv"), p("mlr.csv"));
    gen(&data, &[]);
    fs::write(&tiny, TINY_TRAIN_TOML).unwrap();
    let flags = ["--config", s(&tiny), "--seed", "5"];
    let with_flags = |args: &[&str]| {
        let mut v = args.to_vec();
        v.extend_from_slice(&flags);
        cli_ok(&v)
    };

    for (enc, out) in [("1", &enc1), ("2", &enc2)] {
        with_flags(&[
            "pretrain",
            "--encoder",
            enc,
            "--data",
            s(&data),
            "--out",
            s(out),
        ]);
        assert!(out.join("train_log.jsonl").is_file());
    }
    let r = with_flags(&[
        "train",
        "--enc1",
        s(&enc1),
        "--enc2",
        s(&enc2),
        "--data",
        s(&data),
        "--out",
        s(&full),
    ]);
    assert!(r.stdout.contains("steps="), "{}", r.stdout);
    cli_ok(&[
        "eval",
        "--ckpt",
        s(&full),
        "--data",
        s(&data),
        "--split",
        "unique_areas",
    ]);

    let r = with_flags(&["ablate", "--data", s(&data), "--out", s(&ablation)]);
    assert!(r.stdout.contains("s1_masks_seas"), "{}", r.stdout);
    let csv = fs::read_to_string(&ablation).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6 * 3, "{csv}");

    cli_ok(&["baseline", "--data", s(&data), "--out", s(&mlr)]);
    assert!(p("mlr.coefficients.json").is_file());

    // Replaying the recorded fine-tune run regenerates identical parameters.
    let before = fs::read(full.join("params.bin")).unwrap();
    let recorded = p("full_run.json");
    fs::copy(full.join(RUN_MANIFEST_FILE), &recorded).unwrap();
    fs::remove_dir_all(&full).unwrap();
    cli_ok(&["replay", s(&recorded)]);
    assert_eq!(fs::read(full.join("params.bin")).unwrap(), before);
}
