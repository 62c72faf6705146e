//! End-to-end checks of the command-line surface: synth, train, caption,
//! eval, sweep, gradcheck, and the exit-code contract (0 ok, 1 usage/config,
//! 2 data, 3 check failure).

use std::path::Path;
use std::process::{Command, Output};

fn recnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, expect: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(expect),
        "{what}: expected exit {expect}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    let body = format!(
        "profile = desk\n\
         train_features = data/features\n\
         train_captions = data/captions.jsonl\n\
         val_features = data/features\n\
         val_captions = data/captions.jsonl\n\
         out_dir = runs\n\
         batch_size = 8\n\
         max_epochs = 2\n\
         patience = 2\n\
         beam = 1\n\
         seed = 3\n\
         {extra}"
    );
    std::fs::write(&path, body).unwrap();
    path
}

fn synth(dir: &Path, seed: u64) {
    let out = recnet(
        &[
            "synth",
            "--seed",
            &seed.to_string(),
            "--out",
            "data",
            "--videos",
            "6",
        ],
        dir,
    );
    assert_code(&out, 0, "synth");
}

#[test]
fn synth_is_deterministic_and_validates_flags() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), 5);
    synth(b.path(), 5);
    for rel in [
        "data/captions.jsonl",
        "data/manifest.json",
        "data/features/vid0000.recf",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(rel)).unwrap(),
            std::fs::read(b.path().join(rel)).unwrap(),
            "{rel} differs between identical seeds"
        );
    }
    let c = tempfile::tempdir().unwrap();
    synth(c.path(), 6);
    assert_ne!(
        std::fs::read(a.path().join("data/features/vid0000.recf")).unwrap(),
        std::fs::read(c.path().join("data/features/vid0000.recf")).unwrap()
    );

    let out = recnet(
        &["synth", "--seed", "1", "--out", "x", "--videos", "0"],
        a.path(),
    );
    assert_code(&out, 1, "synth with zero videos");

    // default flags produce the 16-video dataset
    let out = recnet(&["synth", "--seed", "1", "--out", "dflt"], a.path());
    assert_code(&out, 0, "synth defaults");
    let n = std::fs::read_dir(a.path().join("dflt/features"))
        .unwrap()
        .count();
    assert_eq!(n, 16);
}

#[test]
fn train_caption_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 9);
    write_config(dir.path(), "variant = global\nlambda = 0.2\n");

    let out = recnet(
        &["train", "--config", "run.cfg", "--stage", "both"],
        dir.path(),
    );
    assert_code(&out, 0, "train both stages");
    for file in [
        "runs/stage1_best.ckpt",
        "runs/stage1_latest.ckpt",
        "runs/stage1_log.csv",
        "runs/stage2_best.ckpt",
        "runs/stage2_log.csv",
        "runs/vocab.txt",
    ] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("runs/stage1_log.csv")).unwrap();
    assert!(csv.starts_with("epoch,nll,rec_loss,val_cider\n"));

    // captions are deterministic across runs
    for target in ["cand_a.jsonl", "cand_b.jsonl"] {
        let out = recnet(
            &[
                "caption",
                "--checkpoint",
                "runs/stage2_best.ckpt",
                "--features",
                "data/features",
                "--beam",
                "2",
                "--out",
                target,
            ],
            dir.path(),
        );
        assert_code(&out, 0, "caption");
    }
    assert_eq!(
        std::fs::read(dir.path().join("cand_a.jsonl")).unwrap(),
        std::fs::read(dir.path().join("cand_b.jsonl")).unwrap()
    );

    let out = recnet(
        &[
            "eval",
            "--candidates",
            "cand_a.jsonl",
            "--references",
            "data/captions.jsonl",
            "--out",
            "report.json",
        ],
        dir.path(),
    );
    assert_code(&out, 0, "eval");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let keys: Vec<&String> = report.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["bleu4", "cider", "per_video_cider", "rougeL"]);

    // self-evaluation: candidates drawn from the references score 1.0
    let refs: Vec<serde_json::Value> =
        std::fs::read_to_string(dir.path().join("data/captions.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
    let self_cands: String = refs
        .iter()
        .map(|r| {
            serde_json::json!({
                "video_id": r["video_id"],
                "caption": r["captions"][0]
            })
            .to_string()
        })
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(dir.path().join("self.jsonl"), self_cands).unwrap();
    let out = recnet(
        &[
            "eval",
            "--candidates",
            "self.jsonl",
            "--references",
            "data/captions.jsonl",
        ],
        dir.path(),
    );
    assert_code(&out, 0, "self eval");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("\"bleu4\": 1.0"),
        "self-eval bleu4 != 1.0: {text}"
    );
}

#[test]
fn stage2_without_stage1_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2);
    write_config(dir.path(), "variant = local\nlambda = 0.1\n");
    let out = recnet(
        &["train", "--config", "run.cfg", "--stage", "2"],
        dir.path(),
    );
    assert_code(&out, 2, "stage 2 without stage 1");
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage-1 checkpoint"));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2);

    write_config(dir.path(), "variant = global\n"); // lambda missing
    let out = recnet(
        &["train", "--config", "run.cfg", "--stage", "1"],
        dir.path(),
    );
    assert_code(&out, 1, "missing lambda");

    write_config(dir.path(), "mystery_knob = 5\n");
    let out = recnet(
        &["train", "--config", "run.cfg", "--stage", "1"],
        dir.path(),
    );
    assert_code(&out, 1, "unknown key");
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery_knob"));

    write_config(dir.path(), "");
    let out = recnet(
        &["train", "--config", "run.cfg", "--stage", "9"],
        dir.path(),
    );
    assert_code(&out, 1, "bad stage flag");

    let out = recnet(
        &["sweep", "--config", "run.cfg", "--lambdas", ""],
        dir.path(),
    );
    assert_code(&out, 1, "empty lambda list");

    let out = recnet(
        &["train", "--config", "run.cfg", "--stage", "1", "--resume"],
        dir.path(),
    );
    assert_code(&out, 2, "resume without a latest checkpoint");
}

#[test]
fn caption_rejects_mismatched_feature_dims() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 4);
    write_config(dir.path(), "");
    let out = recnet(
        &["train", "--config", "run.cfg", "--stage", "1"],
        dir.path(),
    );
    assert_code(&out, 0, "train stage 1");

    let out = recnet(
        &[
            "synth", "--seed", "4", "--out", "other", "--videos", "3", "--dim", "7",
        ],
        dir.path(),
    );
    assert_code(&out, 0, "synth with dim 7");
    let out = recnet(
        &[
            "caption",
            "--checkpoint",
            "runs/stage1_best.ckpt",
            "--features",
            "other/features",
        ],
        dir.path(),
    );
    assert_code(&out, 2, "dim mismatch");
    assert!(String::from_utf8_lossy(&out.stderr).contains("feature dim"));
}

#[test]
fn eval_reports_misaligned_ids() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cands.jsonl"),
        "{\"video_id\": \"a\", \"caption\": \"a cat sits\"}\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("refs.jsonl"),
        "{\"video_id\": \"a\", \"captions\": [\"a cat sits\"]}\n\
         {\"video_id\": \"b\", \"captions\": [\"a dog runs\"]}\n",
    )
    .unwrap();
    let out = recnet(
        &[
            "eval",
            "--candidates",
            "cands.jsonl",
            "--references",
            "refs.jsonl",
        ],
        dir.path(),
    );
    assert_code(&out, 2, "id mismatch");
    assert!(String::from_utf8_lossy(&out.stderr).contains('b'));
}

#[test]
fn gradcheck_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    for variant in ["none", "global", "local"] {
        let out = recnet(
            &["gradcheck", "--variant", variant, "--seed", "0"],
            dir.path(),
        );
        assert_code(&out, 0, &format!("gradcheck {variant}"));
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("PASS"), "{text}");
    }
    let out = recnet(&["gradcheck", "--variant", "bogus"], dir.path());
    assert_code(&out, 1, "bad variant");
}

#[test]
fn sweep_writes_the_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 11);
    write_config(dir.path(), "variant = global\nlambda = 0.2\n");
    let out = recnet(
        &[
            "sweep",
            "--config",
            "run.cfg",
            "--lambdas",
            "0,0.2",
            "--seeds",
            "1,2",
        ],
        dir.path(),
    );
    assert_code(&out, 0, "sweep");
    let csv = std::fs::read_to_string(dir.path().join("runs/sweep.csv")).unwrap();
    assert!(csv.starts_with("lambda,seed,variant,bleu4,rougeL,cider,nll,rec_loss\n"));
    assert_eq!(csv.lines().count(), 5);
}
