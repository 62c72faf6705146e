use clap::{Parser, Subcommand};
use recnet::checkpoint::{load_checkpoint, ModelCheckpoint};
use recnet::config::{load_run_config, RunConfig};
use recnet::dataset::{
    read_caption_file, write_candidate_file, write_caption_file, CandidateRecord, CaptionRecord,
    Corpus, RawVideo,
};
use recnet::decoder::{beam_search, BeamOptions};
use recnet::error::{Error, Result};
use recnet::features::{read_feature_file, sample_frames, write_feature_file};
use recnet::model::{model_gradcheck, GradCheckConfig};
use recnet::reconstructor::Variant;
use recnet::synth::{generate_synthetic_dataset, SynthConfig};
use recnet::train::{
    lambda_sweep, resume_training, sweep_csv, train_stage1, train_stage2, TrainOptions,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Video captioner with a reconstruction regularizer: an attention LSTM
/// decoder over frame features, optionally fine-tuned against a global or
/// local feature reconstructor.
#[derive(Parser)]
#[command(name = "recnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (feature files + caption JSON-lines).
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        videos: usize,
        #[arg(long, default_value_t = 4)]
        concepts: usize,
        /// feature dimension
        #[arg(long, default_value_t = 10)]
        dim: usize,
    },
    /// Train stage 1 (encoder-decoder), stage 2 (joint), or both.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// 1, 2, or both
        #[arg(long, default_value = "both")]
        stage: String,
        /// continue an interrupted run from its latest checkpoint
        #[arg(long)]
        resume: bool,
    },
    /// Beam-decode captions for every feature file in a directory.
    Caption {
        #[arg(long)]
        checkpoint: PathBuf,
        /// directory of .recf feature files
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        /// captions JSON-lines output; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score candidate captions against references.
    Eval {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// metric report JSON output
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
    },
    /// Stage-2 sweeps over lambda values and seeds from a shared stage-1
    /// checkpoint.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// comma-separated lambda values
        #[arg(long)]
        lambdas: String,
        /// comma-separated seeds
        #[arg(long, default_value = "0")]
        seeds: String,
    },
    /// Finite-difference check of the full training loss on a tiny random
    /// model; exits 3 when the error exceeds 1e-4.
    Gradcheck {
        #[arg(long, default_value = "none")]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Synth {
            seed,
            out,
            videos,
            concepts,
            dim,
        } => {
            if videos == 0 || concepts == 0 || dim == 0 {
                return Err(Error::Config(
                    "videos, concepts and dim must all be positive".into(),
                ));
            }
            let cfg = SynthConfig {
                videos,
                concepts,
                feature_dim: dim,
                ..SynthConfig::default()
            };
            cmd_synth(seed, &out, &cfg)
        }
        Command::Train {
            config,
            stage,
            resume,
        } => {
            let cfg = load_run_config(&config)?;
            cmd_train(&cfg, &stage, resume)
        }
        Command::Caption {
            checkpoint,
            features,
            beam,
            out,
        } => {
            if beam == 0 {
                return Err(Error::Config("beam width must be at least 1".into()));
            }
            cmd_caption(&checkpoint, &features, beam, out.as_deref())
        }
        Command::Eval {
            candidates,
            references,
            out,
        } => cmd_eval(&candidates, &references, &out),
        Command::Sweep {
            config,
            lambdas,
            seeds,
        } => {
            let cfg = load_run_config(&config)?;
            let lambdas = parse_list::<f64>("lambdas", &lambdas)?;
            let seeds = parse_list::<u64>("seeds", &seeds)?;
            cmd_sweep(&cfg, &lambdas, &seeds)
        }
        Command::Gradcheck { variant, seed } => cmd_gradcheck(variant, seed),
    }
}

fn parse_list<T: std::str::FromStr>(name: &str, raw: &str) -> Result<Vec<T>> {
    let items: Vec<&str> = raw
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(Error::Config(format!("--{name} needs at least one value")));
    }
    items
        .into_iter()
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::Config(format!("--{name}: invalid value {s:?}")))
        })
        .collect()
}

fn cmd_synth(seed: u64, out: &Path, cfg: &SynthConfig) -> Result<u8> {
    let videos = generate_synthetic_dataset(seed, cfg)?;
    let features_dir = out.join("features");
    std::fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
    let mut records = Vec::with_capacity(videos.len());
    for v in &videos {
        write_feature_file(
            &features_dir.join(format!("{}.recf", v.video_id)),
            &v.features,
        )?;
        records.push(CaptionRecord {
            video_id: v.video_id.clone(),
            captions: v.captions.clone(),
        });
    }
    write_caption_file(&out.join("captions.jsonl"), &records)?;
    let manifest = serde_json::json!({
        "seed": seed,
        "config": cfg,
        "videos": videos.iter().map(|v| &v.video_id).collect::<Vec<_>>(),
    });
    recnet::util::atomic_write(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    println!("wrote {} videos under {}", videos.len(), out.display());
    Ok(0)
}

fn load_split(features_dir: &Path, captions_path: &Path) -> Result<Vec<RawVideo>> {
    let records = read_caption_file(captions_path)?;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let path = features_dir.join(format!("{}.recf", r.video_id));
        let features = read_feature_file(&path)?;
        out.push(RawVideo {
            video_id: r.video_id,
            features,
            captions: r.captions,
        });
    }
    Ok(out)
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let train = load_split(&cfg.train_features, &cfg.train_captions)?;
    let val = load_split(&cfg.val_features, &cfg.val_captions)?;
    Corpus::build(&train, &val, cfg.dims.frame_budget, cfg.vocab_min_count)
}

fn cmd_train(cfg: &RunConfig, stage: &str, resume: bool) -> Result<u8> {
    if !matches!(stage, "1" | "2" | "both") {
        return Err(Error::Config(format!(
            "--stage must be 1, 2 or both, got {stage:?}"
        )));
    }
    if (stage == "2" || stage == "both") && cfg.training.variant == Variant::None {
        return Err(Error::Config(
            "stage 2 needs variant = global or local".into(),
        ));
    }
    let corpus = load_corpus(cfg)?;
    let out_dir = &cfg.out_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    corpus.vocab.save(&out_dir.join("vocab.txt"))?;

    let stage1_best_path = out_dir.join("stage1_best.ckpt");
    let mut stage1_best: Option<ModelCheckpoint> = None;
    if stage == "1" || stage == "both" {
        let opts = TrainOptions {
            out_dir: Some(out_dir.clone()),
            tag: "stage1".into(),
            log: true,
            ..TrainOptions::default()
        };
        let result = if resume {
            let latest = load_resume_pair(out_dir, "stage1")?;
            check_resume_config(&latest.0.config, &cfg.training)?;
            resume_training(latest.0, latest.1, &corpus, &opts)?
        } else {
            let dims = cfg.model_dims(corpus.vocab.len());
            train_stage1(&corpus, dims, &cfg.training, &opts)?
        };
        println!(
            "stage 1 done: best epoch {} val_cider {:.4}",
            result.best.epoch,
            result.best.history.last().map_or(0.0, |r| r.val_cider)
        );
        stage1_best = Some(result.best);
    }
    if stage == "2" || stage == "both" {
        let opts = TrainOptions {
            out_dir: Some(out_dir.clone()),
            tag: "stage2".into(),
            log: true,
            ..TrainOptions::default()
        };
        let result = if resume && stage == "2" {
            let latest = load_resume_pair(out_dir, "stage2")?;
            check_resume_config(&latest.0.config, &cfg.training)?;
            resume_training(latest.0, latest.1, &corpus, &opts)?
        } else {
            let start = match stage1_best {
                Some(ckpt) => ckpt,
                None => {
                    if !stage1_best_path.exists() {
                        return Err(Error::Data(format!(
                            "stage 2 needs a stage-1 checkpoint at {}",
                            stage1_best_path.display()
                        )));
                    }
                    load_checkpoint(&stage1_best_path)?
                }
            };
            train_stage2(&start, &corpus, &cfg.training, &opts)?
        };
        println!(
            "stage 2 done: best epoch {} val_cider {:.4}",
            result.best.epoch,
            result.best.history.last().map_or(0.0, |r| r.val_cider)
        );
    }
    Ok(0)
}

fn load_resume_pair(
    out_dir: &Path,
    tag: &str,
) -> Result<(ModelCheckpoint, Option<ModelCheckpoint>)> {
    let latest_path = out_dir.join(format!("{tag}_latest.ckpt"));
    if !latest_path.exists() {
        return Err(Error::Data(format!(
            "nothing to resume: {} does not exist",
            latest_path.display()
        )));
    }
    let latest = load_checkpoint(&latest_path)?;
    let best_path = out_dir.join(format!("{tag}_best.ckpt"));
    let best = if best_path.exists() {
        Some(load_checkpoint(&best_path)?)
    } else {
        None
    };
    Ok((latest, best))
}

fn check_resume_config(
    stored: &recnet::train::TrainingConfig,
    current: &recnet::train::TrainingConfig,
) -> Result<()> {
    if stored != current {
        return Err(Error::Config(
            "resume config differs from the checkpoint's stored config".into(),
        ));
    }
    Ok(())
}

fn cmd_caption(
    checkpoint_path: &Path,
    features_dir: &Path,
    beam: usize,
    out: Option<&Path>,
) -> Result<u8> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(features_dir)
        .map_err(|e| Error::io(features_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "recf"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no .recf feature files under {}",
            features_dir.display()
        )));
    }
    let opts = BeamOptions {
        beam,
        max_len: ckpt.config.max_caption_len,
        length_normalize: ckpt.config.length_normalize,
    };
    let mut records = Vec::with_capacity(paths.len());
    for path in &paths {
        let raw = read_feature_file(path)?;
        if raw.dim != ckpt.dims.feature_dim {
            return Err(Error::Data(format!(
                "{}: feature dim {} does not match checkpoint dim {}",
                path.display(),
                raw.dim,
                ckpt.dims.feature_dim
            )));
        }
        let features = sample_frames(&raw, ckpt.dims.frame_budget)?;
        let seq = beam_search(&ckpt.params.decoder, &features, &opts)?;
        let caption = ckpt.vocab.detokenize(seq.ids());
        let video_id = path.file_stem().unwrap().to_string_lossy().into_owned();
        records.push(CandidateRecord { video_id, caption });
    }
    match out {
        Some(path) => {
            write_candidate_file(path, &records)?;
            println!("wrote {} captions to {}", records.len(), path.display());
        }
        None => {
            for r in &records {
                println!("{}", serde_json::to_string(r)?);
            }
        }
    }
    Ok(0)
}

fn cmd_eval(candidates: &Path, references: &Path, out: &Path) -> Result<u8> {
    let report = recnet::metrics::evaluate(candidates, references)?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    recnet::util::atomic_write(out, json.as_bytes())?;
    Ok(0)
}

fn cmd_sweep(cfg: &RunConfig, lambdas: &[f64], seeds: &[u64]) -> Result<u8> {
    if cfg.training.variant == Variant::None {
        return Err(Error::Config(
            "sweep needs variant = global or local".into(),
        ));
    }
    let corpus = load_corpus(cfg)?;
    let out_dir = &cfg.out_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let stage1_path = out_dir.join("stage1_best.ckpt");
    let stage1 = if stage1_path.exists() {
        load_checkpoint(&stage1_path)?
    } else {
        eprintln!("no stage-1 checkpoint found, training one first");
        let opts = TrainOptions {
            out_dir: Some(out_dir.clone()),
            tag: "stage1".into(),
            log: true,
            ..TrainOptions::default()
        };
        let dims = cfg.model_dims(corpus.vocab.len());
        train_stage1(&corpus, dims, &cfg.training, &opts)?.best
    };

    let rows = lambda_sweep(
        &stage1,
        &corpus,
        &cfg.training,
        cfg.training.variant,
        lambdas,
        seeds,
    )?;
    let csv = sweep_csv(&rows);
    let path = out_dir.join("sweep.csv");
    recnet::util::atomic_write(&path, csv.as_bytes())?;
    print!("{csv}");
    println!("# wrote {}", path.display());
    Ok(0)
}

fn cmd_gradcheck(variant: Variant, seed: u64) -> Result<u8> {
    let cfg = GradCheckConfig::default();
    let report = model_gradcheck(variant, seed, &cfg)?;
    let pass = report.max_rel_error < 1e-4;
    println!(
        "gradcheck variant={} seed={} params={} loss={:.6} max_rel_error={:.3e} => {}",
        variant,
        seed,
        report.param_count,
        report.loss,
        report.max_rel_error,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 3 })
}
