use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use symgnn_core::autodiff::Tensor;
use symgnn_core::data::{Dataset, MotionSample};
use symgnn_core::evaluate::{evaluate, parse_metrics, EvalOptions, Loaded};
use symgnn_core::synth::{synth_generate, SynthConfig};
use symgnn_core::training::{bone_sample, infer, train, TrainConfig};
use symgnn_core::verify::{run_suite, Suite};

#[derive(Parser)]
#[command(name = "symgnn", version, about = "Joint action recognition and motion prediction on skeletons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    GenData {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 0.02)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the train split of a dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lambda_fixed: Option<f64>,
        #[arg(long)]
        label_noise: Option<f64>,
        #[arg(long)]
        target_noise: Option<f64>,
        #[arg(long)]
        dual_bone: bool,
    },
    /// Report metrics on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "top1,top5,pck")]
        metrics: String,
        #[arg(long, default_value_t = 1.0)]
        observe_ratio: f64,
    },
    /// Roll out future frames for every sample and save them as a dataset.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        teacher_labels: bool,
    },
    /// Write the inferred actional graph of one sample as CSV.
    ExportGraph {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: usize,
        #[arg(long)]
        out: PathBuf,
        /// Dataset to read the sample from; defaults to the training data
        /// recorded in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the built-in numerical checks.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// A failed self-check, reported with exit code 2.
#[derive(Debug)]
struct VerificationFailed(usize);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} check(s) failed", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("SYMGNN_SEED") {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("SYMGNN_SEED={s} is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

fn seed_or_env(seed: Option<u64>) -> Result<u64> {
    Ok(match seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let ds = Dataset::load(dir)?;
    ds.validate()?;
    Ok(ds)
}

fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let has_seed = value.get("model").and_then(|m| m.get("seed")).is_some();
    let mut config: TrainConfig =
        serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))?;
    if !has_seed {
        if let Some(s) = env_seed()? {
            config.model.seed = s;
        }
    }
    Ok(config)
}

/// Loads a checkpoint and, for a joint model, the `bone.ckpt` saved beside it.
fn load_pair(path: &Path) -> Result<(Loaded, Option<Loaded>)> {
    let joint = Loaded::from_checkpoint(path)?;
    let sibling = path.with_file_name("bone.ckpt");
    let bone = if !joint.meta.bone_dual && sibling.exists() && sibling != path {
        Some(Loaded::from_checkpoint(&sibling)?)
    } else {
        None
    };
    Ok((joint, bone))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { seed, classes, per_class, sigma, out } => {
            let config = SynthConfig::new(seed_or_env(seed)?, classes, per_class, sigma)?;
            let ds = synth_generate(&config)?;
            ds.save(&out)?;
            println!("wrote {} samples to {}", ds.samples.len(), out.display());
        }
        Command::Train { config, data, out, lambda_fixed, label_noise, target_noise, dual_bone } => {
            let mut cfg = load_train_config(&config)?;
            if lambda_fixed.is_some() {
                cfg.lambda_fixed = lambda_fixed;
            }
            if let Some(r) = label_noise {
                cfg.label_noise = r;
            }
            if let Some(r) = target_noise {
                cfg.target_noise = r;
            }
            cfg.dual_bone |= dual_bone;
            let ds = load_dataset(&data)?;
            fs::create_dir_all(&out)?;
            let mut log = BufWriter::new(fs::File::create(out.join("train_log.jsonl"))?);
            let trained = train(&ds, &cfg, &mut log)?;
            log.flush()?;
            let data_dir = fs::canonicalize(&data).unwrap_or(data).display().to_string();
            let mut meta = trained.meta.clone();
            meta.data_dir = Some(data_dir.clone());
            trained.joint.checkpoint(&meta)?.save(out.join("joint.ckpt"))?;
            if let (Some(b), Some(bm)) = (&trained.bone, &trained.bone_meta) {
                let mut bm = bm.clone();
                bm.data_dir = Some(data_dir);
                b.checkpoint(&bm)?.save(out.join("bone.ckpt"))?;
            }
            let summary = serde_json::json!({
                "epochs": trained.epochs,
                "truncated": trained.truncated,
                "config": cfg,
            });
            fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
            if let Some(last) = trained.epochs.last() {
                println!(
                    "trained {} epochs: L_recg {:.4}, L_pred {:.4}, lambda {:.3}",
                    trained.epochs.len(),
                    last.l_recg,
                    last.l_pred,
                    last.lambda_star
                );
            }
        }
        Command::Eval { checkpoint, data, metrics, observe_ratio } => {
            let (joint, bone) = load_pair(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let opts = EvalOptions { metrics: parse_metrics(&metrics)?, observe_ratio, ..EvalOptions::default() };
            let report = evaluate(&joint, bone.as_ref(), &ds, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Predict { checkpoint, data, horizon, out, teacher_labels } => {
            if horizon == 0 {
                bail!("horizon must be at least 1");
            }
            let loaded = Loaded::from_checkpoint(&checkpoint)?;
            let mut ds = load_dataset(&data)?;
            if loaded.meta.bone_dual {
                let skeleton = ds.skeleton.clone();
                ds = Dataset {
                    skeleton: loaded.meta.skeleton.clone(),
                    classes: ds.classes.clone(),
                    samples: ds.samples.iter().map(|s| bone_sample(s, &skeleton)).collect::<Result<_, _>>()?,
                };
            }
            if ds.skeleton != loaded.meta.skeleton {
                bail!("dataset skeleton does not match the checkpoint skeleton");
            }
            let mut outds = Dataset::new(ds.skeleton.clone(), ds.classes.clone());
            // one batch per observed length
            let mut lengths: Vec<usize> = ds.samples.iter().map(|s| s.prev.shape()[0]).collect();
            lengths.sort_unstable();
            lengths.dedup();
            let mut preds: Vec<Option<MotionSample>> = vec![None; ds.samples.len()];
            for len in lengths {
                let idx: Vec<usize> = (0..ds.samples.len()).filter(|&i| ds.samples[i].prev.shape()[0] == len).collect();
                let prev: Vec<_> = idx.iter().map(|&i| &ds.samples[i].prev).collect();
                let labels: Vec<usize> = idx.iter().map(|&i| ds.samples[i].label).collect();
                let teacher = teacher_labels.then_some(labels.as_slice());
                let (_, pred) = infer(&loaded.model, &loaded.store, &prev, horizon, 32, teacher)?;
                let pred = pred.expect("positive horizon");
                let per = pred.len() / idx.len();
                for (k, &i) in idx.iter().enumerate() {
                    let s = &ds.samples[i];
                    let clip = Tensor::new(
                        &[horizon, s.prev.shape()[1], s.prev.shape()[2]],
                        pred.data()[k * per..(k + 1) * per].to_vec(),
                    )?;
                    preds[i] = Some(MotionSample { pred: clip, ..s.clone() });
                }
            }
            outds.samples = preds.into_iter().map(|p| p.expect("every sample predicted")).collect();
            outds.save(&out)?;
            println!("wrote {} predicted clips to {}", outds.samples.len(), out.display());
        }
        Command::ExportGraph { checkpoint, sample, out, data } => {
            let loaded = Loaded::from_checkpoint(&checkpoint)?;
            let dir = match data.or_else(|| loaded.meta.data_dir.clone().map(PathBuf::from)) {
                Some(d) => d,
                None => bail!("checkpoint records no dataset; pass --data"),
            };
            let ds = load_dataset(&dir)?;
            let Some(s) = ds.samples.get(sample) else {
                bail!("sample {sample} out of range for {} samples", ds.samples.len());
            };
            let clip = if loaded.meta.bone_dual { bone_sample(s, &ds.skeleton)?.prev } else { s.prev.clone() };
            let store = loaded.store.cast::<f64>();
            let a = loaded.model.backbone.agim.graph_of(&store, &clip)?;
            let m = a.shape()[0];
            let mut w = BufWriter::new(fs::File::create(&out)?);
            for row in a.data().chunks(m) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            w.flush()?;
            println!("wrote {m}x{m} actional graph to {}", out.display());
        }
        Command::Verify { suite, trials, seed } => {
            let suite: Suite = suite.parse().map_err(anyhow::Error::msg)?;
            let checks = run_suite(suite, trials, seed_or_env(seed)?)?;
            let mut failed = 0;
            for c in &checks {
                println!(
                    "{:<6} {:<32} trials={:<6} failures={:<4} worst={:.3e}",
                    if c.passed() { "PASS" } else { "FAIL" },
                    c.name,
                    c.trials,
                    c.failures,
                    c.worst
                );
                failed += usize::from(!c.passed());
            }
            if failed > 0 {
                return Err(VerificationFailed(failed).into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap's own usage-error code (2) is reserved for failed checks
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<VerificationFailed>() => {
            eprintln!("verification failed: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
