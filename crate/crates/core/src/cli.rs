//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::check::{end_to_end_gradcheck, small_config, GRADCHECK_TOLERANCE};
use crate::checkpoint;
use crate::config::{load_train_config, to_text};
use crate::data::{generate_dataset, mask_to_bytes, save_pgm, Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::lora::param_budget;
use crate::model::Model;
use crate::protocols::{
    episodes_csv, evaluate_with_masks, limited_data_study, support_sweep, task_diversity_study, PromptPolicy, SweepReport,
};
use crate::train::{train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "lseg", version, about = "Prompted segmentation with low-rank adapters on a frozen ViT")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// `key=value` training configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// root seed (overrides the config)
    #[arg(long)]
    pub seed: Option<u64>,
    /// output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct PromptArgs {
    /// foreground clicks per prompt set
    #[arg(long, default_value_t = 1)]
    pub k_points: usize,
    /// add a loosened bounding box
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub with_box: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset directory
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        num_tasks: usize,
        #[arg(long, default_value_t = 16)]
        examples_per_task: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
    },
    /// Train and write `checkpoint.lseg`
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint on every image of a dataset
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        prompts: PromptArgs,
        /// also write each thresholded prediction as `masks/<task_id>/pred_<n>.pgm`
        #[arg(long)]
        save_masks: bool,
    },
    /// Dice against the number of prompt draws per query
    SweepSupport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[command(flatten)]
        prompts: PromptArgs,
    },
    /// Mean and variance of Dice over random labeled subsets
    LimitedData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[command(flatten)]
        prompts: PromptArgs,
    },
    /// Held-out Dice against the fraction of training tasks
    Diversity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        heldout: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,1.0")]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        models_per_fraction: usize,
        #[command(flatten)]
        prompts: PromptArgs,
    },
    /// Finite-difference check of the end-to-end loss gradient
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        coords: usize,
    },
    /// Trainable and frozen parameter counts
    Params {
        #[command(flatten)]
        common: Common,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) => EXIT_USAGE,
        Error::NonFiniteLoss { .. } | Error::GradCheck(_) | Error::Tensor(_) => EXIT_NUMERIC,
        Error::Data(_)
        | Error::Pgm { .. }
        | Error::Manifest(_)
        | Error::Io { .. }
        | Error::Lookup(_)
        | Error::EmptyForeground => EXIT_DATA,
    }
}

fn train_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_train_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn policy(p: &PromptArgs, cfg: &TrainConfig) -> PromptPolicy {
    PromptPolicy {
        k_points: p.k_points,
        with_box: p.with_box,
        box_offset_frac: cfg.box_offset_frac,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_report(out: &Path, report: &SweepReport) -> Result<()> {
    report.write(out)?;
    println!("{}", report.to_csv().trim_end());
    Ok(())
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            num_tasks,
            examples_per_task,
            image_size,
        } => {
            let spec = DatasetSpec {
                root_seed: common.seed.unwrap_or(0),
                num_tasks,
                examples_per_task,
                image_size,
            };
            let ds = generate_dataset(&spec)?;
            ds.save(&common.out)?;
            println!(
                "wrote {} tasks, {} examples to {}",
                ds.tasks.len(),
                ds.num_examples(),
                common.out.display()
            );
        }
        Command::Train { common, data } => {
            let cfg = train_config(&common)?;
            let ds = Dataset::load(&data)?;
            let mut log = String::from("step,loss\n");
            let outcome = train(&cfg, &ds, |step, loss| {
                println!("step {step:>6}  loss {loss:.6}");
                log.push_str(&format!("{step},{loss:.9}\n"));
            })?;
            fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            checkpoint::save(&outcome.model, &common.out.join("checkpoint.lseg"))?;
            write(&common.out.join("train_log.csv"), &log)?;
            write(&common.out.join("train_config.txt"), &to_text(&cfg))?;
            let json = serde_json::json!({
                "steps": cfg.steps,
                "final_loss": outcome.losses.last().copied(),
                "first_loss": outcome.losses.first().copied(),
            });
            write(&common.out.join("report.json"), &serde_json::to_string_pretty(&json).expect("json"))?;
        }
        Command::Eval {
            common,
            checkpoint: ck,
            data,
            prompts,
            save_masks,
        } => {
            let cfg = train_config(&common)?;
            let model = checkpoint::load(&ck)?;
            let ds = Dataset::load(&data)?;
            let (rows, masks): (Vec<_>, Vec<_>) =
                evaluate_with_masks(&model, &ds, &policy(&prompts, &cfg), cfg.seed)?.into_iter().unzip();
            if save_masks {
                for (r, m) in rows.iter().zip(&masks) {
                    let dir = common.out.join("masks").join(&r.task_id);
                    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    save_pgm(&mask_to_bytes(m), &dir.join(format!("pred_{}.pgm", r.image_id)))?;
                }
            }
            write(&common.out.join("episodes.csv"), &episodes_csv(&rows))?;
            let n = rows.len() as f64;
            let mean = |f: fn(&crate::metrics::MetricRecord) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
            let asd = crate::metrics::mean_defined(rows.iter().map(|r| r.metrics.asd));
            let json = serde_json::json!({
                "images": rows.len(),
                "mean_dice": mean(|m| m.dice),
                "mean_jaccard": mean(|m| m.jaccard),
                "mean_asd": asd,
            });
            write(&common.out.join("report.json"), &serde_json::to_string_pretty(&json).expect("json"))?;
            println!("{}", serde_json::to_string(&json).expect("json"));
        }
        Command::SweepSupport {
            common,
            checkpoint: ck,
            data,
            n_list,
            replicates,
            prompts,
        } => {
            let cfg = train_config(&common)?;
            let model = checkpoint::load(&ck)?;
            let ds = Dataset::load(&data)?;
            let sweep = support_sweep(&model, &ds, &n_list, replicates, &policy(&prompts, &cfg), cfg.seed)?;
            write(&common.out.join("episodes_single.csv"), &episodes_csv(&sweep.single))?;
            write(&common.out.join("episodes_ensemble.csv"), &episodes_csv(&sweep.ensembled))?;
            write_report(&common.out, &sweep.report)?;
        }
        Command::LimitedData {
            common,
            checkpoint: ck,
            data,
            n_list,
            replicates,
            prompts,
        } => {
            let cfg = train_config(&common)?;
            let model = checkpoint::load(&ck)?;
            let ds = Dataset::load(&data)?;
            let report = limited_data_study(&model, &ds, &n_list, replicates, &policy(&prompts, &cfg), cfg.seed)?;
            write_report(&common.out, &report)?;
        }
        Command::Diversity {
            common,
            data,
            heldout,
            fractions,
            models_per_fraction,
            prompts,
        } => {
            let cfg = train_config(&common)?;
            let pool = Dataset::load(&data)?;
            let held = Dataset::load(&heldout)?;
            let study = task_diversity_study(
                &cfg,
                &pool,
                &held,
                &fractions,
                models_per_fraction,
                &policy(&prompts, &cfg),
                cfg.seed,
            )?;
            let mut runs = String::from("fraction,model,num_tasks,mean_dice\n");
            for r in &study.runs {
                runs.push_str(&format!("{},{},{},{:.6}\n", r.fraction, r.model_index, r.tasks.len(), r.mean_dice));
            }
            write(&common.out.join("diversity_runs.csv"), &runs)?;
            write_report(&common.out, &study.report)?;
        }
        Command::Gradcheck { common, coords } => {
            let cfg = train_config(&common)?;
            let mut worst = 0.0f64;
            for loose in [false, true] {
                let report = end_to_end_gradcheck(&small_config(loose), cfg.seed, coords)?;
                for p in &report.params {
                    println!("{:<28} {:>3} coords  max rel err {:.3e}", p.name, p.coords, p.max_rel_err);
                }
                worst = worst.max(report.max_rel_err());
            }
            println!("max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e})");
            if !(worst < GRADCHECK_TOLERANCE) {
                return Err(Error::GradCheck(worst));
            }
        }
        Command::Params { common } => {
            let cfg = train_config(&common)?;
            let b = param_budget(&cfg.encoder);
            let measured = Model::new(cfg.encoder, cfg.init_seed())?;
            println!("trainable {}", b.trainable_count);
            println!("frozen {}", b.frozen_count);
            println!("trainable_fraction {:.6}", b.trainable_fraction);
            println!("bypass_trainable {}", b.bypass_trainable);
            println!("prompt_trainable {}", b.prompt_trainable);
            println!("decoder_trainable {}", b.decoder_trainable);
            println!("encoder_frozen {}", b.encoder_frozen);
            println!("measured_trainable {}", measured.params.trainable_count());
            println!("measured_frozen {}", measured.params.frozen_count());
        }
    }
    Ok(())
}

/// Parses `argv`, runs the command and maps the outcome to an exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
