use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use motionseg::ablation::{run_ablation, AblationAxis};
use motionseg::config::ExperimentConfig;
use motionseg::pipeline::{evaluate_state, run_stage2, tune, tuning_provider};
use motionseg::synth::{generate_dataset, load_dataset, save_dataset, DatasetSpec, VideoClip};
use motionseg::trainer::{
    build_refinement_targets, load_checkpoint, load_clips, save_checkpoint, train_stage1, write_loss_csv,
    RunOptions, TrainState, TrainingData,
};
use motionseg::tuner::sweep_num_channels;
use motionseg::{Error, Result};

#[derive(Parser)]
#[command(name = "motionseg", version, about = "Motion-supervised video object segmentation")]
struct Cli {
    /// Seed for data generation, initialization and batch sampling
    /// (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with ground-truth flow and masks.
    Generate {
        /// Dataset spec (TOML).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train stage 1, stage 2 or both.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Dataset directory (defaults to the config's data section).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output checkpoint.
        #[arg(long, default_value = "checkpoint.json")]
        out: PathBuf,
        /// Directory for cached refinement targets.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Write the loss history as CSV.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Select the object channel, or sweep the number of channels.
    Tune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Train a fresh stage-1 model per channel count and compare them.
        #[arg(long, value_delimiter = ',')]
        sweep_channels: Option<Vec<usize>>,
        /// Score only the first frame of each clip.
        #[arg(long)]
        first_frame_only: bool,
        /// Report file (JSON; a .txt table is written beside it).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build and cache the frozen stage-2 targets.
    RefineTargets {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        no_semantic_constraint: bool,
        #[arg(long, default_value = "target-cache")]
        cache_dir: PathBuf,
    },
    /// Mean Jaccard of the object channel against ground truth.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Dense CRF at image resolution before thresholding.
        #[arg(long)]
        post_crf: bool,
        #[arg(long)]
        report: PathBuf,
        /// Exit nonzero when a report invariant fails.
        #[arg(long)]
        strict: bool,
    },
    /// Train and evaluate every variant along one ablation axis.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        axis: AblationAxis,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Training seeds (the dataset stays fixed).
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "ablation.json")]
        report: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut c = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn clips_for(config: &ExperimentConfig, data: Option<&Path>) -> Result<Vec<VideoClip>> {
    match data {
        Some(d) => load_dataset(d),
        None => load_clips(config),
    }
}

fn opts(out: &Path) -> RunOptions {
    RunOptions {
        dump_dir: out.parent().map(Path::to_path_buf),
        log_every: 100,
    }
}

fn run(cli: Cli) -> Result<bool> {
    let seed = cli.seed;
    match cli.command {
        Command::Generate { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Error::io(&spec, e))?;
            let spec: DatasetSpec = toml::from_str(&text)?;
            let clips = generate_dataset(&spec, seed.unwrap_or(0))?;
            save_dataset(&clips, &out)?;
            println!("wrote {} clips to {}", clips.len(), out.display());
        }
        Command::Train {
            config,
            stage,
            resume,
            data,
            out,
            cache_dir,
            loss_csv,
        } => {
            let mut state = match &resume {
                Some(p) => {
                    let mut s = load_checkpoint(p)?;
                    if let Some(path) = &config {
                        let mut c = load_config(Some(path), seed.or(Some(s.config.seed)))?;
                        c.net = s.config.net.clone();
                        s.config = c;
                    } else if let Some(sd) = seed {
                        s.config.seed = sd;
                    }
                    s
                }
                None => TrainState::new(load_config(config.as_deref(), seed)?)?,
            };
            let clips = clips_for(&state.config, data.as_deref())?;
            let td = TrainingData::new(clips, &state.config.net, state.config.train.forward_only)?;
            let o = opts(&out);
            if matches!(stage, StageArg::One | StageArg::All) {
                train_stage1(&mut state, &td, &o)?;
                let rep = tune(&mut state, &td.clips)?;
                info!("object channel {}", rep.selected_channel);
                save_checkpoint(&mut state, &out)?;
            }
            if matches!(stage, StageArg::Two | StageArg::All) {
                if state.object_channel.is_none() {
                    return Err(Error::ObjectChannelUnset);
                }
                let semantic = state.config.flags.semantic_constraint;
                run_stage2(&mut state, &td, semantic, cache_dir.as_deref(), &o)?;
                save_checkpoint(&mut state, &out)?;
            }
            if let Some(p) = loss_csv {
                write_loss_csv(&state.history, p)?;
            }
            println!(
                "stage 1: {} iters, stage 2: {} iters, object channel {:?} -> {}",
                state.stage1_iter,
                state.stage2_iter,
                state.object_channel,
                out.display()
            );
        }
        Command::Tune {
            ckpt,
            data,
            sweep_channels,
            first_frame_only,
            report,
        } => {
            let mut state = load_checkpoint(&ckpt)?;
            if let Some(s) = seed {
                state.config.seed = s;
            }
            if first_frame_only {
                state.config.tuner.first_frame_only = true;
            }
            let clips = clips_for(&state.config, data.as_deref())?;
            match sweep_channels {
                Some(cands) => {
                    let base = state.config.clone();
                    let td_clips = clips.clone();
                    let provider = tuning_provider(&base);
                    let rep = sweep_num_channels(
                        &cands,
                        |c| {
                            let mut cfg = base.clone();
                            cfg.net.num_channels = c;
                            let mut st = TrainState::new(cfg)?;
                            let td = TrainingData::new(td_clips.clone(), &st.config.net, st.config.train.forward_only)?;
                            train_stage1(&mut st, &td, &RunOptions::default())?;
                            Ok(st.model)
                        },
                        &clips,
                        provider.as_ref(),
                        &base.tuner,
                    )?;
                    print!("{}", rep.to_text());
                    if let Some(p) = report {
                        rep.save(p)?;
                    }
                }
                None => {
                    let rep = tune(&mut state, &clips)?;
                    print!("{}", rep.to_text());
                    if let Some(p) = report {
                        rep.save(p)?;
                    }
                    save_checkpoint(&mut state, &ckpt)?;
                }
            }
        }
        Command::RefineTargets {
            ckpt,
            data,
            no_semantic_constraint,
            cache_dir,
        } => {
            let mut state = load_checkpoint(&ckpt)?;
            if let Some(s) = seed {
                state.config.seed = s;
            }
            let clips = clips_for(&state.config, data.as_deref())?;
            let td = TrainingData::new(clips, &state.config.net, state.config.train.forward_only)?;
            let semantic = !no_semantic_constraint && state.config.flags.semantic_constraint;
            let t = build_refinement_targets(&mut state, &td, semantic, Some(&cache_dir))?;
            println!(
                "targets {} ({}) for object channel {} in {}",
                &t.key[..16],
                if t.from_cache { "cached" } else { "computed" },
                t.object_channel,
                cache_dir.display()
            );
        }
        Command::Eval {
            ckpt,
            data,
            post_crf,
            report,
            strict,
        } => {
            let mut state = load_checkpoint(&ckpt)?;
            if let Some(s) = seed {
                state.config.seed = s;
            }
            let clips = clips_for(&state.config, data.as_deref())?;
            let rep = evaluate_state(&mut state, &clips, post_crf)?;
            rep.save(&report)?;
            print!("{}", rep.to_text());
            let bad = rep.check_invariants();
            for b in &bad {
                eprintln!("invariant failed: {b}");
            }
            if strict && !bad.is_empty() {
                return Ok(false);
            }
        }
        Command::Ablate {
            config,
            axis,
            data,
            seeds,
            report,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let clips = clips_for(&cfg, data.as_deref())?;
            let rep = run_ablation(&cfg, clips, axis, &seeds, &opts(&report))?;
            rep.save(&report)?;
            print!("{}", rep.to_text());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
