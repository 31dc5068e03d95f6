//! `mosa` command-line tool: generate synthetic datasets, train, run
//! inference, and evaluate scene graph predictions.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure. Log level comes from `MOSA_LOG_LEVEL` (error|warn|info|debug).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mosa_core::config::PipelineConfig;
use mosa_core::datagen::synth_video;
use mosa_core::error::{Error, Result};
use mosa_core::eval::{evaluate_triples, rank_triples, ConstraintMode};
use mosa_core::io;
use mosa_core::model::{
    frame_predictions, Dataset, EmbeddingMatrix, EmbeddingSource, ModelConfig, RelationModel,
};
use mosa_core::nn::checkpoint;
use mosa_core::scene::SceneGraphTriple;

#[derive(Parser)]
#[command(
    name = "mosa",
    about = "Motion-guided dynamic scene graph generation",
    version
)]
struct Cli {
    /// Pipeline configuration file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the seed from the config (applies to synthesis and training).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Disable a component (repeatable). Disabling mfe also disables mim.
    #[arg(long, global = true, value_enum)]
    ablate: Vec<AblateArg>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblateArg {
    Mfe,
    Mim,
    Asm,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    With,
    No,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset files.
    Synth,
    /// Train a model on the dataset files and write a checkpoint.
    Train,
    /// Run inference with a checkpoint and dump ranked triples.
    Infer {
        /// Ranking mode for the dump; defaults to the eval config's mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Score a prediction dump against ground truth.
    Eval,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("MOSA_LOG_LEVEL", "info"),
    )
    .format_timestamp(None)
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    for a in &cli.ablate {
        match a {
            AblateArg::Mfe => {
                cfg.ablation.use_mfe = false;
                cfg.ablation.use_mim = false;
            }
            AblateArg::Mim => cfg.ablation.use_mim = false,
            AblateArg::Asm => cfg.ablation.use_asm = false,
        }
    }
    cfg.validate()?;

    match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Infer { mode } => cmd_infer(&cfg, mode.map(|m| match m {
            ModeArg::With => ConstraintMode::With,
            ModeArg::No => ConstraintMode::No,
        })),
        Command::Eval => cmd_eval(&cfg),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn cmd_synth(cfg: &PipelineConfig) -> Result<()> {
    let data = synth_video(&cfg.synth)?;
    for p in [
        &cfg.paths.detections,
        &cfg.paths.embeddings,
        &cfg.paths.vocabulary,
        &cfg.paths.gt_graph,
    ] {
        ensure_parent(p)?;
    }
    io::write_detections(&cfg.paths.detections, &data.videos)?;
    io::write_embeddings(&cfg.paths.embeddings, &data.embeddings.z)?;
    io::write_vocabulary(&cfg.paths.vocabulary, &data.vocabulary)?;
    io::write_gt(&cfg.paths.gt_graph, &data.gt)?;
    log::info!(
        "wrote {} videos, {} ground-truth frames, {} predicates",
        data.videos.len(),
        data.gt.frames.len(),
        data.vocabulary.num_predicates()
    );
    Ok(())
}

fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let videos = io::read_detections(&cfg.paths.detections)?;
    let vocabulary = io::read_vocabulary(&cfg.paths.vocabulary)?;
    let gt = io::read_gt(&cfg.paths.gt_graph)?;
    let z = io::read_embeddings(&cfg.paths.embeddings)?;
    // structural validation against the vocabulary and feature dimension
    for v in &videos {
        for frame in &v.frames {
            for det in &frame.detections {
                det.validate(
                    vocabulary.num_object_categories(),
                    Some(cfg.net.visual_dim),
                )
                .map_err(|e| {
                    Error::data(format!(
                        "video '{}' frame {}: {e}",
                        v.video_id, frame.frame_index
                    ))
                })?;
            }
        }
    }
    Ok(Dataset {
        videos,
        gt,
        vocabulary,
        embeddings: EmbeddingMatrix {
            z,
            source: EmbeddingSource::Ingested,
        },
    })
}

#[derive(Serialize)]
struct TrainLogEntry {
    epoch: usize,
    loss: f64,
}

#[derive(Serialize)]
struct TrainLog {
    epochs: Vec<TrainLogEntry>,
    final_loss: f64,
}

fn model_config(cfg: &PipelineConfig, data: &Dataset) -> ModelConfig {
    cfg.model_config(
        data.vocabulary.num_predicates(),
        data.vocabulary.num_object_categories(),
    )
}

fn cmd_train(cfg: &PipelineConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let mcfg = model_config(cfg, &data);
    let mut model = RelationModel::new(mcfg.clone(), cfg.train.seed)?;
    let outcome = model.train(&data, &cfg.train, &cfg.loss, cfg.eval.task)?;

    ensure_parent(&cfg.paths.checkpoint)?;
    checkpoint::save(
        &cfg.paths.checkpoint,
        &model.params,
        serde_json::to_value(&mcfg)?,
    )?;
    ensure_parent(&cfg.paths.train_log)?;
    let log = TrainLog {
        epochs: outcome
            .epoch_losses
            .iter()
            .enumerate()
            .map(|(epoch, &loss)| TrainLogEntry { epoch, loss })
            .collect(),
        final_loss: outcome.final_loss(),
    };
    std::fs::write(
        &cfg.paths.train_log,
        serde_json::to_string_pretty(&log)? + "\n",
    )?;
    log::info!(
        "trained {} epochs, final loss {:.6}, checkpoint at {}",
        cfg.train.epochs,
        outcome.final_loss(),
        cfg.paths.checkpoint.display()
    );
    Ok(())
}

fn load_model(cfg: &PipelineConfig, data: &Dataset) -> Result<RelationModel> {
    let (params, stored) = checkpoint::load(&cfg.paths.checkpoint)?;
    let stored_cfg: ModelConfig = serde_json::from_value(stored)
        .map_err(|e| Error::CheckpointMismatch(format!("unreadable stored config: {e}")))?;
    let expected = model_config(cfg, data);
    if stored_cfg != expected {
        return Err(Error::CheckpointMismatch(
            "checkpoint was trained with a different model configuration".into(),
        ));
    }
    RelationModel::from_parts(stored_cfg, params, cfg.train.seed)
}

fn cmd_infer(cfg: &PipelineConfig, mode: Option<ConstraintMode>) -> Result<()> {
    let data = load_dataset(cfg)?;
    let model = load_model(cfg, &data)?;
    let mode = mode.unwrap_or(cfg.eval.mode);

    let mut dump: BTreeMap<(String, usize), Vec<SceneGraphTriple>> = BTreeMap::new();
    for video in &data.videos {
        let frames = frame_predictions(&model, video, Some(&data.embeddings), cfg.eval.task)?;
        for frame in frames {
            let ranked = rank_triples(&frame, mode)?;
            dump.insert(
                (video.video_id.clone(), frame.frame_index),
                ranked.into_iter().map(|r| r.triple).collect(),
            );
        }
    }
    ensure_parent(&cfg.paths.predictions)?;
    io::write_predictions(&cfg.paths.predictions, &dump)?;
    log::info!(
        "wrote {} prediction frames to {}",
        dump.len(),
        cfg.paths.predictions.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &PipelineConfig) -> Result<()> {
    let triples = io::read_predictions(&cfg.paths.predictions)?;
    let gt = io::read_gt(&cfg.paths.gt_graph)?;
    let report = evaluate_triples(&triples, &gt, &cfg.eval)?;
    let json = serde_json::to_string_pretty(&report)?;
    ensure_parent(&cfg.paths.report)?;
    std::fs::write(&cfg.paths.report, json.clone() + "\n")?;
    println!("{json}");
    Ok(())
}
