use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use flowvc::conversion::{batch_convert, read_pairs};
use flowvc::evaluation::{
    conversion_metrics, metrics_table, mushra_report, mushra_table, read_mushra_manifest, read_wer_manifest, to_json,
    wer_aggregate, wer_table,
};
use flowvc::features::{generate_corpus, read_corpus, GroundTruth, SpeakerTable, SynthSpec};
use flowvc::flow::FlowConfig;
use flowvc::priors::{phoneme_separation, pretrain_phoneme_prior, write_pretrain_history_csv, EncoderConfig, PretrainConfig};
use flowvc::training::{
    checkpoint_path, corpus_bits_per_dim, diagonal_gaussian_bits_per_dim, initial_model, load_encoder, load_model,
    save_encoder, save_model, train, write_history_csv, ModelMode, TrainConfig, TrainData, TrainState,
};

const SPEAKERS_FILE: &str = "speakers.json";
const TRUTH_FILE: &str = "truth.json";
const HISTORY_FILE: &str = "loss_history.csv";
const ENCODER_FILE: &str = "encoder.fckp";

#[derive(Parser)]
#[command(name = "flowvc", about = "Conditional normalizing flows for voice attribute conversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-speaker corpus with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON generator settings; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pre-train the variational phoneme encoder used by the free-pretrain prior.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a flow by maximum likelihood.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: ModelMode,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert utterances to target speakers.
    Convert {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// CSV `utterance_id,target_speaker`.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluation reports.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Word error rate per system from `utterance_id,system_id,reference,hypothesis`.
    Wer {
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Listening-score aggregation and significance from `screen_id,system_id,listener_id,score`.
    Mushra {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Oracle speaker, phoneme and f0 scores of a converted synthetic corpus.
    ConvertMetrics {
        #[arg(long)]
        converted: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<ModelMode, String> {
    ModelMode::parse(s).map_err(|e| e.to_string())
}

/// Settings file of the `train` subcommand.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainFile {
    flow: FlowConfig,
    encoder: EncoderConfig,
    train: TrainConfig,
    /// Pre-trained encoder; relative paths resolve against the settings file.
    encoder_checkpoint: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_json_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn load_corpus(dir: &Path) -> Result<(Vec<flowvc::features::Utterance>, SpeakerTable)> {
    let utts = read_corpus(dir)?;
    let speakers = SpeakerTable::read(&dir.join(SPEAKERS_FILE))?;
    Ok((utts, speakers))
}

fn emit<T: Serialize>(table: String, report: &T, json: Option<&Path>) -> Result<()> {
    print!("{table}");
    if let Some(p) = json {
        fs::write(p, to_json(report) + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, config, seed } => {
            let mut spec: SynthSpec = read_json_or_default(config.as_deref())?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let g = generate_corpus(&spec)?;
            flowvc::features::write_corpus(&out, &g.utterances)?;
            g.speakers.write(&out.join(SPEAKERS_FILE))?;
            g.truth.write(&out.join(TRUTH_FILE))?;
            let frames: usize = g.utterances.iter().map(|u| u.frames()).sum();
            println!("wrote {} utterances ({frames} frames) to {}", g.utterances.len(), out.display());
        }
        Command::Pretrain { corpus, config, out, seed } => {
            let mut cfg: PretrainConfig = read_json_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (utts, speakers) = load_corpus(&corpus)?;
            let (enc, history) = pretrain_phoneme_prior(&utts, &speakers, &cfg)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            save_encoder(&out.join(ENCODER_FILE), &enc)?;
            write_pretrain_history_csv(&out.join("pretrain_history.csv"), &history)?;
            let sep = phoneme_separation(&enc, &utts)?;
            println!(
                "encoder written to {}; phoneme separation: min between {:.4}, max within {:.4}",
                out.join(ENCODER_FILE).display(),
                sep.min_between,
                sep.max_within_std
            );
        }
        Command::Train { corpus, mode, config, out, seed } => {
            let mut settings: TrainFile = read_json(&config)?;
            settings.train.seed = seed;
            let pretrained = match &settings.encoder_checkpoint {
                Some(p) => {
                    let p = if p.is_relative() { config.parent().unwrap_or(Path::new(".")).join(p) } else { p.clone() };
                    Some(load_encoder(&p)?)
                }
                None => None,
            };
            let (utts, speakers) = load_corpus(&corpus)?;
            let mut model = initial_model(mode, &settings.flow, &settings.encoder, pretrained, seed)?;
            let data = TrainData::new(utts, &speakers, mode)?;
            let mut state = TrainState::new(&model);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            train(&mut model, &mut state, &data, &settings.train, |m, s| {
                save_model(&checkpoint_path(&out, s.step), m, Some(s))
            })?;
            write_history_csv(&out.join(HISTORY_FILE), &state.history)?;
            let bpd = corpus_bits_per_dim(&model, &data)?;
            let base = diagonal_gaussian_bits_per_dim(&data.utterances, settings.flow.squeeze_factor)?;
            println!(
                "{} steps in {mode} mode: {bpd:.4} bits/dim (diagonal Gaussian baseline {base:.4}); checkpoint {}",
                state.step,
                checkpoint_path(&out, state.step).display()
            );
        }
        Command::Convert { checkpoint, corpus, pairs, out } => {
            let (model, _) = load_model(&checkpoint)?;
            let (utts, speakers) = load_corpus(&corpus)?;
            let requests = read_pairs(&pairs)?;
            let rows = batch_convert(&model, &utts, &speakers, &requests, &out)?;
            speakers.write(&out.join(SPEAKERS_FILE))?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            println!("converted {} of {} requests into {}", rows.len() - failed, rows.len(), out.display());
            if failed > 0 {
                bail!("{failed} conversion requests failed; see the manifest");
            }
        }
        Command::Eval { command } => match command {
            EvalCommand::Wer { manifest, json } => {
                let systems = wer_aggregate(&read_wer_manifest(&manifest)?)?;
                emit(wer_table(&systems), &systems, json.as_deref())?;
            }
            EvalCommand::Mushra { manifest, alpha, json } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    bail!("alpha must lie in (0, 1), got {alpha}");
                }
                let report = mushra_report(&read_mushra_manifest(&manifest)?, alpha)?;
                emit(mushra_table(&report), &report, json.as_deref())?;
            }
            EvalCommand::ConvertMetrics { converted, truth, json } => {
                let utts = read_corpus(&converted)?;
                let truth = GroundTruth::read(&truth)?;
                let m = conversion_metrics(&utts, &truth)?;
                emit(metrics_table(&m), &m, json.as_deref())?;
            }
        },
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
