//! The `cdl` command line: `gen-data`, `train`, `eval` and `diagnose`.
//!
//! Each command loads and validates everything it needs (config, datasets,
//! checkpoint) before it creates the output directory, so a rejected run
//! leaves nothing behind.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::config::Config;
use crate::coupling::CorrelationMatrix;
use crate::data::{self, Dataset, SynthSpec};
use crate::eval::{self, EvalError, EvalReport, VariancePoint, VarianceStats};
use crate::ranking::normalize_rows;
use crate::trainer::{self, TrainLog, TrainState};
use crate::Error;

pub const TRAIN_FILE: &str = "train.txt";
pub const GALLERY_FILE: &str = "gallery.txt";
pub const PROBE_FILE: &str = "probe.txt";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const LOG_FILE: &str = "train_log.tsv";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "eval_report.txt";
pub const ROC_FILE: &str = "roc.csv";
pub const SIGMA_FILE: &str = "sigma_curve.csv";
pub const CORRELATION_FILE: &str = "correlation.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.txt";

#[derive(Debug, Parser)]
#[command(
    name = "cdl",
    version,
    about = "Coupled deep learning for cross-modal embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-modality dataset.
    GenData(GenDataArgs),
    /// Train a model, optionally resuming from a checkpoint.
    Train(TrainArgs),
    /// Score probe against gallery with a trained checkpoint.
    Eval(EvalArgs),
    /// Scatter statistics and head correlation of a checkpoint.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Debug, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file; built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<Config, Error> {
        let cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        Ok(match self.seed {
            Some(seed) => cfg.with_seed(seed),
            None => cfg,
        })
    }
}

#[derive(Clone, Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to resume from; training continues at its iteration.
    #[arg(long, conflicts_with = "warm_start")]
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint whose weights start a fresh schedule (for example a
    /// softmax-only pre-run).
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    /// Dataset directory holding `train.txt`; overrides `data.dir`.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory holding `gallery.txt` and `probe.txt`.
    #[arg(long, conflicts_with_all = ["gallery", "probe"])]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "probe")]
    pub gallery: Option<PathBuf>,
    #[arg(long, requires = "gallery")]
    pub probe: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory; gallery and probe are pooled.
    #[arg(long, conflicts_with = "dataset")]
    pub data: Option<PathBuf>,
    /// A single dataset file.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData(a) => {
            let cfg = a.config.load()?;
            let m = gen_data(&cfg, &a.out)?;
            eprintln!(
                "wrote {} train, {} gallery, {} probe rows to {} (raw rank-1 {:.3}, latent rank-1 {:.3})",
                m.rows.train,
                m.rows.gallery,
                m.rows.probe,
                a.out.display(),
                m.gap.raw_rank1,
                m.gap.latent_rank1
            );
        }
        Command::Train(a) => {
            let cfg = a.config.load()?;
            let train = match a.data.as_deref().or(cfg.data.dir.as_deref()) {
                Some(dir) => load(&dir.join(TRAIN_FILE), &cfg)?,
                None => data::generate(&cfg.data.synth)?.train,
            };
            let resume = match (&a.checkpoint, &a.warm_start) {
                (Some(p), _) => Some(checkpoint::load(p)?),
                (None, Some(p)) => Some(checkpoint::load(p)?.restart(cfg.heads)?),
                (None, None) => None,
            };
            let (state, _) = train_run(&cfg, &train, resume, &a.out, |line| eprintln!("{line}"))?;
            eprintln!(
                "trained to iteration {}; wrote {}",
                state.iteration,
                a.out.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Eval(a) => {
            let cfg = a.config.load()?;
            let state = checkpoint::load(&a.checkpoint)?;
            let (gallery, probe) = match (&a.gallery, &a.probe, a.data.as_deref()) {
                (Some(g), Some(p), _) => (load(g, &cfg)?, load(p, &cfg)?),
                (_, _, dir) => match dir.or(cfg.data.dir.as_deref()) {
                    Some(d) => (
                        load(&d.join(GALLERY_FILE), &cfg)?,
                        load(&d.join(PROBE_FILE), &cfg)?,
                    ),
                    None => {
                        let s = data::generate(&cfg.data.synth)?;
                        (s.gallery, s.probe)
                    }
                },
            };
            let report = evaluate(&cfg, &state, &gallery, &probe, &a.out)?;
            print!("{}", report.to_text());
        }
        Command::Diagnose(a) => {
            let cfg = a.config.load()?;
            let state = checkpoint::load(&a.checkpoint)?;
            let dataset = match (&a.dataset, a.data.as_deref().or(cfg.data.dir.as_deref())) {
                (Some(f), _) => load(f, &cfg)?,
                (None, Some(d)) => {
                    load(&d.join(GALLERY_FILE), &cfg)?.concat(&load(&d.join(PROBE_FILE), &cfg)?)?
                }
                (None, None) => {
                    let s = data::generate(&cfg.data.synth)?;
                    s.gallery.concat(&s.probe)?
                }
            };
            let d = diagnose(&cfg, &state, &dataset, &a.out)?;
            print!("{}", d.to_text());
        }
    }
    Ok(())
}

fn load(path: &Path, cfg: &Config) -> Result<Dataset, Error> {
    Ok(data::load_dataset(path, cfg.data.dataset_format())?)
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RowCounts {
    pub train: usize,
    pub gallery: usize,
    pub probe: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub raw_rank1: f64,
    pub latent_rank1: f64,
}

/// Contents of `manifest.toml`.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub seed: u64,
    pub synth: SynthSpec,
    pub rows: RowCounts,
    pub gap: GapReport,
}

/// Writes `train.txt`, `gallery.txt`, `probe.txt` and `manifest.toml`.
pub fn gen_data(cfg: &Config, out: &Path) -> Result<Manifest, Error> {
    let synth = data::generate(&cfg.data.synth)?;
    let manifest = Manifest {
        seed: cfg.seed,
        synth: cfg.data.synth.clone(),
        rows: RowCounts {
            train: synth.train.len(),
            gallery: synth.gallery.len(),
            probe: synth.probe.len(),
        },
        gap: GapReport {
            raw_rank1: synth.gap.raw_rank1,
            latent_rank1: synth.gap.latent_rank1,
        },
    };
    create_dir(out)?;
    for (name, ds) in [
        (TRAIN_FILE, &synth.train),
        (GALLERY_FILE, &synth.gallery),
        (PROBE_FILE, &synth.probe),
    ] {
        ds.save(&out.join(name))?;
    }
    let text = toml::to_string(&manifest).expect("manifest serializes");
    write(&out.join(MANIFEST_FILE), &text)?;
    Ok(manifest)
}

/// Trains on `train` (from `resume` when given, else a fresh
/// initialization) and writes the final checkpoint, periodic
/// `checkpoint-<iteration>.txt` files, the log and the effective config.
/// `progress` receives warnings and periodic status lines.
pub fn train_run(
    cfg: &Config,
    train: &Dataset,
    resume: Option<TrainState>,
    out: &Path,
    mut progress: impl FnMut(String),
) -> Result<(TrainState, TrainLog), Error> {
    let state = match resume {
        Some(s) => s,
        None => TrainState::init(&cfg.net.layers, train.class_count(), cfg.heads, cfg.seed)?,
    };
    trainer::check_compatible(&state, train, &cfg.trainer)?;
    create_dir(out)?;
    write(&out.join(CONFIG_FILE), &cfg.to_toml())?;

    let every = cfg.trainer.checkpoint_every;
    let status_every = (cfg.trainer.iterations / 20).max(1);
    let (state, log) = trainer::fit_with(state, train, &cfg.trainer, |s, report| {
        for w in &report.warnings {
            progress(format!("iteration {}: {w}", report.iteration));
        }
        if s.iteration % status_every == 0 {
            progress(format!("iteration {}: {}", report.iteration, report.parts));
        }
        if every > 0 && s.iteration % every == 0 {
            checkpoint::save(s, &out.join(format!("checkpoint-{}.txt", s.iteration)))?;
        }
        Ok::<(), Error>(())
    })?;
    checkpoint::save(&state, &out.join(CHECKPOINT_FILE))?;
    write(&out.join(LOG_FILE), &log.to_tsv())?;
    Ok((state, log))
}

fn check_width(what: &'static str, state: &TrainState, ds: &Dataset) -> Result<(), Error> {
    if ds.input_dim() != state.net.input_dim() {
        return Err(Error::Mismatch {
            what,
            expected: state.net.input_dim(),
            actual: ds.input_dim(),
        });
    }
    Ok(())
}

/// Embeds both sets with the trunk, writes `eval_report.txt` and `roc.csv`.
pub fn evaluate(
    cfg: &Config,
    state: &TrainState,
    gallery: &Dataset,
    probe: &Dataset,
    out: &Path,
) -> Result<EvalReport, Error> {
    if probe.is_empty() {
        return Err(EvalError::EmptyProbe.into());
    }
    check_width("gallery feature width", state, gallery)?;
    check_width("probe feature width", state, probe)?;
    let g = state.net.embed(&gallery.features())?;
    let p = state.net.embed(&probe.features())?;
    let report = EvalReport::from_embeddings(
        &p,
        probe.labels(),
        &g,
        gallery.labels(),
        &cfg.eval.far_points,
    )?;
    create_dir(out)?;
    write(&out.join(REPORT_FILE), &report.to_text())?;
    write(&out.join(ROC_FILE), &report.roc_csv())?;
    Ok(report)
}

/// Output of [`diagnose`].
#[derive(Clone, Debug)]
pub struct Diagnostics {
    pub samples: usize,
    pub classes: usize,
    pub normalized: bool,
    pub sigma: VarianceStats,
    pub curve: Vec<VariancePoint>,
    pub correlation: CorrelationMatrix,
}

impl Diagnostics {
    pub fn to_text(&self) -> String {
        format!(
            "# cdl-diagnostics v1\n\
             samples = {}\n\
             classes = {}\n\
             normalized = {}\n\
             sigma_intra = {}\n\
             sigma_inter = {}\n\
             correlation_cross_block_mean = {}\n\
             correlation_off_diagonal_median = {}\n",
            self.samples,
            self.classes,
            self.normalized,
            self.sigma.intra,
            self.sigma.inter,
            self.correlation.cross_block_diagonal_mean(),
            self.correlation.off_diagonal_median(),
        )
    }
}

/// Scatter statistics of `dataset` in embedding space and the correlation
/// matrix of the stacked heads. Writes `sigma_curve.csv`,
/// `correlation.csv` and `diagnostics.txt`.
pub fn diagnose(
    cfg: &Config,
    state: &TrainState,
    dataset: &Dataset,
    out: &Path,
) -> Result<Diagnostics, Error> {
    check_width("dataset feature width", state, dataset)?;
    let raw = state.net.embed(&dataset.features())?;
    let emb = if cfg.eval.normalize_embeddings {
        if let Some(i) = (0..raw.rows()).find(|&i| raw.row(i).iter().all(|&v| v == 0.0)) {
            return Err(EvalError::ZeroNorm {
                set: "dataset",
                index: i,
            }
            .into());
        }
        normalize_rows(&raw).0
    } else {
        raw
    };
    let labels = dataset.labels();
    let norm = cfg.eval.inter_normalization;
    let sigma = eval::variance_analysis(&emb, &labels, norm)?;
    let curve = eval::variance_curve(&emb, &labels, &cfg.eval.sigma_dims, norm)?;
    let correlation = state.heads.correlation_matrix();
    let d = Diagnostics {
        samples: dataset.len(),
        classes: dataset.identities().len(),
        normalized: cfg.eval.normalize_embeddings,
        sigma,
        curve,
        correlation,
    };
    create_dir(out)?;
    write(&out.join(SIGMA_FILE), &eval::sigma_csv(&d.curve))?;
    write(
        &out.join(CORRELATION_FILE),
        &eval::correlation_csv(&d.correlation),
    )?;
    write(&out.join(DIAGNOSTICS_FILE), &d.to_text())?;
    Ok(d)
}
