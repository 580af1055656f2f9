//! Command-line surface: synth, train, decode, retrieve, eval, mask, report.
//!
//! Exit-code contract: 0 success, 2 usage/config error, 3 data error,
//! 4 numeric divergence. Every command is deterministic given (config, seed).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::{ConfigError, ExperimentConfig};
use crate::data::{self, Split, SynthSpec};
use crate::decoder::{
    self, generate_beam, DecoderError, LmTrainState, TokenSequence, Vocabulary,
};
use crate::eval;
use crate::math::{read_matrix, MathError, Matrix};
use crate::persist::{self, LogRow, Summary};
use crate::pipeline::{
    self, apply_mask, read_caption_jsonl, select_voxels, CaptionRecord, FeatureDatabase,
    PipelineError, RankedCaption, VoxelMask,
};
use crate::regressors::{
    self, ae_pretrain, dnn_fit, mlp_fit, ridge_fit, EpochMse, RegressorError, Standardizer,
};
use crate::report;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<data::DataError> for CliError {
    fn from(e: data::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<persist::PersistError> for CliError {
    fn from(e: persist::PersistError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MathError> for CliError {
    fn from(e: MathError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RegressorError> for CliError {
    fn from(e: RegressorError) -> Self {
        match e {
            RegressorError::Diverged { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DecoderError> for CliError {
    fn from(e: DecoderError) -> Self {
        match e {
            DecoderError::Diverged { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<eval::EvalError> for CliError {
    fn from(e: eval::EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<report::ReportError> for CliError {
    fn from(e: report::ReportError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "neurocap", version, about = "Brain-to-caption decoding pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory with planted ground truth.
    Synth(SynthArgs),
    /// Train a model and write checkpoint, log CSV, and JSON summary.
    Train(TrainArgs),
    /// Decode captions from brain vectors (or directly from features).
    Decode(DecodeArgs),
    /// Nearest-neighbor retrieval in feature space under MSE.
    Retrieve(RetrieveArgs),
    /// Score candidate captions against reference sets.
    Eval(EvalArgs),
    /// Build a voxel mask from a per-voxel score file.
    Mask(MaskArgs),
    /// Render training logs and metric reports as SVG plots.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CommonConfig {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CommonConfig {
    fn load(&self) -> Result<(ExperimentConfig, u64), CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let seed = cfg.seed;
        Ok((cfg, seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    PaperScaleRatio,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonConfig,
    /// Output dataset directory (must not exist).
    #[arg(long)]
    pub out: PathBuf,
    /// Number of training samples; overrides the config.
    #[arg(long = "n")]
    pub n_train: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainKind {
    Ridge,
    Mlp3,
    Dnn5,
    Lm,
    Ae,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonConfig,
    #[arg(value_enum)]
    pub kind: TrainKind,
    /// Dataset directory produced by `synth` (or laid out the same way).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for model.ckpt, log.csv, summary.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Autoencoder-stack checkpoint for dnn5 initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Continue training from a checkpoint written by this command.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Override the configured epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// word2vec-format text file seeding the embedding table (lm only).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub common: CommonConfig,
    /// Language-model checkpoint.
    #[arg(long)]
    pub lm: PathBuf,
    /// Regressor checkpoint; omit to decode feature vectors directly.
    #[arg(long)]
    pub regressor: Option<PathBuf>,
    /// Brain-vector matrix file (rows are samples); needs --regressor.
    #[arg(long, conflicts_with = "features")]
    pub brain: Option<PathBuf>,
    /// Feature matrix file (rows are samples); bypasses the regressor.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Voxel-mask index file applied to each brain vector.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// N-best beam width; 1 is greedy.
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub allow_unk: bool,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Query feature matrix (rows are queries).
    #[arg(long)]
    pub query: PathBuf,
    /// Feature database matrix.
    #[arg(long)]
    pub db: PathBuf,
    #[arg(short, long, default_value_t = 3)]
    pub k: usize,
    /// Output CSV: query_id,rank,id,mse.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Candidate captions (JSONL, first caption per record is scored).
    #[arg(long)]
    pub candidates: PathBuf,
    /// Reference sets (JSONL, all captions per record are references).
    #[arg(long)]
    pub references: PathBuf,
    /// Writes <prefix>.bleu4.{json,csv} and <prefix>.meteor_lite.{json,csv}.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Per-voxel score CSV (index,score).
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub threshold: f64,
    /// Output mask file: selected indices, one per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Training-log CSVs to plot as curves.
    #[arg(long = "log")]
    pub logs: Vec<PathBuf>,
    /// Metric-report JSONs to plot as score bars.
    #[arg(long = "metrics")]
    pub metrics: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Mask(args) => cmd_mask(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Data(format!("temp file in {}: {e}", dir.display())))?;
    std::io::Write::write_all(&mut tmp, bytes)
        .map_err(|e| CliError::Data(format!("write {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::Data(format!("rename to {}: {e}", path.display())))?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let (mut cfg, seed) = args.common.load()?;
    if args.preset == Some(Preset::PaperScaleRatio) {
        cfg.apply_paper_scale_ratio();
    }
    let spec = SynthSpec { seed, n_train: args.n_train.unwrap_or(cfg.synth.n_train), ..cfg.synth };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    if args.out.exists() {
        return Err(CliError::Usage(format!("output directory {} already exists", args.out.display())));
    }
    let out = data::synth_generate(&spec)?;

    // Stage into a sibling temp dir, then rename: no partial dataset on failure.
    let parent = args.out.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("create {}: {e}", parent.display())))?;
    let staging = tempfile::tempdir_in(parent)
        .map_err(|e| CliError::Data(format!("staging dir in {}: {e}", parent.display())))?;
    data::save_dataset(&out.dataset, staging.path())?;
    fs::rename(staging.keep(), &args.out)
        .map_err(|e| CliError::Data(format!("rename to {}: {e}", args.out.display())))?;

    println!(
        "synth: wrote {} samples ({} train / {} test / {} unlabeled) to {}",
        out.dataset.len(),
        spec.n_train,
        spec.n_test,
        spec.n_unlabeled,
        args.out.display()
    );
    Ok(())
}

struct PreparedRegression {
    x_train: Matrix,
    y_train: Matrix,
    val: Option<(Matrix, Matrix)>,
    norm: Option<Standardizer>,
}

fn prepare_regression(ds: &data::PairedDataset, standardize: bool) -> Result<PreparedRegression, CliError> {
    let train_ids = ds.ids_with_split(Split::Train);
    if train_ids.is_empty() {
        return Err(CliError::Data("dataset has no training split".into()));
    }
    let test_ids = ds.ids_with_split(Split::Test);
    let x_train_raw = ds.brain_rows(&train_ids);
    let y_train = ds.feature_rows(&train_ids);
    let norm = standardize.then(|| Standardizer::fit(&x_train_raw));
    let x_train = match &norm {
        Some(n) => n.transform(&x_train_raw),
        None => x_train_raw,
    };
    let val = if test_ids.is_empty() {
        None
    } else {
        let x = ds.brain_rows(&test_ids);
        let x = match &norm {
            Some(n) => n.transform(&x),
            None => x,
        };
        Some((x, ds.feature_rows(&test_ids)))
    };
    Ok(PreparedRegression { x_train, y_train, val, norm })
}

fn mse_log_rows(log: &[EpochMse]) -> Vec<LogRow> {
    let mut rows = Vec::new();
    for e in log {
        rows.push(LogRow { epoch: e.epoch, split: "train".into(), value: e.train_mse });
        if let Some(v) = e.val_mse {
            rows.push(LogRow { epoch: e.epoch, split: "test".into(), value: v });
        }
    }
    rows
}

fn train_outputs(
    out_dir: &Path,
    ckpt: &persist::Checkpoint,
    rows: &[LogRow],
    summary: &Summary,
) -> Result<(), CliError> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::Data(format!("create {}: {e}", out_dir.display())))?;
    persist::save_checkpoint(ckpt, &out_dir.join("model.ckpt"))?;
    persist::write_log_csv(rows, &out_dir.join("log.csv"))?;
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| CliError::Data(format!("summary: {e}")))?;
    write_atomic(&out_dir.join("summary.json"), json.as_bytes())?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (cfg, seed) = args.common.load()?;
    let ds = data::load_dataset(&args.data)?;

    if args.resume.is_some() && !matches!(args.kind, TrainKind::Lm | TrainKind::Mlp3 | TrainKind::Dnn5) {
        return Err(CliError::Usage("--resume is only supported for lm, mlp3, and dnn5".into()));
    }
    if args.init.is_some() && args.kind != TrainKind::Dnn5 {
        return Err(CliError::Usage("--init is only supported for dnn5".into()));
    }
    if args.embeddings.is_some() && args.kind != TrainKind::Lm {
        return Err(CliError::Usage("--embeddings is only supported for lm".into()));
    }

    match args.kind {
        TrainKind::Ridge => {
            let prep = prepare_regression(&ds, cfg.ridge.standardize)?;
            let mut model = ridge_fit(&prep.x_train, &prep.y_train, cfg.ridge.l2_norm, cfg.ridge.fit_bias)?;
            model.input_norm = prep.norm;

            let train_pred = crate::math::affine(&prep.x_train, &model.weights, &model.bias)?;
            let (train_mse, _) = crate::math::mse_loss(&train_pred, &prep.y_train)?;
            let mut rows = vec![LogRow { epoch: 0, split: "train".into(), value: train_mse }];
            let mut summary = Summary::new();
            summary.insert("kind".into(), json!("ridge"));
            summary.insert("seed".into(), json!(seed));
            summary.insert("lambda".into(), json!(cfg.ridge.l2_norm));
            summary.insert("train_mse".into(), json!(train_mse));
            if let Some((vx, vy)) = &prep.val {
                let pred = crate::math::affine(vx, &model.weights, &model.bias)?;
                let (mse, _) = crate::math::mse_loss(&pred, vy)?;
                rows.push(LogRow { epoch: 0, split: "test".into(), value: mse });
                summary.insert("test_mse".into(), json!(mse));
            }
            train_outputs(&args.out, &persist::ridge_to_checkpoint(&model), &rows, &summary)?;
            println!("train ridge: train_mse {train_mse:.6e} -> {}", args.out.display());
        }
        TrainKind::Mlp3 | TrainKind::Dnn5 => {
            let mlp_cfg = if args.kind == TrainKind::Mlp3 { &cfg.mlp3 } else { &cfg.dnn5 };
            let prep = prepare_regression(&ds, mlp_cfg.standardize)?;
            let mut opts = mlp_cfg.train_options(seed);
            if let Some(e) = args.epochs {
                opts.epochs = e;
            }
            let arch = mlp_cfg.arch(prep.x_train.cols(), prep.y_train.cols());
            let val_ref = prep.val.as_ref().map(|(x, y)| (x, y));

            let (mut model, log) = match &args.resume {
                Some(path) => {
                    let ckpt = persist::load_checkpoint(path)?;
                    let mut model = persist::mlp_from_checkpoint(&ckpt)?;
                    let done = ckpt.config["epochs_done"].as_u64().unwrap_or(0) as usize;
                    if done >= opts.epochs {
                        return Err(CliError::Usage(format!(
                            "checkpoint already trained for {done} epochs (target {})",
                            opts.epochs
                        )));
                    }
                    let log = regressors::sgd_train_epochs(
                        &mut model,
                        &prep.x_train,
                        &prep.y_train,
                        &opts,
                        done,
                        opts.epochs - done,
                        val_ref,
                    )?;
                    (model, log)
                }
                None => {
                    let init_stack = match &args.init {
                        Some(path) => {
                            let ckpt = persist::load_checkpoint(path)?;
                            Some(persist::ae_from_checkpoint(&ckpt)?)
                        }
                        None => None,
                    };
                    let fit = if args.kind == TrainKind::Dnn5 || init_stack.is_some() {
                        dnn_fit(&prep.x_train, &prep.y_train, &arch, init_stack.as_ref(), &opts, val_ref)?
                    } else {
                        mlp_fit(&prep.x_train, &prep.y_train, &arch, &opts, val_ref)?
                    };
                    (fit.model, fit.log)
                }
            };
            model.input_norm = prep.norm;

            let final_entry = log.last().copied();
            let mut ckpt = persist::mlp_to_checkpoint(&model);
            let epochs_done = final_entry.map_or(0, |e| e.epoch);
            ckpt.config["epochs_done"] = json!(epochs_done);
            let rows = mse_log_rows(&log);
            let mut summary = Summary::new();
            summary.insert("kind".into(), json!(ckpt.kind));
            summary.insert("seed".into(), json!(seed));
            summary.insert("arch".into(), json!(arch));
            summary.insert("epochs".into(), json!(epochs_done));
            if let Some(e) = final_entry {
                summary.insert("train_mse".into(), json!(e.train_mse));
                if let Some(v) = e.val_mse {
                    summary.insert("test_mse".into(), json!(v));
                }
            }
            train_outputs(&args.out, &ckpt, &rows, &summary)?;
            println!(
                "train {}: {} epochs, final train_mse {:.6e} -> {}",
                ckpt.kind,
                epochs_done,
                final_entry.map_or(f64::NAN, |e| e.train_mse),
                args.out.display()
            );
        }
        TrainKind::Ae => {
            let unlabeled = ds.ids_with_split(Split::Unlabeled);
            let source_ids = if unlabeled.is_empty() { ds.ids_with_split(Split::Train) } else { unlabeled };
            if source_ids.is_empty() {
                return Err(CliError::Data("dataset has no unlabeled or training samples".into()));
            }
            // The standardizer comes from the training split so encoder,
            // fine-tuning, and prediction all see the same transform.
            let train_ids = ds.ids_with_split(Split::Train);
            let norm = (cfg.ae.standardize && !train_ids.is_empty())
                .then(|| Standardizer::fit(&ds.brain_rows(&train_ids)));
            let x = ds.brain_rows(&source_ids);
            let x = match &norm {
                Some(n) => n.transform(&x),
                None => x,
            };
            let hidden = if cfg.ae.hidden_units.is_empty() {
                cfg.dnn5.hidden_units.clone()
            } else {
                cfg.ae.hidden_units.clone()
            };
            let mut opts = cfg.ae.train_options(seed);
            if let Some(e) = args.epochs {
                opts.epochs = e;
            }
            let stack = ae_pretrain(&x, &hidden, opts.epochs, &opts)?;

            let mut rows = Vec::new();
            for (layer, curve) in stack.loss_curves.iter().enumerate() {
                for (epoch, &v) in curve.iter().enumerate() {
                    rows.push(LogRow { epoch, split: format!("layer{layer}"), value: v });
                }
            }
            let mut summary = Summary::new();
            summary.insert("kind".into(), json!("ae"));
            summary.insert("seed".into(), json!(seed));
            summary.insert("hidden_units".into(), json!(hidden));
            summary.insert("samples".into(), json!(x.rows()));
            summary.insert(
                "final_losses".into(),
                json!(stack.loss_curves.iter().map(|c| *c.last().unwrap()).collect::<Vec<_>>()),
            );
            train_outputs(&args.out, &persist::ae_to_checkpoint(&stack), &rows, &summary)?;
            println!("train ae: {} layers on {} samples -> {}", hidden.len(), x.rows(), args.out.display());
        }
        TrainKind::Lm => {
            let pairs_raw = ds.caption_pairs(Split::Train);
            if pairs_raw.is_empty() {
                return Err(CliError::Data("dataset has no captioned training samples".into()));
            }
            let caption_words: Vec<&[String]> = pairs_raw.iter().map(|(_, _, c)| c.as_slice()).collect();
            let vocab = Vocabulary::build(caption_words.into_iter(), cfg.vocabulary.min_count);
            let pairs: Vec<(Vec<f64>, TokenSequence)> = pairs_raw
                .iter()
                .map(|(_, f, c)| (f.clone(), vocab.encode(c)))
                .collect();

            let mut lm_cfg = cfg.lm.train_config(seed);
            if let Some(e) = args.epochs {
                lm_cfg.epochs = e;
            }

            let (mut state, mut log, done_already) = match &args.resume {
                Some(path) => {
                    let ckpt = persist::load_checkpoint(path)?;
                    let state = persist::lm_state_from_checkpoint(&ckpt)?;
                    if state.epochs_done >= lm_cfg.epochs {
                        return Err(CliError::Usage(format!(
                            "checkpoint already trained for {} epochs (target {})",
                            state.epochs_done, lm_cfg.epochs
                        )));
                    }
                    let done = state.epochs_done;
                    (state, Vec::new(), done)
                }
                None => {
                    let mut state = LmTrainState::new(vocab.clone(), ds.meta.feature_dim, &lm_cfg);
                    if let Some(path) = &args.embeddings {
                        state.model.load_embeddings(path)?;
                    }
                    let initial = decoder::perplexity(&state.model, &pairs)?;
                    (state, vec![decoder::EpochPerplexity { epoch: 0, perplexity: initial }], 0)
                }
            };
            log.extend(decoder::lm_train_epochs(&mut state, &pairs, &lm_cfg, lm_cfg.epochs - done_already)?);

            let rows: Vec<LogRow> = log
                .iter()
                .map(|e| LogRow { epoch: e.epoch, split: "train".into(), value: e.perplexity })
                .collect();
            let final_ppl = log.last().map_or(f64::NAN, |e| e.perplexity);
            let ckpt = persist::lm_to_checkpoint(&state.model, Some((&state.opt, state.epochs_done)));
            let mut summary = Summary::new();
            summary.insert("kind".into(), json!("lm"));
            summary.insert("seed".into(), json!(seed));
            summary.insert("vocab_size".into(), json!(state.model.vocab.size()));
            summary.insert("epochs".into(), json!(state.epochs_done));
            summary.insert("perplexity".into(), json!(final_ppl));
            train_outputs(&args.out, &ckpt, &rows, &summary)?;
            println!(
                "train lm: {} epochs, vocab {}, perplexity {:.4} -> {}",
                state.epochs_done,
                state.model.vocab.size(),
                final_ppl,
                args.out.display()
            );
        }
    }
    Ok(())
}

fn cmd_decode(args: DecodeArgs) -> Result<(), CliError> {
    let (cfg, _) = args.common.load()?;
    let beam = args.beam.unwrap_or(cfg.decode.beam).max(1);
    let max_len = args.max_len.unwrap_or(cfg.decode.max_len);
    if max_len == 0 {
        return Err(CliError::Usage("max-len must be >= 1".into()));
    }

    let lm_ckpt = persist::load_checkpoint(&args.lm)?;
    let lm = persist::lm_from_checkpoint(&lm_ckpt)?;

    let regressor = match &args.regressor {
        Some(path) => Some(persist::regressor_from_checkpoint(&persist::load_checkpoint(path)?)?),
        None => None,
    };

    let (input, via_regressor) = match (&args.brain, &args.features) {
        (Some(path), None) => {
            if regressor.is_none() {
                return Err(CliError::Usage("--brain requires --regressor".into()));
            }
            (read_matrix(path)?, true)
        }
        (None, Some(path)) => (read_matrix(path)?, false),
        _ => return Err(CliError::Usage("exactly one of --brain or --features is required".into())),
    };

    let mask = match &args.mask {
        Some(path) => {
            if !via_regressor {
                return Err(CliError::Usage("--mask only applies to --brain input".into()));
            }
            Some(VoxelMask::load(path, input.cols())?)
        }
        None => None,
    };

    let mut records = Vec::with_capacity(input.rows());
    for i in 0..input.rows() {
        let row = input.row(i);
        let ranked = if via_regressor {
            let reg = regressor.as_ref().unwrap();
            let reduced;
            let x = match &mask {
                Some(m) => {
                    reduced = apply_mask(row, m)?;
                    reduced.as_slice()
                }
                None => row,
            };
            let feature = reg.predict(x)?;
            generate_beam(&lm, &feature, beam, max_len)?
        } else {
            generate_beam(&lm, row, beam, max_len)?
        };
        let captions = ranked
            .into_iter()
            .enumerate()
            .map(|(rank, (seq, log_prob))| RankedCaption {
                rank,
                log_prob,
                tokens: lm.vocab.decode_words(&seq),
            })
            .collect();
        records.push(CaptionRecord { id: i as u64, captions });
    }
    pipeline::write_caption_jsonl(&records, &args.out)?;
    println!("decode: {} records ({} best each) -> {}", records.len(), beam, args.out.display());
    Ok(())
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<(), CliError> {
    if args.k == 0 {
        return Err(CliError::Usage("k must be >= 1".into()));
    }
    let queries = read_matrix(&args.query)?;
    let db = FeatureDatabase::load(&args.db)?;
    let mut out = String::from("query_id,rank,id,mse\n");
    for i in 0..queries.rows() {
        let hits = pipeline::retrieve_similar(queries.row(i), &db, args.k)?;
        for (rank, (id, mse)) in hits.iter().enumerate() {
            out.push_str(&format!("{i},{rank},{id},{mse}\n"));
        }
    }
    write_atomic(&args.out, out.as_bytes())?;
    println!("retrieve: {} queries x top-{} -> {}", queries.rows(), args.k, args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let cand_records = read_caption_jsonl(&args.candidates)?;
    let ref_records = read_caption_jsonl(&args.references)?;

    let candidates: Vec<(u64, Vec<String>)> = cand_records
        .iter()
        .map(|r| {
            let first = r
                .captions
                .first()
                .map(|c| c.tokens.clone())
                .unwrap_or_default();
            (r.id, first)
        })
        .collect();
    let references: Vec<(u64, Vec<Vec<String>>)> = ref_records
        .iter()
        .map(|r| (r.id, r.captions.iter().map(|c| c.tokens.clone()).collect()))
        .collect();

    let (bleu, meteor) = eval::evaluate_run(&candidates, &references)?;
    let prefix = args.out_prefix.as_os_str().to_string_lossy().to_string();
    for report in [&bleu, &meteor] {
        let json_path = PathBuf::from(format!("{prefix}.{}.json", report.metric));
        let csv_path = PathBuf::from(format!("{prefix}.{}.csv", report.metric));
        persist::write_metric_report(report, &json_path, &csv_path)?;
    }
    println!("eval: bleu4 {:.4}, meteor_lite {:.4} over {} samples", bleu.corpus_score, meteor.corpus_score, candidates.len());
    Ok(())
}

fn cmd_mask(args: MaskArgs) -> Result<(), CliError> {
    if args.threshold.is_nan() {
        return Err(CliError::Usage("threshold must not be NaN".into()));
    }
    let scores = pipeline::read_scores_csv(&args.scores)?;
    let mask = select_voxels(&scores, args.threshold)?;
    mask.save(&args.out)?;
    println!("mask: {} of {} voxels above {} -> {}", mask.count(), mask.len(), args.threshold, args.out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    if args.logs.is_empty() && args.metrics.is_empty() {
        return Err(CliError::Usage("pass at least one --log or --metrics file".into()));
    }
    fs::create_dir_all(&args.out).map_err(|e| CliError::Data(format!("create {}: {e}", args.out.display())))?;

    if !args.logs.is_empty() {
        let mut series = Vec::new();
        for path in &args.logs {
            let rows = persist::read_log_csv(path)?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
            let source = if args.logs.len() > 1 { stem } else { String::new() };
            series.extend(report::curves_from_log(&rows, &source));
        }
        report::render_loss_curves(&series, "training curves", "value", &args.out.join("curves.svg"))?;
        println!("report: curves.svg ({} series)", series.len());
    }

    if !args.metrics.is_empty() {
        let mut reports = Vec::new();
        for path in &args.metrics {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("read {}: {e}", path.display())))?;
            let report: eval::MetricReport = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("parse {}: {e}", path.display())))?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
            reports.push((stem, report));
        }
        report::render_score_bars(&reports, "caption metric scores", &args.out.join("scores.svg"))?;
        println!("report: scores.svg ({} bars)", reports.len());
    }
    Ok(())
}
