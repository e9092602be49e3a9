//! Experiment kinds and the shared steps they are built from.
//!
//! Every kind is a named [`Experiment`] in [`experiments()`]. A run owns one
//! [`ResultWriter`]; points execute in a fixed order and each completed
//! point is flushed before the next starts, so the file (minus the
//! `wall_time_s` column) is a pure function of the configuration.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semcom::channel::{self, ChannelModel};
use semcom::classic::{baseline_pipeline, Baseline};
use semcom::csi::{self, CsiMode, Denoiser, DenoiserConfig, EstimatorTrials};
use semcom::deepsc::{
    calibrate_model_constellation, evaluate, train, write_log_csv, EvalConfig, Link, TrainConfig, TrainLog, TransceiverConfig,
    TransceiverModel,
};
use semcom::registry::Registry;
use semcom::slim::{self, PruneConfig, QuantConfig};
use semcom::textpipe::{self, Corpus, Sentence};

use crate::config::ExperimentConfig;
use crate::results::{ResultRow, ResultWriter};

/// SNR range the CSI denoiser is trained over (dB).
pub const DENOISER_SNR_DB: (f64, f64) = (0.0, 10.0);
/// EMA coefficient for activation and constellation calibration.
pub const CALIBRATION_EMA: f64 = 0.1;

/// State shared by the points of one run.
pub struct RunContext {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
    pub corpus: Corpus,
    pub channel: Arc<dyn ChannelModel>,
    writer: ResultWriter,
    points: usize,
    rows: usize,
}

impl RunContext {
    /// Flushes the rows of one completed point.
    pub fn emit(&mut self, rows: Vec<ResultRow>) -> Result<()> {
        self.writer.write_point(&rows)?;
        self.points += 1;
        self.rows += rows.len();
        Ok(())
    }

    fn row(&self, system: &str, seed: u64, metric: &str, value: f64) -> ResultRow {
        let mut r = ResultRow::new(&self.cfg.experiment, system, seed, metric, value);
        r.channel = self.channel.name();
        r
    }

    fn eval_set(&self) -> &[Sentence] {
        let n = self.cfg.eval_sentences.unwrap_or(usize::MAX).min(self.corpus.test.len());
        &self.corpus.test[..n]
    }

    fn checkpoint_path(&self, tag: &str, seed: u64) -> PathBuf {
        self.out_dir.join("checkpoints").join(format!("{}-{tag}-s{seed}.ckpt", self.channel.name()))
    }
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &mut RunContext) -> Result<()>;
}

/// Outcome of a completed run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub results: PathBuf,
    pub points: usize,
    pub rows: usize,
}

pub fn experiments() -> Registry<(), dyn Experiment> {
    let mut r: Registry<(), dyn Experiment> = Registry::new("experiment");
    r.register("train", |_, _| Ok(Box::new(TrainExperiment)));
    r.register("evaluate", |_, _| Ok(Box::new(EvaluateExperiment)));
    r.register("sweep-snr", |_, _| Ok(Box::new(SweepSnr)));
    r.register("sweep-sparsity", |_, _| Ok(Box::new(SweepSparsity)));
    r.register("sweep-bits", |_, _| Ok(Box::new(SweepBits)));
    r.register("estimator-mse", |_, _| Ok(Box::new(EstimatorMse)));
    r.register("baseline", |_, _| Ok(Box::new(BaselineExperiment)));
    r
}

/// Runs the configured experiment, writing results under the output
/// directory. Rows of completed points survive a failure.
pub fn run(cfg: ExperimentConfig) -> Result<RunSummary> {
    let errors = cfg.violations();
    if !errors.is_empty() {
        return Err(crate::config::ConfigError::Invalid(errors).into());
    }
    let exp = experiments().create(&cfg.experiment, &())?;
    let out_dir = cfg.output_dir();
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let results = out_dir.join(&cfg.results_file);
    let writer = ResultWriter::create(&results)?;
    let corpus = load_corpus(&cfg)?;
    let channel = channel::model(&cfg.channel)?;
    let mut ctx = RunContext { cfg, out_dir, corpus, channel, writer, points: 0, rows: 0 };
    exp.run(&mut ctx)?;
    Ok(RunSummary { results, points: ctx.points, rows: ctx.rows })
}

pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let corpus = match &cfg.corpus {
        Some(p) => textpipe::load_corpus(p, cfg.split_ratio, cfg.split_seed)?,
        None => textpipe::corpus_from_text(textpipe::toy::bundled(), cfg.split_ratio, cfg.split_seed)?,
    };
    Ok(corpus)
}

pub fn transceiver_config(cfg: &ExperimentConfig, vocab: usize) -> TransceiverConfig {
    TransceiverConfig {
        vocab,
        dim: cfg.dim,
        heads: cfg.heads,
        enc_blocks: cfg.enc_blocks,
        dec_blocks: cfg.dec_blocks,
        ff: cfg.ff,
        symbols: cfg.symbols,
    }
}

pub fn train_config(
    cfg: &ExperimentConfig,
    mode: CsiMode,
    channel: Arc<dyn ChannelModel>,
    seed: u64,
    denoiser: Option<Arc<Denoiser>>,
) -> TrainConfig {
    let mut tc = TrainConfig::new(mode, channel);
    tc.antennas = cfg.antennas;
    tc.snr_db = cfg.train_snr_db;
    tc.batch = cfg.batch;
    tc.epochs = cfg.epochs;
    tc.lr = cfg.lr;
    tc.seed = seed;
    tc.denoiser = denoiser;
    tc.max_sentences = cfg.train_sentences;
    tc
}

/// Fine-tuning variant of [`train_config`] on a separate RNG stream.
pub fn fine_tune_config(base: &TrainConfig, cfg: &ExperimentConfig) -> TrainConfig {
    let mut tc = base.clone();
    tc.epochs = cfg.fine_tune_epochs.max(1);
    tc.lr = cfg.fine_tune_lr;
    tc.seed = base.seed.wrapping_add(100);
    tc
}

/// Loads the configured denoiser or trains one on fresh LS/true pairs.
pub fn denoiser_for(cfg: &ExperimentConfig, channel: &dyn ChannelModel, seed: u64) -> Result<Arc<Denoiser>> {
    if let Some(p) = &cfg.denoiser {
        return Ok(Arc::new(Denoiser::load(p)?));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let pairs = csi::generate_pairs(channel, cfg.antennas, cfg.denoiser_pairs, DENOISER_SNR_DB, &mut rng)?;
    let dc = DenoiserConfig { hidden: cfg.denoiser_hidden, epochs: cfg.denoiser_epochs, seed, ..DenoiserConfig::default() };
    let (d, _) = csi::train_denoiser(&pairs, &dc)?;
    Ok(Arc::new(d))
}

fn needs_denoiser(modes: &[CsiMode]) -> bool {
    modes.contains(&CsiMode::Refined)
}

/// A trained or loaded transceiver plus the training settings used.
struct Trained {
    model: TransceiverModel,
    train_cfg: TrainConfig,
}

fn train_and_save(
    ctx: &RunContext,
    mode: CsiMode,
    seed: u64,
    denoiser: Option<Arc<Denoiser>>,
) -> Result<(Trained, TrainLog)> {
    let cfg = &ctx.cfg;
    let train_cfg = train_config(cfg, mode, ctx.channel.clone(), seed, denoiser);
    let mut model = TransceiverModel::new(transceiver_config(cfg, ctx.corpus.vocab.len()), seed)?;
    let log = train(&mut model, &ctx.corpus.train, &[], &train_cfg)?;
    let ckpt = ctx.checkpoint_path(mode.name(), seed);
    std::fs::create_dir_all(ckpt.parent().expect("has parent"))?;
    model.save(&ckpt)?;
    write_log_csv(&log, ckpt.with_extension("log.csv"))?;
    log::info!("trained {} seed {seed}: final loss {:.4}", mode.name(), log.final_loss());
    Ok((Trained { model, train_cfg }, log))
}

/// The configured checkpoint if any, otherwise a freshly trained model.
fn obtain_model(ctx: &RunContext, mode: CsiMode, seed: u64, denoiser: Option<Arc<Denoiser>>) -> Result<Trained> {
    match &ctx.cfg.checkpoint {
        Some(p) => {
            let model = TransceiverModel::load(p).with_context(|| format!("loading {}", p.display()))?;
            Ok(Trained { model, train_cfg: train_config(&ctx.cfg, mode, ctx.channel.clone(), seed, denoiser) })
        }
        None => Ok(train_and_save(ctx, mode, seed, denoiser)?.0),
    }
}

fn link(ctx: &RunContext, mode: CsiMode, denoiser: Option<Arc<Denoiser>>) -> Result<Link> {
    Ok(Link::new(ctx.channel.clone(), ctx.cfg.antennas, mode, denoiser)?)
}

/// Scores `model` at every configured SNR, one point per SNR.
fn score_snrs(
    ctx: &mut RunContext,
    model: &TransceiverModel,
    link: &Link,
    seed: u64,
    m_bits: Option<u32>,
    gamma: Option<f64>,
) -> Result<()> {
    for snr in ctx.cfg.snr_db.clone() {
        let t = Instant::now();
        let report = evaluate(model, ctx.eval_set(), link, &EvalConfig { snr_db: snr, seed, ..EvalConfig::default() })?;
        let wall = t.elapsed().as_secs_f64();
        let rows = [
            ("bleu", report.corpus_bleu),
            ("mean_bleu", report.mean_bleu),
            ("token_accuracy", report.token_accuracy),
            ("exact_match", report.exact_match),
        ]
        .into_iter()
        .map(|(metric, value)| {
            let mut r = ctx.row("deepsc", seed, metric, value);
            r.csi_mode = link.csi.mode().name().into();
            r.snr_db = Some(snr);
            r.m_bits = m_bits;
            r.gamma = gamma;
            r.wall_time_s = wall;
            r
        })
        .collect();
        ctx.emit(rows)?;
    }
    Ok(())
}

struct TrainExperiment;

impl Experiment for TrainExperiment {
    fn name(&self) -> &'static str {
        "train"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        for seed in ctx.cfg.seeds.clone() {
            let denoiser =
                if needs_denoiser(&ctx.cfg.csi_modes) { Some(denoiser_for(&ctx.cfg, &*ctx.channel, seed)?) } else { None };
            for mode in ctx.cfg.csi_modes.clone() {
                let t = Instant::now();
                let (_, log) = train_and_save(ctx, mode, seed, denoiser.clone())?;
                let mut r = ctx.row("deepsc", seed, "final_loss", log.final_loss());
                r.csi_mode = mode.name().into();
                r.wall_time_s = t.elapsed().as_secs_f64();
                ctx.emit(vec![r])?;
            }
        }
        Ok(())
    }
}

struct EvaluateExperiment;

impl Experiment for EvaluateExperiment {
    fn name(&self) -> &'static str {
        "evaluate"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let path = ctx.cfg.checkpoint.clone().ok_or_else(|| anyhow!("`evaluate` needs `checkpoint`"))?;
        let model = TransceiverModel::load(&path)?;
        for seed in ctx.cfg.seeds.clone() {
            let denoiser =
                if needs_denoiser(&ctx.cfg.csi_modes) { Some(denoiser_for(&ctx.cfg, &*ctx.channel, seed)?) } else { None };
            for mode in ctx.cfg.csi_modes.clone() {
                let l = link(ctx, mode, denoiser.clone())?;
                score_snrs(ctx, &model, &l, seed, None, None)?;
            }
        }
        Ok(())
    }
}

struct SweepSnr;

impl Experiment for SweepSnr {
    fn name(&self) -> &'static str {
        "sweep-snr"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        for seed in ctx.cfg.seeds.clone() {
            let denoiser =
                if needs_denoiser(&ctx.cfg.csi_modes) { Some(denoiser_for(&ctx.cfg, &*ctx.channel, seed)?) } else { None };
            for mode in ctx.cfg.csi_modes.clone() {
                let Trained { model, train_cfg } = obtain_model(ctx, mode, seed, denoiser.clone())?;
                let l = link(ctx, mode, denoiser.clone())?;
                score_snrs(ctx, &model, &l, seed, None, None)?;
                for bits in ctx.cfg.constellation_bits.clone() {
                    let mut m = model.clone();
                    let n = ctx.cfg.calibration_sentences.min(ctx.corpus.train.len());
                    calibrate_model_constellation(&mut m, &ctx.corpus.train[..n], ctx.cfg.batch, bits, CALIBRATION_EMA)?;
                    train(&mut m, &ctx.corpus.train, &[], &fine_tune_config(&train_cfg, &ctx.cfg))?;
                    score_snrs(ctx, &m, &l, seed, Some(bits), None)?;
                }
            }
            for scheme in ctx.cfg.schemes.clone() {
                run_baseline(ctx, &scheme, seed, denoiser.clone())?;
            }
        }
        Ok(())
    }
}

struct SweepSparsity;

impl Experiment for SweepSparsity {
    fn name(&self) -> &'static str {
        "sweep-sparsity"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let mode = ctx.cfg.csi_modes[0];
        for seed in ctx.cfg.seeds.clone() {
            let denoiser = if mode == CsiMode::Refined { Some(denoiser_for(&ctx.cfg, &*ctx.channel, seed)?) } else { None };
            let Trained { model, train_cfg } = obtain_model(ctx, mode, seed, denoiser.clone())?;
            let l = link(ctx, mode, denoiser)?;
            for gamma in ctx.cfg.gamma.clone() {
                let t = Instant::now();
                let mut m = model.clone();
                let pc = PruneConfig { gamma, fine_tune_epochs: ctx.cfg.fine_tune_epochs };
                let ft = fine_tune_config(&train_cfg, &ctx.cfg);
                let (summary, _) = slim::prune_and_finetune(&mut m, &pc, &ctx.corpus.train, &[], &ft)?;
                let mut r = ctx.row("deepsc", seed, "sparsity", summary.sparsity());
                r.csi_mode = mode.name().into();
                r.gamma = Some(gamma);
                r.wall_time_s = t.elapsed().as_secs_f64();
                ctx.emit(vec![r])?;
                score_snrs(ctx, &m, &l, seed, None, Some(gamma))?;
            }
        }
        Ok(())
    }
}

struct SweepBits;

impl Experiment for SweepBits {
    fn name(&self) -> &'static str {
        "sweep-bits"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        let mode = ctx.cfg.csi_modes[0];
        for seed in ctx.cfg.seeds.clone() {
            let base = if ctx.cfg.compute_bleu {
                let denoiser =
                    if mode == CsiMode::Refined { Some(denoiser_for(&ctx.cfg, &*ctx.channel, seed)?) } else { None };
                let trained = obtain_model(ctx, mode, seed, denoiser.clone())?;
                Some((trained, link(ctx, mode, denoiser)?))
            } else {
                None
            };
            for gamma in ctx.cfg.gamma.clone() {
                let pruned = match &base {
                    Some((Trained { model, train_cfg }, _)) => {
                        let mut m = model.clone();
                        let pc = PruneConfig { gamma, fine_tune_epochs: ctx.cfg.fine_tune_epochs };
                        slim::prune_and_finetune(&mut m, &pc, &ctx.corpus.train, &[], &fine_tune_config(train_cfg, &ctx.cfg))?;
                        Some(m)
                    }
                    None => None,
                };
                for bits in ctx.cfg.m_bits.clone() {
                    let t = Instant::now();
                    let mut rows = Vec::new();
                    let row = |ctx: &RunContext, metric: &str, value: f64| {
                        let mut r = ctx.row("deepsc", seed, metric, value);
                        r.csi_mode = mode.name().into();
                        r.gamma = Some(gamma);
                        r.m_bits = Some(bits);
                        r
                    };
                    rows.push(row(ctx, "psi", slim::nominal_compression_ratio(gamma, bits)?));
                    if let (Some(m), Some((Trained { train_cfg, .. }, l))) = (&pruned, &base) {
                        let mut q = m.clone();
                        let n = ctx.cfg.calibration_sentences.min(ctx.corpus.train.len());
                        let qc = QuantConfig { calibration_batch_size: ctx.cfg.batch, ..QuantConfig::new(bits) };
                        let snr = ctx.cfg.snr_db[0];
                        let cal = slim::calibrate_activations(&q, &ctx.corpus.train[..n], l, snr, &qc, seed)?;
                        slim::qat_finetune(&mut q, bits, &cal, &ctx.corpus.train, &[], &fine_tune_config(train_cfg, &ctx.cfg))?;
                        let params = q.effective_params();
                        let realized = slim::compression_ratio(
                            params.weight_count() as f64,
                            params.surviving_weight_count() as f64,
                            bits,
                        )?;
                        rows.push(row(ctx, "psi_realized", realized));
                        for snr in ctx.cfg.snr_db.clone() {
                            let ec = EvalConfig { snr_db: snr, seed, ..EvalConfig::default() };
                            let mut r = row(ctx, "bleu", evaluate(&q, ctx.eval_set(), l, &ec)?.corpus_bleu);
                            r.snr_db = Some(snr);
                            rows.push(r);
                        }
                    }
                    let wall = t.elapsed().as_secs_f64();
                    rows.iter_mut().for_each(|r| r.wall_time_s = wall);
                    ctx.emit(rows)?;
                }
            }
        }
        Ok(())
    }
}

struct EstimatorMse;

impl Experiment for EstimatorMse {
    fn name(&self) -> &'static str {
        "estimator-mse"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        for seed in ctx.cfg.seeds.clone() {
            let denoiser = denoiser_for(&ctx.cfg, &*ctx.channel, seed)?;
            for (i, snr) in ctx.cfg.snr_db.clone().into_iter().enumerate() {
                let t = Instant::now();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(100 + i as u64);
                let trials =
                    csi::estimator_trials(&*ctx.channel, ctx.cfg.antennas, snr, ctx.cfg.trials, Some(&denoiser), &mut rng)?;
                let wall = t.elapsed().as_secs_f64();
                let rows = [("ls", &trials.ls), ("lmmse", &trials.lmmse), ("refined", &trials.refined)]
                    .into_iter()
                    .map(|(name, errs)| {
                        let mut r = ctx.row("csi", seed, "mse", EstimatorTrials::mean(errs));
                        r.csi_mode = name.into();
                        r.snr_db = Some(snr);
                        r.wall_time_s = wall;
                        r
                    })
                    .collect();
                ctx.emit(rows)?;
            }
        }
        Ok(())
    }
}

struct BaselineExperiment;

impl Experiment for BaselineExperiment {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn run(&self, ctx: &mut RunContext) -> Result<()> {
        for seed in ctx.cfg.seeds.clone() {
            let denoiser =
                if needs_denoiser(&ctx.cfg.csi_modes) { Some(denoiser_for(&ctx.cfg, &*ctx.channel, seed)?) } else { None };
            for scheme in ctx.cfg.schemes.clone() {
                run_baseline(ctx, &scheme, seed, denoiser.clone())?;
            }
        }
        Ok(())
    }
}

fn run_baseline(ctx: &mut RunContext, scheme: &str, seed: u64, denoiser: Option<Arc<Denoiser>>) -> Result<()> {
    let baseline = Baseline::standard(scheme, &ctx.corpus.train)?;
    let system = format!("baseline-{scheme}");
    for mode in ctx.cfg.csi_modes.clone() {
        let l = link(ctx, mode, denoiser.clone())?;
        for snr in ctx.cfg.snr_db.clone() {
            let t = Instant::now();
            let report = baseline_pipeline(ctx.eval_set(), &baseline, &l, snr, seed, textpipe::DEFAULT_MAX_N)?;
            let wall = t.elapsed().as_secs_f64();
            let rows = [
                ("bleu", report.corpus_bleu),
                ("mean_bleu", report.mean_bleu),
                ("exact_match", report.exact_match),
                ("decode_errors", report.decode_errors as f64),
                ("rs_failures", report.rs_failures as f64),
            ]
            .into_iter()
            .map(|(metric, value)| {
                let mut r = ctx.row(&system, seed, metric, value);
                r.csi_mode = mode.name().into();
                r.snr_db = Some(snr);
                r.wall_time_s = wall;
                r
            })
            .collect();
            ctx.emit(rows)?;
        }
    }
    Ok(())
}
