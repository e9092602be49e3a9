//! Experiment configuration: a flat `key = value` file, one experiment per
//! file. `#` starts a comment. Lists are comma-separated.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `experiment` | required | `train`, `evaluate`, `sweep-snr`, `sweep-sparsity`, `sweep-bits`, `estimator-mse`, `baseline` |
//! | `channel` | `rician:k=2` | channel spec (`awgn`, `rayleigh[:rho=]`, `rician[:k=,rho=]`) |
//! | `csi_mode` | `perfect` | list of `perfect`, `refined`, `rough`, `none` |
//! | `snr_db` | `12` | evaluation SNR list (dB) |
//! | `gamma` | `0` | pruning ratios |
//! | `m_bits` | `8` | weight/activation bit-widths |
//! | `constellation_bits` | empty | constellation bit-widths evaluated by `sweep-snr` |
//! | `scheme` | empty | baselines (`huffman`, `fixed5`) added to `sweep-snr`; required by `baseline` |
//! | `seeds` | `1` | seeds; every point runs once per seed |
//! | `corpus` | `toy` | text file with one sentence per line, or `toy` |
//! | `split_ratio`, `split_seed` | `0.1`, `7` | held-out fraction and shuffle seed |
//! | `checkpoint` | none | transceiver checkpoint to evaluate or start from |
//! | `denoiser` | none | denoiser checkpoint; trained on demand otherwise |
//! | `output` | `results` | output directory (overridden by `LDSC_OUTPUT_DIR`) |
//! | `results_file` | `<experiment>.csv` | results file name inside the output directory |
//! | `antennas` | `1` | antennas per side |
//! | `dim`, `heads`, `enc_blocks`, `dec_blocks`, `ff`, `symbols` | `64`, `2`, `1`, `1`, `128`, `16` | transceiver shape |
//! | `epochs`, `batch`, `lr` | `10`, `32`, `0.002` | training |
//! | `train_snr_db` | `6,18` | training SNR range `lo,hi` |
//! | `train_sentences` | all | sentences per training epoch |
//! | `fine_tune_epochs`, `fine_tune_lr` | `5`, `0.001` | pruning / QAT / constellation fine-tuning |
//! | `eval_sentences` | all | held-out sentences scored per point |
//! | `calibration_sentences` | `256` | activation / constellation calibration set |
//! | `denoiser_pairs`, `denoiser_epochs`, `denoiser_hidden` | `20000`, `30`, `64` | denoiser training |
//! | `trials` | `10000` | channel draws per SNR in `estimator-mse` |
//! | `compute_bleu` | `false` | `sweep-bits`: also compress, fine-tune and score each point |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use semcom::csi::CsiMode;

pub const EXPERIMENTS: [&str; 7] =
    ["train", "evaluate", "sweep-snr", "sweep-sparsity", "sweep-bits", "estimator-mse", "baseline"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub channel: String,
    pub csi_modes: Vec<CsiMode>,
    pub snr_db: Vec<f64>,
    pub gamma: Vec<f64>,
    pub m_bits: Vec<u32>,
    pub constellation_bits: Vec<u32>,
    pub schemes: Vec<String>,
    pub seeds: Vec<u64>,
    /// `None` selects the bundled toy corpus.
    pub corpus: Option<PathBuf>,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub denoiser: Option<PathBuf>,
    pub output: PathBuf,
    pub results_file: String,
    pub antennas: usize,
    pub dim: usize,
    pub heads: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    pub ff: usize,
    pub symbols: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub train_snr_db: (f64, f64),
    pub train_sentences: Option<usize>,
    pub fine_tune_epochs: usize,
    pub fine_tune_lr: f64,
    pub eval_sentences: Option<usize>,
    pub calibration_sentences: usize,
    pub denoiser_pairs: usize,
    pub denoiser_epochs: usize,
    pub denoiser_hidden: usize,
    pub trials: usize,
    pub compute_bleu: bool,
}

impl ExperimentConfig {
    /// Defaults for `experiment`, before any key is applied.
    pub fn defaults(experiment: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            channel: "rician:k=2".into(),
            csi_modes: vec![CsiMode::Perfect],
            snr_db: vec![12.0],
            gamma: vec![0.0],
            m_bits: vec![8],
            constellation_bits: Vec::new(),
            schemes: Vec::new(),
            seeds: vec![1],
            corpus: None,
            split_ratio: 0.1,
            split_seed: 7,
            checkpoint: None,
            denoiser: None,
            output: PathBuf::from("results"),
            results_file: format!("{experiment}.csv"),
            antennas: 1,
            dim: 64,
            heads: 2,
            enc_blocks: 1,
            dec_blocks: 1,
            ff: 128,
            symbols: 16,
            epochs: 10,
            batch: 32,
            lr: 2e-3,
            train_snr_db: (6.0, 18.0),
            train_sentences: None,
            fine_tune_epochs: 5,
            fine_tune_lr: 1e-3,
            eval_sentences: None,
            calibration_sentences: 256,
            denoiser_pairs: 20_000,
            denoiser_epochs: 30,
            denoiser_hidden: 64,
            trials: 10_000,
            compute_bleu: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses and validates. Relative paths resolve against `base_dir`.
    /// Every violation is reported, not just the first.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut errors = Vec::new();
        let mut pairs: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    let k = k.trim().to_string();
                    if pairs.insert(k.clone(), (i + 1, v.trim().to_string())).is_some() {
                        errors.push(format!("line {}: duplicate key `{k}`", i + 1));
                    }
                }
                None => errors.push(format!("line {}: expected `key = value`", i + 1)),
            }
        }
        let experiment = match pairs.remove("experiment") {
            Some((_, e)) if EXPERIMENTS.contains(&e.as_str()) => e,
            Some((line, e)) => {
                errors.push(format!("line {line}: unknown experiment `{e}` (known: {})", EXPERIMENTS.join(", ")));
                "train".into()
            }
            None => {
                errors.push("missing key `experiment`".into());
                "train".into()
            }
        };
        let mut cfg = Self::defaults(&experiment);
        for (key, (line, value)) in &pairs {
            if let Err(e) = cfg.apply(key, value, base_dir) {
                errors.push(format!("line {line}: `{key}`: {e}"));
            }
        }
        errors.extend(cfg.violations());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    fn apply(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let path = |v: &str| if v.is_empty() { None } else { Some(base.join(v)) };
        match key {
            "channel" => self.channel = value.to_string(),
            "csi_mode" => self.csi_modes = list(value, |s| s.parse::<CsiMode>().map_err(|e| e.to_string()))?,
            "snr_db" => self.snr_db = list(value, num)?,
            "gamma" => self.gamma = list(value, num)?,
            "m_bits" => self.m_bits = list(value, num)?,
            "constellation_bits" => self.constellation_bits = list(value, num)?,
            "scheme" => self.schemes = list(value, |s| Ok(s.to_string()))?,
            "seeds" => self.seeds = list(value, num)?,
            "corpus" => self.corpus = if value == "toy" { None } else { path(value) },
            "split_ratio" => self.split_ratio = num(value)?,
            "split_seed" => self.split_seed = num(value)?,
            "checkpoint" => self.checkpoint = path(value),
            "denoiser" => self.denoiser = path(value),
            "output" => self.output = base.join(value),
            "results_file" => self.results_file = value.to_string(),
            "antennas" => self.antennas = num(value)?,
            "dim" => self.dim = num(value)?,
            "heads" => self.heads = num(value)?,
            "enc_blocks" => self.enc_blocks = num(value)?,
            "dec_blocks" => self.dec_blocks = num(value)?,
            "ff" => self.ff = num(value)?,
            "symbols" => self.symbols = num(value)?,
            "epochs" => self.epochs = num(value)?,
            "batch" => self.batch = num(value)?,
            "lr" => self.lr = num(value)?,
            "train_snr_db" => {
                let v: Vec<f64> = list(value, num)?;
                self.train_snr_db = match v[..] {
                    [x] => (x, x),
                    [lo, hi] => (lo, hi),
                    _ => return Err("expected `snr` or `lo,hi`".into()),
                };
            }
            "train_sentences" => self.train_sentences = Some(num(value)?),
            "fine_tune_epochs" => self.fine_tune_epochs = num(value)?,
            "fine_tune_lr" => self.fine_tune_lr = num(value)?,
            "eval_sentences" => self.eval_sentences = Some(num(value)?),
            "calibration_sentences" => self.calibration_sentences = num(value)?,
            "denoiser_pairs" => self.denoiser_pairs = num(value)?,
            "denoiser_epochs" => self.denoiser_epochs = num(value)?,
            "denoiser_hidden" => self.denoiser_hidden = num(value)?,
            "trials" => self.trials = num(value)?,
            "compute_bleu" => self.compute_bleu = num(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Semantic checks that need the whole configuration.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                v.push(msg.to_string());
            }
        };
        need(!self.csi_modes.is_empty(), "`csi_mode` must not be empty");
        need(!self.snr_db.is_empty(), "`snr_db` must not be empty");
        need(!self.gamma.is_empty(), "`gamma` must not be empty");
        need(!self.m_bits.is_empty(), "`m_bits` must not be empty");
        need(!self.seeds.is_empty(), "`seeds` must not be empty");
        need(self.gamma.iter().all(|g| (0.0..1.0).contains(g)), "`gamma` values must lie in [0, 1)");
        need(self.m_bits.iter().chain(&self.constellation_bits).all(|&m| (1..=32).contains(&m)), "bit-widths must lie in 1..=32");
        need(self.split_ratio > 0.0 && self.split_ratio < 1.0, "`split_ratio` must lie in (0, 1)");
        need(self.antennas >= 1, "`antennas` must be at least 1");
        need(self.epochs >= 1 && self.batch >= 1, "`epochs` and `batch` must be at least 1");
        need(self.lr > 0.0 && self.fine_tune_lr > 0.0, "learning rates must be positive");
        need(self.train_snr_db.0 <= self.train_snr_db.1, "`train_snr_db` must be `lo,hi` with lo ≤ hi");
        need(self.trials >= 1, "`trials` must be at least 1");
        need(
            self.schemes.iter().all(|s| s == "huffman" || s == "fixed5"),
            "`scheme` values must be `huffman` or `fixed5`",
        );
        need(!(self.experiment == "baseline" && self.schemes.is_empty()), "`baseline` needs `scheme`");
        need(!(self.experiment == "evaluate" && self.checkpoint.is_none()), "`evaluate` needs `checkpoint`");
        if let Err(e) = semcom::channel::model(&self.channel) {
            v.push(format!("`channel`: {e}"));
        }
        for (key, p) in [("corpus", &self.corpus), ("checkpoint", &self.checkpoint), ("denoiser", &self.denoiser)] {
            if let Some(p) = p {
                if !p.is_file() {
                    v.push(format!("`{key}`: {} does not exist", p.display()));
                }
            }
        }
        v
    }

    /// `output`, unless `LDSC_OUTPUT_DIR` is set.
    pub fn output_dir(&self) -> PathBuf {
        std::env::var_os(crate::OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| self.output.clone())
    }
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse::<T>().map_err(|e| format!("`{s}`: {e}"))
}

fn list<T>(value: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse).collect()
}
