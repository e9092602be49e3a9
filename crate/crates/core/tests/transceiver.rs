//! Training behaviour of the end-to-end transceiver on small toy sets.

use semcom::channel;
use semcom::csi::CsiMode;
use semcom::deepsc::{evaluate, grad_norm_variance, train, EvalConfig, Link, TrainConfig, TransceiverConfig, TransceiverModel};
use semcom::nncore::ParamKind;
use semcom::slim::{self, PruneConfig};
use semcom::textpipe::{corpus_from_text, toy, Corpus};

fn corpus() -> Corpus {
    corpus_from_text(toy::bundled(), 0.1, 7).unwrap()
}

fn small(vocab: usize, seed: u64) -> TransceiverModel {
    let cfg = TransceiverConfig { vocab, dim: 32, heads: 2, enc_blocks: 1, dec_blocks: 1, ff: 64, symbols: 16 };
    TransceiverModel::new(cfg, seed).unwrap()
}

#[test]
fn noiseless_autoencoder_learns_identity() {
    let c = corpus();
    let set = &c.train[..500];
    let mut model = small(c.vocab.len(), 1);
    let mut tc = TrainConfig::new(CsiMode::Perfect, channel::model("awgn").unwrap());
    tc.snr_db = (f64::INFINITY, f64::INFINITY);
    tc.epochs = 30;
    tc.lr = 3e-3;
    tc.seed = 1;
    let log = train(&mut model, set, &[], &tc).unwrap();
    let first = log.epochs[0].loss;
    assert!(log.final_loss() < 0.5 * first, "loss {first} -> {}", log.final_loss());
    let report = evaluate(&model, set, &tc.link().unwrap(), &EvalConfig { snr_db: f64::INFINITY, ..Default::default() }).unwrap();
    assert!(report.token_accuracy >= 0.99, "token accuracy {}", report.token_accuracy);
}

#[test]
fn training_is_deterministic() {
    let c = corpus();
    let run = || {
        let mut model = small(c.vocab.len(), 4);
        let mut tc = TrainConfig::new(CsiMode::Rough, channel::model("rayleigh").unwrap());
        tc.epochs = 1;
        tc.max_sentences = Some(64);
        tc.seed = 9;
        let log = train(&mut model, &c.train, &[], &tc).unwrap();
        (model.params, log.epochs.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn csi_reduces_gradient_stochasticity() {
    let c = corpus();
    let model = small(c.vocab.len(), 2);
    let chan = channel::model("rayleigh").unwrap();
    let variance = |mode| {
        let link = Link::new(chan.clone(), 1, mode, None).unwrap();
        grad_norm_variance(&model, &c.train, &link, 12.0, 20, 16, 5).unwrap()
    };
    let (perfect, none) = (variance(CsiMode::Perfect), variance(CsiMode::None));
    assert!(perfect < none, "perfect {perfect} vs none {none}");
}

#[test]
fn fine_tuning_keeps_pruned_weights_at_zero() {
    let c = corpus();
    let mut model = small(c.vocab.len(), 3);
    let mut tc = TrainConfig::new(CsiMode::Perfect, channel::model("rician:k=2").unwrap());
    tc.max_sentences = Some(128);
    let (summary, log) =
        slim::prune_and_finetune(&mut model, &PruneConfig { gamma: 0.7, fine_tune_epochs: 2 }, &c.train, &[], &tc).unwrap();
    assert!(log.is_some());
    let mut zeros = 0;
    for (name, e) in model.params.iter() {
        if e.kind != ParamKind::Weight {
            continue;
        }
        let mask = e.mask.as_ref().unwrap_or_else(|| panic!("{name} lost its mask"));
        for (w, keep) in e.tensor.data().iter().zip(mask) {
            if !keep {
                assert_eq!(*w, 0.0, "{name} resurrected a pruned weight");
                zeros += 1;
            }
        }
    }
    assert_eq!(zeros, summary.pruned);
}

#[test]
fn awgn_smoke_run() {
    let c = corpus();
    let mut model = small(c.vocab.len(), 5);
    let mut tc = TrainConfig::new(CsiMode::Perfect, channel::model("awgn").unwrap());
    tc.snr_db = (12.0, 18.0);
    tc.epochs = 30;
    tc.lr = 2e-3;
    tc.max_sentences = Some(1000);
    tc.seed = 5;
    let log = train(&mut model, &c.train, &[], &tc).unwrap();
    let losses: Vec<f64> = log.epochs.iter().map(|e| e.loss).collect();
    let smoothed: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    assert!(smoothed.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    let report = evaluate(&model, &c.test[..50], &tc.link().unwrap(), &EvalConfig { snr_db: 18.0, seed: 1, ..Default::default() }).unwrap();
    assert!(report.exact_match >= 0.9, "exact match {}", report.exact_match);
}
