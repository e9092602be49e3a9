//! Statistical checks against closed-form oracles.

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semcom::channel::{self, ChannelRealization};
use semcom::classic::rs::RsCode;
use semcom::classic::{baseline_pipeline, qam, Baseline};
use semcom::csi::{self, CsiMode};
use semcom::deepsc::Link;
use semcom::nncore::Tensor;
use semcom::textpipe::{corpus_from_text, toy};

fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

#[test]
fn transmit_realizes_requested_snr() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    // unit power per real dimension
    let x: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let x = Tensor::new(vec![1, n], x).unwrap();
    for snr in [0.0, 7.5, 18.0] {
        let y = channel::transmit(&x, &ChannelRealization::identity(1), snr, &mut rng).unwrap();
        let noise = y.data().iter().zip(x.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        let measured = -10.0 * noise.log10();
        assert!((measured - snr).abs() < 0.2, "{snr} dB measured as {measured}");
    }
}

#[test]
fn ls_estimate_is_unbiased() {
    let model = channel::model("rayleigh:rho=0.5").unwrap();
    let p = csi::pilot_matrix(2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let trials = 10_000;
    let mut errs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let ch = model.sample(2, &mut rng).unwrap();
        let rough = csi::ls_estimate(&csi::observe_pilots(&ch, &p, 3.0, &mut rng), &p).unwrap();
        errs.push(rough - ch.h);
    }
    for i in 0..2 {
        for j in 0..2 {
            for part in [|z: Complex64| z.re, |z: Complex64| z.im] {
                let v: Vec<f64> = errs.iter().map(|e| part(e[(i, j)])).collect();
                let m = v.iter().sum::<f64>() / trials as f64;
                let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
                assert!(m.abs() < 3.0 * sd / (trials as f64).sqrt(), "entry ({i},{j}) bias {m}");
            }
        }
    }
    // error variance matches the analytic value
    let var = errs.iter().map(|e| e.norm_squared()).sum::<f64>() / (4 * trials) as f64;
    let want = csi::ls_error_variance(3.0, &p);
    assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
}

#[test]
fn rs_fails_sometimes_beyond_t() {
    let code = RsCode::new(15, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let trials = 2000;
    let mut ok = 0;
    for _ in 0..trials {
        let msg: Vec<u8> = (0..11).map(|_| rng.random()).collect();
        let mut r = code.encode_block(&msg).unwrap();
        for pos in sample(&mut rng, 15, code.t() + 1) {
            r[pos] ^= rng.random_range(1..=255u8);
        }
        let d = code.decode_block(&r).unwrap();
        ok += usize::from(!d.failed && d.message == msg);
    }
    assert!(ok < trials, "{ok}/{trials} recovered with t+1 errors");
}

/// Exact bit error rate of the Gray 64-QAM under the link's convention
/// (amplitude √2, noise variance σ² per real dimension), per axis.
fn qam_ber_oracle(snr_db: f64) -> f64 {
    let sigma = channel::noise_variance(snr_db).sqrt();
    let d = 2.0 * (2.0f64 / 42.0).sqrt();
    let level = |i: usize| (i as f64 - 3.5) * d;
    let gray = |i: usize| i ^ (i >> 1);
    let mut bit_errors = 0.0;
    for sent in 0..8 {
        for got in 0..8 {
            if got == sent {
                continue;
            }
            let lo = if got == 0 { f64::NEG_INFINITY } else { level(got) - d / 2.0 };
            let hi = if got == 7 { f64::INFINITY } else { level(got) + d / 2.0 };
            let p = q_function((lo - level(sent)) / sigma) - q_function((hi - level(sent)) / sigma);
            bit_errors += p * (gray(sent) ^ gray(got)).count_ones() as f64;
        }
    }
    bit_errors / (8.0 * 3.0)
}

#[test]
fn qam_ber_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let amp = 2f64.sqrt();
    for snr in [14.0, 18.0] {
        let bits: Vec<bool> = (0..600_000).map(|_| rng.random()).collect();
        let sd = channel::noise_variance(snr).sqrt();
        let mut symbols = qam::modulate(&bits);
        let noise = channel::gaussian_noise(2 * symbols.len(), sd * sd, &mut rng);
        for (s, n) in symbols.iter_mut().zip(noise.chunks(2)) {
            *s = (*s * amp + Complex64::new(n[0], n[1])) / amp;
        }
        let errors = qam::demodulate(&symbols).iter().zip(&bits).filter(|(a, b)| a != b).count();
        let measured = errors as f64 / bits.len() as f64;
        let want = qam_ber_oracle(snr);
        let se = (want / bits.len() as f64).sqrt();
        assert!((measured - want).abs() < 4.0 * se + 0.02 * want, "{snr} dB: {measured} vs {want}");
    }
}

#[test]
fn huffman_beats_fixed_length_on_average() {
    let corpus = corpus_from_text(toy::bundled(), 0.1, 7).unwrap();
    let huffman = Baseline::standard("huffman", &corpus.train).unwrap();
    let fixed = Baseline::standard("fixed5", &corpus.train).unwrap();
    let bits = |b: &Baseline| corpus.test.iter().map(|s| b.coder.encode(&s.tokens).len()).sum::<usize>();
    assert!(bits(&huffman) <= bits(&fixed), "{} > {}", bits(&huffman), bits(&fixed));
}

#[test]
fn baseline_bleu_grows_with_snr() {
    let corpus = corpus_from_text(toy::bundled(), 0.1, 7).unwrap();
    let link = Link::new(channel::model("rayleigh").unwrap(), 1, CsiMode::Perfect, None).unwrap();
    let test = &corpus.test[..300];
    for scheme in ["huffman", "fixed5"] {
        let b = Baseline::standard(scheme, &corpus.train).unwrap();
        let curve: Vec<f64> = [0.0, 6.0, 12.0, 18.0]
            .iter()
            .map(|&snr| (1..=3).map(|seed| baseline_pipeline(test, &b, &link, snr, seed, 4).unwrap().corpus_bleu).sum::<f64>() / 3.0)
            .collect();
        assert!(curve.windows(2).all(|w| w[0] <= w[1]), "{scheme}: {curve:?}");
        assert!(curve[3] > curve[0] + 0.2, "{scheme}: {curve:?}");
    }
}
