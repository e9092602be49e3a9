//! Randomized invariants across the library.

use std::collections::{BTreeMap, HashSet};

use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semcom::channel::{self, ChannelRealization, ConstellationSpec, ZeroForcing};
use semcom::classic::rs::RsCode;
use semcom::classic::source::{Fixed5Coder, HuffmanCodebook, HuffmanCoder, SourceCoder};
use semcom::nncore::{checkpoint, Checkpoint, DType, Graph, ParamKind, ParamSet, Partition, Tensor, UniformQuantizer};
use semcom::slim;
use semcom::textpipe::{Bleu, END, UNK};

fn tensor(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-30.0..30.0)).collect();
        let mut g = Graph::new();
        let x = g.constant(tensor(rows, cols, data));
        let p = g.softmax(x);
        for r in 0..rows {
            prop_assert!((g.value(p).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(row in prop::collection::vec(-3.0f64..3.0, 8)) {
        let m = row.iter().sum::<f64>() / 8.0;
        let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 8.0;
        prop_assume!(v > 0.2);
        let mut g = Graph::new();
        let x = g.constant(tensor(1, 8, row));
        let gamma = g.constant(tensor(1, 8, vec![1.0; 8]));
        let beta = g.constant(tensor(1, 8, vec![0.0; 8]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        let out = g.value(y).data();
        let mean = out.iter().sum::<f64>() / 8.0;
        let var = out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 8.0;
        prop_assert!(mean.abs() < 1e-6);
        prop_assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn checkpoint_round_trip(sizes in prop::collection::vec(1usize..20, 1..5), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (i, n) in sizes.iter().enumerate() {
            let data = (0..*n).map(|_| rng.random_range(-1e3..1e3)).collect();
            params.insert(format!("p{i}"), tensor(1, *n, data), Partition::SemanticEncoder, ParamKind::Weight);
        }
        let ckpt = Checkpoint::new(params).with_meta("k", 3);
        let mut buf = Vec::new();
        checkpoint::write(&mut buf, &ckpt, DType::F64).unwrap();
        let back = checkpoint::read(&mut &buf[..]).unwrap();
        prop_assert_eq!(back.params, ckpt.params);
        prop_assert_eq!(back.meta, ckpt.meta);
    }

    #[test]
    fn bleu_is_bounded_and_relabel_invariant(
        cand in prop::collection::vec(0u32..6, 0..12),
        reference in prop::collection::vec(0u32..6, 1..12),
        shift in 1u32..100,
    ) {
        let b = Bleu::new(4).unwrap();
        let s = b.sentence(&cand, &reference);
        prop_assert!((0.0..=1.0).contains(&s));
        // any injective relabeling, here a reversal plus offset
        let relabel = |v: &[u32]| v.iter().map(|t| 5 - t + shift).collect::<Vec<_>>();
        prop_assert_eq!(b.sentence(&relabel(&cand), &relabel(&reference)), s);
    }

    #[test]
    fn bleu_decreases_as_overlap_is_destroyed(reference in prop::collection::vec(0u32..20, 4..15)) {
        let b = Bleu::new(4).unwrap();
        let mut cand = reference.clone();
        let mut prev = b.sentence(&cand, &reference);
        prop_assert!((prev - 1.0).abs() < 1e-12);
        for i in 0..cand.len() {
            cand[i] = 1000 + i as u32;
            let s = b.sentence(&cand, &reference);
            prop_assert!(s <= prev + 1e-12, "{} > {}", s, prev);
            prev = s;
        }
        // only the smoothing floor remains
        prop_assert!(prev < 1e-6, "{}", prev);
    }

    #[test]
    fn real_expansion_matches_complex_product(n in 1usize..5, blocks in 1usize..4, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = || Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let h = nalgebra::DMatrix::from_fn(n, n, |_, _| c());
        let xs: Vec<nalgebra::DVector<Complex64>> = (0..blocks).map(|_| nalgebra::DVector::from_fn(n, |_, _| c())).collect();
        let mut real = Vec::new();
        for x in &xs {
            real.extend(x.iter().map(|z| z.re));
            real.extend(x.iter().map(|z| z.im));
        }
        let ch = ChannelRealization { h: h.clone(), model: "test".into() };
        let y = ch.apply(&tensor(1, 2 * n * blocks, real)).unwrap();
        for (b, x) in xs.iter().enumerate() {
            let want = &h * x;
            let got = &y.data()[2 * n * b..2 * n * (b + 1)];
            for i in 0..n {
                prop_assert!((got[i] - want[i].re).abs() < 1e-12);
                prop_assert!((got[n + i] - want[i].im).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_forcing_inverts_noiseless_channel(n in 1usize..5, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = channel::model("rician:k=2").unwrap().sample(n, &mut rng).unwrap();
        let zf = ZeroForcing::new(&ch.h);
        prop_assume!(zf.as_ref().is_ok_and(|z| z.condition() < 1e6));
        let x = tensor(3, 4 * n, (0..12 * n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let back = zf.unwrap().apply(&ch.apply(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn quantize_dequantize_is_idempotent(
        bits in 1u32..17,
        lo in -5.0f64..5.0,
        width in 0.01f64..10.0,
        xs in prop::collection::vec(-20.0f64..20.0, 1..50),
    ) {
        let q = UniformQuantizer::from_range(bits, lo, lo + width).unwrap();
        for &x in &xs {
            prop_assert_eq!(q.fake(q.fake(x)), q.fake(x));
        }
        let spec = ConstellationSpec::new(bits, lo, lo + width).unwrap();
        let once = channel::constellation_quantize_dequantize(&xs, &spec);
        prop_assert_eq!(channel::constellation_quantize_dequantize(&once, &spec), once);
    }

    #[test]
    fn pruning_removes_the_smallest_floor_m_gamma(
        a in prop::collection::vec(-8i32..8, 1..60),
        b in prop::collection::vec(-8i32..8, 1..60),
        gamma in 0.0f64..0.99,
    ) {
        // small integer magnitudes force many ties
        let mut params = ParamSet::new();
        for (name, w) in [("a", &a), ("b", &b)] {
            let data: Vec<f64> = w.iter().map(|&v| v as f64 * 0.25).collect();
            params.insert(name, tensor(1, data.len(), data), Partition::ChannelEncoder, ParamKind::Weight);
        }
        params.insert("bias", tensor(1, 2, vec![0.0, 0.0]), Partition::ChannelEncoder, ParamKind::Bias);
        let (pruned, summary) = slim::prune(&params, gamma).unwrap();
        let m = a.len() + b.len();
        let want = (m as f64 * gamma).floor() as usize;
        prop_assert_eq!(summary.pruned, want);
        prop_assert!((summary.sparsity() - gamma).abs() <= 1.0 / m as f64);
        // brute-force oracle: every removed magnitude is <= every kept one
        let mut removed = Vec::new();
        let mut kept = Vec::new();
        for name in ["a", "b"] {
            let e = pruned.get(name).unwrap();
            let orig = params.tensor(name).unwrap().data();
            for (i, keep) in e.mask.as_ref().unwrap().iter().enumerate() {
                if *keep { kept.push(orig[i].abs()) } else {
                    removed.push(orig[i].abs());
                    prop_assert_eq!(e.tensor.data()[i], 0.0);
                }
            }
        }
        prop_assert_eq!(removed.len(), want);
        let max_removed = removed.iter().copied().fold(0.0, f64::max);
        prop_assert!(kept.iter().all(|&k| k >= max_removed));
        prop_assert!(pruned.get("bias").unwrap().mask.is_none());
    }

    #[test]
    fn weight_quantization_error_is_at_most_half_a_step(
        data in prop::collection::vec(-3.0f64..3.0, 1..80),
        bits in 1u32..17,
    ) {
        let layer = slim::quantize_layer(&data, None, bits).unwrap();
        let back = layer.dequantize();
        let half = layer.quantizer.map_or(0.0, |q| q.step() / 2.0);
        for (x, y) in data.iter().zip(&back) {
            prop_assert!((x - y).abs() <= half * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn compression_ratio_is_monotone(g1 in 0.0f64..0.98, dg in 0.001f64..0.01, m in 1u32..32) {
        let g2 = g1 + dg;
        let psi = |g, m| slim::nominal_compression_ratio(g, m).unwrap();
        prop_assert!(psi(g2, m) > psi(g1, m));
        prop_assert!(psi(g1, m + 1) < psi(g1, m));
    }

    #[test]
    fn huffman_is_complete_and_prefix_free(freqs in prop::collection::vec(1u64..1000, 2..40)) {
        let mut table: BTreeMap<u32, u64> = freqs.iter().enumerate().map(|(i, &f)| (i as u32 + 4, f)).collect();
        // the coder terminates with END and maps unseen words to UNK
        table.insert(END, 1 + freqs[0] % 7);
        table.insert(UNK, 1);
        let book = HuffmanCodebook::from_frequencies(&table).unwrap();
        prop_assert!((book.kraft_sum() - 1.0).abs() < 1e-12);
        let codes: Vec<&[bool]> = table.keys().map(|s| book.code(*s).unwrap()).collect();
        for (i, a) in codes.iter().enumerate() {
            for (j, b) in codes.iter().enumerate() {
                prop_assert!(i == j || !b.starts_with(a));
            }
        }
        let msg: Vec<u32> = table.keys().copied().filter(|&s| s != END).rev().collect();
        let coder = HuffmanCoder { book };
        prop_assert_eq!(coder.decode(&coder.encode(&msg)), Some(msg));
    }

    #[test]
    fn fixed5_round_trips(freqs in prop::collection::vec(1u64..50, 1..60), msg in prop::collection::vec(4u32..80, 0..20)) {
        let table: BTreeMap<u32, u64> = freqs.iter().enumerate().map(|(i, &f)| (i as u32 + 4, f)).collect();
        let coder = Fixed5Coder::from_frequencies(&table);
        prop_assert_eq!(coder.decode(&coder.encode(&msg)), Some(msg));
    }

    #[test]
    fn rs_corrects_up_to_t_errors(
        n in 3usize..60,
        parity in 1usize..12,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        use rand::seq::index::sample;
        let k = n.saturating_sub(parity).max(1);
        prop_assume!(k < n);
        let code = RsCode::new(n, k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let msg: Vec<u8> = (0..k).map(|_| rng.random()).collect();
        let word = code.encode_block(&msg).unwrap();
        for e in 0..=code.t() {
            let mut r = word.clone();
            for pos in sample(&mut rng, n, e) {
                r[pos] ^= rng.random_range(1..=255u8);
            }
            let d = code.decode_block(&r).unwrap();
            prop_assert!(!d.failed);
            prop_assert_eq!(&d.message, &msg);
            prop_assert_eq!(d.corrected.iter().copied().collect::<HashSet<_>>().len(), e);
        }
    }
}
