use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use amadapt::acoustic_model::{
    build_model, deserialize_checkpoint, dropout_rate, serialize_checkpoint, DropoutSchedule, LayerSpec, ModelConfig,
    TdnnLayer,
};
use amadapt::audio::AudioSignal;
use amadapt::augment::{fft_convolve, speed_perturb};
use amadapt::evaluation::{align_words, boxplot_stats, greedy_decode, quantile, relative_improvement, SymbolTable};
use amadapt::trainer::{lr_at, StageConfig};

fn words(ids: &[u8]) -> Vec<String> {
    ids.iter().map(|i| format!("w{i}")).collect()
}

fn seq() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 0..12)
}

proptest! {
    #[test]
    fn alignment_swap_exchanges_deletions_and_insertions(r in seq(), h in seq()) {
        let a = align_words(&words(&r), &words(&h));
        let b = align_words(&words(&h), &words(&r));
        prop_assert_eq!(a.errors(), b.errors());
        prop_assert_eq!(a.deletions + a.substitutions, b.insertions + b.substitutions);
        prop_assert_eq!(a.insertions + a.substitutions, b.deletions + b.substitutions);
        prop_assert_eq!(a.correct + a.substitutions + a.deletions, r.len());
        prop_assert_eq!(a.correct + a.substitutions + a.insertions, h.len());
    }

    #[test]
    fn alignment_cost_bounds(r in seq(), h in seq()) {
        let a = align_words(&words(&r), &words(&h));
        prop_assert!(a.errors() >= r.len().abs_diff(h.len()));
        prop_assert!(a.errors() <= r.len().max(h.len()));
        prop_assert_eq!(a.errors() == 0, r == h);
    }

    #[test]
    fn greedy_decode_matches_rule(frames in prop::collection::vec((0usize..5, 0usize..5), 1..40)) {
        let k = 5;
        let mut lp = Array2::from_elem((frames.len(), k), -10.0);
        let mut argmax = Vec::new();
        for (t, &(c, tie)) in frames.iter().enumerate() {
            lp[[t, c]] = -0.1;
            // a tie resolves to the lower class id
            if tie % 3 == 0 {
                lp[[t, tie]] = -0.1;
            }
            argmax.push(if tie % 3 == 0 { c.min(tie) } else { c });
        }
        let symbols = SymbolTable::synthetic(k);
        let mut expected = Vec::new();
        for (t, &c) in argmax.iter().enumerate() {
            if c != 0 && (t == 0 || argmax[t - 1] != c) {
                expected.push(symbols.word(c).to_string());
            }
        }
        prop_assert_eq!(greedy_decode(lp.view(), &symbols).unwrap(), expected);
    }

    #[test]
    fn tdnn_is_shift_equivariant(seed in 0u64..1000, t in 8usize..20, shift in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = TdnnLayer::new_random(&[-2, 0, 1], 3, 4, &mut rng);
        let long = Array2::from_shape_simple_fn((t + shift, 3), || rng.random_range(-1.0..1.0));
        let tail = long.slice(s![shift.., ..]).to_owned();
        let (y_long, y_tail) = (layer.forward(long.view()), layer.forward(tail.view()));
        // frames whose context stays inside both sequences
        for i in 2..t - 1 {
            for j in 0..4 {
                prop_assert!((y_long[[i + shift, j]] - y_tail[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn convolution_commutes_and_is_linear(x in prop::collection::vec(-1.0f64..1.0, 1..300),
                                           h in prop::collection::vec(-1.0f64..1.0, 1..300),
                                           a in -3.0f64..3.0) {
        let xh = fft_convolve(&x, &h);
        let hx = fft_convolve(&h, &x);
        prop_assert_eq!(xh.len(), x.len() + h.len() - 1);
        let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
        let scaled = fft_convolve(&ax, &h);
        for i in 0..xh.len() {
            prop_assert!((xh[i] - hx[i]).abs() < 1e-9);
            prop_assert!((scaled[i] - a * xh[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn speed_perturb_length(n in 200usize..4000, f in prop::sample::select(vec![0.9, 1.0, 1.1])) {
        let x = AudioSignal::new((0..n).map(|i| (i as f64 * 0.01).sin()).collect(), 16000).unwrap();
        let y = speed_perturb(&x, f).unwrap();
        prop_assert_eq!(y.len(), (n as f64 / f).round() as usize);
    }

    #[test]
    fn schedules_stay_in_range(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let rate = dropout_rate(&DropoutSchedule::stage1(), p).unwrap();
        prop_assert!((0.0..=0.3).contains(&rate));
        for cfg in [StageConfig::stage1(), StageConfig::stage2()] {
            let (a, b) = (lr_at(&cfg, p.min(q)).unwrap(), lr_at(&cfg, p.max(q)).unwrap());
            prop_assert!(a >= b);
            prop_assert!(b >= cfg.lr_final * (1.0 - 1e-12) && a <= cfg.lr_init * (1.0 + 1e-12));
        }
    }

    #[test]
    fn quartiles_are_ordered(mut v in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let b = boxplot_stats(&v).unwrap();
        v.sort_by(f64::total_cmp);
        prop_assert!(b.min <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.max);
        prop_assert_eq!(b.min, v[0]);
        prop_assert_eq!(b.max, *v.last().unwrap());
        prop_assert_eq!(quantile(&v, 0.5), b.median);
    }

    #[test]
    fn relative_improvement_sign(base in 0.01f64..2.0, sys in 0.0f64..2.0) {
        let r = relative_improvement(base, sys).unwrap();
        prop_assert_eq!(r > 0.0, sys < base);
        prop_assert!(r <= 100.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trip(seed in 0u64..1000, width in 2usize..6, cell in 2usize..5, outputs in 2usize..6) {
        let cfg = ModelConfig {
            input_dim: 7,
            layers: vec![LayerSpec::tdnn(&[-1, 0, 1], width), LayerSpec::lstmp(cell, 2), LayerSpec::tdnn(&[0], width)],
            num_outputs: outputs,
            scale_factor: 1.0,
        };
        let ck = build_model(&cfg, seed).unwrap();
        let bytes = serialize_checkpoint(&ck);
        let back = deserialize_checkpoint(&bytes).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(serialize_checkpoint(&back), bytes);
    }
}
