use mthm::attention::{expected_alignment, expected_chunk_attention};
use mthm::augment::{apply_specaugment, MaskAxis, SpecAugmentPolicy};
use mthm::multihead::{mth_mocha_context, AttentionMode, HeadConfig, SharedHeadParams};
use mthm::numeric::{RngStream, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(1e-6f64..(1.0 - 1e-6), rows * cols)
        .prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

fn shape() -> impl Strategy<Value = (usize, usize)> {
    (1usize..6, 1usize..9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn alignment_rows_are_sub_stochastic(p in shape().prop_flat_map(|(u, t)| matrix(u, t))) {
        let alpha = expected_alignment(&p).unwrap();
        for i in 0..alpha.rows() {
            let row = alpha.row(i);
            prop_assert!(row.iter().all(|&a| (0.0..=1.0).contains(&a)));
            prop_assert!(row.iter().sum::<f64>() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn alignment_mass_never_grows(p in shape().prop_flat_map(|(u, t)| matrix(u, t))) {
        let alpha = expected_alignment(&p).unwrap();
        let mass: Vec<f64> = (0..alpha.rows()).map(|i| alpha.row(i).iter().sum()).collect();
        for w in mass.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn chunk_attention_keeps_mass(
        (p, u) in shape().prop_flat_map(|(u, t)| (matrix(u, t), prop::collection::vec(-6.0f64..6.0, u * t)
            .prop_map(move |v| Tensor::new(vec![u, t], v).unwrap()))),
        w in 1usize..5,
    ) {
        let alpha = expected_alignment(&p).unwrap();
        let beta = expected_chunk_attention(&alpha, &u, w).unwrap();
        for i in 0..alpha.rows() {
            let a: f64 = alpha.row(i).iter().sum();
            let b: f64 = beta.row(i).iter().sum();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(beta.row(i).iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn specaugment_blocks_respect_policy(
        frames in 1usize..120,
        bins in 1usize..50,
        seed in any::<u64>(),
        time_masks in 0usize..3,
        freq_masks in 0usize..3,
    ) {
        let policy = SpecAugmentPolicy { time_masks, freq_masks, ..SpecAugmentPolicy::default() };
        let feats = Tensor::<f32>::from_fn(&[frames, bins], |i| 1.0 + i as f32);
        let (out, blocks) = apply_specaugment(&feats, &policy, &mut RngStream::new(seed, 0)).unwrap();
        let (mut t, mut f) = (0, 0);
        for b in &blocks {
            let (limit, bound) = match b.axis {
                MaskAxis::Time => { t += 1; (frames, policy.time_bound(frames)) }
                MaskAxis::Freq => { f += 1; (bins, policy.freq_bound(bins)) }
            };
            prop_assert!(b.len < bound.max(1));
            prop_assert!(b.start + b.len <= limit);
        }
        prop_assert_eq!(t, time_masks);
        prop_assert_eq!(f, freq_masks);
        let (again, _) = apply_specaugment(&feats, &policy, &mut RngStream::new(seed, 0)).unwrap();
        prop_assert_eq!(out, again);
    }
}

#[test]
fn hard_selections_never_move_backwards() {
    let cfg = HeadConfig { heads: 2, dim_h: 6, dim_s: 4, window: 2, energy_dim: 3 };
    for seed in 0..40 {
        let mut rng = RngStream::new(seed, 7);
        let mut params = SharedHeadParams::<f64>::init(&cfg, &mut rng);
        params.monotonic.r.data_mut()[0] = rng.uniform_range(-1.0, 3.0);
        let s = Tensor::from_fn(&[5, 4], |_| rng.gaussian());
        let h = Tensor::from_fn(&[9, 6], |_| rng.gaussian());
        let out = mth_mocha_context(&params, &cfg, &s, &h, AttentionMode::Hard, None).unwrap();
        for k in 0..cfg.heads {
            let picks: Vec<Option<usize>> = out.selections.iter().map(|row| row[k]).collect();
            let mut last = 0;
            let mut finished = false;
            for pick in picks {
                match pick {
                    Some(j) => {
                        assert!(!finished, "seed {seed}: head {k} selected after finishing");
                        assert!(j >= last && j < h.rows());
                        last = j;
                    }
                    None => finished = true,
                }
            }
        }
    }
}
