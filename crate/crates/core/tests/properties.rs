//! Property checks of the invariants that hold for arbitrary inputs.

use proptest::prelude::*;
use v2s_core::alignment::{swd, w1_1d, w1_exact_oracle, wp_1d, EmpiricalDistribution};
use v2s_core::dataio::{parse_ucr, synth_source, synth_target, Dataset, Role, SynthSpec, TimeSeries, WaveKind};
use v2s_core::nnet::ops::{attention_pool_forward, softmax};
use v2s_core::nnet::{adam_step, AdamHyper, AdamState, ParamSet, Tensor};
use v2s_core::reprogram::{make_label_mapping, predict, ReprogramPlan};
use v2s_core::seed::rng;
use v2s_core::source_model::{build_source_arch, rmse_risk, WidthConfig};

fn tensor(shape: &[usize], seed: u64, std: f64) -> Tensor {
    Tensor::randn(shape, std, &mut rng(seed))
}

fn cloud(n: usize, k: usize, seed: u64) -> EmpiricalDistribution {
    EmpiricalDistribution::new(tensor(&[n, k], seed, 1.0)).unwrap()
}

fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn samples(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-10.0..10.0f64, len), prop::collection::vec(-10.0..10.0f64, len))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..12, scale in 0.1..60.0f64, seed in any::<u64>()) {
        let y = softmax(&tensor(&[rows, cols], seed, scale)).unwrap();
        for r in 0..rows {
            let s: f64 = y.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12, "row sum {s}");
            prop_assert!(y.row(r).iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn attention_weights_sum_to_one(b in 1usize..4, s in 1usize..10, d in 1usize..5, seed in any::<u64>()) {
        let (ctx, w) = attention_pool_forward(&tensor(&[b, s, d], seed, 1.0), &tensor(&[b, s], seed ^ 1, 5.0)).unwrap();
        prop_assert_eq!(ctx.shape(), &[b, d]);
        for r in 0..b {
            prop_assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn wasserstein_order_is_monotone((a, b) in (1usize..40).prop_flat_map(samples)) {
        let w1 = wp_1d(&a, &b, 1.0).unwrap();
        let w2 = wp_1d(&a, &b, 2.0).unwrap();
        prop_assert!(w1 <= w2 + 1e-12, "{w1} > {w2}");
        prop_assert_eq!(w1, w1_1d(&a, &b).unwrap());
    }

    #[test]
    fn one_dimensional_w1_matches_assignment((a, b) in (1usize..48).prop_flat_map(samples)) {
        let col = |v: &[f64]| EmpiricalDistribution::new(Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()).unwrap();
        let oracle = w1_exact_oracle(&col(&a), &col(&b)).unwrap();
        prop_assert!((w1_1d(&a, &b).unwrap() - oracle).abs() <= 1e-9);
    }

    #[test]
    fn swd_is_a_symmetric_nonnegative_replayable_estimate(n in 1usize..20, k in 1usize..6, seed in any::<u64>(), dir_seed in any::<u64>()) {
        let (a, b) = (cloud(n, k, seed), cloud(n, k, seed.wrapping_add(1)));
        let ab = swd(&a, &b, 50, 2.0, dir_seed).unwrap().value;
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, swd(&b, &a, 50, 2.0, dir_seed).unwrap().value);
        prop_assert_eq!(ab, swd(&a, &b, 50, 2.0, dir_seed).unwrap().value);
        prop_assert_eq!(swd(&a, &a, 50, 2.0, dir_seed).unwrap().value, 0.0);
    }

    #[test]
    fn mapping_sets_are_disjoint_equal_and_in_range(k in 2usize..60, c_frac in 0.0..1.0f64, seed in any::<u64>()) {
        let c = 2 + ((k - 2) as f64 * c_frac) as usize;
        let m = make_label_mapping(k, c, seed).unwrap();
        let mut seen = vec![false; k];
        for set in m.sets() {
            prop_assert_eq!(set.len(), k / c);
            for &s in set {
                prop_assert!(s < k && !seen[s]);
                seen[s] = true;
            }
        }
        prop_assert_eq!(m.unassigned().len(), k % c);
    }

    #[test]
    fn source_risk_lies_in_rmse_range(n in 1usize..30, k in 2usize..10, seed in any::<u64>()) {
        let probs = softmax(&tensor(&[n, k], seed, 4.0)).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 + seed as usize) % k).collect();
        let r = rmse_risk(&probs, &labels);
        prop_assert!((0.0..=2f64.sqrt()).contains(&r), "risk {r}");
    }

    #[test]
    fn adam_replay_is_bitwise(len in 1usize..20, steps in 1usize..6, seed in any::<u64>()) {
        let mut params = ParamSet::new();
        params.push("w", tensor(&[len], seed, 1.0)).unwrap();
        let grads: Vec<Vec<Tensor>> = (0..steps).map(|s| vec![tensor(&[len], seed ^ (s as u64 + 7), 1.0)]).collect();
        let replay = || {
            let mut state = AdamState::new(&params, AdamHyper::with_lr(0.01));
            let mut p = params.clone();
            for g in &grads {
                (state, p) = adam_step(&state, &p, g).unwrap();
            }
            (state.t, p.checksum())
        };
        prop_assert_eq!(replay(), replay());
    }

    #[test]
    fn ucr_text_round_trip(n in 1usize..12, len in 1usize..10, c in 2usize..4, seed in any::<u64>()) {
        let data = tensor(&[n, len], seed, 3.0);
        let series: Vec<TimeSeries> = (0..n)
            .map(|i| TimeSeries { values: data.row(i).to_vec(), label: i % c })
            .collect();
        let text: String = series
            .iter()
            .map(|s| {
                let vals: Vec<String> = s.values.iter().map(|v| format!("{v:?}")).collect();
                format!("{}\t{}\n", s.label + 10, vals.join("\t"))
            })
            .collect();
        let loaded = parse_ucr(&text, '\t', "p").unwrap();
        prop_assert_eq!(loaded.len(), n);
        prop_assert!(loaded.series().iter().all(|s| s.label < loaded.class_count() && s.values.len() == len));
        let classes = c.min(n);
        let expected = Dataset::new("p", Role::Target, series, classes).unwrap();
        prop_assert_eq!(loaded.labels(), expected.labels());
        for (a, b) in loaded.series().iter().zip(expected.series()) {
            prop_assert_eq!(&a.values, &b.values);
        }
    }

    #[test]
    fn generators_are_pure(kind in 0usize..3, c in 2usize..5, len in 8usize..40, n in 1usize..4, seed in any::<u64>()) {
        let spec = SynthSpec {
            kind: [WaveKind::Sinusoid, WaveKind::Bumps, WaveKind::Bursts][kind],
            class_count: c,
            length: len,
            samples_per_class: n,
            noise_std: 0.1,
            seed,
        };
        prop_assert_eq!(synth_source(&spec).unwrap(), synth_source(&spec).unwrap());
        prop_assert_eq!(synth_target(&spec).unwrap(), synth_target(&spec).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn prediction_is_argmax_of_scaled_scores(seed in any::<u64>(), scale in 1e-6..1e6f64, m in 1usize..4) {
        let mut model = build_source_arch(4, 64, WidthConfig::scaled(1), seed).unwrap();
        model.freeze();
        let mapping = make_label_mapping(4, 2, seed).unwrap();
        let plan = ReprogramPlan::build(64, 16, m, 0.0, 0.04, seed).unwrap();
        let x = tensor(&[16], seed ^ 3, 1.0);
        let (label, scores) = predict(&model, &plan, &mapping, x.data()).unwrap();
        let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
        prop_assert_eq!(label, first_max(&scaled));
    }
}
