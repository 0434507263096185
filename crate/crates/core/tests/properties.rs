mod common;

use dfa_core::data::DatasetKind;
use dfa_core::dfa::{run_episode, Episode};
use dfa_core::diffmath::{Tape, Tensor};
use dfa_core::selection::{budgeted_select, GumbelConfig};
use dfa_core::train::{evaluate, AcquirerChoice, ExperimentConfig, TrainedModel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn learned_model(features: usize, budget: usize, seed: u64) -> TrainedModel {
    let mut cfg = ExperimentConfig::defaults_for(DatasetKind::MFordA);
    cfg.acquirer = AcquirerChoice::Learned;
    cfg.budget = budget;
    cfg.seed = seed;
    TrainedModel::init(&cfg, features, 2, None).unwrap()
}

fn episode(model: &TrainedModel, series: &Tensor, noise_seed: u64) -> Episode {
    run_episode(
        series,
        0,
        &model.acquirer,
        &model.classifier,
        model.budget,
        model.time,
        ChaCha8Rng::seed_from_u64(noise_seed),
        0,
    )
    .unwrap()
}

fn series_strategy(max_len: usize, features: usize) -> impl Strategy<Value = Tensor> {
    (2..=max_len).prop_flat_map(move |len| {
        prop::collection::vec(-3.0f64..3.0, len * features)
            .prop_map(move |v| Tensor::new(vec![len, features], v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, v in prop::collection::vec(-30.0f64..30.0, 1..40)) {
        let cols = v.len();
        let data: Vec<f64> = (0..rows).flat_map(|r| v.iter().map(move |x| x * (r + 1) as f64)).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![rows, cols], data).unwrap()).unwrap();
        let s = tape.softmax(x).unwrap();
        let out = tape.value(s);
        for r in 0..rows {
            let total: f64 = out.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12, "row {} sums to {}", r, total);
            prop_assert!(out.row(r).iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn budget_is_never_exceeded(
        logits in prop::collection::vec(-5.0f64..5.0, 2..30),
        budget_frac in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let f = logits.len();
        let budget = ((f as f64) * budget_frac) as usize;
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::new(vec![1, f], logits).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = budgeted_select(&mut tape, l, budget, &GumbelConfig::default(), &mut rng).unwrap();
        prop_assert!(m.hard.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert!(m.popcounts()[0] <= budget);
        let soft = tape.value(m.soft);
        prop_assert!(soft.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn unmeasured_values_cannot_leak(
        series in series_strategy(8, 6),
        fuzz in prop::collection::vec(-100.0f64..100.0, 48),
        seed in 0u64..1000,
    ) {
        let model = learned_model(6, 2, seed);
        let base = episode(&model, &series, seed);
        let mut altered = series.clone();
        for (i, v) in altered.data_mut().iter_mut().enumerate() {
            if base.masks.data()[i] == 0.0 {
                *v = fuzz[i];
            }
        }
        let other = episode(&model, &altered, seed);
        prop_assert_eq!(&base.masks, &other.masks);
        prop_assert_eq!(&base.class_logits, &other.class_logits);
        prop_assert_eq!(base.cost, other.cost);
    }

    #[test]
    fn masks_depend_only_on_the_past(
        series in series_strategy(8, 5),
        cut_frac in 0.0f64..1.0,
        fuzz in prop::collection::vec(-10.0f64..10.0, 40),
        seed in 0u64..1000,
    ) {
        let model = learned_model(5, 2, seed);
        let len = series.rows();
        let t = ((len - 1) as f64 * cut_frac) as usize;
        let base = episode(&model, &series, seed);
        let mut altered = series.clone();
        for (i, v) in altered.data_mut().iter_mut().enumerate().skip((t + 1) * 5) {
            *v = fuzz[i];
        }
        let other = episode(&model, &altered, seed);
        // m_{t+1} is chosen from observations up to step t
        let keep = ((t + 2).min(len)) * 5;
        prop_assert_eq!(&base.masks.data()[..keep], &other.masks.data()[..keep]);
        prop_assert_eq!(&base.measured.data()[..(t + 1) * 5], &other.measured.data()[..(t + 1) * 5]);
    }
}

#[test]
fn batch_size_does_not_change_evaluation() {
    for (bundle, label) in [
        (common::toy_bundle(20, 23, 9, 4, 3), "regular"),
        (common::ragged_bundle(23, 3, 11, 4, 4), "ragged"),
    ] {
        for choice in [AcquirerChoice::Learned, AcquirerChoice::Random, AcquirerChoice::Complete] {
            let mut cfg = ExperimentConfig::defaults_for(DatasetKind::MFordA);
            cfg.acquirer = choice;
            cfg.budget = 2;
            let model = TrainedModel::init(&cfg, 4, 2, None).unwrap();
            let runs: Vec<_> = [1, 7, bundle.test.len()]
                .into_iter()
                .map(|bs| evaluate(&model, &bundle, &bundle.test, 11, 1, bs).unwrap())
                .collect();
            for r in &runs[1..] {
                assert_eq!(r.predictions, runs[0].predictions, "{label} {choice:?}");
                assert_eq!(r.costs, runs[0].costs, "{label} {choice:?}");
                assert_eq!(r.accuracy.to_bits(), runs[0].accuracy.to_bits(), "{label} {choice:?}");
                assert!((r.loss - runs[0].loss).abs() < 1e-12, "{label} {choice:?}");
            }
        }
    }
}

#[test]
fn ragged_costs_follow_each_series_length() {
    let bundle = common::ragged_bundle(15, 2, 9, 4, 8);
    let mut cfg = ExperimentConfig::defaults_for(DatasetKind::MFordA);
    cfg.acquirer = AcquirerChoice::Complete;
    cfg.budget = 2;
    let model = TrainedModel::init(&cfg, 4, 2, None).unwrap();
    let r = evaluate(&model, &bundle, &bundle.test, 0, 1, 4).unwrap();
    let want: Vec<usize> = bundle.test.series.iter().map(|s| s.len()).collect();
    assert_eq!(r.costs, want);
}
