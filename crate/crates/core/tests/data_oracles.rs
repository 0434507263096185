mod common;

use dfa_core::data::{
    gp_paths, inject_fake, prepare, shift_real_features, DataSpec, DatasetBundle, DatasetKind,
    FakeKind, GpKernelConfig, Split,
};
use dfa_core::forest::{Forest, ForestConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn constant_bundle(n: usize, len: usize, real: usize) -> DatasetBundle {
    let split = Split {
        series: (0..n)
            .map(|i| (0..len * real).map(|k| (i * 7 + k) as f64 * 0.01).collect())
            .collect(),
        labels: (0..n).map(|i| i % 2).collect(),
    };
    DatasetBundle {
        name: "fixture".into(),
        classes: 2,
        features_real: real,
        features_fake: 0,
        fake_kind: FakeKind::None,
        shifted: false,
        seed: 0,
        train: split.clone(),
        test: split,
    }
}

#[test]
fn noise_fake_std_is_half() {
    // 2000 series x 50 steps x 10 fakes = 10^6 entries
    let b = constant_bundle(2000, 50, 1);
    let z = inject_fake(&b, FakeKind::Noise, 10, 3, &GpKernelConfig::default()).unwrap();
    let vals: Vec<f64> = z
        .train
        .series
        .iter()
        .flat_map(|s| s.chunks(11).flat_map(|step| step[1..].to_vec()))
        .collect();
    assert_eq!(vals.len(), 1_000_000);
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((std - 0.5).abs() < 0.005, "std {std}");
}

#[test]
fn gp_covariance_matches_kernel() {
    let times: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let paths = gp_paths(&times, &GpKernelConfig::default(), 10_000, &mut rng).unwrap();
    let cov = |i: usize, j: usize| -> f64 {
        let n = paths.len() as f64;
        let mi = paths.iter().map(|p| p[i]).sum::<f64>() / n;
        let mj = paths.iter().map(|p| p[j]).sum::<f64>() / n;
        paths.iter().map(|p| (p[i] - mi) * (p[j] - mj)).sum::<f64>() / n
    };
    let lag0 = cov(0, 0);
    let lag15 = cov(0, 3);
    assert!((lag0 - 0.5).abs() < 0.02, "lag 0: {lag0}");
    assert!((lag15 - 0.5 * (-0.5f64).exp()).abs() < 0.02, "lag 1.5: {lag15}");
}

#[test]
fn injected_gp_features_have_kernel_variance() {
    let b = constant_bundle(2000, 6, 1);
    let z = inject_fake(&b, FakeKind::Gp, 5, 4, &GpKernelConfig::default()).unwrap();
    let mut vals = Vec::new();
    for s in &z.train.series {
        for step in s.chunks(6) {
            vals.extend_from_slice(&step[1..]);
        }
    }
    let n = vals.len() as f64;
    let var = vals.iter().map(|v| v * v).sum::<f64>() / n;
    assert!((var - 0.5).abs() < 0.02, "variance {var}");
    // one-step lag: 0.5 exp(-1 / 4.5)
    let (mut acc, mut cnt) = (0.0, 0.0);
    for s in &z.train.series {
        for t in 0..5 {
            for j in 1..6 {
                acc += s[t * 6 + j] * s[(t + 1) * 6 + j];
                cnt += 1.0;
            }
        }
    }
    let lag1 = acc / cnt;
    assert!((lag1 - 0.5 * (-1.0f64 / 4.5).exp()).abs() < 0.02, "lag 1: {lag1}");
}

#[test]
fn shifted_segments_follow_the_thirds_example() {
    let (len, real, fake) = (50, 10, 20);
    let mut b = constant_bundle(3, len, real);
    for s in b.train.series.iter_mut() {
        s.iter_mut().enumerate().for_each(|(k, v)| *v = 1000.0 + (k % real) as f64);
    }
    let z = inject_fake(&b, FakeKind::Zeros, fake, 0, &GpKernelConfig::default()).unwrap();
    let s = shift_real_features(&z).unwrap();
    let f = real + fake;
    for (orig, series) in z.train.series.iter().zip(&s.train.series) {
        for t in 0..len {
            let row = &series[t * f..(t + 1) * f];
            let block = if t < 16 { 0 } else if t < 32 { 1 } else { 2 };
            for j in 0..f {
                let is_real = (block * real..(block + 1) * real).contains(&j);
                assert_eq!(row[j] >= 1000.0, is_real, "t={t} j={j}");
                if is_real {
                    assert_eq!(row[j], 1000.0 + (j - block * real) as f64);
                }
            }
            let mut a = orig[t * f..(t + 1) * f].to_vec();
            let mut b2 = row.to_vec();
            a.sort_by(f64::total_cmp);
            b2.sort_by(f64::total_cmp);
            assert_eq!(a, b2, "multiset differs at step {t}");
        }
    }
    for t in 0..len {
        let block = if t < 16 { 0 } else if t < 32 { 1 } else { 2 };
        assert!(s.is_real(t, len, block * real));
        assert!(!s.is_real(t, len, ((block + 1) % 3) * real));
    }
}

#[test]
fn shifting_needs_divisible_fake_count() {
    let b = constant_bundle(2, 10, 10);
    let z = inject_fake(&b, FakeKind::Zeros, 15, 0, &GpKernelConfig::default()).unwrap();
    assert!(shift_real_features(&z).is_err());
}

#[test]
fn m_forda_pipeline_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    common::write_forda_like(dir.path(), 6, 4, 500, 1);
    let mut spec = DataSpec::new(DatasetKind::MFordA, dir.path());
    spec.fake = FakeKind::Zeros;
    let b = prepare(&spec).unwrap();
    assert_eq!((b.features(), b.max_len(), b.min_len()), (40, 50, 50));
    assert_eq!((b.train.len(), b.test.len(), b.classes), (6, 4, 2));
    assert_eq!(b.train.labels, vec![0, 1, 0, 1, 0, 1]);
    assert!(b.summary().contains("F=40"));
    assert!(b.summary().contains("T=50"));

    spec.fake = FakeKind::None;
    let plain = prepare(&spec).unwrap();
    assert_eq!(plain.features(), 10);
    assert_eq!(plain.fake_kind, FakeKind::None);

    spec.shift = true;
    assert!(prepare(&spec).is_err());

    spec.fake = FakeKind::Gp;
    assert_eq!(prepare(&spec).unwrap(), prepare(&spec).unwrap());
}

#[test]
fn missing_archive_names_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let err = prepare(&DataSpec::new(DatasetKind::SpokenArabic, dir.path())).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("SpokenArabicDigits_TRAIN.ts"), "{msg}");
    assert!(msg.contains("SpokenArabicDigits_TEST.ts"), "{msg}");
}

/// Accuracy of a depth-2 tree on one channel: every step of every series
/// is a sample carrying its series' label. Fit and scored on disjoint sets.
fn stump_accuracy(train: &Split, test: &Split, f: usize, j: usize) -> f64 {
    let pairs = |split: &Split| -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (s, &label) in split.series.iter().zip(&split.labels) {
            for step in s.chunks(f) {
                x.push(vec![step[j]]);
                y.push(label);
            }
        }
        (x, y)
    };
    let (x, y) = pairs(train);
    let cfg = ForestConfig {
        n_trees: 1,
        max_depth: Some(2),
        bootstrap: false,
        ..ForestConfig::default()
    };
    let forest = Forest::fit(&x, &y, &cfg).unwrap();
    let (xt, yt) = pairs(test);
    forest.accuracy(&xt, &yt)
}

#[test]
fn fake_features_carry_no_label_information() {
    let (len, real, fake) = (10, 2, 30);
    for kind in [FakeKind::Noise, FakeKind::Gp] {
        // 2000 balanced series per side
        let b = common::toy_bundle(2000, 2000, len, real, 5);
        let z = inject_fake(&b, kind, fake, 9, &GpKernelConfig::default()).unwrap();
        let f = real + fake;
        for j in real..f {
            let acc = stump_accuracy(&z.train, &z.test, f, j);
            assert!((acc - 0.5).abs() <= 0.03, "{kind:?} feature {j}: stump accuracy {acc}");
        }
        let acc = stump_accuracy(&z.train, &z.test, f, 0);
        assert!(acc > 0.55, "real feature stump accuracy {acc}");
    }
}
