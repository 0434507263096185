#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use dfa_core::data::{DatasetBundle, FakeKind, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Class 1 carries a slow sine in its first half, class 0 only noise.
fn signal(rng: &mut ChaCha8Rng, label: usize, len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| {
            let s = if label == 1 && t < len / 2 {
                (t as f64 * 0.3).sin()
            } else {
                0.0
            };
            s + 0.3 * rng.random_range(-1.0..1.0)
        })
        .collect()
}

/// Writes a FordA-shaped archive (labels -1/1, `len` values per row).
pub fn write_forda_like(dir: &Path, n_train: usize, n_test: usize, len: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, n) in [("FordA_TRAIN.tsv", n_train), ("FordA_TEST.tsv", n_test)] {
        let mut text = String::new();
        for i in 0..n {
            let y = i % 2;
            let vals: Vec<String> = signal(&mut rng, y, len).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(text, "{}\t{}", if y == 1 { "1" } else { "-1" }, vals.join("\t"));
        }
        std::fs::write(dir.join(name), text).unwrap();
    }
}

/// In-memory bundle of `real` learnable features plus nothing else.
pub fn toy_bundle(n_train: usize, n_test: usize, len: usize, real: usize, seed: u64) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = |n: usize| {
        let mut s = Split::default();
        for i in 0..n {
            let y = i % 2;
            let mut v = Vec::with_capacity(len * real);
            let base = signal(&mut rng, y, len);
            for b in &base {
                for j in 0..real {
                    v.push(b * (1.0 + j as f64 * 0.1) + 0.1 * rng.random_range(-1.0..1.0));
                }
            }
            s.series.push(v);
            s.labels.push(y);
        }
        s
    };
    let train = split(n_train);
    let test = split(n_test);
    DatasetBundle {
        name: "toy".into(),
        classes: 2,
        features_real: real,
        features_fake: 0,
        fake_kind: FakeKind::None,
        shifted: false,
        seed,
        train,
        test,
    }
}

/// Same as [`toy_bundle`] but with series lengths drawn from `lo..=hi`.
pub fn ragged_bundle(n: usize, lo: usize, hi: usize, real: usize, seed: u64) -> DatasetBundle {
    let mut b = toy_bundle(n, n, hi, real, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for s in b.train.series.iter_mut().chain(b.test.series.iter_mut()) {
        let len = rng.random_range(lo..=hi);
        s.truncate(len * real);
    }
    b
}
