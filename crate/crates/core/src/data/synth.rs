use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{DatasetBundle, FakeKind, LabeledSeries, Split};
use crate::error::{Error, Result};
use crate::seeds::{rng_for, tag};

/// Standard deviation of the Gaussian-noise fake features.
pub const NOISE_STD: f64 = 0.5;

/// Folds `m` consecutive univariate steps into one step with `m` features:
/// `new[t, f] = old[t * m + f]`.
pub fn make_m_forda(univariate: &LabeledSeries, m: usize) -> Result<LabeledSeries> {
    if univariate.features != 1 {
        return Err(Error::invalid(format!(
            "folding expects univariate series, got {} features",
            univariate.features
        )));
    }
    if m == 0 {
        return Err(Error::invalid("fold width m must be positive"));
    }
    for (i, s) in univariate.series.iter().enumerate() {
        if s.len() % m != 0 {
            return Err(Error::invalid(format!(
                "series {i}: length {} is not divisible by m={m}",
                s.len()
            )));
        }
    }
    // Step-major storage makes the fold a reinterpretation of the same buffer.
    Ok(LabeledSeries {
        features: m,
        ..univariate.clone()
    })
}

/// RBF prior: `variance * exp(-(s - t)^2 / (2 * length_scale^2))`, plus
/// `jitter` on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpKernelConfig {
    pub variance: f64,
    pub length_scale: f64,
    pub jitter: f64,
}

impl Default for GpKernelConfig {
    fn default() -> Self {
        GpKernelConfig {
            variance: 0.5,
            length_scale: 1.5,
            jitter: 1e-8,
        }
    }
}

pub fn rbf_covariance(times: &[f64], cfg: &GpKernelConfig, jitter: f64) -> Vec<f64> {
    let n = times.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = times[i] - times[j];
            k[i * n + j] = cfg.variance * (-d * d / (2.0 * cfg.length_scale.powi(2))).exp();
        }
        k[i * n + i] += jitter;
    }
    k
}

/// Lower-triangular Cholesky factor of a symmetric `n x n` matrix, or `None`
/// if it is not numerically positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if d <= 0.0 || !d.is_finite() {
                    return None;
                }
                l[i * n + j] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn gp_factor(times: &[f64], cfg: &GpKernelConfig) -> Result<Vec<f64>> {
    if !(cfg.variance > 0.0 && cfg.length_scale > 0.0) {
        return Err(Error::invalid("GP kernel needs positive variance and length scale"));
    }
    let n = times.len();
    let mut jitter = cfg.jitter;
    loop {
        if let Some(l) = cholesky(&rbf_covariance(times, cfg, jitter), n) {
            return Ok(l);
        }
        jitter *= 10.0;
        if jitter > 1e-4 {
            return Err(Error::invalid(format!(
                "GP covariance over {n} points is not positive definite even with jitter 1e-4"
            )));
        }
    }
}

fn sample_with_factor(l: &[f64], n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    (0..n)
        .map(|i| (0..=i).map(|k| l[i * n + k] * z[k]).sum())
        .collect()
}

/// `count` independent draws from the GP prior evaluated at `times`.
pub fn gp_paths(
    times: &[f64],
    cfg: &GpKernelConfig,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    let l = gp_factor(times, cfg)?;
    Ok((0..count)
        .map(|_| sample_with_factor(&l, times.len(), rng))
        .collect())
}

/// Appends `count` label-independent features after the real ones. Every
/// series draws from its own stream derived from `(seed, split, index)`.
pub fn inject_fake(
    bundle: &DatasetBundle,
    kind: FakeKind,
    count: usize,
    seed: u64,
    gp: &GpKernelConfig,
) -> Result<DatasetBundle> {
    if bundle.features_fake != 0 {
        return Err(Error::invalid("dataset already carries fake features"));
    }
    let count = if kind == FakeKind::None { 0 } else { count };
    let r = bundle.features_real;
    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let mut factors: HashMap<usize, Vec<f64>> = HashMap::new();

    let mut corrupt = |split: &Split, split_id: u64| -> Result<Split> {
        let mut out = Vec::with_capacity(split.len());
        for (i, s) in split.series.iter().enumerate() {
            let t_len = s.len() / r;
            let mut rng = rng_for(seed, &[tag::FAKE, split_id, i as u64]);
            let fakes: Vec<Vec<f64>> = match kind {
                FakeKind::None | FakeKind::Zeros => vec![vec![0.0; t_len]; count],
                FakeKind::Noise => (0..count)
                    .map(|_| (0..t_len).map(|_| noise.sample(&mut rng)).collect())
                    .collect(),
                FakeKind::Gp => {
                    let l = match factors.entry(t_len) {
                        Entry::Occupied(e) => e.into_mut(),
                        Entry::Vacant(e) => {
                            let times: Vec<f64> = (0..t_len).map(|t| t as f64).collect();
                            e.insert(gp_factor(&times, gp)?)
                        }
                    };
                    (0..count)
                        .map(|_| sample_with_factor(l, t_len, &mut rng))
                        .collect()
                }
            };
            let mut v = Vec::with_capacity(t_len * (r + count));
            for t in 0..t_len {
                v.extend_from_slice(&s[t * r..(t + 1) * r]);
                v.extend(fakes.iter().map(|f| f[t]));
            }
            out.push(v);
        }
        Ok(Split {
            series: out,
            labels: split.labels.clone(),
        })
    };

    let train = corrupt(&bundle.train, 0)?;
    let test = corrupt(&bundle.test, 1)?;
    Ok(DatasetBundle {
        features_fake: count,
        fake_kind: if count == 0 { FakeKind::None } else { kind },
        seed,
        train,
        test,
        ..bundle.clone()
    })
}

/// Segments `(start_step, real_index_offset)` for a series of length `len`.
///
/// With `K = (R + F_fake) / R` blocks, segment `k` starts at `k * L` with
/// `L = floor(len * R / (R + F_fake))` and puts the real features at
/// `[k R, (k + 1) R)`. The last segment runs to the end; empty segments are
/// dropped.
pub fn shift_schedule(len: usize, real: usize, fake: usize) -> Result<Vec<(usize, usize)>> {
    if real == 0 || !fake.is_multiple_of(real) {
        return Err(Error::invalid(format!(
            "shifting needs the fake count ({fake}) to be a multiple of the real count ({real})"
        )));
    }
    let blocks = (real + fake) / real;
    let seg = len * real / (real + fake);
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(blocks);
    for k in 0..blocks {
        let start = k * seg;
        if let Some(last) = out.last_mut() {
            if last.0 == start {
                *last = (start, k * real);
                continue;
            }
        }
        out.push((start, k * real));
    }
    Ok(out)
}

/// Moves the real block to `[k R, (k + 1) R)` during segment `k`, swapping
/// the fake features that lived there into `[0, R)`.
pub fn shift_real_features(bundle: &DatasetBundle) -> Result<DatasetBundle> {
    let (r, fk) = (bundle.features_real, bundle.features_fake);
    let f = r + fk;
    let shift = |split: &Split| -> Result<Split> {
        let mut series = Vec::with_capacity(split.len());
        for s in &split.series {
            let len = s.len() / f;
            let schedule = shift_schedule(len, r, fk)?;
            let mut v = s.clone();
            for (k, &(start, offset)) in schedule.iter().enumerate() {
                let end = schedule.get(k + 1).map_or(len, |n| n.0);
                if offset == 0 {
                    continue;
                }
                for t in start..end {
                    let row = &mut v[t * f..(t + 1) * f];
                    for j in 0..r {
                        row.swap(j, offset + j);
                    }
                }
            }
            series.push(v);
        }
        Ok(Split {
            series,
            labels: split.labels.clone(),
        })
    };
    Ok(DatasetBundle {
        train: shift(&bundle.train)?,
        test: shift(&bundle.test)?,
        shifted: fk > 0,
        ..bundle.clone()
    })
}

/// Affine map fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose training std fell under the floor are left as they are.
    pub applied: Vec<bool>,
}

const STD_FLOOR: f64 = 1e-6;

impl Normalizer {
    pub fn fit(split: &Split, features: usize, per_feature: bool) -> Normalizer {
        let groups = if per_feature { features } else { 1 };
        let mut sum = vec![0.0; groups];
        let mut count = vec![0usize; groups];
        for s in &split.series {
            for (i, v) in s.iter().enumerate() {
                let g = if per_feature { i % features } else { 0 };
                sum[g] += v;
                count[g] += 1;
            }
        }
        let mean: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let mut sq = vec![0.0; groups];
        for s in &split.series {
            for (i, v) in s.iter().enumerate() {
                let g = if per_feature { i % features } else { 0 };
                sq[g] += (v - mean[g]).powi(2);
            }
        }
        let std: Vec<f64> = sq
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c > 0 { (s / c as f64).sqrt() } else { 0.0 })
            .collect();
        let expand = |v: &[f64]| -> Vec<f64> {
            (0..features)
                .map(|j| v[if per_feature { j } else { 0 }])
                .collect()
        };
        let std = expand(&std);
        Normalizer {
            mean: expand(&mean),
            applied: std.iter().map(|&s| s >= STD_FLOOR).collect(),
            std,
        }
    }

    pub fn apply(&self, split: &Split) -> Split {
        let f = self.mean.len();
        Split {
            series: split
                .series
                .iter()
                .map(|s| {
                    s.iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let j = i % f;
                            if self.applied[j] {
                                (v - self.mean[j]) / self.std[j]
                            } else {
                                v
                            }
                        })
                        .collect()
                })
                .collect(),
            labels: split.labels.clone(),
        }
    }
}

/// Standardises with training statistics; the same map is applied to test.
pub fn znormalize(bundle: &DatasetBundle, per_feature: bool) -> (DatasetBundle, Normalizer) {
    let norm = Normalizer::fit(&bundle.train, bundle.features(), per_feature);
    let out = DatasetBundle {
        train: norm.apply(&bundle.train),
        test: norm.apply(&bundle.test),
        ..bundle.clone()
    };
    (out, norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_bundle(n: usize, t: usize, r: usize) -> DatasetBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mk = |rng: &mut ChaCha8Rng, n| Split {
            series: (0..n)
                .map(|_| (0..t * r).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            labels: (0..n).map(|i| i % 2).collect(),
        };
        DatasetBundle {
            name: "toy".into(),
            classes: 2,
            features_real: r,
            features_fake: 0,
            fake_kind: FakeKind::None,
            shifted: false,
            seed: 0,
            train: mk(&mut rng, n),
            test: mk(&mut rng, n / 2),
        }
    }

    #[test]
    fn fold_reshape() {
        let s = LabeledSeries {
            features: 1,
            series: vec![(0..500).map(|v| v as f64).collect()],
            labels: vec![0],
            class_names: vec!["0".into()],
        };
        let m = make_m_forda(&s, 10).unwrap();
        assert_eq!(m.features, 10);
        assert_eq!(m.series[0].len() / 10, 50);
        // new[t, f] = old[t*m + f]
        assert_eq!(m.series[0][3 * 10 + 7], 37.0);
        assert_eq!(make_m_forda(&s, 1).unwrap().series, s.series);
        assert!(make_m_forda(&s, 7).is_err());
    }

    #[test]
    fn zeros_keep_real_values_exact() {
        let b = toy_bundle(4, 6, 3);
        let z = inject_fake(&b, FakeKind::Zeros, 5, 1, &GpKernelConfig::default()).unwrap();
        assert_eq!(z.features(), 8);
        for (orig, new) in b.train.series.iter().zip(&z.train.series) {
            for t in 0..6 {
                assert_eq!(&new[t * 8..t * 8 + 3], &orig[t * 3..t * 3 + 3]);
                assert!(new[t * 8 + 3..(t + 1) * 8].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn injection_is_seeded() {
        let b = toy_bundle(4, 6, 3);
        let g = GpKernelConfig::default();
        let a = inject_fake(&b, FakeKind::Gp, 2, 9, &g).unwrap();
        assert_eq!(a, inject_fake(&b, FakeKind::Gp, 2, 9, &g).unwrap());
        assert_ne!(a, inject_fake(&b, FakeKind::Gp, 2, 10, &g).unwrap());
        assert!(inject_fake(&a, FakeKind::Zeros, 1, 0, &g).is_err());
    }

    #[test]
    fn worked_example_schedule() {
        assert_eq!(shift_schedule(50, 10, 20).unwrap(), vec![(0, 0), (16, 10), (32, 20)]);
        assert_eq!(shift_schedule(50, 10, 0).unwrap(), vec![(0, 0)]);
        assert!(shift_schedule(50, 10, 15).is_err());
        // degenerate short series: one segment
        assert_eq!(shift_schedule(2, 1, 3).unwrap(), vec![(0, 3)]);
    }

    #[test]
    fn shift_without_fakes_is_identity() {
        let b = toy_bundle(3, 5, 2);
        let s = shift_real_features(&b).unwrap();
        assert_eq!(s.train, b.train);
        assert!(!s.shifted);
    }

    #[test]
    fn normalize_is_idempotent_and_spares_constants() {
        let b = toy_bundle(20, 7, 3);
        let z = inject_fake(&b, FakeKind::Zeros, 2, 0, &GpKernelConfig::default()).unwrap();
        let (once, n1) = znormalize(&z, true);
        let (twice, _) = znormalize(&once, true);
        assert_eq!(n1.applied, vec![true, true, true, false, false]);
        for (a, b) in once.train.series.iter().flatten().zip(twice.train.series.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
        for s in &once.test.series {
            for t in 0..7 {
                assert_eq!(&s[t * 5 + 3..t * 5 + 5], &[0.0, 0.0]);
            }
        }
    }

    #[test]
    fn test_set_uses_train_statistics() {
        let mut b = toy_bundle(10, 4, 1);
        for s in &mut b.test.series {
            s.iter_mut().for_each(|v| *v += 100.0);
        }
        let (z, n) = znormalize(&b, true);
        let test_mean: f64 =
            z.test.series.iter().flatten().sum::<f64>() / z.test.series.iter().flatten().count() as f64;
        assert!(test_mean > 50.0, "test set must stay skewed: {test_mean}");
        let expect = (b.test.series[0][0] - n.mean[0]) / n.std[0];
        assert_eq!(z.test.series[0][0], expect);
    }

    #[test]
    fn cholesky_reconstructs() {
        let times: Vec<f64> = (0..10).map(|t| t as f64).collect();
        let cfg = GpKernelConfig::default();
        let k = rbf_covariance(&times, &cfg, cfg.jitter);
        let l = cholesky(&k, 10).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let v: f64 = (0..10).map(|m| l[i * 10 + m] * l[j * 10 + m]).sum();
                assert!((v - k[i * 10 + j]).abs() < 1e-12);
            }
        }
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }
}
