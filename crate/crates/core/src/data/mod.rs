//! Datasets: archive loaders, m-FordA folding, fake-feature corruption,
//! feature shifting, normalisation and the on-disk cache.

mod cache;
mod fetch;
mod loaders;
mod synth;

pub use cache::{load_bundle, save_bundle, CACHE_FILE, META_FILE};
pub use fetch::{fetch, sha256_file};
pub use loaders::{load_ts_multivariate, load_ucr_tsv, LabeledSeries};
pub use synth::{
    cholesky, gp_paths, inject_fake, make_m_forda, rbf_covariance, shift_real_features,
    shift_schedule, znormalize, GpKernelConfig, Normalizer, NOISE_STD,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FakeKind {
    #[default]
    None,
    Zeros,
    Noise,
    Gp,
}

impl FakeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FakeKind::None => "none",
            FakeKind::Zeros => "zeros",
            FakeKind::Noise => "noise",
            FakeKind::Gp => "gp",
        }
    }
}

impl std::str::FromStr for FakeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FakeKind::None),
            "zeros" => Ok(FakeKind::Zeros),
            "noise" => Ok(FakeKind::Noise),
            "gp" => Ok(FakeKind::Gp),
            other => Err(Error::Config(format!(
                "unknown fake kind '{other}' (expected none, zeros, noise or gp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    MFordA,
    SpokenArabic,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::MFordA => "m-forda",
            DatasetKind::SpokenArabic => "spoken-arabic",
        }
    }

    /// Archive files expected in the input directory (train, test).
    pub fn archive_files(self) -> [&'static str; 2] {
        match self {
            DatasetKind::MFordA => ["FordA_TRAIN.tsv", "FordA_TEST.tsv"],
            DatasetKind::SpokenArabic => {
                ["SpokenArabicDigits_TRAIN.ts", "SpokenArabicDigits_TEST.ts"]
            }
        }
    }

    /// FordA ships z-normalised per series; the spoken digits do not.
    pub fn normalizes_by_default(self) -> bool {
        matches!(self, DatasetKind::SpokenArabic)
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m-forda" => Ok(DatasetKind::MFordA),
            "spoken-arabic" => Ok(DatasetKind::SpokenArabic),
            other => Err(Error::Config(format!(
                "unknown dataset '{other}' (expected m-forda or spoken-arabic)"
            ))),
        }
    }
}

/// Everything needed to rebuild a bundle from the raw archive.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub dataset: DatasetKind,
    pub input: PathBuf,
    /// Consecutive univariate steps folded into one step (m-FordA only).
    pub fold: usize,
    pub fake: FakeKind,
    pub fake_count: usize,
    pub shift: bool,
    pub normalize: bool,
    /// Variance multiplier of the GP fake-feature kernel.
    pub gp_variance: f64,
    pub seed: u64,
}

impl DataSpec {
    pub fn new(dataset: DatasetKind, input: impl Into<PathBuf>) -> Self {
        DataSpec {
            dataset,
            input: input.into(),
            fold: 10,
            fake: FakeKind::None,
            fake_count: 30,
            shift: false,
            normalize: dataset.normalizes_by_default(),
            gp_variance: GpKernelConfig::default().variance,
            seed: 0,
        }
    }
}

/// Loads the archive and applies, in order: folding, normalisation (real
/// features, training statistics), fake features, shifting.
pub fn prepare(spec: &DataSpec) -> Result<DatasetBundle> {
    let fake_count = if spec.fake == FakeKind::None { 0 } else { spec.fake_count };
    if spec.shift && fake_count == 0 {
        return Err(Error::Config(
            "shifting needs fake features (set a fake kind and a positive count)".into(),
        ));
    }
    let files = spec.dataset.archive_files();
    let paths: Vec<PathBuf> = files.iter().map(|f| spec.input.join(f)).collect();
    if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
        return Err(Error::io(
            missing,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!(
                    "expected {} and {} in {}",
                    files[0],
                    files[1],
                    spec.input.display()
                ),
            ),
        ));
    }
    let load = |p: &Path| -> Result<LabeledSeries> {
        match spec.dataset {
            DatasetKind::MFordA => make_m_forda(&load_ucr_tsv(p)?, spec.fold),
            DatasetKind::SpokenArabic => load_ts_multivariate(p),
        }
    };
    let mut train = load(&paths[0])?;
    let mut test = load(&paths[1])?;
    if train.features != test.features {
        return Err(Error::invalid(format!(
            "train has {} features but test has {}",
            train.features, test.features
        )));
    }
    LabeledSeries::align_classes(&mut train, &mut test);
    let mut bundle = DatasetBundle {
        name: spec.dataset.as_str().to_string(),
        classes: train.class_names.len(),
        features_real: train.features,
        features_fake: 0,
        fake_kind: FakeKind::None,
        shifted: false,
        seed: spec.seed,
        train: Split {
            series: train.series,
            labels: train.labels,
        },
        test: Split {
            series: test.series,
            labels: test.labels,
        },
    };
    bundle.validate()?;
    if spec.normalize {
        bundle = znormalize(&bundle, true).0;
    }
    if fake_count > 0 {
        bundle = inject_fake(
            &bundle,
            spec.fake,
            fake_count,
            spec.seed,
            &GpKernelConfig {
                variance: spec.gp_variance,
                ..GpKernelConfig::default()
            },
        )?;
    }
    if spec.shift {
        bundle = shift_real_features(&bundle)?;
    }
    Ok(bundle)
}

/// Labelled series sharing a feature count. Each series is `len * features`
/// values, step-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub series: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn lengths(&self, features: usize) -> Vec<usize> {
        self.series.iter().map(|s| s.len() / features).collect()
    }

    /// Rows `idx` as a new split.
    pub fn subset(&self, idx: &[usize]) -> Split {
        Split {
            series: idx.iter().map(|&i| self.series[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub classes: usize,
    pub features_real: usize,
    pub features_fake: usize,
    pub fake_kind: FakeKind,
    pub shifted: bool,
    /// Seed the corruption was drawn with.
    pub seed: u64,
    pub train: Split,
    pub test: Split,
}

impl DatasetBundle {
    pub fn features(&self) -> usize {
        self.features_real + self.features_fake
    }

    /// Checks labels, lengths and value counts.
    pub fn validate(&self) -> Result<()> {
        let f = self.features();
        if f == 0 || self.classes == 0 {
            return Err(Error::invalid("dataset has no features or no classes"));
        }
        for (name, split) in [("train", &self.train), ("test", &self.test)] {
            if split.series.len() != split.labels.len() {
                return Err(Error::invalid(format!("{name}: series/label count mismatch")));
            }
            for (i, s) in split.series.iter().enumerate() {
                if s.is_empty() || s.len() % f != 0 {
                    return Err(Error::invalid(format!(
                        "{name} series {i}: {} values is not a positive multiple of {f} features",
                        s.len()
                    )));
                }
            }
            if let Some(&bad) = split.labels.iter().find(|&&y| y >= self.classes) {
                return Err(Error::invalid(format!(
                    "{name}: label {bad} out of range for {} classes",
                    self.classes
                )));
            }
        }
        Ok(())
    }

    pub fn max_len(&self) -> usize {
        let f = self.features();
        self.train
            .series
            .iter()
            .chain(&self.test.series)
            .map(|s| s.len() / f)
            .max()
            .unwrap_or(0)
    }

    pub fn min_len(&self) -> usize {
        let f = self.features();
        self.train
            .series
            .iter()
            .chain(&self.test.series)
            .map(|s| s.len() / f)
            .min()
            .unwrap_or(0)
    }

    /// Whether feature `feature` holds real data at step `t` of a series of
    /// length `len`.
    pub fn is_real(&self, t: usize, len: usize, feature: usize) -> bool {
        let r = self.features_real;
        if !self.shifted {
            return feature < r;
        }
        let schedule = shift_schedule(len, r, self.features_fake).unwrap_or_else(|_| vec![(0, 0)]);
        let offset = schedule
            .iter()
            .rev()
            .find(|&&(start, _)| start <= t)
            .map_or(0, |&(_, o)| o);
        (offset..offset + r).contains(&feature)
    }

    /// Human-readable summary in the shape of a dataset statistics table.
    pub fn summary(&self) -> String {
        let (lo, hi) = (self.min_len(), self.max_len());
        let length = if lo == hi {
            lo.to_string()
        } else {
            format!("{lo}-{hi}")
        };
        format!(
            "dataset={} classes={} train={} test={} F={} (real={}, fake={} {}) T={} shifted={} seed={}",
            self.name,
            self.classes,
            self.train.len(),
            self.test.len(),
            self.features(),
            self.features_real,
            self.features_fake,
            self.fake_kind.as_str(),
            length,
            self.shifted,
            self.seed
        )
    }
}
