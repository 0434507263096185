use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{DataSpec, DatasetKind, FakeKind};
use crate::dfa::TimeEncoding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcquirerChoice {
    Learned,
    Random,
    Complete,
    /// Top-`budget` features by random-forest importance, fixed over time.
    Static,
}

impl AcquirerChoice {
    pub const ALL: [AcquirerChoice; 4] = [
        AcquirerChoice::Random,
        AcquirerChoice::Static,
        AcquirerChoice::Learned,
        AcquirerChoice::Complete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AcquirerChoice::Learned => "learned",
            AcquirerChoice::Random => "random",
            AcquirerChoice::Complete => "complete",
            AcquirerChoice::Static => "static",
        }
    }
}

impl std::str::FromStr for AcquirerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(AcquirerChoice::Learned),
            "random" => Ok(AcquirerChoice::Random),
            "complete" => Ok(AcquirerChoice::Complete),
            "static" => Ok(AcquirerChoice::Static),
            other => Err(Error::Config(format!(
                "unknown acquirer '{other}' (expected learned, random, complete or static)"
            ))),
        }
    }
}

/// A complete description of one run. Text form is `key = value` lines
/// grouped under `[data]`, `[model]`, `[train]` and `[output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSpec,
    pub acquirer: AcquirerChoice,
    pub budget: usize,
    pub temperature: f64,
    pub penalty_scale: f64,
    pub acquirer_hidden: usize,
    pub lstm_layers: usize,
    pub time_encoding: TimeEncoding,
    pub forest_trees: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

const KEYS: &[&str] = &[
    "data.dataset",
    "data.input",
    "data.fold",
    "data.fake",
    "data.fake_count",
    "data.shift",
    "data.normalize",
    "data.gp_variance",
    "model.acquirer",
    "model.budget",
    "model.temperature",
    "model.penalty_scale",
    "model.acquirer_hidden",
    "model.lstm_layers",
    "model.time_encoding",
    "model.forest_trees",
    "train.batch_size",
    "train.lr",
    "train.max_epochs",
    "train.patience",
    "train.val_fraction",
    "train.seed",
    "output.dir",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

impl ExperimentConfig {
    /// Architecture defaults differ per dataset: acquirer hidden width 4 and
    /// 2 LSTM layers for m-FordA, 8 and 3 for the spoken digits.
    pub fn defaults_for(dataset: DatasetKind) -> Self {
        let (hidden, layers) = match dataset {
            DatasetKind::MFordA => (4, 2),
            DatasetKind::SpokenArabic => (8, 3),
        };
        ExperimentConfig {
            data: DataSpec::new(dataset, Path::new("data").join(match dataset {
                DatasetKind::MFordA => "FordA",
                DatasetKind::SpokenArabic => "SpokenArabicDigits",
            })),
            acquirer: AcquirerChoice::Learned,
            budget: 5,
            temperature: 1.0,
            penalty_scale: 100.0,
            acquirer_hidden: hidden,
            lstm_layers: layers,
            time_encoding: TimeEncoding::Normalized,
            forest_trees: 100,
            batch_size: 1000,
            lr: 1e-3,
            max_epochs: 200,
            patience: 20,
            val_fraction: 0.1,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }

    /// Sets one `section.key`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data.dataset" => {
                let d: DatasetKind = v.parse()?;
                if d != self.data.dataset {
                    return Err(Error::Config(
                        "data.dataset must be set before any other key".into(),
                    ));
                }
            }
            "data.input" => self.data.input = PathBuf::from(v),
            "data.fold" => self.data.fold = num(key, v)?,
            "data.fake" => self.data.fake = v.parse::<FakeKind>()?,
            "data.fake_count" => self.data.fake_count = num(key, v)?,
            "data.shift" => self.data.shift = boolean(key, v)?,
            "data.normalize" => self.data.normalize = boolean(key, v)?,
            "data.gp_variance" => self.data.gp_variance = num(key, v)?,
            "model.acquirer" => self.acquirer = v.parse()?,
            "model.budget" => self.budget = num(key, v)?,
            "model.temperature" => self.temperature = num(key, v)?,
            "model.penalty_scale" => self.penalty_scale = num(key, v)?,
            "model.acquirer_hidden" => self.acquirer_hidden = num(key, v)?,
            "model.lstm_layers" => self.lstm_layers = num(key, v)?,
            "model.time_encoding" => {
                self.time_encoding = match v {
                    "normalized" => TimeEncoding::Normalized,
                    "raw" => TimeEncoding::Raw,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected normalized or raw, got '{v}'"
                        )))
                    }
                }
            }
            "model.forest_trees" => self.forest_trees = num(key, v)?,
            "train.batch_size" => self.batch_size = num(key, v)?,
            "train.lr" => self.lr = num(key, v)?,
            "train.max_epochs" => self.max_epochs = num(key, v)?,
            "train.patience" => self.patience = num(key, v)?,
            "train.val_fraction" => self.val_fraction = num(key, v)?,
            "train.seed" => {
                self.seed = num(key, v)?;
                self.data.seed = self.seed;
            }
            "output.dir" => self.out_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Builds a config from defaults plus `(section.key, value)` pairs.
    /// `data.dataset`, if present, picks the defaults; later pairs win.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let dataset = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "data.dataset")
            .map(|(_, v)| v.trim().parse::<DatasetKind>())
            .transpose()?
            .unwrap_or(DatasetKind::MFordA);
        let mut cfg = ExperimentConfig::defaults_for(dataset);
        for (k, v) in pairs.iter().filter(|(k, _)| k != "data.dataset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `[section]` headers and `key = value` lines; `#` starts a
    /// comment. Unknown or repeated keys are errors.
    pub fn parse_pairs(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
        let mut section = String::new();
        let mut seen = BTreeMap::new();
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected 'key = value'"))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::parse(origin, i + 1, format!("unknown key '{key}'")));
            }
            if seen.insert(key.clone(), i + 1).is_some() {
                return Err(Error::parse(origin, i + 1, format!("duplicate key '{key}'")));
            }
            pairs.push((key, v.trim().to_string()));
        }
        Ok(pairs)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        Self::from_pairs(&Self::parse_pairs(text, origin)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("train.batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("train.lr must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("train.val_fraction must lie in (0, 1)");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("model.temperature must be positive");
        }
        if !(self.penalty_scale >= 0.0 && self.penalty_scale.is_finite()) {
            return bad("model.penalty_scale must be non-negative");
        }
        if self.lstm_layers == 0 || self.acquirer_hidden == 0 {
            return bad("model.lstm_layers and model.acquirer_hidden must be positive");
        }
        if self.forest_trees == 0 {
            return bad("model.forest_trees must be positive");
        }
        if !(self.data.gp_variance > 0.0 && self.data.gp_variance.is_finite()) {
            return bad("data.gp_variance must be positive");
        }
        if self.data.fold == 0 {
            return bad("data.fold must be positive");
        }
        if self.data.shift && (self.data.fake == FakeKind::None || self.data.fake_count == 0) {
            return bad("data.shift needs fake features");
        }
        Ok(())
    }

    /// Resolved `(section.key, value)` pairs in canonical order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let te = match self.time_encoding {
            TimeEncoding::Normalized => "normalized",
            TimeEncoding::Raw => "raw",
        };
        vec![
            ("data.dataset", self.data.dataset.as_str().into()),
            ("data.input", self.data.input.display().to_string()),
            ("data.fold", self.data.fold.to_string()),
            ("data.fake", self.data.fake.as_str().into()),
            ("data.fake_count", self.data.fake_count.to_string()),
            ("data.shift", self.data.shift.to_string()),
            ("data.normalize", self.data.normalize.to_string()),
            ("data.gp_variance", format!("{:?}", self.data.gp_variance)),
            ("model.acquirer", self.acquirer.as_str().into()),
            ("model.budget", self.budget.to_string()),
            ("model.temperature", format!("{:?}", self.temperature)),
            ("model.penalty_scale", format!("{:?}", self.penalty_scale)),
            ("model.acquirer_hidden", self.acquirer_hidden.to_string()),
            ("model.lstm_layers", self.lstm_layers.to_string()),
            ("model.time_encoding", te.into()),
            ("model.forest_trees", self.forest_trees.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.lr", format!("{:?}", self.lr)),
            ("train.max_epochs", self.max_epochs.to_string()),
            ("train.patience", self.patience.to_string()),
            ("train.val_fraction", format!("{:?}", self.val_fraction)),
            ("train.seed", self.seed.to_string()),
            ("output.dir", self.out_dir.display().to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.pairs() {
            let (s, k) = key.split_once('.').unwrap();
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{s}]\n"));
                section = s;
            }
            out.push_str(&format!("{k} = {value}\n"));
        }
        out
    }

    fn digest(&self, skip: &[&str]) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.pairs() {
            if !skip.contains(&k) {
                h.update(format!("{k}={v}\n"));
            }
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Identifies the run; the output directory does not take part.
    pub fn hash(&self) -> String {
        self.digest(&["output.dir"])
    }

    /// Identifies the table cell: the run hash without the seed.
    pub fn cell_hash(&self) -> String {
        self.digest(&["output.dir", "train.seed"])
    }
}
