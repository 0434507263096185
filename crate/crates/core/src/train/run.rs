use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{AcquirerChoice, ExperimentConfig};
use crate::data::{DatasetBundle, Split};
use crate::diffmath::{Tape, Tensor};
use crate::dfa::{
    episodes_from_run, run_batch, AcquirerKind, Batch, Episode, LearnedAcquirer, Policy,
    TimeEncoding,
};
use crate::error::{Error, Result};
use crate::forest::{flatten_padded, static_mask, Forest, ForestConfig};
use crate::nn::{cross_entropy, Adam, AdamConfig, Checkpoint, LstmClassifier, MlpAcquirer, Parameters};
use crate::seeds::{derive_seed, rng_for, tag};
use crate::selection::{GumbelConfig, RowStreams};

/// Noise-stream tags for the evaluation splits.
pub mod split_tag {
    pub const VALIDATION: u64 = 0;
    pub const TEST: u64 = 1;
    pub const TRAIN: u64 = 2;
}

/// An acquirer plus classifier, ready to run episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub acquirer: AcquirerKind,
    pub classifier: LstmClassifier,
    pub budget: usize,
    pub time: TimeEncoding,
}

fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect()
}

impl TrainedModel {
    /// Fresh parameters drawn from the `INIT` stream of `cfg.seed`.
    pub fn init(cfg: &ExperimentConfig, features: usize, classes: usize, mask: Option<Vec<bool>>) -> Result<Self> {
        if cfg.budget > features {
            return Err(Error::Config(format!(
                "model.budget {} exceeds the feature count {features}",
                cfg.budget
            )));
        }
        let mut rng = rng_for(cfg.seed, &[tag::INIT]);
        let classifier = LstmClassifier::init(&mut rng, features, cfg.lstm_layers, classes);
        let acquirer = match cfg.acquirer {
            AcquirerChoice::Learned => {
                let gumbel = GumbelConfig {
                    temperature: cfg.temperature,
                    penalty_scale: cfg.penalty_scale,
                    hard_forward: true,
                };
                gumbel.validate()?;
                AcquirerKind::Learned(LearnedAcquirer {
                    params: MlpAcquirer::init(&mut rng, features, cfg.acquirer_hidden),
                    gumbel,
                })
            }
            AcquirerChoice::Random => AcquirerKind::Random,
            AcquirerChoice::Complete => AcquirerKind::Complete,
            AcquirerChoice::Static => AcquirerKind::Static(
                mask.ok_or_else(|| Error::invalid("static acquirer needs a feature mask"))?,
            ),
        };
        Ok(TrainedModel {
            acquirer,
            classifier,
            budget: cfg.budget,
            time: cfg.time_encoding,
        })
    }

    pub fn features(&self) -> usize {
        self.classifier.features()
    }

    pub fn classes(&self) -> usize {
        self.classifier.classes()
    }

    pub fn parameter_count(&self) -> usize {
        let acq = match &self.acquirer {
            AcquirerKind::Learned(l) => l.params.param_count(),
            _ => 0,
        };
        self.classifier.param_count() + acq
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("acquirer", self.acquirer.name());
        ck.set_meta("budget", self.budget);
        ck.set_meta("features", self.features());
        ck.set_meta("classes", self.classes());
        ck.set_meta("lstm_layers", self.classifier.layers.len());
        ck.set_meta(
            "time_encoding",
            match self.time {
                TimeEncoding::Normalized => "normalized",
                TimeEncoding::Raw => "raw",
            },
        );
        ck.add_params("classifier", &self.classifier);
        match &self.acquirer {
            AcquirerKind::Learned(l) => {
                ck.set_meta("acquirer_hidden", l.params.hidden());
                ck.set_meta("temperature", format!("{:?}", l.gumbel.temperature));
                ck.set_meta("penalty_scale", format!("{:?}", l.gumbel.penalty_scale));
                ck.add_params("acquirer", &l.params);
            }
            AcquirerKind::Static(m) => {
                let idx: Vec<String> = mask_indices(m).iter().map(|i| i.to_string()).collect();
                ck.set_meta("static_features", idx.join(","));
            }
            _ => {}
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            ck.meta(k)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks '{k}'")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("checkpoint '{k}' is not an integer")))
        };
        let real = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("checkpoint '{k}' is not a number")))
        };
        let (features, classes) = (int("features")?, int("classes")?);
        let mut classifier = LstmClassifier::zeros(features, int("lstm_layers")?, classes);
        ck.load_into("classifier", &mut classifier)?;
        let acquirer = match get("acquirer")? {
            "learned" => {
                let mut params = MlpAcquirer::zeros(features, int("acquirer_hidden")?);
                ck.load_into("acquirer", &mut params)?;
                let gumbel = GumbelConfig {
                    temperature: real("temperature")?,
                    penalty_scale: real("penalty_scale")?,
                    hard_forward: true,
                };
                gumbel.validate()?;
                AcquirerKind::Learned(LearnedAcquirer { params, gumbel })
            }
            "random" => AcquirerKind::Random,
            "complete" => AcquirerKind::Complete,
            "static" => {
                let mut mask = vec![false; features];
                for tok in get("static_features")?.split(',').filter(|t| !t.is_empty()) {
                    let i: usize = tok
                        .parse()
                        .map_err(|_| Error::Config(format!("bad static feature '{tok}'")))?;
                    *mask
                        .get_mut(i)
                        .ok_or_else(|| Error::Config(format!("static feature {i} out of range")))? = true;
                }
                AcquirerKind::Static(mask)
            }
            other => return Err(Error::Config(format!("unknown acquirer '{other}' in checkpoint"))),
        };
        let time = match get("time_encoding")? {
            "normalized" => TimeEncoding::Normalized,
            "raw" => TimeEncoding::Raw,
            other => return Err(Error::Config(format!("unknown time encoding '{other}'"))),
        };
        Ok(TrainedModel {
            acquirer,
            classifier,
            budget: int("budget")?,
            time,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub loss: f64,
    pub mean_cost: f64,
    /// Fraction of acquired features that hold real data.
    pub real_hit_rate: f64,
    pub predictions: Vec<usize>,
    pub costs: Vec<usize>,
}

fn real_map(bundle: &DatasetBundle, len: usize) -> Vec<bool> {
    let f = bundle.features();
    (0..len * f)
        .map(|i| bundle.is_real(i / f, len, i % f))
        .collect()
}

fn noise_for(seed: u64, path: &[u64], ids: &[usize]) -> RowStreams {
    RowStreams::new(
        ids.iter()
            .map(|&i| {
                let mut p = path.to_vec();
                p.push(i as u64);
                rng_for(seed, &p)
            })
            .collect(),
    )
}

fn check_compatible(model: &TrainedModel, bundle: &DatasetBundle) -> Result<()> {
    if model.classes() != bundle.classes {
        return Err(Error::Config(format!(
            "model predicts {} classes but the dataset has {}",
            model.classes(),
            bundle.classes
        )));
    }
    if model.features() != bundle.features() {
        return Err(Error::Config(format!(
            "model expects {} features but the dataset has {}",
            model.features(),
            bundle.features()
        )));
    }
    Ok(())
}

/// Runs the policy with hard sampling on every series of `split`. Series
/// `i` draws its noise from `(noise_seed, EVAL_NOISE, split_id, i)`, so the
/// outcome does not depend on `batch_size`.
pub fn evaluate(
    model: &TrainedModel,
    bundle: &DatasetBundle,
    split: &Split,
    noise_seed: u64,
    split_id: u64,
    batch_size: usize,
) -> Result<EvalResult> {
    check_compatible(model, bundle)?;
    if split.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let f = bundle.features();
    let mut real_maps: HashMap<usize, Vec<bool>> = HashMap::new();
    let mut loss_sum = 0.0;
    let (mut acquired, mut real_acquired) = (0usize, 0usize);
    let mut predictions = Vec::with_capacity(split.len());
    let mut costs = Vec::with_capacity(split.len());
    let ids: Vec<usize> = (0..split.len()).collect();
    for chunk in ids.chunks(batch_size.max(1)) {
        let refs: Vec<&[f64]> = chunk.iter().map(|&i| split.series[i].as_slice()).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| split.labels[i]).collect();
        let batch = Batch::new(&refs, &labels, f)?;
        let mut tape = Tape::new();
        let policy = Policy::bind(&model.acquirer, &mut tape, false)?;
        let clf = model.classifier.bind(&mut tape, false)?;
        let mut noise = noise_for(noise_seed, &[tag::EVAL_NOISE, split_id], chunk);
        let run = run_batch(&mut tape, &batch, &policy, &clf, model.budget, model.time, &mut noise, false)?;
        let loss = cross_entropy(&mut tape, run.logits, &labels)?;
        loss_sum += tape.value(loss).item() * chunk.len() as f64;
        predictions.extend(tape.value(run.logits).argmax_rows());
        costs.extend(&run.costs);
        for (r, &len) in batch.lengths.iter().enumerate() {
            let map = real_maps.entry(len).or_insert_with(|| real_map(bundle, len));
            for (t, m) in run.masks.iter().take(len).enumerate() {
                for (j, &v) in m.row(r).iter().enumerate() {
                    if v > 0.5 {
                        acquired += 1;
                        real_acquired += map[t * f + j] as usize;
                    }
                }
            }
        }
    }
    let n = split.len() as f64;
    let hits = predictions
        .iter()
        .zip(&split.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(EvalResult {
        accuracy: hits as f64 / n,
        loss: loss_sum / n,
        mean_cost: costs.iter().sum::<usize>() as f64 / n,
        real_hit_rate: if acquired == 0 {
            0.0
        } else {
            real_acquired as f64 / acquired as f64
        },
        predictions,
        costs,
    })
}

/// Full traces for the series `ids` of `split`, with the same noise streams
/// [`evaluate`] uses.
pub fn trace_episodes(
    model: &TrainedModel,
    bundle: &DatasetBundle,
    split: &Split,
    ids: &[usize],
    noise_seed: u64,
    split_id: u64,
) -> Result<Vec<Episode>> {
    check_compatible(model, bundle)?;
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(256) {
        if let Some(&bad) = chunk.iter().find(|&&i| i >= split.len()) {
            return Err(Error::invalid(format!("series {bad} out of range")));
        }
        let refs: Vec<&[f64]> = chunk.iter().map(|&i| split.series[i].as_slice()).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| split.labels[i]).collect();
        let batch = Batch::new(&refs, &labels, bundle.features())?;
        let mut tape = Tape::new();
        let policy = Policy::bind(&model.acquirer, &mut tape, false)?;
        let clf = model.classifier.bind(&mut tape, false)?;
        let mut noise = noise_for(noise_seed, &[tag::EVAL_NOISE, split_id], chunk);
        let run = run_batch(&mut tape, &batch, &policy, &clf, model.budget, model.time, &mut noise, true)?;
        let mut eps = episodes_from_run(&tape, &batch, &run, 0)?;
        for (e, &i) in eps.iter_mut().zip(chunk) {
            e.series_id = i;
        }
        out.extend(eps);
    }
    Ok(out)
}

/// `[T, F]` fraction of episodes acquiring each feature at each step.
/// Episodes shorter than the longest count as not acquiring.
pub fn mask_frequency(episodes: &[Episode]) -> Result<Tensor> {
    let first = episodes
        .first()
        .ok_or_else(|| Error::invalid("no episodes to average"))?;
    let f = first.masks.last_dim();
    let t = episodes.iter().map(|e| e.masks.rows()).max().unwrap();
    let mut freq = Tensor::zeros(&[t, f]);
    for e in episodes {
        for (i, v) in e.masks.data().iter().enumerate() {
            freq.data_mut()[i] += v;
        }
    }
    let n = episodes.len() as f64;
    Ok(freq.map(|v| v / n))
}

/// Per-class stratified split; `fraction` of each class (rounded) goes to
/// validation. Both index lists are sorted.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = rng_for(seed, &[tag::SPLIT]);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64 * fraction).round() as usize).min(idx.len());
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub acquirer: String,
    pub fake: String,
    pub fake_count: usize,
    pub shifted: bool,
    pub budget: usize,
    pub seed: u64,
    pub config_hash: String,
    pub cell_hash: String,
    pub parameter_count: usize,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were restored; `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub diverged: Option<String>,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub test_cost: f64,
    pub test_real_hit_rate: f64,
    /// Same metrics with the last epoch's parameters.
    pub final_test_accuracy: f64,
    pub final_test_cost: f64,
    pub forest_test_accuracy: Option<f64>,
    pub static_features: Option<Vec<usize>>,
    pub wall_seconds: f64,
}

impl RunRecord {
    /// Everything except wall time, which is not reproducible.
    pub fn metrics_eq(&self, other: &RunRecord) -> bool {
        let strip = |r: &RunRecord| RunRecord {
            wall_seconds: 0.0,
            ..r.clone()
        };
        strip(self) == strip(other)
    }

    pub fn csv_header() -> &'static str {
        "dataset,acquirer,fake,fake_count,shifted,budget,seed,config_hash,epochs,best_epoch,diverged,test_accuracy,test_loss,test_cost,test_real_hit_rate,final_test_accuracy,final_test_cost,forest_test_accuracy,wall_seconds"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{},{:.3}",
            self.dataset,
            self.acquirer,
            self.fake,
            self.fake_count,
            self.shifted,
            self.budget,
            self.seed,
            self.config_hash,
            self.epochs.len(),
            self.best_epoch.map_or(String::new(), |e| e.to_string()),
            self.diverged.is_some(),
            self.test_accuracy,
            self.test_loss,
            self.test_cost,
            self.test_real_hit_rate,
            self.final_test_accuracy,
            self.final_test_cost,
            self.forest_test_accuracy
                .map_or(String::new(), |a| format!("{a:?}")),
            self.wall_seconds
        )
    }

    /// Long-format training curves: `epoch,split,loss,accuracy`.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,accuracy\n");
        for e in &self.epochs {
            out.push_str(&format!("{},train,{:?},{:?}\n", e.epoch, e.train_loss, e.train_accuracy));
            out.push_str(&format!(
                "{},validation,{:?},{:?}\n",
                e.epoch, e.val_loss, e.val_accuracy
            ));
        }
        out
    }
}

pub struct RunOutcome {
    pub record: RunRecord,
    pub model: TrainedModel,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::Diverged(_))
}

/// One pass over `order` in batches; returns `(mean loss, accuracy)`.
fn train_epoch(
    model: &mut TrainedModel,
    adam: &mut Adam,
    split: &Split,
    order: &[usize],
    cfg: &ExperimentConfig,
    features: usize,
    epoch: usize,
) -> Result<(f64, f64)> {
    let (mut loss_sum, mut hits) = (0.0, 0usize);
    for chunk in order.chunks(cfg.batch_size) {
        let refs: Vec<&[f64]> = chunk.iter().map(|&i| split.series[i].as_slice()).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| split.labels[i]).collect();
        let batch = Batch::new(&refs, &labels, features)?;
        let learned = matches!(model.acquirer, AcquirerKind::Learned(_));
        let grads = {
            let mut tape = Tape::new();
            let policy = Policy::bind(&model.acquirer, &mut tape, learned)?;
            let clf = model.classifier.bind(&mut tape, true)?;
            let mut noise = noise_for(cfg.seed, &[tag::TRAIN_NOISE, epoch as u64], chunk);
            let run = run_batch(&mut tape, &batch, &policy, &clf, model.budget, model.time, &mut noise, false)?;
            let loss = cross_entropy(&mut tape, run.logits, &labels)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}")));
            }
            loss_sum += lv * chunk.len() as f64;
            hits += tape
                .value(run.logits)
                .argmax_rows()
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();
            let mut g = tape.backward(loss)?;
            let mut vars = clf.vars();
            if let Policy::Learned { bound, .. } = &policy {
                vars.extend(bound.vars());
            }
            vars.iter()
                .map(|&v| g.take(v).ok_or_else(|| Error::invalid("missing parameter gradient")))
                .collect::<Result<Vec<Tensor>>>()?
        };
        match &mut model.acquirer {
            AcquirerKind::Learned(l) => adam.step(&mut [&mut model.classifier, &mut l.params], &grads)?,
            _ => adam.step(&mut [&mut model.classifier], &grads)?,
        }
    }
    let n = order.len() as f64;
    Ok((loss_sum / n, hits as f64 / n))
}

/// Trains from scratch on `bundle.train` (minus a stratified validation
/// part), stops early on validation accuracy, restores the best epoch and
/// evaluates on `bundle.test`. `progress` sees every finished epoch.
pub fn train_run(
    cfg: &ExperimentConfig,
    bundle: &DatasetBundle,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<RunOutcome> {
    cfg.validate()?;
    bundle.validate()?;
    let started = Instant::now();
    let f = bundle.features();
    let (train_idx, val_idx) = stratified_split(&bundle.train.labels, cfg.val_fraction, cfg.seed);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::invalid("training set too small for a validation split"));
    }
    let train = bundle.train.subset(&train_idx);
    let val = bundle.train.subset(&val_idx);

    let (mask, forest_acc) = if cfg.acquirer == AcquirerChoice::Static {
        let steps = bundle.max_len();
        let forest = Forest::fit(
            &flatten_padded(&train.series, f, steps),
            &train.labels,
            &ForestConfig {
                n_trees: cfg.forest_trees,
                seed: derive_seed(cfg.seed, &[tag::FOREST]),
                ..ForestConfig::default()
            },
        )?;
        let mask = static_mask(&forest.feature_importance(), steps, f, cfg.budget)?;
        let acc = forest.accuracy(&flatten_padded(&bundle.test.series, f, steps), &bundle.test.labels);
        (Some(mask), Some(acc))
    } else {
        (None, None)
    };

    let mut model = TrainedModel::init(cfg, f, bundle.classes, mask)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let eval_seed = derive_seed(cfg.seed, &[tag::EVAL_NOISE]);
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, TrainedModel)> = None;
    let mut diverged = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        let (train_loss, train_accuracy) =
            match train_epoch(&mut model, &mut adam, &train, &order, cfg, f, epoch) {
                Ok(v) => v,
                Err(e) if is_divergence(&e) => {
                    diverged = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            };
        let v = evaluate(&model, bundle, &val, eval_seed, split_tag::VALIDATION, cfg.batch_size)?;
        let log = EpochLog {
            epoch,
            train_loss,
            train_accuracy,
            val_loss: v.loss,
            val_accuracy: v.accuracy,
            val_cost: v.mean_cost,
        };
        progress(&log);
        epochs.push(log);
        if best.as_ref().is_none_or(|b| v.accuracy > b.0) {
            best = Some((v.accuracy, epoch, model.clone()));
        } else if epoch - best.as_ref().unwrap().1 >= cfg.patience {
            break;
        }
    }

    let last = evaluate(&model, bundle, &bundle.test, eval_seed, split_tag::TEST, cfg.batch_size)?;
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, m)) = best {
        model = m;
    }
    let test = evaluate(&model, bundle, &bundle.test, eval_seed, split_tag::TEST, cfg.batch_size)?;

    let record = RunRecord {
        dataset: bundle.name.clone(),
        acquirer: cfg.acquirer.as_str().to_string(),
        fake: bundle.fake_kind.as_str().to_string(),
        fake_count: bundle.features_fake,
        shifted: bundle.shifted,
        budget: cfg.budget,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        cell_hash: cfg.cell_hash(),
        parameter_count: model.parameter_count(),
        epochs,
        best_epoch,
        diverged,
        test_accuracy: test.accuracy,
        test_loss: test.loss,
        test_cost: test.mean_cost,
        test_real_hit_rate: test.real_hit_rate,
        final_test_accuracy: last.accuracy,
        final_test_cost: last.mean_cost,
        forest_test_accuracy: forest_acc,
        static_features: match &model.acquirer {
            AcquirerKind::Static(m) => Some(mask_indices(m)),
            _ => None,
        },
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome { record, model })
}

pub const CONFIG_FILE: &str = "config.ini";
pub const RECORD_JSON: &str = "record.json";
pub const RECORD_CSV: &str = "record.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Writes the resolved config, record (JSON and CSV), curves and checkpoint
/// into `cfg.out_dir`.
pub fn write_run(cfg: &ExperimentConfig, outcome: &RunOutcome) -> Result<()> {
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: &str| crate::dfa::write_text(&dir.join(name), text);
    write(CONFIG_FILE, &cfg.to_text())?;
    let json = serde_json::to_string_pretty(&outcome.record)
        .map_err(|e| Error::invalid(format!("cannot serialise record: {e}")))?;
    write(RECORD_JSON, &(json + "\n"))?;
    write(
        RECORD_CSV,
        &format!("{}\n{}\n", RunRecord::csv_header(), outcome.record.csv_row()),
    )?;
    write(CURVES_CSV, &outcome.record.curves_csv())?;
    let mut ck = outcome.model.to_checkpoint();
    ck.set_meta("config_hash", &outcome.record.config_hash);
    ck.set_meta("seed", cfg.seed);
    ck.save(&dir.join(CHECKPOINT_FILE))
}

pub fn read_record(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}
