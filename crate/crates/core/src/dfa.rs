//! The next-step acquisition loop.
//!
//! At step `t` the classifier sees `x'_t = m_t ⊙ x_t` together with `m_t`,
//! then the acquirer proposes `m_{t+1}`. The request produced after the last
//! step measures nothing and is left out of the cost.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{BoundAcquirer, BoundClassifier, LstmClassifier, MlpAcquirer};
use crate::selection::{budgeted_select, GumbelConfig, RowStreams};

/// How the step index is fed to the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeEncoding {
    /// `t / T` with `T` the series' own length.
    #[default]
    Normalized,
    Raw,
}

impl TimeEncoding {
    fn encode(self, t: usize, len: usize) -> f64 {
        match self {
            TimeEncoding::Normalized => t as f64 / len as f64,
            TimeEncoding::Raw => t as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedAcquirer {
    pub params: MlpAcquirer,
    pub gumbel: GumbelConfig,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum AcquirerKind {
    Learned(LearnedAcquirer),
    /// `b` features uniformly without replacement, fresh every step.
    Random,
    Complete,
    /// One fixed feature set for every step.
    Static(Vec<bool>),
}

impl AcquirerKind {
    pub fn name(&self) -> &'static str {
        match self {
            AcquirerKind::Learned(_) => "learned",
            AcquirerKind::Random => "random",
            AcquirerKind::Complete => "complete",
            AcquirerKind::Static(_) => "static",
        }
    }
}

/// An acquirer whose parameters (if any) are recorded on a tape.
#[derive(Debug, Clone)]
pub enum Policy<'a> {
    Learned {
        bound: BoundAcquirer,
        gumbel: GumbelConfig,
    },
    Random,
    Complete,
    Static(&'a [bool]),
}

impl<'a> Policy<'a> {
    pub fn bind(kind: &'a AcquirerKind, tape: &mut Tape, trainable: bool) -> Result<Self> {
        Ok(match kind {
            AcquirerKind::Learned(l) => Policy::Learned {
                bound: l.params.bind(tape, trainable)?,
                gumbel: l.gumbel,
            },
            AcquirerKind::Random => Policy::Random,
            AcquirerKind::Complete => Policy::Complete,
            AcquirerKind::Static(m) => Policy::Static(m),
        })
    }
}

/// A padded batch of series, `[B, max_len, F]` row-major.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: usize,
    pub max_len: usize,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
    values: Vec<f64>,
}

impl Batch {
    /// Each series is `len * features` row-major values.
    pub fn new(series: &[&[f64]], labels: &[usize], features: usize) -> Result<Self> {
        if series.is_empty() || series.len() != labels.len() {
            return Err(Error::invalid(format!(
                "batch: {} series but {} labels",
                series.len(),
                labels.len()
            )));
        }
        if features == 0 {
            return Err(Error::invalid("batch: zero features"));
        }
        let mut lengths = Vec::with_capacity(series.len());
        for (i, s) in series.iter().enumerate() {
            if s.is_empty() || s.len() % features != 0 {
                return Err(Error::invalid(format!(
                    "batch: series {i} has {} values, not a positive multiple of {features}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "batch" });
            }
            lengths.push(s.len() / features);
        }
        let max_len = *lengths.iter().max().unwrap();
        let mut values = vec![0.0; series.len() * max_len * features];
        for (i, s) in series.iter().enumerate() {
            let off = i * max_len * features;
            values[off..off + s.len()].copy_from_slice(s);
        }
        Ok(Batch {
            features,
            max_len,
            lengths,
            labels: labels.to_vec(),
            values,
        })
    }

    /// Builds a batch from a dense `[B, T, F]` tensor with explicit lengths.
    pub fn from_padded(values: &Tensor, lengths: &[usize], labels: &[usize]) -> Result<Self> {
        let s = values.shape();
        if s.len() != 3 || s[0] != lengths.len() || s[0] != labels.len() {
            return Err(Error::Shape {
                op: "batch_episodes",
                lhs: s.to_vec(),
                rhs: vec![lengths.len(), labels.len()],
            });
        }
        let (t, f) = (s[1], s[2]);
        let rows: Vec<&[f64]> = lengths
            .iter()
            .enumerate()
            .map(|(i, &len)| {
                if len == 0 {
                    Err(Error::invalid(format!("batch: series {i} is all padding")))
                } else if len > t {
                    Err(Error::invalid(format!(
                        "batch: length {len} of series {i} exceeds extent {t}"
                    )))
                } else {
                    Ok(&values.data()[i * t * f..i * t * f + len * f])
                }
            })
            .collect::<Result<_>>()?;
        Batch::new(&rows, labels, f)
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    /// Values at step `t`, zeros for series that already ended.
    pub fn step(&self, t: usize) -> Tensor {
        let (b, f) = (self.size(), self.features);
        let mut data = Vec::with_capacity(b * f);
        for i in 0..b {
            let off = (i * self.max_len + t) * f;
            data.extend_from_slice(&self.values[off..off + f]);
        }
        Tensor::new(vec![b, f], data).expect("batch step shape")
    }
}

/// Output of [`run_batch`].
#[derive(Debug, Clone)]
pub struct BatchRun {
    /// `[B, C]`, taken at each series' own last step.
    pub logits: Var,
    /// Σ_t popcount(m_t) over each series' own steps.
    pub costs: Vec<usize>,
    /// Hard masks per step (`[B, F]`); rows of finished series are zero.
    pub masks: Vec<Tensor>,
    /// Measured values per step when tracing was requested.
    pub measured: Vec<Tensor>,
}

struct StepMask {
    value: Var,
    hard: Tensor,
}

fn constant_mask(tape: &mut Tape, hard: Tensor) -> Result<StepMask> {
    let value = tape.constant(hard.clone())?;
    Ok(StepMask { value, hard })
}

fn random_mask(batch: usize, features: usize, budget: usize, noise: &mut RowStreams) -> Tensor {
    let mut hard = Tensor::zeros(&[batch, features]);
    for (r, rng) in noise.rows.iter_mut().enumerate() {
        for j in sample(rng, features, budget) {
            hard.data_mut()[r * features + j] = 1.0;
        }
    }
    hard
}

fn static_mask(batch: usize, mask: &[bool]) -> Tensor {
    let row: Vec<f64> = mask.iter().map(|&m| m as u8 as f64).collect();
    Tensor::new(vec![batch, mask.len()], row.repeat(batch)).expect("static mask shape")
}

/// Runs the acquisition loop for a batch on `tape`.
///
/// `noise` must hold one stream per series; the learned and random policies
/// draw only from their own row's stream.
#[allow(clippy::too_many_arguments)]
pub fn run_batch(
    tape: &mut Tape,
    batch: &Batch,
    policy: &Policy<'_>,
    classifier: &BoundClassifier,
    budget: usize,
    time: TimeEncoding,
    noise: &mut RowStreams,
    record_trace: bool,
) -> Result<BatchRun> {
    let (b, f) = (batch.size(), batch.features);
    if noise.len() != b {
        return Err(Error::invalid(format!(
            "run_batch: {} noise streams for {b} series",
            noise.len()
        )));
    }
    if budget > f {
        return Err(Error::invalid(format!("budget {budget} exceeds feature count {f}")));
    }
    if let Policy::Static(m) = policy {
        if m.len() != f || m.iter().filter(|&&x| x).count() != budget {
            return Err(Error::invalid(format!(
                "static mask must cover {f} features with exactly {budget} selected"
            )));
        }
    }

    let ragged = batch.lengths.iter().any(|&l| l != batch.max_len);
    let mut state = classifier.initial_state(tape, b)?;
    let mut costs = vec![0usize; b];
    let mut masks = Vec::with_capacity(batch.max_len);
    let mut measured = Vec::new();

    let mut mask = match policy {
        Policy::Learned { bound, gumbel } => {
            let logits = bound.initial_logits(tape, b)?;
            let m = budgeted_select(tape, logits, budget, gumbel, noise)?;
            StepMask {
                value: m.value,
                hard: m.hard,
            }
        }
        Policy::Random => constant_mask(tape, random_mask(b, f, budget, noise))?,
        Policy::Complete => constant_mask(tape, Tensor::ones(&[b, f]))?,
        Policy::Static(m) => constant_mask(tape, static_mask(b, m))?,
    };

    for t in 0..batch.max_len {
        let active: Vec<bool> = batch.lengths.iter().map(|&l| t < l).collect();
        let x = tape.constant(batch.step(t))?;
        let x_meas = tape.mul(mask.value, x)?;
        let t_col: Vec<f64> = batch
            .lengths
            .iter()
            .map(|&len| time.encode(t.min(len - 1), len))
            .collect();
        let t_norm = tape.constant(Tensor::new(vec![b, 1], t_col)?)?;

        let mut hard = mask.hard.clone();
        for (r, &a) in active.iter().enumerate() {
            let row = &mut hard.data_mut()[r * f..(r + 1) * f];
            if a {
                costs[r] += row.iter().filter(|&&v| v > 0.5).count();
            } else {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        if record_trace {
            measured.push(tape.value(x_meas).clone());
        }
        masks.push(hard);

        let next_state = classifier.step(tape, &state, x_meas, mask.value, t_norm)?;
        state = if ragged && active.iter().any(|a| !a) {
            let mut layers = Vec::with_capacity(next_state.layers.len());
            for (&(h_new, c_new), &(h_old, c_old)) in next_state.layers.iter().zip(&state.layers) {
                let width = tape.shape(h_new)[1];
                let gate: Vec<f64> = active
                    .iter()
                    .flat_map(|&a| std::iter::repeat_n(a as u8 as f64, width))
                    .collect();
                let keep = tape.constant(Tensor::new(vec![b, width], gate.iter().map(|g| 1.0 - g).collect())?)?;
                let gate = tape.constant(Tensor::new(vec![b, width], gate)?)?;
                let blend = |tape: &mut Tape, new: Var, old: Var| -> Result<Var> {
                    let a = tape.mul(new, gate)?;
                    let o = tape.mul(old, keep)?;
                    tape.add(a, o)
                };
                layers.push((blend(tape, h_new, h_old)?, blend(tape, c_new, c_old)?));
            }
            crate::nn::ClassifierState { layers }
        } else {
            next_state
        };

        mask = match policy {
            Policy::Learned { bound, gumbel } => {
                let logits = bound.forward(tape, x_meas, mask.value, t_norm)?;
                let m = budgeted_select(tape, logits, budget, gumbel, noise)?;
                StepMask {
                    value: m.value,
                    hard: m.hard,
                }
            }
            Policy::Random => constant_mask(tape, random_mask(b, f, budget, noise))?,
            Policy::Complete | Policy::Static(_) => mask,
        };
    }

    let logits = classifier.predict(tape, &state)?;
    Ok(BatchRun {
        logits,
        costs,
        masks,
        measured,
    })
}

/// One series' full acquisition trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub series_id: usize,
    /// `[T, F]` hard masks.
    pub masks: Tensor,
    /// `[T, F]` measured values.
    pub measured: Tensor,
    pub cost: usize,
    pub class_logits: Vec<f64>,
    pub label: usize,
}

impl Episode {
    pub fn predicted(&self) -> usize {
        Tensor::vector(self.class_logits.clone()).argmax_rows()[0]
    }
}

/// Splits a traced batch run into per-series episodes.
pub fn episodes_from_run(tape: &Tape, batch: &Batch, run: &BatchRun, first_id: usize) -> Result<Vec<Episode>> {
    if run.measured.len() != run.masks.len() {
        return Err(Error::invalid("episodes need a traced run"));
    }
    let f = batch.features;
    let logits = tape.value(run.logits);
    (0..batch.size())
        .map(|i| {
            let len = batch.lengths[i];
            let mut masks = Vec::with_capacity(len * f);
            let mut measured = Vec::with_capacity(len * f);
            for t in 0..len {
                masks.extend_from_slice(run.masks[t].row(i));
                measured.extend_from_slice(run.measured[t].row(i));
            }
            Ok(Episode {
                series_id: first_id + i,
                masks: Tensor::new(vec![len, f], masks)?,
                measured: Tensor::new(vec![len, f], measured)?,
                cost: run.costs[i],
                class_logits: logits.row(i).to_vec(),
                label: batch.labels[i],
            })
        })
        .collect()
}

/// Single-series convenience wrapper around [`run_batch`].
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    series: &Tensor,
    label: usize,
    acquirer: &AcquirerKind,
    classifier: &LstmClassifier,
    budget: usize,
    time: TimeEncoding,
    rng: ChaCha8Rng,
    series_id: usize,
) -> Result<Episode> {
    let s = series.shape();
    if s.len() != 2 || s[0] == 0 {
        return Err(Error::invalid(format!(
            "run_episode: expected a non-empty [T, F] series, got {s:?}"
        )));
    }
    let batch = Batch::new(&[series.data()], &[label], s[1])?;
    let mut tape = Tape::new();
    let policy = Policy::bind(acquirer, &mut tape, false)?;
    let clf = classifier.bind(&mut tape, false)?;
    let mut noise = RowStreams::new(vec![rng]);
    let run = run_batch(&mut tape, &batch, &policy, &clf, budget, time, &mut noise, true)?;
    Ok(episodes_from_run(&tape, &batch, &run, series_id)?.remove(0))
}

/// Long-format CSV `step,feature,mask` for one episode.
pub fn trace_csv(episode: &Episode) -> String {
    let mut out = String::from("step,feature,mask\n");
    let f = episode.masks.last_dim();
    for t in 0..episode.masks.rows() {
        for j in 0..f {
            let _ = writeln!(out, "{t},{j},{}", episode.masks.row(t)[j] as u8);
        }
    }
    out
}

/// Plain (P2) PGM with one column per step and one row per feature.
/// `freq` is `[T, F]` with values in `[0, 1]`.
pub fn heatmap_pgm(freq: &Tensor) -> Result<String> {
    let s = freq.shape();
    if s.len() != 2 {
        return Err(Error::invalid(format!("heatmap needs a [T, F] tensor, got {s:?}")));
    }
    let (t, f) = (s[0], s[1]);
    let mut out = format!("P2\n{t} {f}\n255\n");
    for j in 0..f {
        let row: Vec<String> = (0..t)
            .map(|i| {
                let v = freq.row(i)[j].clamp(0.0, 1.0);
                ((v * 255.0).round() as u8).to_string()
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Checks the gradient of the cross-entropy of a whole episode batch
/// (`T = 5`, `F = 6`, `b = 2`) with respect to every acquirer and classifier
/// parameter against central differences. The Gumbel noise is frozen and the
/// relaxation runs soft-forward, since a hard forward pass is piecewise
/// constant in the parameters. Returns the largest relative error.
pub fn episode_gradient_error(seed: u64) -> Result<f64> {
    use crate::diffmath::{central_difference, max_relative_error};
    use crate::nn::{cross_entropy, Parameters};
    use rand::{Rng, SeedableRng};

    let (t_len, f, b, classes) = (5, 6, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clf = LstmClassifier::init(&mut rng, f, 2, classes);
    let acq = MlpAcquirer::init(&mut rng, f, 4);
    let gumbel = GumbelConfig {
        temperature: 1.0,
        penalty_scale: 100.0,
        hard_forward: false,
    };
    let series: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..t_len * f).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels = [0, 2, 1];
    let refs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
    let batch = Batch::new(&refs, &labels, f)?;
    let noise = || RowStreams::new((0..3).map(|i| ChaCha8Rng::seed_from_u64(seed ^ (i + 1))).collect());

    let forward = |tape: &mut Tape, clf: &LstmClassifier, acq: &MlpAcquirer, trainable: bool| -> Result<(Var, Vec<Var>)> {
        let bound = clf.bind(tape, trainable)?;
        let policy = Policy::Learned {
            bound: acq.bind(tape, trainable)?,
            gumbel,
        };
        let run = run_batch(tape, &batch, &policy, &bound, b, TimeEncoding::Normalized, &mut noise(), false)?;
        let loss = cross_entropy(tape, run.logits, &labels)?;
        let mut vars = bound.vars();
        if let Policy::Learned { bound, .. } = &policy {
            vars.extend(bound.vars());
        }
        Ok((loss, vars))
    };

    let mut tape = Tape::new();
    let (loss, vars) = forward(&mut tape, &clf, &acq, true)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| grads.take(v).map(|g| g.into_data()).unwrap_or_default())
        .collect();

    let mut flat = Vec::new();
    clf.visit(&mut |_, t| flat.extend_from_slice(t.data()));
    acq.visit(&mut |_, t| flat.extend_from_slice(t.data()));
    let numeric = central_difference(
        |probe| {
            let (mut c, mut a) = (clf.clone(), acq.clone());
            let mut k = 0;
            let mut fill = |_: &str, t: &mut Tensor| {
                let n = t.len();
                t.data_mut().copy_from_slice(&probe[k..k + n]);
                k += n;
            };
            c.visit_mut(&mut fill);
            a.visit_mut(&mut fill);
            let mut tape = Tape::new();
            let (loss, _) = forward(&mut tape, &c, &a, false)?;
            Ok(tape.value(loss).item())
        },
        &flat,
        1e-6,
    )?;
    if analytic.len() != numeric.len() {
        return Err(Error::invalid("episode gradient check: parameter count mismatch"));
    }
    Ok(max_relative_error(&analytic, &numeric))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
