//! Text checkpoint, version 1:
//!
//! ```text
//! dfa-checkpoint 1
//! meta <key> <value...>
//! tensor <name> <d0>x<d1>x...    (or "scalar")
//! <v0> <v1> ...                  (one line, shortest round-trip decimals)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::Parameters;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "dfa-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn add_params(&mut self, prefix: &str, params: &dyn Parameters) {
        params.visit(&mut |name, t| {
            self.tensors.push((format!("{prefix}.{name}"), t.clone()));
        });
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.tensors.iter().any(|(n, _)| n.starts_with(&p))
    }

    /// Copies stored tensors into `params`; every parameter must be present
    /// with the same shape.
    pub fn load_into(&self, prefix: &str, params: &mut dyn Parameters) -> Result<()> {
        let lookup: BTreeMap<&str, &Tensor> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut err = None;
        params.visit_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            let key = format!("{prefix}.{name}");
            match lookup.get(key.as_str()) {
                Some(src) if src.shape() == t.shape() => {
                    t.data_mut().copy_from_slice(src.data());
                }
                Some(src) => {
                    err = Some(Error::Shape {
                        op: "checkpoint_load",
                        lhs: src.shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    })
                }
                None => err = Some(Error::Config(format!("checkpoint lacks tensor {key}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.tensors {
            let shape = if t.shape().is_empty() {
                "scalar".to_string()
            } else {
                t.shape()
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join("x")
            };
            let _ = writeln!(out, "tensor {name} {shape}");
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty checkpoint"))?;
        match header.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == VERSION.to_string() => {}
            _ => {
                return Err(Error::parse(
                    origin,
                    1,
                    format!("expected '{MAGIC} {VERSION}' header"),
                ))
            }
        }
        let mut ck = Checkpoint::new();
        while let Some((i, line)) = lines.next() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), v) => {
                    ck.meta.insert(k.to_string(), v.unwrap_or("").to_string());
                }
                (Some("tensor"), Some(name), Some(shape)) => {
                    let shape: Vec<usize> = if shape == "scalar" {
                        Vec::new()
                    } else {
                        shape
                            .split('x')
                            .map(|d| d.parse::<usize>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|e| Error::parse(origin, lineno, format!("bad shape: {e}")))?
                    };
                    let (j, vals) = lines
                        .next()
                        .ok_or_else(|| Error::parse(origin, lineno, "missing tensor values"))?;
                    let data = vals
                        .split_whitespace()
                        .map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::parse(origin, j + 1, format!("bad value: {e}")))?;
                    let t = Tensor::new(shape, data)
                        .map_err(|e| Error::parse(origin, j + 1, e.to_string()))?;
                    ck.tensors.push((name.to_string(), t));
                }
                _ => return Err(Error::parse(origin, lineno, "unrecognised line")),
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LstmClassifier, MlpAcquirer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let acq = MlpAcquirer::init(&mut rng, 5, 4);
        let clf = LstmClassifier::init(&mut rng, 5, 2, 3);
        let mut ck = Checkpoint::new();
        ck.set_meta("features", 5);
        ck.add_params("acquirer", &acq);
        ck.add_params("classifier", &clf);
        let text = ck.to_text();
        let back = Checkpoint::parse(&text, Path::new("mem")).unwrap();
        assert_eq!(back, ck);

        let mut acq2 = MlpAcquirer::zeros(5, 4);
        let mut clf2 = LstmClassifier::zeros(5, 2, 3);
        back.load_into("acquirer", &mut acq2).unwrap();
        back.load_into("classifier", &mut clf2).unwrap();
        assert_eq!(acq2, acq);
        assert_eq!(clf2, clf);
    }

    #[test]
    fn shape_mismatch_and_missing_tensors_fail() {
        let acq = MlpAcquirer::zeros(5, 4);
        let mut ck = Checkpoint::new();
        ck.add_params("acquirer", &acq);
        let mut wrong = MlpAcquirer::zeros(6, 4);
        assert!(ck.load_into("acquirer", &mut wrong).is_err());
        let mut clf = LstmClassifier::zeros(5, 2, 2);
        assert!(ck.load_into("classifier", &mut clf).is_err());
    }

    #[test]
    fn rejects_bad_header() {
        assert!(Checkpoint::parse("nope 1\n", Path::new("x")).is_err());
        assert!(Checkpoint::parse("dfa-checkpoint 2\n", Path::new("x")).is_err());
    }
}
