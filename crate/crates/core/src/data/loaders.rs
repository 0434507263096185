use std::path::Path;

use crate::error::{Error, Result};

/// Series read from an archive file. Each series is `len * features` values,
/// step-major; `labels` index into `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub features: usize,
    pub series: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledSeries {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Re-indexes labels of both sets against the union of their class names
    /// (sorted numerically when every name is a number).
    pub fn align_classes(a: &mut LabeledSeries, b: &mut LabeledSeries) {
        let mut names: Vec<String> = a.class_names.clone();
        for n in &b.class_names {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
        sort_class_names(&mut names);
        for set in [a, b] {
            let remap: Vec<usize> = set
                .class_names
                .iter()
                .map(|n| names.iter().position(|m| m == n).unwrap())
                .collect();
            set.labels.iter_mut().for_each(|y| *y = remap[*y]);
            set.class_names = names.clone();
        }
    }
}

fn sort_class_names(names: &mut [String]) {
    if names.iter().all(|n| n.parse::<f64>().is_ok()) {
        names.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        });
    } else {
        names.sort();
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_value(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("unparseable number '{tok}'")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

/// UCR text format: one series per row, the class label first, then the
/// values, separated by tabs, spaces or commas.
pub fn load_ucr_tsv(path: &Path) -> Result<LabeledSeries> {
    let text = read(path)?;
    let mut raw_labels = Vec::new();
    let mut series = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line
            .split(['\t', ',', ' '])
            .filter(|t| !t.is_empty());
        let label = toks.next().unwrap();
        let label = parse_value(path, lineno, label)?;
        let values = toks
            .map(|t| parse_value(path, lineno, t))
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::parse(path, lineno, "row has a label but no values"));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("ragged row: {} values, expected {w}", values.len()),
                ))
            }
            _ => {}
        }
        raw_labels.push(format_label(label));
        series.push(values);
    }
    if series.is_empty() {
        return Err(Error::parse(path, 1, "no series found"));
    }
    let mut class_names: Vec<String> = raw_labels.clone();
    class_names.sort();
    class_names.dedup();
    sort_class_names(&mut class_names);
    let labels = raw_labels
        .iter()
        .map(|l| class_names.iter().position(|c| c == l).unwrap())
        .collect();
    Ok(LabeledSeries {
        features: 1,
        series,
        labels,
        class_names,
    })
}

fn format_label(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// `.ts` text format: `@` header lines (with `@classLabel true <names...>`),
/// then after `@data` one case per line with dimensions separated by `:`,
/// comma-separated values and the class label last. All dimensions of a
/// case must have the same length.
pub fn load_ts_multivariate(path: &Path) -> Result<LabeledSeries> {
    let text = read(path)?;
    let mut class_names: Option<Vec<String>> = None;
    let mut declared_dims: Option<usize> = None;
    let mut in_data = false;
    let mut features: Option<usize> = None;
    let mut series = Vec::new();
    let mut labels = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            if !line.starts_with('@') {
                return Err(Error::parse(path, lineno, "expected a header line or @data"));
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap().to_ascii_lowercase();
            match key.as_str() {
                "@data" => in_data = true,
                "@classlabel" => {
                    let flag = parts.next().unwrap_or("false");
                    if flag.eq_ignore_ascii_case("true") {
                        class_names = Some(parts.map(str::to_string).collect());
                    }
                }
                "@dimensions" | "@dimension" => {
                    let d = parts
                        .next()
                        .and_then(|d| d.parse().ok())
                        .ok_or_else(|| Error::parse(path, lineno, "bad @dimensions"))?;
                    declared_dims = Some(d);
                }
                "@timestamps" if parts.next().is_some_and(|v| v.eq_ignore_ascii_case("true")) => {
                    return Err(Error::parse(path, lineno, "timestamped series are not supported"));
                }
                _ => {}
            }
            continue;
        }

        let names = class_names
            .as_ref()
            .ok_or_else(|| Error::parse(path, lineno, "missing '@classLabel true ...' header"))?;
        let mut fields: Vec<&str> = line.split(':').collect();
        if fields.len() < 2 {
            return Err(Error::parse(path, lineno, "case has no class label"));
        }
        let label = fields.pop().unwrap().trim();
        let y = names
            .iter()
            .position(|n| n == label)
            .ok_or_else(|| Error::parse(path, lineno, format!("unknown class label '{label}'")))?;
        let dims = fields.len();
        let expected = features.or(declared_dims).unwrap_or(dims);
        if dims != expected {
            return Err(Error::parse(
                path,
                lineno,
                format!("case has {dims} dimensions, expected {expected}"),
            ));
        }
        features = Some(dims);
        let channels = fields
            .iter()
            .map(|f| {
                f.split(',')
                    .map(|t| {
                        if t.trim() == "?" {
                            Err(Error::parse(path, lineno, "missing values are not supported"))
                        } else {
                            parse_value(path, lineno, t)
                        }
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) || len == 0 {
            return Err(Error::parse(path, lineno, "dimensions of a case differ in length"));
        }
        let mut values = Vec::with_capacity(len * dims);
        for t in 0..len {
            values.extend(channels.iter().map(|c| c[t]));
        }
        series.push(values);
        labels.push(y);
    }
    if series.is_empty() {
        return Err(Error::parse(path, 1, "no cases found"));
    }
    Ok(LabeledSeries {
        features: features.unwrap(),
        series,
        labels,
        class_names: class_names.unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ucr_round_trip_and_remap() {
        let rows = [
            (-1.0, vec![0.5, -1.25, 3.0]),
            (1.0, vec![1e-3, 2.0, -0.0]),
            (-1.0, vec![7.0, 8.0, 9.5]),
        ];
        let text: String = rows
            .iter()
            .map(|(y, v)| {
                let vals: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                format!("{y}\t{}\n", vals.join("\t"))
            })
            .collect();
        let f = write(&text);
        let s = load_ucr_tsv(f.path()).unwrap();
        assert_eq!(s.class_names, vec!["-1", "1"]);
        assert_eq!(s.labels, vec![0, 1, 0]);
        for (got, (_, want)) in s.series.iter().zip(&rows) {
            assert_eq!(got, want);
        }
    }

    #[test]
    fn ucr_errors() {
        assert!(load_ucr_tsv(write("").path()).is_err());
        let err = load_ucr_tsv(write("1 2 3\n0 1\n").path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(load_ucr_tsv(write("1 2 x\n").path()).is_err());
    }

    #[test]
    fn ts_fixture_lengths() {
        let text = "# comment\n@problemName toy\n@univariate false\n@dimensions 2\n@equalLength false\n@classLabel true a b\n@data\n1,2,3:4,5,6:a\n1,2,3,4,5:6,7,8,9,10:b\n";
        let s = load_ts_multivariate(write(text).path()).unwrap();
        assert_eq!(s.features, 2);
        assert_eq!(s.series[0].len(), 3 * 2);
        assert_eq!(s.series[1].len(), 5 * 2);
        assert_eq!(&s.series[0], &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(s.labels, vec![0, 1]);
    }

    #[test]
    fn ts_errors() {
        let head = "@classLabel true a b\n@data\n";
        assert!(load_ts_multivariate(write(&format!("{head}1,2:3,4:a\n1,2:b\n")).path()).is_err());
        assert!(load_ts_multivariate(write(&format!("{head}1,2:3,4:c\n")).path()).is_err());
        assert!(load_ts_multivariate(write(&format!("{head}1,2:3:a\n")).path()).is_err());
        assert!(load_ts_multivariate(write(&format!("{head}1,?:3,4:a\n")).path()).is_err());
        assert!(load_ts_multivariate(write("@data\n1,2:a\n").path()).is_err());
    }

    #[test]
    fn align_merges_class_sets() {
        let mut a = LabeledSeries {
            features: 1,
            series: vec![vec![0.0]],
            labels: vec![0],
            class_names: vec!["2".into()],
        };
        let mut b = LabeledSeries {
            features: 1,
            series: vec![vec![0.0], vec![0.0]],
            labels: vec![0, 1],
            class_names: vec!["1".into(), "2".into()],
        };
        LabeledSeries::align_classes(&mut a, &mut b);
        assert_eq!(a.labels, vec![1]);
        assert_eq!(b.labels, vec![0, 1]);
    }
}
