use std::collections::BTreeMap;
use std::path::Path;

use super::{DatasetBundle, FakeKind, Split};
use crate::error::{Error, Result};

pub const CACHE_FILE: &str = "dataset.bin";
pub const META_FILE: &str = "dataset.meta";

const MAGIC: &[u8; 8] = b"DFABND01";

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_split(buf: &mut Vec<u8>, split: &Split) {
    put_u64(buf, split.len() as u64);
    for (s, &y) in split.series.iter().zip(&split.labels) {
        put_u64(buf, y as u64);
        put_u64(buf, s.len() as u64);
        for v in s {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(self.path, 0, "truncated dataset cache"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn split(&mut self) -> Result<Split> {
        let n = self.u64()? as usize;
        let mut split = Split::default();
        for _ in 0..n {
            split.labels.push(self.u64()? as usize);
            let len = self.u64()? as usize;
            let raw = self.take(len.checked_mul(8).ok_or_else(|| {
                Error::parse(self.path, 0, "corrupt series length in dataset cache")
            })?)?;
            split.series.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        Ok(split)
    }
}

/// Writes `dataset.bin` (values, bit-exact) and the `dataset.meta` sidecar.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_split(&mut buf, &bundle.train);
    put_split(&mut buf, &bundle.test);
    let bin = dir.join(CACHE_FILE);
    std::fs::write(&bin, buf).map_err(|e| Error::io(&bin, e))?;

    let meta = format!(
        "name={}\nclasses={}\nfeatures_real={}\nfeatures_fake={}\nfake_kind={}\nshifted={}\nseed={}\n",
        bundle.name,
        bundle.classes,
        bundle.features_real,
        bundle.features_fake,
        bundle.fake_kind.as_str(),
        bundle.shifted,
        bundle.seed
    );
    let meta_path = dir.join(META_FILE);
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let meta_path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut meta = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(&meta_path, i + 1, "expected key=value"))?;
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<&String> {
        meta.get(k)
            .ok_or_else(|| Error::parse(&meta_path, 0, format!("missing key '{k}'")))
    };
    let num = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| Error::parse(&meta_path, 0, format!("key '{k}' is not an integer")))
    };

    let bin = dir.join(CACHE_FILE);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::parse(&bin, 0, "not a dataset cache file"));
    }
    let mut r = Reader {
        bytes: &bytes,
        pos: MAGIC.len(),
        path: &bin,
    };
    let train = r.split()?;
    let test = r.split()?;
    if r.pos != bytes.len() {
        return Err(Error::parse(&bin, 0, "trailing bytes in dataset cache"));
    }

    let bundle = DatasetBundle {
        name: get("name")?.clone(),
        classes: num("classes")? as usize,
        features_real: num("features_real")? as usize,
        features_fake: num("features_fake")? as usize,
        fake_kind: get("fake_kind")?.parse::<FakeKind>()?,
        shifted: get("shifted")? == "true",
        seed: num("seed")?,
        train,
        test,
    };
    bundle.validate()?;
    Ok(bundle)
}
