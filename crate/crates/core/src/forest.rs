//! Random forest of CART trees (Gini impurity), used to rank features for
//! the static acquirer.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seeds::{rng_for, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate features per split; `None` means `floor(sqrt(D))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_features: None,
            bootstrap: true,
            min_samples_leaf: 1,
            max_depth: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        histogram: Vec<usize>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        histogram: Vec<usize>,
        /// Weighted impurity decrease `n * gini - n_l * gini_l - n_r * gini_r`.
        gain: f64,
    },
}

impl TreeNode {
    pub fn histogram(&self) -> &[usize] {
        match self {
            TreeNode::Leaf { histogram } | TreeNode::Split { histogram, .. } => histogram,
        }
    }
}

/// Nodes in creation order; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    fn leaf_for(&self, row: &[f64]) -> &[usize] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { histogram } => return histogram,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => id = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        argmax_usize(self.leaf_for(row))
    }

    fn importance(&self, d: usize) -> Vec<f64> {
        let mut imp = vec![0.0; d];
        for n in &self.nodes {
            if let TreeNode::Split { feature, gain, .. } = n {
                imp[*feature] += gain;
            }
        }
        imp
    }
}

fn argmax_usize(h: &[usize]) -> usize {
    let mut best = 0;
    for (i, &v) in h.iter().enumerate() {
        if v > h[best] {
            best = i;
        }
    }
    best
}

fn gini(hist: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - hist.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub classes: usize,
    pub features: usize,
}

/// Column-major copy of the training matrix.
struct Columns {
    cols: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: usize,
}

struct Builder<'a> {
    data: &'a Columns,
    cfg: &'a ForestConfig,
    max_features: usize,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn histogram(&self, idx: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.data.classes];
        for &i in idx {
            h[self.data.labels[i]] += 1;
        }
        h
    }

    fn best_split(&self, idx: &[usize], hist: &[usize], rng: &mut impl Rng) -> Option<BestSplit> {
        let n = idx.len();
        let parent = n as f64 * gini(hist, n);
        let d = self.data.cols.len();
        let mut order: Vec<usize> = (0..d).collect();
        let mut best: Option<BestSplit> = None;
        let mut visited = 0;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        // Lazy Fisher-Yates; features constant within the node do not count
        // towards `max_features`.
        for k in 0..d {
            if visited >= self.max_features {
                break;
            }
            let j = rng.random_range(k..d);
            order.swap(k, j);
            let f = order[k];
            let col = &self.data.cols[f];
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (col[i], self.data.labels[i])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[n - 1].0 {
                continue;
            }
            visited += 1;
            let mut left = vec![0usize; self.data.classes];
            let mut right = hist.to_vec();
            let min_leaf = self.cfg.min_samples_leaf;
            for s in 1..n {
                let y = pairs[s - 1].1;
                left[y] += 1;
                right[y] -= 1;
                if pairs[s].0 == pairs[s - 1].0 || s < min_leaf || n - s < min_leaf {
                    continue;
                }
                let child = s as f64 * gini(&left, s) + (n - s) as f64 * gini(&right, n - s);
                let gain = parent - child;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let threshold = 0.5 * (pairs[s - 1].0 + pairs[s].0);
                    // Guard against the midpoint rounding onto the upper value.
                    let threshold = if threshold >= pairs[s].0 {
                        pairs[s - 1].0
                    } else {
                        threshold
                    };
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain >= 0.0)
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut impl Rng) -> usize {
        let hist = self.histogram(&idx);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            histogram: hist.clone(),
        });
        let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_ok = self.cfg.max_depth.is_none_or(|m| depth < m);
        if pure || !depth_ok || idx.len() < 2 * self.cfg.min_samples_leaf {
            return id;
        }
        let Some(split) = self.best_split(&idx, &hist, rng) else {
            return id;
        };
        let col = &self.data.cols[split.feature];
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| col[i] <= split.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            histogram: hist,
            gain: split.gain,
        };
        id
    }
}

impl Forest {
    /// Fits `cfg.n_trees` trees in parallel, tree `i` seeded from
    /// `(cfg.seed, i)`.
    pub fn fit(x: &[Vec<f64>], y: &[usize], cfg: &ForestConfig) -> Result<Forest> {
        if cfg.n_trees == 0 {
            return Err(Error::invalid("forest needs at least one tree"));
        }
        if x.len() < 2 || x.len() != y.len() {
            return Err(Error::invalid(format!(
                "forest needs at least 2 samples with one label each (got {} rows, {} labels)",
                x.len(),
                y.len()
            )));
        }
        let d = x[0].len();
        if d == 0 || x.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("forest rows must share a positive width"));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("forest input contains non-finite values"));
        }
        let classes = y.iter().max().unwrap() + 1;
        let present = {
            let mut seen = vec![false; classes];
            y.iter().for_each(|&c| seen[c] = true);
            seen.iter().filter(|&&s| s).count()
        };
        if present < 2 {
            return Err(Error::invalid("forest needs at least 2 classes present"));
        }
        if cfg.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf must be at least 1"));
        }
        let max_features = cfg
            .max_features
            .unwrap_or(((d as f64).sqrt().floor() as usize).max(1))
            .clamp(1, d);
        let data = Columns {
            cols: (0..d).map(|f| x.iter().map(|r| r[f]).collect()).collect(),
            labels: y.to_vec(),
            classes,
        };
        let n = x.len();
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(cfg.seed, &[tag::FOREST, t as u64]);
                let idx: Vec<usize> = if cfg.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    let mut v: Vec<usize> = (0..n).collect();
                    v.shuffle(&mut rng);
                    v
                };
                let mut b = Builder {
                    data: &data,
                    cfg,
                    max_features,
                    nodes: Vec::new(),
                };
                b.grow(idx, 0, &mut rng);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Forest {
            trees,
            classes,
            features: d,
        })
    }

    /// Class probabilities averaged over trees.
    pub fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.classes];
        for t in &self.trees {
            let h = t.leaf_for(row);
            let n: usize = h.iter().sum();
            for (pi, &c) in p.iter_mut().zip(h) {
                *pi += c as f64 / n as f64;
            }
        }
        p.iter_mut().for_each(|v| *v /= self.trees.len() as f64);
        p
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let p = self.predict_proba(row);
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        best
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        accuracy(x, y, |r| self.predict(r))
    }

    /// Mean decrease in impurity: each tree's gains normalised to sum 1,
    /// averaged over trees, normalised again. Uniform if no tree split.
    pub fn feature_importance(&self) -> Vec<f64> {
        let d = self.features;
        let mut total = vec![0.0; d];
        for t in &self.trees {
            let imp = t.importance(d);
            let s: f64 = imp.iter().sum();
            if s > 0.0 {
                total.iter_mut().zip(&imp).for_each(|(a, b)| *a += b / s);
            }
        }
        let s: f64 = total.iter().sum();
        if s > 0.0 {
            total.iter_mut().for_each(|v| *v /= s);
        } else {
            total.iter_mut().for_each(|v| *v = 1.0 / d as f64);
        }
        total
    }
}

pub fn accuracy(x: &[Vec<f64>], y: &[usize], predict: impl Fn(&[f64]) -> usize) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let hits = x.iter().zip(y).filter(|(r, &c)| predict(r) == c).count();
    hits as f64 / x.len() as f64
}

/// Per-feature score = sum over steps of the flattened (step-major)
/// importance; the top `budget` features are selected, ties to the lower
/// index.
pub fn static_mask(importance: &[f64], steps: usize, features: usize, budget: usize) -> Result<Vec<bool>> {
    if budget > features {
        return Err(Error::invalid(format!(
            "budget {budget} exceeds the feature count {features}"
        )));
    }
    if importance.len() != steps * features {
        return Err(Error::invalid(format!(
            "importance has {} entries, expected {steps} x {features}",
            importance.len()
        )));
    }
    let mut score = vec![0.0; features];
    for t in 0..steps {
        for f in 0..features {
            score[f] += importance[t * features + f];
        }
    }
    let mut order: Vec<usize> = (0..features).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    let mut mask = vec![false; features];
    order[..budget].iter().for_each(|&f| mask[f] = true);
    Ok(mask)
}

/// Series zero-padded to `steps` steps, as forest input rows.
pub fn flatten_padded(series: &[Vec<f64>], features: usize, steps: usize) -> Vec<Vec<f64>> {
    series
        .iter()
        .map(|s| {
            let mut r = s.clone();
            r.truncate(steps * features);
            r.resize(steps * features, 0.0);
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn xor(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let y = x.iter().map(|r| ((r[0] > 0.0) ^ (r[1] > 0.0)) as usize).collect();
        (x, y)
    }

    fn sign_toy(n: usize, d: usize, k: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y = x.iter().map(|r| (r[k] > 0.0) as usize).collect();
        (x, y)
    }

    #[test]
    fn separable_one_feature() {
        let x: Vec<Vec<f64>> = (-20..20).map(|v| vec![v as f64 + 0.5]).collect();
        let y: Vec<usize> = x.iter().map(|r| (r[0] >= 0.0) as usize).collect();
        let f = Forest::fit(&x, &y, &ForestConfig { n_trees: 10, ..Default::default() }).unwrap();
        assert_eq!(f.accuracy(&x, &y), 1.0);
    }

    #[test]
    fn xor_generalises() {
        let (x, y) = xor(400, 1);
        let (xt, yt) = xor(400, 2);
        let f = Forest::fit(&x, &y, &ForestConfig { n_trees: 50, ..Default::default() }).unwrap();
        let acc = f.accuracy(&xt, &yt);
        assert!(acc > 0.9, "xor accuracy {acc}");
    }

    #[test]
    fn seeded_forests_are_identical() {
        let (x, y) = xor(100, 3);
        let cfg = ForestConfig { n_trees: 8, seed: 5, ..Default::default() };
        assert_eq!(Forest::fit(&x, &y, &cfg).unwrap(), Forest::fit(&x, &y, &cfg).unwrap());
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(Forest::fit(&x, &[0, 0], &ForestConfig::default()).is_err());
        assert!(Forest::fit(&x[..1], &[0], &ForestConfig::default()).is_err());
    }

    #[test]
    fn importance_finds_the_label_feature() {
        let d = 10;
        let (x, y) = sign_toy(400, d, 6, 4);
        let f = Forest::fit(&x, &y, &ForestConfig { n_trees: 50, ..Default::default() }).unwrap();
        let imp = f.feature_importance();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let top = (0..d).max_by(|&a, &b| imp[a].total_cmp(&imp[b])).unwrap();
        assert_eq!(top, 6);
        for (j, &v) in imp.iter().enumerate() {
            if j != 6 {
                assert!(v < 2.0 / d as f64, "noise feature {j} importance {v}");
            }
        }
    }

    #[test]
    fn splits_never_increase_impurity() {
        let (x, y) = xor(200, 7);
        let f = Forest::fit(&x, &y, &ForestConfig { n_trees: 5, ..Default::default() }).unwrap();
        for t in &f.trees {
            for node in &t.nodes {
                match node {
                    TreeNode::Split { left, right, histogram, gain, .. } => {
                        assert!(*gain >= 0.0);
                        let (l, r) = (t.nodes[*left].histogram(), t.nodes[*right].histogram());
                        let n: usize = histogram.iter().sum();
                        let (nl, nr): (usize, usize) = (l.iter().sum(), r.iter().sum());
                        assert_eq!(nl + nr, n);
                        let child = nl as f64 * gini(l, nl) + nr as f64 * gini(r, nr);
                        assert!(child <= n as f64 * gini(histogram, n) + 1e-12);
                    }
                    TreeNode::Leaf { histogram } => assert!(histogram.iter().sum::<usize>() > 0),
                }
            }
        }
    }

    #[test]
    fn ensemble_not_worse_than_best_tree() {
        let (x, y) = xor(300, 8);
        let (xt, yt) = xor(500, 9);
        let f = Forest::fit(&x, &y, &ForestConfig { n_trees: 30, ..Default::default() }).unwrap();
        let best_tree = f
            .trees
            .iter()
            .map(|t| accuracy(&xt, &yt, |r| t.predict(r)))
            .fold(0.0, f64::max);
        assert!(f.accuracy(&xt, &yt) >= best_tree - 0.02);
    }

    #[test]
    fn static_mask_rules() {
        let uniform = vec![1.0 / 12.0; 12];
        assert_eq!(static_mask(&uniform, 3, 4, 2).unwrap(), vec![true, true, false, false]);
        assert_eq!(static_mask(&uniform, 3, 4, 4).unwrap(), vec![true; 4]);
        assert!(static_mask(&uniform, 3, 4, 5).is_err());
        assert!(static_mask(&uniform, 2, 4, 1).is_err());
        // feature 3 wins by summing over time even though feature 1 has the largest single entry
        let imp = [0.0, 0.3, 0.0, 0.2, 0.0, 0.0, 0.0, 0.2, 0.1, 0.0, 0.0, 0.2];
        assert_eq!(static_mask(&imp, 3, 4, 1).unwrap(), vec![false, false, false, true]);
    }

    #[test]
    fn static_mask_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (t, f, b) = (5, 6, 3);
        let imp: Vec<f64> = (0..t * f).map(|_| rng.random::<f64>()).collect();
        let perm = [4, 0, 5, 2, 1, 3];
        let mut permuted = vec![0.0; t * f];
        for s in 0..t {
            for j in 0..f {
                permuted[s * f + perm[j]] = imp[s * f + j];
            }
        }
        let m = static_mask(&imp, t, f, b).unwrap();
        let mp = static_mask(&permuted, t, f, b).unwrap();
        for j in 0..f {
            assert_eq!(m[j], mp[perm[j]]);
        }
    }

    #[test]
    fn zero_features_never_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (t, real, fake) = (4, 2, 4);
        let f = real + fake;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..200 {
            let mut row = vec![0.0; t * f];
            for s in 0..t {
                for j in 0..real {
                    row[s * f + j] = rng.random_range(-1.0..1.0);
                }
            }
            y.push((row[0] + row[f + 1] > 0.0) as usize);
            x.push(row);
        }
        let forest = Forest::fit(&x, &y, &ForestConfig { n_trees: 20, ..Default::default() }).unwrap();
        let imp = forest.feature_importance();
        for s in 0..t {
            for j in real..f {
                assert_eq!(imp[s * f + j], 0.0);
            }
        }
        let mask = static_mask(&imp, t, f, 2).unwrap();
        assert_eq!(mask, vec![true, true, false, false, false, false]);
    }
}
