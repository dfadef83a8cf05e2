//! Random-forest regression of segmentation quality, R², grouped
//! cross-validation and sequential forward feature selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub const MODEL_FORMAT: &str = "clickqc-forest";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum RegressorError {
    #[error("training set is empty")]
    EmptyData,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("row {row} has {got} features, expected {expected}")]
    FeatureLength { row: usize, expected: usize, got: usize },
    #[error("target {0} outside [0, 1]")]
    TargetRange(f64),
    #[error("input has {got} features, model expects {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("R² undefined: {0}")]
    R2Undefined(&'static str),
    #[error("cannot form {folds} folds from {groups} groups")]
    TooFewGroups { folds: usize, groups: usize },
    #[error("model file line {line}: {message}")]
    ModelFormat { line: usize, message: String },
}

/// One labeled annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: f64,
    pub worker_id: String,
    pub image_id: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub rows: Vec<Sample>,
}

impl TrainingSet {
    pub fn new(rows: Vec<Sample>) -> Result<Self, RegressorError> {
        let set = TrainingSet { rows };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.rows.first().map_or(0, |r| r.features.len())
    }

    fn validate(&self) -> Result<(), RegressorError> {
        let d = self.n_features();
        for (i, r) in self.rows.iter().enumerate() {
            if r.features.len() != d {
                return Err(RegressorError::FeatureLength { row: i, expected: d, got: r.features.len() });
            }
            if !(0.0..=1.0).contains(&r.target) {
                return Err(RegressorError::TargetRange(r.target));
            }
        }
        Ok(())
    }

    pub fn subset(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet { rows: idx.iter().map(|&i| self.rows[i].clone()).collect() }
    }

    /// Keeps only the listed feature columns, in the given order.
    pub fn project(&self, cols: &[usize]) -> TrainingSet {
        TrainingSet {
            rows: self
                .rows
                .iter()
                .map(|r| Sample { features: cols.iter().map(|&c| r.features[c]).collect(), ..r.clone() })
                .collect(),
        }
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 500, min_samples_leaf: 3, max_depth: None }
    }
}

/// Flat tree node. Leaves have `feature == -1`; for internal nodes
/// `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub feature: i64,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Node { feature: -1, threshold: 0.0, left: 0, right: 0, value }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature < 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return n.value;
            }
            i = if x[n.feature as usize] <= n.threshold { n.left } else { n.right };
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + go(t, n.left).max(go(t, n.right))
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub params: ForestParams,
    pub n_features: usize,
    pub seed: u64,
}

struct Builder<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    min_leaf: usize,
    max_depth: usize,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    scratch: Vec<(f64, f64)>,
}

struct Split {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        let mean = if pure { first } else { sum / n as f64 };
        let me = self.nodes.len();
        self.nodes.push(Node::leaf(mean));
        if pure || n < 2 * self.min_leaf || depth >= self.max_depth {
            return me;
        }
        let Some(split) = self.best_split(idx) else {
            return me;
        };
        let col = &self.cols[split.feature];
        // stable partition keeps the left side in original order
        let mut left: Vec<usize> = idx.iter().copied().filter(|&i| col[i] <= split.threshold).collect();
        let mut right: Vec<usize> = idx.iter().copied().filter(|&i| col[i] > split.threshold).collect();
        let l = self.grow(&mut left, depth + 1);
        let r = self.grow(&mut right, depth + 1);
        self.nodes[me] =
            Node { feature: split.feature as i64, threshold: split.threshold, left: l, right: r, value: mean };
        me
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<Split> {
        let d = self.cols.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut self.rng);
        let mut best: Option<Split> = None;
        let mut visited = 0;
        for &f in &order {
            if visited >= self.mtry {
                break;
            }
            let col = &self.cols[f];
            self.scratch.clear();
            self.scratch.extend(idx.iter().map(|&i| (col[i], self.y[i])));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let s = &self.scratch;
            if s[0].0 == s[s.len() - 1].0 {
                continue;
            }
            visited += 1;
            let n = s.len();
            let total: f64 = s.iter().map(|p| p.1).sum();
            let mut left_sum = 0.0;
            for i in 1..n {
                left_sum += s[i - 1].1;
                if i < self.min_leaf || n - i < self.min_leaf || s[i - 1].0 == s[i].0 {
                    continue;
                }
                let (nl, nr) = (i as f64, (n - i) as f64);
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                let (lo, hi) = (s[i - 1].0, s[i].0);
                let mut thr = lo + (hi - lo) / 2.0;
                if thr >= hi {
                    thr = lo;
                }
                let better = match &best {
                    None => true,
                    Some(b) => {
                        score > b.score
                            || (score == b.score && (f < b.feature || (f == b.feature && thr < b.threshold)))
                    }
                };
                if better {
                    best = Some(Split { score, feature: f, threshold: thr });
                }
            }
        }
        best
    }
}

fn fit_tree(cols: &[Vec<f64>], y: &[f64], params: &ForestParams, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = y.len();
    let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let d = cols.len();
    let mut b = Builder {
        cols,
        y,
        min_leaf: params.min_samples_leaf.max(1),
        max_depth: params.max_depth.unwrap_or(usize::MAX),
        mtry: d.div_ceil(3).max(1),
        rng,
        nodes: Vec::new(),
        scratch: Vec::with_capacity(n),
    };
    b.grow(&mut idx, 0);
    Tree { nodes: b.nodes }
}

/// Fits a forest of bootstrap regression trees. Deterministic given `seed`.
pub fn train(data: &TrainingSet, params: &ForestParams, seed: u64) -> Result<Forest, RegressorError> {
    if data.is_empty() {
        return Err(RegressorError::EmptyData);
    }
    data.validate()?;
    let needed = 2 * params.min_samples_leaf.max(1);
    if data.len() < needed {
        return Err(RegressorError::TooFewRows { needed, got: data.len() });
    }
    let d = data.n_features();
    let cols: Vec<Vec<f64>> = (0..d).map(|f| data.rows.iter().map(|r| r.features[f]).collect()).collect();
    let y = data.targets();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..params.n_trees).map(|_| master.next_u64()).collect();
    let trees = seeds.par_iter().map(|&s| fit_tree(&cols, &y, params, s)).collect();
    Ok(Forest { trees, params: *params, n_features: d, seed })
}

impl Forest {
    /// Mean of tree outputs, clamped to `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<f64, RegressorError> {
        if x.len() != self.n_features {
            return Err(RegressorError::SchemaMismatch { expected: self.n_features, got: x.len() });
        }
        let s: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok((s / self.trees.len() as f64).clamp(0.0, 1.0))
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, RegressorError> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }

    /// Text model file. `schema` names the feature layout the model expects.
    pub fn to_model_file(&self, schema: &str) -> String {
        let mut out = String::new();
        writeln!(out, "{MODEL_FORMAT} {MODEL_VERSION}").unwrap();
        writeln!(out, "schema {schema}").unwrap();
        writeln!(out, "n_features {}", self.n_features).unwrap();
        writeln!(out, "n_trees {}", self.trees.len()).unwrap();
        writeln!(out, "min_samples_leaf {}", self.params.min_samples_leaf).unwrap();
        let depth = self.params.max_depth.map_or("none".to_string(), |d| d.to_string());
        writeln!(out, "max_depth {depth}").unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        for (k, t) in self.trees.iter().enumerate() {
            writeln!(out, "tree {k} {}", t.nodes.len()).unwrap();
            for n in &t.nodes {
                writeln!(out, "{} {:?} {} {} {:?}", n.feature, n.threshold, n.left, n.right, n.value).unwrap();
            }
        }
        out
    }

    /// Parses a model file, returning the forest and its schema tag.
    pub fn from_model_file(text: &str) -> Result<(Forest, String), RegressorError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let err = |line: usize, m: &str| RegressorError::ModelFormat { line, message: m.to_string() };
        let mut next = |what: &str| lines.next().ok_or_else(|| err(0, &format!("missing {what}")));

        let (ln, magic) = next("header")?;
        if magic != format!("{MODEL_FORMAT} {MODEL_VERSION}") {
            return Err(err(ln, "unknown format or version"));
        }
        let mut field = |key: &str| -> Result<(usize, String), RegressorError> {
            let (ln, l) = next(key)?;
            let v = l
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| err(ln, &format!("expected `{key}`")))?;
            Ok((ln, v.to_string()))
        };
        let num = |(ln, v): (usize, String)| v.parse::<u64>().map_err(|_| err(ln, "bad integer"));
        let schema = field("schema")?.1;
        let n_features = num(field("n_features")?)? as usize;
        let n_trees = num(field("n_trees")?)? as usize;
        let min_leaf = num(field("min_samples_leaf")?)? as usize;
        let (dln, dv) = field("max_depth")?;
        let max_depth = if dv == "none" { None } else { Some(num((dln, dv))? as usize) };
        let seed = num(field("seed")?)?;

        let mut trees = Vec::with_capacity(n_trees);
        for k in 0..n_trees {
            let (ln, l) = next("tree")?;
            let parts: Vec<&str> = l.split(' ').collect();
            if parts.len() != 3 || parts[0] != "tree" || parts[1] != k.to_string() {
                return Err(err(ln, "expected tree header"));
            }
            let count: usize = parts[2].parse().map_err(|_| err(ln, "bad node count"))?;
            let mut nodes = Vec::with_capacity(count);
            for _ in 0..count {
                let (ln, l) = next("node")?;
                let p: Vec<&str> = l.split(' ').collect();
                if p.len() != 5 {
                    return Err(err(ln, "node needs 5 fields"));
                }
                let bad = || err(ln, "bad node field");
                let node = Node {
                    feature: p[0].parse().map_err(|_| bad())?,
                    threshold: p[1].parse().map_err(|_| bad())?,
                    left: p[2].parse().map_err(|_| bad())?,
                    right: p[3].parse().map_err(|_| bad())?,
                    value: p[4].parse().map_err(|_| bad())?,
                };
                let in_range =
                    node.is_leaf() || ((node.feature as usize) < n_features && node.left < count && node.right < count);
                if !in_range {
                    return Err(err(ln, "node index out of range"));
                }
                nodes.push(node);
            }
            if nodes.is_empty() {
                return Err(err(ln, "empty tree"));
            }
            trees.push(Tree { nodes });
        }
        let params = ForestParams { n_trees, min_samples_leaf: min_leaf, max_depth };
        Ok((Forest { trees, params, n_features, seed }, schema))
    }
}

/// Coefficient of determination `1 - Σ(s-ŝ)² / Σ(s-s̄)²`.
pub fn r2_score(truth: &[f64], est: &[f64]) -> Result<f64, RegressorError> {
    if truth.is_empty() {
        return Err(RegressorError::R2Undefined("empty input"));
    }
    if truth.len() != est.len() {
        return Err(RegressorError::R2Undefined("length mismatch"));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|s| (s - mean) * (s - mean)).sum();
    if truth.iter().all(|&s| s == truth[0]) {
        return Err(RegressorError::R2Undefined("constant truth"));
    }
    let ss_res: f64 = truth.iter().zip(est).map(|(s, e)| (s - e) * (s - e)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Train/test row indices for one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Rows in neither set because their worker or image is tested here
    /// while the other is not.
    pub dropped: usize,
}

fn index_of<'a>(map: &mut BTreeMap<&'a str, usize>, key: &'a str) -> usize {
    let n = map.len();
    *map.entry(key).or_insert(n)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Splits rows into `k` folds such that no worker and no image appears on
/// both sides of any fold.
///
/// When the worker–image graph has at least `k` connected components, whole
/// components are assigned to folds (largest first, into the lightest fold)
/// and no row is lost. Otherwise workers are dealt round-robin after a seeded
/// shuffle, each image follows the fold holding most of its rows, and rows
/// whose worker and image land in different folds are excluded from testing.
pub fn grouped_folds(workers: &[&str], images: &[&str], k: usize, seed: u64) -> Result<Vec<FoldSplit>, RegressorError> {
    assert_eq!(workers.len(), images.len());
    let n = workers.len();
    let mut wmap = BTreeMap::new();
    let mut imap = BTreeMap::new();
    let w_of: Vec<usize> = workers.iter().map(|w| index_of(&mut wmap, w)).collect();
    let i_of: Vec<usize> = images.iter().map(|i| index_of(&mut imap, i)).collect();
    let (nw, ni) = (wmap.len(), imap.len());

    let mut parent: Vec<usize> = (0..nw + ni).collect();
    for r in 0..n {
        let (a, b) = (find(&mut parent, w_of[r]), find(&mut parent, nw + i_of[r]));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut comp_rows: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for r in 0..n {
        let c = find(&mut parent, w_of[r]);
        comp_rows.entry(c).or_default().push(r);
    }

    let (w_fold, i_fold) = if comp_rows.len() >= k {
        let mut comps: Vec<Vec<usize>> = comp_rows.into_values().collect();
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        let mut load = vec![0usize; k];
        let mut w_fold = vec![0; nw];
        let mut i_fold = vec![0; ni];
        for rows in comps {
            let f = (0..k).min_by_key(|&f| (load[f], f)).unwrap();
            load[f] += rows.len();
            for r in rows {
                w_fold[w_of[r]] = f;
                i_fold[i_of[r]] = f;
            }
        }
        (w_fold, i_fold)
    } else {
        let groups = nw.min(ni);
        if groups < k {
            return Err(RegressorError::TooFewGroups { folds: k, groups });
        }
        let mut order: Vec<usize> = (0..nw).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut w_fold = vec![0; nw];
        for (pos, &w) in order.iter().enumerate() {
            w_fold[w] = pos % k;
        }
        let mut counts = vec![vec![0usize; k]; ni];
        for r in 0..n {
            counts[i_of[r]][w_fold[w_of[r]]] += 1;
        }
        let mut load = vec![0usize; k];
        let mut i_fold = vec![0; ni];
        for (img, c) in counts.iter().enumerate() {
            let f = (0..k).max_by(|&a, &b| c[a].cmp(&c[b]).then(load[b].cmp(&load[a])).then(b.cmp(&a))).unwrap();
            i_fold[img] = f;
            load[f] += c.iter().sum::<usize>();
        }
        (w_fold, i_fold)
    };

    Ok((0..k)
        .map(|f| {
            let mut split = FoldSplit { train: Vec::new(), test: Vec::new(), dropped: 0 };
            for r in 0..n {
                let (wf, imf) = (w_fold[w_of[r]], i_fold[i_of[r]]);
                if wf == f && imf == f {
                    split.test.push(r);
                } else if wf != f && imf != f {
                    split.train.push(r);
                } else {
                    split.dropped += 1;
                }
            }
            split
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    /// `None` when the test targets are constant or the fold is empty.
    pub r2: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub folds: Vec<FoldReport>,
    /// Out-of-fold estimate per row; `None` for rows never tested.
    pub predictions: Vec<Option<f64>>,
}

impl CvResult {
    /// Mean and population standard deviation of the defined fold scores.
    pub fn mean_std_r2(&self) -> (f64, f64) {
        let v: Vec<f64> = self.folds.iter().filter_map(|f| f.r2).collect();
        if v.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        (m, var.sqrt())
    }

    /// Delimited report `fold, r2, n_train, n_test, dropped_rows`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("fold\tr2\tn_train\tn_test\tdropped_rows\n");
        for f in &self.folds {
            let r2 = f.r2.map_or("NA".to_string(), |v| format!("{v:.6}"));
            writeln!(out, "{}\t{}\t{}\t{}\t{}", f.fold, r2, f.n_train, f.n_test, f.dropped).unwrap();
        }
        out
    }
}

/// `k`-fold cross-validation with worker- and image-disjoint folds.
pub fn grouped_cv(data: &TrainingSet, k: usize, params: &ForestParams, seed: u64) -> Result<CvResult, RegressorError> {
    if data.is_empty() {
        return Err(RegressorError::EmptyData);
    }
    data.validate()?;
    let workers: Vec<&str> = data.rows.iter().map(|r| r.worker_id.as_str()).collect();
    let images: Vec<&str> = data.rows.iter().map(|r| r.image_id.as_str()).collect();
    let splits = grouped_folds(&workers, &images, k, seed)?;
    let mut predictions = vec![None; data.len()];
    let mut folds = Vec::with_capacity(k);
    for (f, split) in splits.iter().enumerate() {
        let mut report = FoldReport {
            fold: f,
            r2: None,
            n_train: split.train.len(),
            n_test: split.test.len(),
            dropped: split.dropped,
        };
        if !split.test.is_empty() {
            let forest = train(&data.subset(&split.train), params, seed.wrapping_add(f as u64))?;
            let xs: Vec<Vec<f64>> = split.test.iter().map(|&r| data.rows[r].features.clone()).collect();
            let est = forest.predict_many(&xs)?;
            let truth: Vec<f64> = split.test.iter().map(|&r| data.rows[r].target).collect();
            report.r2 = r2_score(&truth, &est).ok();
            for (&r, e) in split.test.iter().zip(est) {
                predictions[r] = Some(e);
            }
        }
        log::info!(
            "fold {f}: r2={:?} train={} test={} dropped={}",
            report.r2,
            report.n_train,
            report.n_test,
            report.dropped
        );
        folds.push(report);
    }
    Ok(CvResult { folds, predictions })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfsConfig {
    pub max_features: usize,
    pub penalty: f64,
    pub folds: usize,
    pub forest: ForestParams,
    pub seed: u64,
}

impl Default for SfsConfig {
    fn default() -> Self {
        SfsConfig {
            max_features: 10,
            penalty: 1e-4,
            folds: 5,
            forest: ForestParams { n_trees: 30, ..ForestParams::default() },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfsStep {
    pub added: usize,
    pub mse: f64,
    pub criterion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfsResult {
    pub selected: Vec<usize>,
    pub steps: Vec<SfsStep>,
    /// Criterion of the empty set (training-mean predictor).
    pub baseline: f64,
}

fn cv_mse(data: &TrainingSet, cols: &[usize], splits: &[FoldSplit], cfg: &SfsConfig) -> Result<f64, RegressorError> {
    let mut sse = 0.0;
    let mut count = 0usize;
    for (f, split) in splits.iter().enumerate() {
        if split.test.is_empty() || split.train.is_empty() {
            continue;
        }
        let train_set = data.subset(&split.train);
        let preds: Vec<f64> = if cols.is_empty() {
            let m = train_set.targets().iter().sum::<f64>() / train_set.len() as f64;
            vec![m; split.test.len()]
        } else {
            let forest = train(&train_set.project(cols), &cfg.forest, cfg.seed.wrapping_add(f as u64))?;
            split
                .test
                .iter()
                .map(|&r| forest.predict(&cols.iter().map(|&c| data.rows[r].features[c]).collect::<Vec<_>>()))
                .collect::<Result<_, _>>()?
        };
        for (&r, p) in split.test.iter().zip(preds) {
            sse += (data.rows[r].target - p).powi(2);
            count += 1;
        }
    }
    Ok(if count == 0 { f64::INFINITY } else { sse / count as f64 })
}

/// Greedy forward selection minimizing grouped-CV MSE plus `penalty·|S|`.
/// Uses only the rows passed in; ties go to the lowest feature index.
pub fn sfs_select(data: &TrainingSet, cfg: &SfsConfig) -> Result<SfsResult, RegressorError> {
    if data.is_empty() {
        return Err(RegressorError::EmptyData);
    }
    data.validate()?;
    let workers: Vec<&str> = data.rows.iter().map(|r| r.worker_id.as_str()).collect();
    let images: Vec<&str> = data.rows.iter().map(|r| r.image_id.as_str()).collect();
    let splits = grouped_folds(&workers, &images, cfg.folds, cfg.seed)?;
    let d = data.n_features();
    let baseline = cv_mse(data, &[], &splits, cfg)?;
    let mut current = baseline;
    let mut selected: Vec<usize> = Vec::new();
    let mut steps = Vec::new();
    while selected.len() < cfg.max_features.min(d) {
        let candidates: Vec<usize> = (0..d).filter(|f| !selected.contains(f)).collect();
        let scores: Vec<(usize, f64)> = candidates
            .par_iter()
            .map(|&f| {
                let mut cols = selected.clone();
                cols.push(f);
                cv_mse(data, &cols, &splits, cfg).map(|m| (f, m))
            })
            .collect::<Result<_, _>>()?;
        let size = (selected.len() + 1) as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        for (f, mse) in scores {
            let crit = mse + cfg.penalty * size;
            if best.is_none_or(|(_, _, c)| crit < c) {
                best = Some((f, mse, crit));
            }
        }
        let Some((f, mse, crit)) = best else { break };
        if crit >= current {
            break;
        }
        log::debug!("sfs: add feature {f}, mse {mse:.6}");
        selected.push(f);
        steps.push(SfsStep { added: f, mse, criterion: crit });
        current = crit;
    }
    Ok(SfsResult { selected, steps, baseline })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    fn sample(features: Vec<f64>, target: f64, w: usize, i: usize) -> Sample {
        Sample { features, target, worker_id: format!("w{w}"), image_id: format!("i{i}") }
    }

    fn step_data(n: usize, seed: u64) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TrainingSet::new(
            (0..n)
                .map(|k| {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    let noise: f64 = rng.random_range(-1.0..1.0);
                    sample(vec![x, noise], if x > 0.0 { 1.0 } else { 0.0 }, k % 10, k % 17)
                })
                .collect(),
        )
        .unwrap()
    }

    fn small() -> ForestParams {
        ForestParams { n_trees: 20, ..ForestParams::default() }
    }

    #[test]
    fn constant_targets_give_constant_predictions() {
        let data =
            TrainingSet::new((0..30).map(|k| sample(vec![k as f64, (k * k) as f64], 0.42, k, k)).collect()).unwrap();
        let f = train(&data, &small(), 3).unwrap();
        for x in [-5.0, 3.0, 100.0] {
            assert!((f.predict(&[x, x]).unwrap() - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn step_function_is_learned() {
        let f = train(&step_data(1000, 1), &small(), 7).unwrap();
        let test = step_data(500, 2);
        let mse = test.rows.iter().map(|r| (f.predict(&r.features).unwrap() - r.target).powi(2)).sum::<f64>() / 500.0;
        assert!(mse < 0.01, "{mse}");
    }

    #[test]
    fn training_is_deterministic() {
        let d = step_data(200, 5);
        assert_eq!(train(&d, &small(), 11).unwrap(), train(&d, &small(), 11).unwrap());
        assert_ne!(train(&d, &small(), 11).unwrap(), train(&d, &small(), 12).unwrap());
    }

    #[test]
    fn leaves_respect_minimum_size() {
        let d = step_data(300, 9);
        let f = train(&d, &ForestParams { n_trees: 5, min_samples_leaf: 7, max_depth: None }, 1).unwrap();
        // re-derive bootstrap counts per leaf by routing the bootstrap sample
        let mut master = ChaCha8Rng::seed_from_u64(1);
        for t in &f.trees {
            let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
            let mut counts = vec![0usize; t.nodes.len()];
            for _ in 0..d.len() {
                let r = rng.random_range(0..d.len());
                let mut i = 0;
                while !t.nodes[i].is_leaf() {
                    let n = t.nodes[i];
                    i = if d.rows[r].features[n.feature as usize] <= n.threshold { n.left } else { n.right };
                }
                counts[i] += 1;
            }
            for (i, n) in t.nodes.iter().enumerate() {
                if n.is_leaf() {
                    assert!(counts[i] >= 7, "leaf with {} rows", counts[i]);
                }
            }
        }
    }

    #[test]
    fn pure_leaf_forest_reproduces_training_rows() {
        let data =
            TrainingSet::new((0..40).map(|k| sample(vec![k as f64], if k < 20 { 0.1 } else { 0.9 }, k, k)).collect())
                .unwrap();
        let f = train(&data, &ForestParams { n_trees: 15, min_samples_leaf: 1, max_depth: None }, 2).unwrap();
        assert!((f.predict(&[0.0]).unwrap() - 0.1).abs() < 1e-12);
        assert!((f.predict(&[39.0]).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn schema_mismatch_and_bad_input() {
        let f = train(&step_data(50, 1), &small(), 1).unwrap();
        assert_eq!(f.predict(&[1.0]), Err(RegressorError::SchemaMismatch { expected: 2, got: 1 }));
        assert_eq!(train(&TrainingSet::default(), &small(), 1), Err(RegressorError::EmptyData));
        let ragged = TrainingSet { rows: vec![sample(vec![1.0], 0.5, 0, 0), sample(vec![1.0, 2.0], 0.5, 1, 1)] };
        assert!(matches!(train(&ragged, &small(), 1), Err(RegressorError::FeatureLength { .. })));
        let tiny = TrainingSet::new(vec![sample(vec![1.0], 0.5, 0, 0)]).unwrap();
        assert_eq!(train(&tiny, &small(), 1), Err(RegressorError::TooFewRows { needed: 6, got: 1 }));
    }

    #[test]
    fn model_file_round_trip() {
        let f = train(&step_data(120, 3), &ForestParams { n_trees: 4, min_samples_leaf: 2, max_depth: Some(6) }, 9)
            .unwrap();
        let text = f.to_model_file("schema-x");
        let (back, schema) = Forest::from_model_file(&text).unwrap();
        assert_eq!(schema, "schema-x");
        assert_eq!(back, f);
        assert!(Forest::from_model_file("clickqc-forest 99\n").is_err());
        assert!(Forest::from_model_file(&text.replace("tree 2", "tree 7")).is_err());
    }

    #[test]
    fn r2_cases() {
        assert_eq!(r2_score(&[0.1, 0.5, 0.9], &[0.1, 0.5, 0.9]).unwrap(), 1.0);
        assert!(r2_score(&[0.2, 0.4, 0.9], &[0.5; 3]).unwrap().abs() < 1e-12);
        assert_eq!(r2_score(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), -3.0);
        assert!(r2_score(&[0.3, 0.3], &[0.1, 0.2]).is_err());
        assert!(r2_score(&[], &[]).is_err());
    }

    #[test]
    fn disjoint_components_map_one_per_fold() {
        let mut w = Vec::new();
        let mut im = Vec::new();
        for k in 0..10 {
            for j in 0..3 {
                w.push(format!("w{k}"));
                im.push(format!("i{k}_{j}"));
            }
        }
        let wr: Vec<&str> = w.iter().map(String::as_str).collect();
        let ir: Vec<&str> = im.iter().map(String::as_str).collect();
        let folds = grouped_folds(&wr, &ir, 10, 0).unwrap();
        for f in &folds {
            assert_eq!(f.test.len(), 3);
            assert_eq!(f.dropped, 0);
            let tw: std::collections::BTreeSet<_> = f.test.iter().map(|&r| wr[r]).collect();
            assert_eq!(tw.len(), 1);
        }
    }

    #[test]
    fn too_few_groups() {
        let w = ["a", "a", "b"];
        let i = ["x", "y", "x"];
        assert_eq!(grouped_folds(&w, &i, 5, 0), Err(RegressorError::TooFewGroups { folds: 5, groups: 2 }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn folds_are_worker_and_image_disjoint(
            pairs in prop::collection::vec((0usize..12, 0usize..15), 30..120),
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            let w: Vec<String> = pairs.iter().map(|p| format!("w{}", p.0)).collect();
            let im: Vec<String> = pairs.iter().map(|p| format!("i{}", p.1)).collect();
            let wr: Vec<&str> = w.iter().map(String::as_str).collect();
            let ir: Vec<&str> = im.iter().map(String::as_str).collect();
            if let Ok(folds) = grouped_folds(&wr, &ir, k, seed) {
                for f in &folds {
                    prop_assert_eq!(f.train.len() + f.test.len() + f.dropped, pairs.len());
                    for &a in &f.train {
                        for &b in &f.test {
                            prop_assert!(wr[a] != wr[b] && ir[a] != ir[b]);
                        }
                    }
                }
            }
        }

        #[test]
        fn r2_translation_invariance(
            v in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..40),
            c in -5.0f64..5.0,
        ) {
            let t: Vec<f64> = v.iter().map(|p| p.0).collect();
            let e: Vec<f64> = v.iter().map(|p| p.1).collect();
            if let Ok(a) = r2_score(&t, &e) {
                let ts: Vec<f64> = t.iter().map(|x| x + c).collect();
                let es: Vec<f64> = e.iter().map(|x| x + c).collect();
                let b = r2_score(&ts, &es).unwrap();
                prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
            }
        }

        #[test]
        fn predictions_stay_within_target_range(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Sample> = (0..40)
                .map(|k| sample(vec![rng.random(), rng.random()], rng.random_range(0.2..0.7), k, k))
                .collect();
            let data = TrainingSet::new(rows).unwrap();
            let f = train(&data, &ForestParams { n_trees: 5, ..ForestParams::default() }, seed).unwrap();
            for _ in 0..20 {
                let p = f.predict(&[rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0)]).unwrap();
                prop_assert!((0.2..0.7).contains(&p));
            }
        }
    }

    fn sfs_data(n: usize, dup: bool) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        TrainingSet::new(
            (0..n)
                .map(|k| {
                    let mut x: Vec<f64> = (0..6).map(|_| rng.random()).collect();
                    if dup {
                        x[4] = x[1];
                    }
                    let t = if dup { x[1] } else { x[3] };
                    sample(x, t, k % 8, k % 11)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sfs_picks_the_target_feature_first() {
        let cfg = SfsConfig {
            max_features: 3,
            forest: ForestParams { n_trees: 10, ..ForestParams::default() },
            ..SfsConfig::default()
        };
        let r = sfs_select(&sfs_data(160, false), &cfg).unwrap();
        assert_eq!(r.selected[0], 3);
    }

    #[test]
    fn sfs_duplicate_goes_to_lowest_index() {
        let cfg = SfsConfig {
            max_features: 2,
            forest: ForestParams { n_trees: 10, ..ForestParams::default() },
            ..SfsConfig::default()
        };
        let r = sfs_select(&sfs_data(160, true), &cfg).unwrap();
        assert_eq!(r.selected[0], 1);
        assert!(!r.selected.contains(&4) || r.selected.len() > 1);
    }

    #[test]
    fn sfs_stops_early_on_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Sample> =
            (0..120).map(|k| sample((0..5).map(|_| rng.random()).collect(), rng.random(), k % 8, k % 11)).collect();
        let cfg = SfsConfig {
            max_features: 5,
            penalty: 0.01,
            forest: ForestParams { n_trees: 10, ..ForestParams::default() },
            ..SfsConfig::default()
        };
        let r = sfs_select(&TrainingSet::new(rows).unwrap(), &cfg).unwrap();
        assert!(r.selected.len() <= 1, "{:?}", r.selected);
    }
}
