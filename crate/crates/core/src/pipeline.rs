//! Dataset directories and the end-to-end commands behind the CLI.
//!
//! Dataset layout:
//!
//! ```text
//! DIR/manifest.tsv                     image_id worker_id archetype dsc
//! DIR/images/<image_id>/image.pgm
//! DIR/images/<image_id>/reference.pgm  (optional)
//! DIR/images/<image_id>/<worker_id>.clicks
//! DIR/images/<image_id>/<worker_id>.poly
//! ```
//!
//! `archetype` and `dsc` may be `NA` for real crowd data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::clickstream::{Clickstream, MatchTolerance};
use crate::cost::CostError;
use crate::features::{extract_features, FeatureConfig, FeatureError, FeatureRow, SCHEMA_VERSION};
use crate::fusion::{fuse_pool, majority_vote, FusionConfig, FusionError, FusionMethod, StapleParams};
use crate::geometry::{dice, parse_polygons, rasterize, write_polygons, Mask, Polygon};
use crate::imaging::{gaussian_gradient, GrayImage};
use crate::pgm;
use crate::regressor::{
    self, grouped_cv, grouped_folds, r2_score, CvResult, Forest, ForestParams, RegressorError, Sample, TrainingSet,
};
use crate::simulator::{self, mix_seed, ArchetypeMix, DatasetConfig, SimError};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const PARSE: i32 = 4;
    pub const SCHEMA: i32 = 5;
    pub const COMPUTE: i32 = 6;
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("schema mismatch: expected `{expected}`, got `{got}`")]
    Schema { expected: String, got: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io { .. } => exit::IO,
            PipelineError::Parse { .. } => exit::PARSE,
            PipelineError::Schema { .. } => exit::SCHEMA,
            PipelineError::Config(_)
            | PipelineError::Cost(CostError::Parse(_))
            | PipelineError::Simulation(SimError::BadMix(_) | SimError::Unknown { .. })
            | PipelineError::Fusion(FusionError::UnknownMethod(_)) => exit::USAGE,
            PipelineError::Regressor(RegressorError::SchemaMismatch { .. }) => exit::SCHEMA,
            PipelineError::Regressor(RegressorError::ModelFormat { .. }) => exit::PARSE,
            _ => exit::COMPUTE,
        }
    }

    fn parse(path: &Path, message: impl ToString) -> Self {
        PipelineError::Parse { path: path.to_path_buf(), message: message.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

pub fn write_file(path: &Path, data: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| PipelineError::Io { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, data).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageData {
    pub image_id: String,
    pub image: GrayImage,
    pub reference: Option<Mask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationData {
    pub worker_id: String,
    pub image_id: String,
    pub archetype: Option<String>,
    pub dsc: Option<f64>,
    pub stream: Clickstream,
    pub polygon: Polygon,
}

/// Images plus the annotations collected for them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotatedDataset {
    pub images: Vec<ImageData>,
    pub annotations: Vec<AnnotationData>,
}

impl From<simulator::Dataset> for AnnotatedDataset {
    fn from(d: simulator::Dataset) -> Self {
        AnnotatedDataset {
            images: d
                .scenes
                .into_iter()
                .map(|s| ImageData { image_id: s.image_id, image: s.scene.image, reference: Some(s.scene.reference) })
                .collect(),
            annotations: d
                .annotations
                .into_iter()
                .map(|a| AnnotationData {
                    worker_id: a.worker_id,
                    image_id: a.image_id,
                    archetype: Some(a.archetype.to_string()),
                    dsc: Some(a.dsc),
                    stream: a.stream,
                    polygon: a.polygon,
                })
                .collect(),
        }
    }
}

impl AnnotatedDataset {
    pub fn image(&self, image_id: &str) -> Option<&ImageData> {
        self.images.iter().find(|i| i.image_id == image_id)
    }
}

const MANIFEST: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "image_id\tworker_id\tarchetype\tdsc";

fn image_dir(root: &Path, image_id: &str) -> PathBuf {
    root.join("images").join(image_id)
}

fn na<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("NA".to_string(), T::to_string)
}

pub fn write_dataset(data: &AnnotatedDataset, root: &Path) -> Result<()> {
    for img in &data.images {
        let dir = image_dir(root, &img.image_id);
        write_file(&dir.join("image.pgm"), pgm::encode_gray(&img.image))?;
        if let Some(r) = &img.reference {
            write_file(&dir.join("reference.pgm"), pgm::encode_mask(r))?;
        }
    }
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for a in &data.annotations {
        let dir = image_dir(root, &a.image_id);
        write_file(&dir.join(format!("{}.clicks", a.worker_id)), a.stream.to_log())?;
        write_file(&dir.join(format!("{}.poly", a.worker_id)), write_polygons(std::slice::from_ref(&a.polygon)))?;
        writeln!(manifest, "{}\t{}\t{}\t{}", a.image_id, a.worker_id, na(&a.archetype), na(&a.dsc)).unwrap();
    }
    write_file(&root.join(MANIFEST), manifest)
}

pub fn load_dataset(root: &Path) -> Result<AnnotatedDataset> {
    let manifest_path = root.join(MANIFEST);
    let text = read_text(&manifest_path)?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(PipelineError::parse(&manifest_path, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(PipelineError::parse(&manifest_path, format!("line {}: expected 4 columns", i + 2)));
        }
        let archetype = (f[2] != "NA").then(|| f[2].to_string());
        let dsc = match f[3] {
            "NA" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| PipelineError::parse(&manifest_path, format!("line {}: bad dsc", i + 2)))?,
            ),
        };
        rows.push((f[0].to_string(), f[1].to_string(), archetype, dsc));
    }

    let mut image_ids: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
    image_ids.sort_unstable();
    image_ids.dedup();
    let images = image_ids
        .par_iter()
        .map(|&id| {
            let dir = image_dir(root, id);
            let p = dir.join("image.pgm");
            let image = pgm::decode_gray(&read_bytes(&p)?).map_err(|e| PipelineError::parse(&p, e))?;
            let rp = dir.join("reference.pgm");
            let reference = if rp.exists() {
                let m = pgm::decode_mask(&read_bytes(&rp)?).map_err(|e| PipelineError::parse(&rp, e))?;
                if m.width() != image.width() || m.height() != image.height() {
                    return Err(PipelineError::parse(&rp, "reference size differs from image"));
                }
                Some(m)
            } else {
                None
            };
            Ok(ImageData { image_id: id.to_string(), image, reference })
        })
        .collect::<Result<Vec<_>>>()?;

    let annotations = rows
        .into_par_iter()
        .map(|(image_id, worker_id, archetype, dsc)| {
            let dir = image_dir(root, &image_id);
            let cp = dir.join(format!("{worker_id}.clicks"));
            let stream = Clickstream::parse(&read_bytes(&cp)?).map_err(|e| PipelineError::parse(&cp, e))?;
            let pp = dir.join(format!("{worker_id}.poly"));
            let mut polys = parse_polygons(&read_text(&pp)?).map_err(|e| PipelineError::parse(&pp, e))?;
            if polys.len() != 1 {
                return Err(PipelineError::parse(&pp, format!("expected one contour, found {}", polys.len())));
            }
            Ok(AnnotationData { worker_id, image_id, archetype, dsc, stream, polygon: polys.remove(0) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotatedDataset { images, annotations })
}

/// Simulates a dataset and writes it under `out`.
pub fn cmd_simulate(cfg: &DatasetConfig, out: &Path) -> Result<AnnotatedDataset> {
    let data: AnnotatedDataset = simulator::build_dataset(cfg)?.into();
    write_dataset(&data, out)?;
    log::info!(
        "simulated {} annotations on {} images into {}",
        data.annotations.len(),
        data.images.len(),
        out.display()
    );
    Ok(data)
}

/// Feature rows for every annotation, in dataset order.
pub fn extract_dataset(data: &AnnotatedDataset, sigma: f64, tolerance: MatchTolerance) -> Result<Vec<FeatureRow>> {
    let grads = data
        .images
        .par_iter()
        .map(|img| {
            gaussian_gradient(&img.image, sigma)
                .map(|g| (img.image_id.as_str(), g))
                .map_err(|e| PipelineError::Config(e.to_string()))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let cfg = FeatureConfig { tolerance };
    data.annotations
        .par_iter()
        .map(|a| {
            let grad = grads.get(a.image_id.as_str()).ok_or_else(|| {
                PipelineError::Config(format!("annotation references unknown image `{}`", a.image_id))
            })?;
            Ok(FeatureRow {
                worker_id: a.worker_id.clone(),
                image_id: a.image_id.clone(),
                features: extract_features(&a.stream, &a.polygon, grad, &cfg),
                dsc: a.dsc,
            })
        })
        .collect()
}

pub fn cmd_extract(dataset: &Path, sigma: f64, out: &Path) -> Result<Vec<FeatureRow>> {
    let data = load_dataset(dataset)?;
    let rows = extract_dataset(&data, sigma, MatchTolerance::default())?;
    write_file(out, crate::features::write_feature_table(&rows))?;
    Ok(rows)
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureRow>> {
    crate::features::read_feature_table(&read_text(path)?).map_err(|e| match e {
        FeatureError::SchemaMismatch { expected, got } => PipelineError::Schema { expected, got },
        e => PipelineError::parse(path, e),
    })
}

/// Labeled rows as a training set; unlabeled rows are skipped.
pub fn training_set(rows: &[FeatureRow]) -> Result<TrainingSet> {
    let samples = rows
        .iter()
        .filter_map(|r| {
            r.dsc.map(|d| Sample {
                features: r.features.values.clone(),
                target: d,
                worker_id: r.worker_id.clone(),
                image_id: r.image_id.clone(),
            })
        })
        .collect();
    Ok(TrainingSet::new(samples)?)
}

pub fn cmd_train(features: &Path, params: &ForestParams, seed: u64, out: &Path) -> Result<Forest> {
    let rows = load_features(features)?;
    let data = training_set(&rows)?;
    let forest = regressor::train(&data, params, seed)?;
    write_file(out, forest.to_model_file(SCHEMA_VERSION))?;
    log::info!("trained {} trees on {} rows", params.n_trees, data.len());
    Ok(forest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub worker_id: String,
    pub image_id: String,
    pub s_hat: f64,
}

const ESTIMATE_HEADER: &str = "worker_id\timage_id\ts_hat";

pub fn write_estimates(rows: &[EstimateRow]) -> String {
    let mut out = format!("{ESTIMATE_HEADER}\n");
    for r in rows {
        writeln!(out, "{}\t{}\t{}", r.worker_id, r.image_id, r.s_hat).unwrap();
    }
    out
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRow>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(ESTIMATE_HEADER) {
        return Err(PipelineError::parse(path, "unexpected header"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            let s_hat = f.get(2).and_then(|s| s.parse::<f64>().ok()).filter(|_| f.len() == 3);
            match s_hat {
                Some(s_hat) => Ok(EstimateRow { worker_id: f[0].to_string(), image_id: f[1].to_string(), s_hat }),
                None => Err(PipelineError::parse(path, format!("line {}: expected worker_id, image_id, s_hat", i + 2))),
            }
        })
        .collect()
}

/// Scores feature rows with a model file, checking that both use the same
/// feature schema.
pub fn estimate(model_text: &str, rows: &[FeatureRow]) -> Result<Vec<EstimateRow>> {
    let (forest, schema) = Forest::from_model_file(model_text)?;
    if schema != SCHEMA_VERSION {
        return Err(PipelineError::Schema { expected: schema, got: SCHEMA_VERSION.to_string() });
    }
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.features.values.clone()).collect();
    let est = forest.predict_many(&xs)?;
    Ok(rows
        .iter()
        .zip(est)
        .map(|(r, s_hat)| EstimateRow { worker_id: r.worker_id.clone(), image_id: r.image_id.clone(), s_hat })
        .collect())
}

pub fn cmd_estimate(model: &Path, features: &Path, out: &Path) -> Result<Vec<EstimateRow>> {
    let model_text = read_text(model)?;
    let rows = load_features(features)?;
    let est = estimate(&model_text, &rows)?;
    write_file(out, write_estimates(&est))?;
    Ok(est)
}

/// One image's annotations as masks, with their quality estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub image_id: String,
    pub worker_ids: Vec<String>,
    pub masks: Vec<Mask>,
    pub s_hat: Vec<f64>,
    pub reference: Option<Mask>,
}

/// Groups annotations into per-image pools. Annotations without an entry in
/// `estimates` get `ŝ = 0`, so estimate-driven methods never accept them.
pub fn build_pools(data: &AnnotatedDataset, estimates: &[EstimateRow]) -> Result<Vec<Pool>> {
    let est: BTreeMap<(&str, &str), f64> =
        estimates.iter().map(|e| ((e.image_id.as_str(), e.worker_id.as_str()), e.s_hat)).collect();
    let mut missing = 0;
    let mut pools: Vec<Pool> = data
        .images
        .iter()
        .map(|img| Pool {
            image_id: img.image_id.clone(),
            worker_ids: Vec::new(),
            masks: Vec::new(),
            s_hat: Vec::new(),
            reference: img.reference.clone(),
        })
        .collect();
    let index: BTreeMap<&str, usize> =
        data.images.iter().enumerate().map(|(i, img)| (img.image_id.as_str(), i)).collect();
    let masks = data
        .annotations
        .par_iter()
        .map(|a| {
            let img = data
                .image(&a.image_id)
                .ok_or_else(|| PipelineError::Config(format!("unknown image `{}`", a.image_id)))?;
            let (w, h) = (img.image.width(), img.image.height());
            // a contour with fewer than three vertices covers nothing
            Ok(rasterize(&a.polygon, w, h).unwrap_or_else(|_| Mask::new(w, h)))
        })
        .collect::<Result<Vec<_>>>()?;
    for (a, m) in data.annotations.iter().zip(masks) {
        let pool = &mut pools[index[a.image_id.as_str()]];
        let s = match est.get(&(a.image_id.as_str(), a.worker_id.as_str())) {
            Some(&s) => s,
            None => {
                missing += 1;
                0.0
            }
        };
        pool.worker_ids.push(a.worker_id.clone());
        pool.masks.push(m);
        pool.s_hat.push(s);
    }
    if missing > 0 && !estimates.is_empty() {
        log::warn!("{missing} annotations have no quality estimate and count as rejected");
    }
    pools.retain(|p| !p.masks.is_empty());
    Ok(pools)
}

/// Fusion outcome for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionRecord {
    pub image_id: String,
    pub method: String,
    pub lambda: usize,
    /// Annotations drawn from the pool.
    pub phi: usize,
    pub epsilon_t: f64,
    pub dsc: Option<f64>,
    pub short: bool,
    pub mask: Mask,
}

/// Label of majority voting over every annotation an estimate-driven method
/// drew, i.e. the same spend without quality control.
pub const MV_AT_PHI: &str = "mv@phi";

/// Random visiting order for an image's pool, shared by all methods.
pub fn draw_order(n: usize, seed: u64, image_index: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xF05E, image_index as u64)));
    order
}

/// Runs `method` at each λ on every pool. When `with_mv_at_phi` is set and
/// the method uses estimates, a majority vote over all drawn annotations is
/// reported alongside.
pub fn fuse_pools(
    pools: &[Pool],
    methods: &[FusionMethod],
    lambdas: &[usize],
    epsilon_t: f64,
    seed: u64,
    with_mv_at_phi: bool,
) -> Result<Vec<FusionRecord>> {
    if !(0.0..1.0).contains(&epsilon_t) {
        return Err(PipelineError::Config(format!("epsilon_t = {epsilon_t} must lie in [0, 1)")));
    }
    if lambdas.contains(&0) {
        return Err(PipelineError::Config("lambda must be at least 1".into()));
    }
    let per_pool = pools
        .par_iter()
        .enumerate()
        .map(|(pi, pool)| {
            let order = draw_order(pool.masks.len(), seed, pi);
            let refs: Vec<&Mask> = pool.masks.iter().collect();
            let mut out = Vec::new();
            for &method in methods {
                for &lambda in lambdas {
                    let cfg = FusionConfig { epsilon_t, lambda, method, staple: StapleParams::default() };
                    let o = fuse_pool(&refs, &pool.s_hat, &order, &cfg)?;
                    let score = |m: &Mask| pool.reference.as_ref().map(|r| dice(m, r).expect("same shape"));
                    if with_mv_at_phi && method.uses_estimates() {
                        let drawn: Vec<&Mask> = order[..o.drawn].iter().map(|&i| refs[i]).collect();
                        let mv = majority_vote(&drawn)?;
                        out.push(FusionRecord {
                            image_id: pool.image_id.clone(),
                            method: format!("{MV_AT_PHI}({method})"),
                            lambda,
                            phi: o.drawn,
                            epsilon_t,
                            dsc: score(&mv),
                            short: false,
                            mask: mv,
                        });
                    }
                    out.push(FusionRecord {
                        image_id: pool.image_id.clone(),
                        method: method.to_string(),
                        lambda,
                        phi: o.drawn,
                        epsilon_t,
                        dsc: score(&o.mask),
                        short: o.short,
                        mask: o.mask,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_pool.into_iter().flatten().collect())
}

pub fn write_fusion_report(records: &[FusionRecord]) -> String {
    let mut out = String::from("image_id\tmethod\tlambda\tphi\tepsilon_t\tdsc\tshort\n");
    for r in records {
        let dsc = r.dsc.map_or("NA".to_string(), |d| format!("{d:.6}"));
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.image_id, r.method, r.lambda, r.phi, r.epsilon_t, dsc, r.short as u8
        )
        .unwrap();
    }
    out
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// DSC distribution of one method at one λ.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSummary {
    pub method: String,
    pub lambda: usize,
    pub mean_phi: f64,
    pub n: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub mean: f64,
}

pub fn summarize_fusion(records: &[FusionRecord]) -> Vec<FusionSummary> {
    let mut groups: Vec<((String, usize), Vec<&FusionRecord>)> = Vec::new();
    for r in records {
        let key = (r.method.clone(), r.lambda);
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((method, lambda), rs)| {
            let mut d: Vec<f64> = rs.iter().filter_map(|r| r.dsc).collect();
            d.sort_by(f64::total_cmp);
            let mean_phi = rs.iter().map(|r| r.phi as f64).sum::<f64>() / rs.len() as f64;
            FusionSummary {
                method,
                lambda,
                mean_phi,
                n: d.len(),
                q25: quantile(&d, 0.25),
                median: quantile(&d, 0.5),
                q75: quantile(&d, 0.75),
                mean: if d.is_empty() { f64::NAN } else { d.iter().sum::<f64>() / d.len() as f64 },
            }
        })
        .collect()
}

pub fn write_fusion_summary(rows: &[FusionSummary]) -> String {
    let mut out = String::from("method\tlambda\tphi\tn\tdsc_q25\tdsc_median\tdsc_q75\tdsc_mean\n");
    for s in rows {
        writeln!(
            out,
            "{}\t{}\t{:.3}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            s.method, s.lambda, s.mean_phi, s.n, s.q25, s.median, s.q75, s.mean
        )
        .unwrap();
    }
    out
}

/// Fuses a dataset directory with a single method and λ.
pub fn cmd_fuse(
    dataset: &Path,
    estimates: Option<&Path>,
    method: FusionMethod,
    lambda: usize,
    epsilon_t: f64,
    seed: u64,
    out: &Path,
) -> Result<Vec<FusionRecord>> {
    let data = load_dataset(dataset)?;
    let est = match estimates {
        Some(p) => read_estimates(p)?,
        None if method.uses_estimates() => {
            return Err(PipelineError::Config(format!("method `{method}` needs --estimates")));
        }
        None => Vec::new(),
    };
    let pools = build_pools(&data, &est)?;
    let records = fuse_pools(&pools, &[method], &[lambda], epsilon_t, seed, false)?;
    write_file(out, write_fusion_report(&records))?;
    Ok(records)
}

pub fn cmd_cost(params: &Path, max_a: u64, step: u64, unit_cost: f64) -> Result<String> {
    let p = crate::cost::CostParams::from_toml(&read_text(params)?)?;
    Ok(p.cost_table(max_a, step, unit_cost))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub images: usize,
    pub workers: usize,
    pub crews: usize,
    pub size: usize,
    pub mix: String,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            images: 100,
            workers: 20,
            crews: 10,
            size: 128,
            mix: "diligent=0.4,sloppy=0.2,spammer=0.25,bounding-box=0.1,inverted=0.05".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestSection {
    pub trees: usize,
    pub min_leaf: usize,
    pub folds: usize,
}

impl Default for ForestSection {
    fn default() -> Self {
        ForestSection { trees: 500, min_leaf: 3, folds: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub epsilon_t: f64,
    pub lambdas: Vec<usize>,
    pub methods: Vec<String>,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            epsilon_t: 0.9,
            lambdas: vec![1, 3, 5],
            methods: FusionMethod::ALL.iter().map(|m| m.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Training-set sizes in images; empty disables the sweep.
    pub train_images: Vec<usize>,
    pub trees: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { train_images: vec![5, 10, 20, 40, 80], trees: 100 }
    }
}

/// Settings of `experiment`. Relative `out_dir` resolves against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sigma: f64,
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    pub forest: ForestSection,
    pub fusion: FusionSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            sigma: 1.0,
            out_dir: PathBuf::from("experiment-out"),
            dataset: DatasetSection::default(),
            forest: ForestSection::default(),
            fusion: FusionSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig> {
        let mix: ArchetypeMix = self.dataset.mix.parse()?;
        Ok(DatasetConfig {
            n_images: self.dataset.images,
            n_workers: self.dataset.workers,
            mix,
            seed: self.seed,
            crews: self.dataset.crews,
            size: self.dataset.size,
        })
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams { n_trees: self.forest.trees, min_samples_leaf: self.forest.min_leaf, max_depth: None }
    }

    pub fn methods(&self) -> Result<Vec<FusionMethod>> {
        self.fusion.methods.iter().map(|m| m.parse().map_err(PipelineError::from)).collect()
    }
}

/// R² of a model trained on the first `n` images of the training side of
/// each grouped fold.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub train_images: usize,
    pub mean_rows: f64,
    pub r2_mean: f64,
    pub r2_std: f64,
    pub folds: usize,
}

pub fn training_size_sweep(
    data: &TrainingSet,
    sizes: &[usize],
    k: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let workers: Vec<&str> = data.rows.iter().map(|r| r.worker_id.as_str()).collect();
    let images: Vec<&str> = data.rows.iter().map(|r| r.image_id.as_str()).collect();
    let splits = grouped_folds(&workers, &images, k, seed)?;
    let mut out = Vec::new();
    for &n in sizes {
        let mut scores = Vec::new();
        let mut rows = Vec::new();
        for (f, split) in splits.iter().enumerate() {
            let mut train_images: Vec<&str> = split.train.iter().map(|&r| images[r]).collect();
            train_images.sort_unstable();
            train_images.dedup();
            if train_images.len() < n || split.test.is_empty() {
                continue;
            }
            train_images.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EE9, f as u64)));
            let keep: std::collections::BTreeSet<&str> = train_images[..n].iter().copied().collect();
            let idx: Vec<usize> = split.train.iter().copied().filter(|&r| keep.contains(images[r])).collect();
            let forest = match regressor::train(&data.subset(&idx), params, seed.wrapping_add(f as u64)) {
                Ok(f) => f,
                Err(RegressorError::TooFewRows { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            let xs: Vec<Vec<f64>> = split.test.iter().map(|&r| data.rows[r].features.clone()).collect();
            let truth: Vec<f64> = split.test.iter().map(|&r| data.rows[r].target).collect();
            if let Ok(r2) = r2_score(&truth, &forest.predict_many(&xs)?) {
                scores.push(r2);
                rows.push(idx.len() as f64);
            }
        }
        if scores.is_empty() {
            continue;
        }
        let m = scores.iter().sum::<f64>() / scores.len() as f64;
        let sd = (scores.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / scores.len() as f64).sqrt();
        out.push(SweepPoint {
            train_images: n,
            mean_rows: rows.iter().sum::<f64>() / rows.len() as f64,
            r2_mean: m,
            r2_std: sd,
            folds: scores.len(),
        });
    }
    Ok(out)
}

pub fn write_sweep(points: &[SweepPoint]) -> String {
    let mut out = String::from("train_images\tmean_rows\tr2_mean\tr2_std\tfolds\n");
    for p in points {
        writeln!(out, "{}\t{:.1}\t{:.6}\t{:.6}\t{}", p.train_images, p.mean_rows, p.r2_mean, p.r2_std, p.folds)
            .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub cv: CvResult,
    pub estimates: Vec<EstimateRow>,
    pub fusion: Vec<FusionSummary>,
    pub sweep: Vec<SweepPoint>,
}

/// Out-of-fold quality estimates: each row is scored by a forest that saw
/// neither its worker nor its image.
pub fn out_of_fold_estimates(data: &TrainingSet, cv: &CvResult) -> Vec<EstimateRow> {
    data.rows
        .iter()
        .zip(&cv.predictions)
        .filter_map(|(r, p)| {
            p.map(|s_hat| EstimateRow { worker_id: r.worker_id.clone(), image_id: r.image_id.clone(), s_hat })
        })
        .collect()
}

/// Simulate, extract, cross-validate, fuse with out-of-fold estimates and
/// sweep training size. Writes `features.tsv`, `cv.tsv`, `estimates.tsv`,
/// `fusion.tsv`, `fusion_summary.tsv` and `sweep.tsv` to `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    let data: AnnotatedDataset = simulator::build_dataset(&cfg.dataset_config()?)?.into();
    let rows = extract_dataset(&data, cfg.sigma, MatchTolerance::default())?;
    write_file(&out_dir.join("features.tsv"), crate::features::write_feature_table(&rows))?;
    let set = training_set(&rows)?;
    let params = cfg.forest_params();
    let cv = grouped_cv(&set, cfg.forest.folds, &params, cfg.seed)?;
    write_file(&out_dir.join("cv.tsv"), cv.to_table())?;
    let (m, sd) = cv.mean_std_r2();
    log::info!("grouped {}-fold R² = {m:.4} ± {sd:.4}", cfg.forest.folds);

    let estimates = out_of_fold_estimates(&set, &cv);
    write_file(&out_dir.join("estimates.tsv"), write_estimates(&estimates))?;
    let pools = build_pools(&data, &estimates)?;
    let records = fuse_pools(&pools, &cfg.methods()?, &cfg.fusion.lambdas, cfg.fusion.epsilon_t, cfg.seed, true)?;
    write_file(&out_dir.join("fusion.tsv"), write_fusion_report(&records))?;
    let fusion = summarize_fusion(&records);
    write_file(&out_dir.join("fusion_summary.tsv"), write_fusion_summary(&fusion))?;

    let sweep_params = ForestParams { n_trees: cfg.sweep.trees, ..params };
    let sweep = training_size_sweep(&set, &cfg.sweep.train_images, cfg.forest.folds, &sweep_params, cfg.seed)?;
    write_file(&out_dir.join("sweep.tsv"), write_sweep(&sweep))?;
    Ok(ExperimentReport { cv, estimates, fusion, sweep })
}

pub fn cmd_experiment(config: &Path) -> Result<ExperimentReport> {
    let cfg = ExperimentConfig::from_toml(&read_text(config)?)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let out = if cfg.out_dir.is_absolute() { cfg.out_dir.clone() } else { base.join(&cfg.out_dir) };
    run_experiment(&cfg, &out)
}
