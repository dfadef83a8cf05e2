//! Train a random-forest quality estimator on simulated sessions, check it
//! with worker- and image-disjoint cross-validation, and score a held-out
//! crew.
//!
//! Run: `cargo run --release --example train_quality_estimator`

use clickqc::clickstream::MatchTolerance;
use clickqc::features::SCHEMA_VERSION;
use clickqc::pipeline::{extract_dataset, training_set, AnnotatedDataset};
use clickqc::regressor::{grouped_cv, r2_score, train, Forest, ForestParams};
use clickqc::simulator::{build_dataset, DatasetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = DatasetConfig::new(30, 10, "diligent=0.4,sloppy=0.3,spammer=0.2,bounding-box=0.1".parse()?, 4);
    cfg.crews = 5;
    cfg.size = 96;
    let data: AnnotatedDataset = build_dataset(&cfg)?.into();
    let rows = extract_dataset(&data, 1.0, MatchTolerance::default())?;
    let set = training_set(&rows)?;
    println!("{} sessions, {} features", set.len(), set.n_features());

    let params = ForestParams { n_trees: 100, ..ForestParams::default() };
    let cv = grouped_cv(&set, 5, &params, 1)?;
    print!("{}", cv.to_table());
    let (mean, sd) = cv.mean_std_r2();
    println!("grouped 5-fold R2 = {mean:.3} +/- {sd:.3}");

    // Hold out every session of the first two workers and their images.
    let held: Vec<usize> =
        (0..set.len()).filter(|&i| ["w0001", "w0002"].contains(&set.rows[i].worker_id.as_str())).collect();
    let held_images: Vec<&str> = held.iter().map(|&i| set.rows[i].image_id.as_str()).collect();
    let train_idx: Vec<usize> = (0..set.len())
        .filter(|i| !held.contains(i) && !held_images.contains(&set.rows[*i].image_id.as_str()))
        .collect();
    let forest = train(&set.subset(&train_idx), &params, 2)?;
    let test = set.subset(&held);
    let xs: Vec<Vec<f64>> = test.rows.iter().map(|r| r.features.clone()).collect();
    let est = forest.predict_many(&xs)?;
    println!("held-out crew: {} sessions, R2 = {:.3}", test.len(), r2_score(&test.targets(), &est)?);
    for (r, e) in test.rows.iter().zip(&est).take(6) {
        println!("  {} {}  true {:.3}  estimated {:.3}", r.worker_id, r.image_id, r.target, e);
    }

    let text = forest.to_model_file(SCHEMA_VERSION);
    let (back, schema) = Forest::from_model_file(&text)?;
    assert_eq!(back.predict_many(&xs)?, est);
    println!("model file: {} bytes, schema {schema}", text.len());
    Ok(())
}
