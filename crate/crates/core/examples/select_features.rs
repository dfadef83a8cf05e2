//! Greedy sequential forward selection of clickstream features.
//!
//! Run: `cargo run --release --example select_features`

use clickqc::clickstream::MatchTolerance;
use clickqc::features::FEATURE_NAMES;
use clickqc::pipeline::{extract_dataset, training_set, AnnotatedDataset};
use clickqc::regressor::{sfs_select, ForestParams, SfsConfig};
use clickqc::simulator::{build_dataset, DatasetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = DatasetConfig::new(16, 8, "diligent=0.4,sloppy=0.3,spammer=0.3".parse()?, 9);
    cfg.crews = 4;
    cfg.size = 64;
    let data: AnnotatedDataset = build_dataset(&cfg)?.into();
    let set = training_set(&extract_dataset(&data, 1.0, MatchTolerance::default())?)?;

    let sfs = SfsConfig {
        max_features: 6,
        folds: 4,
        forest: ForestParams { n_trees: 30, ..ForestParams::default() },
        ..SfsConfig::default()
    };
    let result = sfs_select(&set, &sfs)?;
    println!("empty set criterion {:.5}", result.baseline);
    for step in &result.steps {
        println!("  + {:<28} mse {:.5}  criterion {:.5}", FEATURE_NAMES[step.added], step.mse, step.criterion);
    }
    let names: Vec<&str> = result.selected.iter().map(|&i| FEATURE_NAMES[i]).collect();
    println!("selected: {}", names.join(", "));
    Ok(())
}
