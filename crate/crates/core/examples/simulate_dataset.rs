//! Simulate a crowdsourcing campaign and write it as a dataset directory
//! that the `clickqc` binary can process.
//!
//! Run: `cargo run --release --example simulate_dataset [out_dir]`

use std::collections::BTreeMap;
use std::path::PathBuf;

use clickqc::pipeline::{load_dataset, write_dataset, AnnotatedDataset};
use clickqc::simulator::{build_dataset, DatasetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("clickqc-demo"));
    let mut cfg = DatasetConfig::new(12, 6, "diligent=0.5,sloppy=0.2,spammer=0.2,inverted=0.1".parse()?, 42);
    cfg.crews = 3;
    let dataset = build_dataset(&cfg)?;

    let mut by_kind: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for a in &dataset.annotations {
        by_kind.entry(a.archetype.to_string()).or_default().push(a.dsc);
    }
    for (kind, q) in &by_kind {
        println!("{kind:<13} {:>3} sessions, mean DSC {:.3}", q.len(), q.iter().sum::<f64>() / q.len() as f64);
    }

    let data: AnnotatedDataset = dataset.into();
    write_dataset(&data, &out)?;
    assert_eq!(load_dataset(&out)?, data);
    println!("wrote {} images and {} sessions to {}", data.images.len(), data.annotations.len(), out.display());
    println!("next: clickqc extract --dataset {} --out features.tsv", out.display());
    Ok(())
}
