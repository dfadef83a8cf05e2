//! Fuse several outlines of one object with majority voting, confidence
//! weighted voting and STAPLE, with and without quality estimates.
//!
//! Run: `cargo run --release --example fuse_annotations`

use clickqc::fusion::{confidence_weighted_mv, filter_by_threshold, majority_vote, staple, staple_qc, StapleParams};
use clickqc::geometry::{dice, rasterize, Mask};
use clickqc::simulator::{generate_scene, polygon_dsc, simulate_annotation, Shape, WorkerArchetype, WorkerKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = generate_scene(Shape::Blob, 96, 2)?;
    let size = scene.reference.width();
    let crew =
        [WorkerKind::Diligent, WorkerKind::Sloppy, WorkerKind::Spammer, WorkerKind::WrongObject, WorkerKind::Spammer];
    let mut masks = Vec::new();
    let mut quality = Vec::new();
    for (i, kind) in crew.iter().enumerate() {
        let (_, poly) = simulate_annotation(&scene, &WorkerArchetype::preset(*kind, i as u64), "w", "img", i as u64)?;
        let q = polygon_dsc(&poly, &scene.reference);
        println!("{kind:<13} DSC {q:.3}");
        masks.push(rasterize(&poly, size, size)?);
        quality.push(q);
    }
    let refs: Vec<&Mask> = masks.iter().collect();
    // True quality stands in for the regressor's estimate here.
    let eps = 0.6;
    let params = StapleParams::default();
    let st = staple(&refs, &params)?;
    let score = |m: &Mask| dice(m, &scene.reference);
    println!("\nfused against the reference:");
    println!("  mv        {:.3}", score(&majority_vote(&refs)?)?);
    // Confidence weights are only defined above the threshold.
    let kept = filter_by_threshold(&quality, eps);
    let accepted: Vec<&Mask> = kept.accepted.iter().map(|&i| refs[i]).collect();
    let kept_q: Vec<f64> = kept.accepted.iter().map(|&i| quality[i]).collect();
    println!(
        "  cw-mv     {:.3}  ({} of {} kept)",
        score(&confidence_weighted_mv(&accepted, &kept_q, eps)?)?,
        accepted.len(),
        refs.len()
    );
    println!("  staple    {:.3}  ({} iterations)", score(&st.mask)?, st.iterations);
    println!("  staple-qc {:.3}", score(&staple_qc(&refs, &quality, eps, &params)?)?);
    Ok(())
}
