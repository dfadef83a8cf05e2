//! Compute Gaussian-derivative gradients of a synthetic scene, simulate one
//! annotation session and print its feature vector.
//!
//! Run: `cargo run --release --example gradient_features [sigma]`

use clickqc::features::{extract_features, FeatureConfig, FEATURE_NAMES};
use clickqc::imaging::{gaussian_gradient, gaussian_kernel};
use clickqc::simulator::{generate_scene, simulate_annotation, Shape, WorkerArchetype, WorkerKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sigma: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1.0);
    let scene = generate_scene(Shape::Circle, 128, 11)?;
    let grad = gaussian_gradient(&scene.image, sigma)?;
    println!("sigma {sigma}: kernel of {} taps", gaussian_kernel(sigma).len());

    let (cx, cy) = (scene.center.x as usize, scene.center.y as usize);
    for dx in [-24isize, -20, -16] {
        let x = (cx as isize + dx) as usize;
        println!("  |grad| at ({x}, {cy}) = {:.2}", grad.magnitude(x, cy));
    }

    for kind in [WorkerKind::Diligent, WorkerKind::Spammer] {
        let worker = WorkerArchetype::preset(kind, 3);
        let (stream, polygon) = simulate_annotation(&scene, &worker, "w0001", "img0001", 5)?;
        let fv = extract_features(&stream, &polygon, &grad, &FeatureConfig::default());
        println!("\n{kind}: {} events, {} vertices", stream.len(), polygon.len());
        for name in ["velocity_mean", "acceleration_std", "draw_angle_mean", "correction_count", "elapsed_per_click"] {
            if let Some(v) = fv.get(name) {
                println!("  {name:<20} {v:.4}");
            }
        }
    }
    println!("\n{} features per session", FEATURE_NAMES.len());
    Ok(())
}
