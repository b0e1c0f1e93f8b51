//! Slides the human skeleton forward off its footprint over a short segment,
//! runs the balance projector and prints per-frame diagnostics.

use std::sync::Arc;

use stabshape::rotation::{self, Vec3};
use stabshape::skeleton::{zero_pose, SkeletonSpec, TrajectorySegment};
use stabshape::stabilizer::{temporal_roughness, BalanceProjector, StabilizerConfig};

fn main() -> stabshape::Result<()> {
    let human = Arc::new(SkeletonSpec::resolve("human")?);
    let config = StabilizerConfig::default();
    let projector = BalanceProjector::new(human.clone(), &config, 145)?;
    println!(
        "support polygon: {} vertices, {:.4} m^2 (shrunk by {} m: {:.4} m^2)",
        projector.support().vertices().len(),
        projector.support().area(),
        config.com_margin,
        projector.shrunk_support().area()
    );

    let frames = 30;
    let poses = (0..frames)
        .map(|t| {
            let mut p = zero_pose(&human);
            let progress = t as f64 / frames as f64;
            p.root_translation = Vec3::new(0.3 * progress, 0.0, 0.0);
            p.root_orientation = rotation::from_axis_angle(&Vec3::y(), 0.3 * progress);
            p
        })
        .collect();
    let segment = TrajectorySegment::new(poses)?;
    let (stable, diagnostics) = projector.reconstruct_with_diagnostics(&segment)?;

    println!("\n{:>5} {:>12} {:>12} {:>12}", "frame", "violation", "correction", "residual");
    for d in diagnostics.iter().step_by(3) {
        println!(
            "{:>5} {:>12.5} {:>12.5} {:>12.2e}",
            d.frame, d.com_violation_distance, d.correction_magnitude, d.residual_violation
        );
    }
    println!(
        "\nroughness {:.3e} -> {:.3e}",
        temporal_roughness(&human, &segment),
        temporal_roughness(&human, &stable)
    );
    Ok(())
}
