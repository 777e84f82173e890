//! Temporal sampling, spatial augmentation and stream derivation.

use skelact::rng::Rng;
use skelact::skeleton::{generate_synthetic, SynthSpec};
use skelact::transforms::{
    derive_stream, draw_rotation_angles, random_rotate, random_scale, uniform_sample_indices,
    Stream, TransformConfig,
};

fn main() -> skelact::Result<()> {
    let data = generate_synthetic(&SynthSpec::default_for("ntu25")?, 1, 3)?;
    let seq = &data.samples[0];
    let cfg = TransformConfig::default();
    let mut rng = Rng::new(42);

    println!("uniform sampling 64 -> 8, one frame per span:");
    for _ in 0..3 {
        println!("  {:?}", uniform_sample_indices(64, 8, Some(&mut rng)));
    }
    println!(
        "  center variant: {:?}",
        uniform_sample_indices(64, 8, None)
    );
    println!(
        "  64 -> 100 (short sequence, wraps): {:?}",
        &uniform_sample_indices(64, 100, None)[..12]
    );

    let angles = draw_rotation_angles(&cfg, &mut rng);
    println!("rotation angles (|θ| <= {}): {angles:.3?}", cfg.rot_range);
    let rotated = random_rotate(seq, &cfg, &mut Rng::new(1))?;
    let d = |s: &skelact::skeleton::SkeletonSequence, a: usize, b: usize| -> f32 {
        let (p, q) = (s.joint(0, 0, a), s.joint(0, 0, b));
        (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f32>().sqrt()
    };
    println!(
        "hand-to-foot distance: {:.5} before, {:.5} after rotation",
        d(seq, 7, 15),
        d(&rotated, 7, 15)
    );
    let scaled = random_scale(seq, &cfg, &mut Rng::new(1));
    println!(
        "hand-to-foot distance after scaling: {:.5}",
        d(&scaled, 7, 15)
    );

    for stream in Stream::ALL {
        let s = derive_stream(seq, stream);
        println!("{stream:?}: joint 7 at t=1 = {:.4?}", s.joint(0, 1, 7));
    }
    Ok(())
}
