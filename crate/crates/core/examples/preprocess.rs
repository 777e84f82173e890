//! Pre-normalization and padding of 3D and 2D sequences.

use skelact::skeleton::{generate_synthetic, SynthSpec};
use skelact::transforms::{normalize_2d, pad_loop, pad_zero, pre_normalize_3d, PreNormOptions};

fn main() -> skelact::Result<()> {
    let data = generate_synthetic(&SynthSpec::default_for("ntu25")?, 1, 0)?;
    let seq = &data.samples[0];
    let norm = pre_normalize_3d(
        seq,
        PreNormOptions {
            align_shoulders: true,
        },
    )?;

    let center = seq.layout.center();
    let (base, top) = seq.layout.spine();
    let spine: Vec<f32> = (0..3)
        .map(|c| norm.joint(0, 0, top)[c] - norm.joint(0, 0, base)[c])
        .collect();
    println!(
        "center joint after pre-normalization: {:?}",
        norm.joint(0, 0, center)
    );
    println!("spine direction (should be +z):        {spine:?}");

    let padded = pad_zero(&norm, 100)?;
    let looped = pad_loop(&norm, 100)?;
    println!(
        "frames: raw {} -> zero-padded {} / loop-padded {}",
        norm.shape.frames, padded.shape.frames, looped.shape.frames
    );
    println!(
        "loop padding repeats frame 0 at t={}: {:?}",
        norm.shape.frames,
        looped.joint(0, norm.shape.frames, 5)
    );

    let coco = generate_synthetic(&SynthSpec::default_for("coco17")?, 1, 0)?;
    let c = &coco.samples[0];
    let n = normalize_2d(c)?;
    println!(
        "2D: image {:?}, nose {:?} -> {:?} in [-1, 1]",
        c.image_size,
        c.joint(0, 0, 0),
        n.joint(0, 0, 0)
    );
    Ok(())
}
