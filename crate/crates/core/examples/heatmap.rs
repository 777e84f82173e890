//! Renders a 2D skeleton into a `K × T × H × W` heatmap volume and writes one
//! slice as PGM.

use skelact::heatmap::{build_volume, to_canvas, DEFAULT_SIGMA};
use skelact::skeleton::{generate_synthetic, SynthSpec};

fn main() -> skelact::Result<()> {
    let data = generate_synthetic(&SynthSpec::default_for("coco17")?, 1, 0)?;
    let seq = &data.samples[0];
    let canvas = to_canvas(seq, 64, 64)?;
    let vol = build_volume(&canvas, DEFAULT_SIGMA, 64, 64)?;
    println!(
        "volume {} joints x {} frames x {}x{}",
        vol.joints, vol.frames, vol.height, vol.width
    );

    let wrist = 9;
    let p = canvas.joint(0, 0, wrist);
    let (j, i) = (p[0].round() as usize, p[1].round() as usize);
    println!(
        "wrist at ({:.2}, {:.2}); nearest pixel ({i}, {j}) holds {:.4}",
        p[0],
        p[1],
        vol.get(wrist, 0, i, j)
    );

    let dir = std::env::temp_dir();
    vol.save(&dir.join("skelact-heatmap.hmv"))?;
    vol.write_pgm(wrist, 0, &dir.join("skelact-wrist.pgm"))?;
    println!("wrote {}", dir.join("skelact-wrist.pgm").display());

    for row in (0..64).step_by(4) {
        let line: String = (0..64)
            .step_by(2)
            .map(|c| {
                let v = (0..vol.joints)
                    .map(|k| vol.get(k, 0, row, c))
                    .fold(0.0, f64::max);
                match v {
                    v if v > 0.6 => '#',
                    v if v > 0.2 => '+',
                    v if v > 0.01 => '.',
                    _ => ' ',
                }
            })
            .collect();
        println!("|{line}|");
    }
    Ok(())
}
