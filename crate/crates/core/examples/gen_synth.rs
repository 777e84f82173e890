//! Generates the 4-class synthetic dataset, saves it as `SKL1` and reads it
//! back.
//!
//! ```text
//! cargo run --example gen_synth -- [out.skl]
//! ```

use std::path::PathBuf;

use skelact::skeleton::{generate_synthetic, load_container, save_container, SynthSpec};

fn main() -> skelact::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("skelact-synth.skl"));

    let spec = SynthSpec::default_for("ntu25")?;
    let data = generate_synthetic(&spec, 50, 7)?;
    save_container(&data, &out)?;
    let back = load_container(&out)?;

    println!(
        "wrote {} ({} samples, {} classes)",
        out.display(),
        back.samples.len(),
        back.num_classes
    );
    for (name, idx) in &back.splits {
        println!("  split {name:<5} {:>4} samples", idx.len());
    }
    let s = &back.samples[0];
    println!(
        "  sample 0: label {}, M={} T={} V={} C={}",
        s.label, s.shape.persons, s.shape.frames, s.shape.joints, s.shape.channels
    );
    for (c, f) in spec.freq_ranges.iter().enumerate() {
        println!("  class {c}: {:.1}-{:.1} cycles per sequence", f.0, f.1);
    }
    Ok(())
}
