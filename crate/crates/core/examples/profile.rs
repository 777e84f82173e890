//! Parameter and FLOP counts of the default networks on a 2-person,
//! 100-frame NTU input.

use skelact::models::{profile, ModelSpec, Variant};

fn main() -> skelact::Result<()> {
    println!(
        "{:<8} {:>10} {:>9} {:>8}",
        "model", "params", "MParams", "GFLOPs"
    );
    for variant in [Variant::Stgcn, Variant::Stgcnpp] {
        let p = profile(&ModelSpec::new(variant), 100)?;
        println!(
            "{:<8} {:>10} {:>9.3} {:>8.3}",
            format!("{variant:?}"),
            p.params,
            p.mparams,
            p.gflops
        );
    }
    let tiny = ModelSpec::tiny(Variant::Stgcnpp, "ntu25", 3, 1, 4);
    let p = profile(&tiny, 32)?;
    println!(
        "tiny ST-GCN++ on 32 frames: {} params, {:.4} GFLOPs",
        p.params, p.gflops
    );
    Ok(())
}
