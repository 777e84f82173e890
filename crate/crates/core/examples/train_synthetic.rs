//! Trains a tiny ST-GCN++ (or the ST-GCN baseline) on the normalized
//! synthetic set and reports test accuracy.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [stgcnpp|stgcn] [epochs]
//! ```

use std::time::Instant;

use skelact::models::{build_model, ModelSpec, Variant};
use skelact::training::{desk_recipe, evaluate, train};
use skelact::transforms::Stream;

fn main() -> skelact::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant = match args.next().as_deref() {
        Some("stgcn") => Variant::Stgcn,
        _ => Variant::Stgcnpp,
    };
    let mut recipe = desk_recipe("ntu25")?;
    if let Some(e) = args.next().and_then(|s| s.parse().ok()) {
        recipe.train.epochs = e;
    }

    let spec = ModelSpec::tiny(variant, "ntu25", 3, 1, recipe.data.num_classes);
    let mut model = build_model::<f32>(&spec, recipe.train.seed)?;
    let t0 = Instant::now();
    train(
        &mut model,
        &recipe.data,
        &recipe.transform,
        &recipe.train,
        |l| {
            println!(
                "epoch {:>2}  lr {:.4}  loss {:.4}  train top1 {:.3}",
                l.epoch, l.lr, l.loss, l.top1
            );
        },
    )?;
    let (m, _) = evaluate(
        &mut model,
        &recipe.data,
        "test",
        &recipe.transform,
        Stream::Joint,
        64,
    )?;
    println!(
        "{variant:?}: test top1 {:.3}, mean class acc {:.3} on {} samples ({:.1?})",
        m.top1,
        m.mean_class_acc,
        m.samples,
        t0.elapsed()
    );
    Ok(())
}
