//! Trains joint and bone streams of a tiny ST-GCN++ and fuses their
//! test scores.
//!
//! ```text
//! cargo run --release --example fuse_streams -- [epochs]
//! ```

use skelact::models::{build_model, ModelSpec, Variant};
use skelact::training::{default_fusion_weights, desk_recipe, evaluate, fuse_scores, train};
use skelact::transforms::Stream;

fn main() -> skelact::Result<()> {
    let mut recipe = desk_recipe("ntu25")?;
    recipe.train.epochs = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(8);
    let spec = ModelSpec::tiny(Variant::Stgcnpp, "ntu25", 3, 1, recipe.data.num_classes);

    let mut tables = Vec::new();
    for stream in [Stream::Joint, Stream::Bone] {
        let cfg = skelact::training::TrainConfig {
            stream,
            ..recipe.train.clone()
        };
        let mut model = build_model::<f32>(&spec, cfg.seed)?;
        train(&mut model, &recipe.data, &recipe.transform, &cfg, |_| {})?;
        let (m, table) = evaluate(
            &mut model,
            &recipe.data,
            "test",
            &recipe.transform,
            stream,
            64,
        )?;
        println!("{stream:?}: top1 {:.3}", m.top1);
        tables.push(table);
    }
    let weights = default_fusion_weights(tables.len());
    let (_, fused) = fuse_scores(&tables, &weights)?;
    println!(
        "fused {weights:?}: top1 {:.3}, mean class acc {:.3}",
        fused.top1, fused.mean_class_acc
    );
    Ok(())
}
