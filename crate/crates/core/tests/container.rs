use std::collections::BTreeMap;
use std::fs;
use std::sync::Arc;

use proptest::prelude::*;
use skelact::skeleton::{
    builtin_layout, load_container, save_container, splits_path, CoordType, DatasetContainer,
    SeqShape, SkeletonSequence,
};
use skelact::Error;

fn sequence(
    persons: usize,
    frames: usize,
    joints: usize,
    three_d: bool,
    with_conf: bool,
    seed: u32,
) -> SkeletonSequence {
    let layout = Arc::new(builtin_layout(if joints == 25 { "ntu25" } else { "coco17" }).unwrap());
    let (c, ct) = if three_d {
        (3, CoordType::ThreeD)
    } else {
        (2, CoordType::TwoD)
    };
    let shape = SeqShape::new(persons, frames, joints, c);
    // arbitrary finite bit patterns, including subnormals and negative zero
    let coords: Vec<f32> = (0..shape.len())
        .map(|i| {
            let bits = (i as u32).wrapping_mul(2_654_435_761).wrapping_add(seed);
            let x = f32::from_bits(bits & 0xBF7F_FFFF);
            if x.is_finite() {
                x
            } else {
                -0.0
            }
        })
        .collect();
    let conf = with_conf.then(|| {
        (0..shape.points())
            .map(|i| ((i as u32 ^ seed) % 1001) as f32 / 1000.0)
            .collect()
    });
    let image_size = (!three_d).then_some((1920, 1080));
    SkeletonSequence::new(
        coords,
        shape,
        conf,
        seed as usize % 5,
        layout,
        ct,
        image_size,
    )
    .unwrap()
}

fn same(a: &DatasetContainer, b: &DatasetContainer) {
    assert_eq!(a.num_classes, b.num_classes);
    assert_eq!(a.splits, b.splits);
    assert_eq!(a.samples.len(), b.samples.len());
    for (x, y) in a.samples.iter().zip(&b.samples) {
        assert_eq!(x.shape, y.shape);
        assert_eq!(x.label, y.label);
        assert_eq!(x.coord_type, y.coord_type);
        assert_eq!(x.image_size, y.image_size);
        assert_eq!(x.layout.name(), y.layout.name());
        let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.coords), bits(&y.coords));
        assert_eq!(x.conf.as_deref().map(bits), y.conf.as_deref().map(bits));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_is_bit_exact(
        shapes in prop::collection::vec(
            (1usize..=2, 1usize..=300, prop::sample::select(vec![17usize, 25]), any::<bool>(), any::<bool>(), any::<u32>()),
            0..4,
        ),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.skl");
        let samples: Vec<_> = shapes
            .iter()
            .map(|&(m, t, v, d3, conf, seed)| sequence(m, t, v, d3, conf, seed))
            .collect();
        let mut splits = BTreeMap::new();
        splits.insert("train".to_string(), (0..samples.len()).collect::<Vec<_>>());
        splits.insert("test".to_string(), (0..samples.len()).rev().step_by(2).collect());
        let c = DatasetContainer { samples, splits, num_classes: 5 };
        save_container(&c, &path).unwrap();
        same(&c, &load_container(&path).unwrap());
    }
}

#[test]
fn empty_container_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.skl");
    let c = DatasetContainer {
        num_classes: 3,
        ..Default::default()
    };
    save_container(&c, &path).unwrap();
    let back = load_container(&path).unwrap();
    same(&c, &back);
    assert_eq!(fs::metadata(&path).unwrap().len(), 20);
}

#[test]
fn corrupt_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.skl");
    let c = DatasetContainer {
        samples: vec![sequence(1, 10, 25, true, false, 1)],
        splits: BTreeMap::new(),
        num_classes: 5,
    };
    save_container(&c, &path).unwrap();
    let good = fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"XXXX");
    fs::write(&path, &bad).unwrap();
    assert!(matches!(load_container(&path), Err(Error::Format(_))));

    fs::write(&path, &good[..good.len() - 3]).unwrap();
    assert!(matches!(load_container(&path), Err(Error::Format(_))));

    fs::write(&path, &good).unwrap();
    fs::write(splits_path(&path), r#"{"train": [4]}"#).unwrap();
    assert!(matches!(load_container(&path), Err(Error::Format(_))));
}
