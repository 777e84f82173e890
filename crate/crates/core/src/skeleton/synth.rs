//! Synthetic motion-class dataset.
//!
//! Each class oscillates a subset of joints sinusoidally at a frequency drawn
//! from a class-specific band. Bands of different classes are disjoint, so the
//! class is only recoverable from temporal information: rest pose, body size,
//! position and phase are randomized per sample.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{builtin_layout, CoordType, DatasetContainer, JointLayout, SeqShape, SkeletonSequence};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    /// Joints driven by each class.
    pub joints_per_class: Vec<Vec<usize>>,
    /// Oscillation frequency band per class, in cycles per sequence.
    pub freq_ranges: Vec<(f64, f64)>,
    /// Oscillation amplitude band per class, in coordinate units.
    pub amp_ranges: Vec<(f64, f64)>,
    pub noise_sigma: f64,
    pub frames: usize,
    pub persons: usize,
    pub layout: String,
}

const NTU25_REST: [[f64; 3]; 25] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.3, 0.0],
    [0.0, 0.55, 0.0],
    [0.0, 0.7, 0.0],
    [-0.18, 0.5, 0.0],
    [-0.2, 0.25, 0.0],
    [-0.22, 0.02, 0.0],
    [-0.22, -0.05, 0.0],
    [0.18, 0.5, 0.0],
    [0.2, 0.25, 0.0],
    [0.22, 0.02, 0.0],
    [0.22, -0.05, 0.0],
    [-0.1, -0.02, 0.0],
    [-0.1, -0.45, 0.0],
    [-0.1, -0.85, 0.0],
    [-0.1, -0.9, 0.1],
    [0.1, -0.02, 0.0],
    [0.1, -0.45, 0.0],
    [0.1, -0.85, 0.0],
    [0.1, -0.9, 0.1],
    [0.0, 0.5, 0.0],
    [-0.22, -0.12, 0.0],
    [-0.19, -0.06, 0.02],
    [0.22, -0.12, 0.0],
    [0.19, -0.06, 0.02],
];

const COCO17_REST: [[f64; 2]; 17] = [
    [320.0, 100.0],
    [330.0, 90.0],
    [310.0, 90.0],
    [340.0, 95.0],
    [300.0, 95.0],
    [360.0, 160.0],
    [280.0, 160.0],
    [380.0, 230.0],
    [260.0, 230.0],
    [390.0, 300.0],
    [250.0, 300.0],
    [345.0, 300.0],
    [295.0, 300.0],
    [345.0, 380.0],
    [295.0, 380.0],
    [345.0, 450.0],
    [295.0, 450.0],
];

const COCO_IMAGE: (u16, u16) = (640, 480);

impl SynthSpec {
    /// Four classes driving both arms at 1, 2, 3 and 4 cycles per sequence.
    pub fn default_for(layout: &str) -> Result<Self> {
        let (arms, unit): (Vec<usize>, f64) = match layout {
            "ntu25" => (vec![5, 6, 7, 9, 10, 11, 21, 22, 23, 24], 1.0),
            "coco17" => (vec![7, 8, 9, 10], 300.0),
            other => return Err(Error::Name(format!("no built-in layout named {other:?}"))),
        };
        let n = 4;
        Ok(Self {
            num_classes: n,
            joints_per_class: vec![arms; n],
            freq_ranges: (0..n).map(|c| (1.0 + c as f64, 1.4 + c as f64)).collect(),
            amp_ranges: vec![(0.1 * unit, 0.2 * unit); n],
            noise_sigma: 0.01 * unit,
            frames: 64,
            persons: 1,
            layout: layout.to_string(),
        })
    }

    pub fn validate(&self) -> Result<JointLayout> {
        let layout = builtin_layout(&self.layout)?;
        let n = self.num_classes;
        let bad = |msg: String| Err(Error::Spec(msg));
        if n < 2 {
            return bad("synthetic dataset needs at least 2 classes".into());
        }
        if self.joints_per_class.len() != n
            || self.freq_ranges.len() != n
            || self.amp_ranges.len() != n
        {
            return bad("per-class tables must have num_classes entries".into());
        }
        if self.frames < 1 || self.persons < 1 {
            return bad("frames and persons must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        for (c, joints) in self.joints_per_class.iter().enumerate() {
            if joints.is_empty() || joints.iter().any(|&j| j >= layout.num_joints()) {
                return bad(format!("class {c} drives an invalid joint set"));
            }
        }
        for (c, &(lo, hi)) in self.freq_ranges.iter().enumerate() {
            if !(lo > 0.0 && hi >= lo) {
                return bad(format!("class {c} frequency band ({lo}, {hi}) is invalid"));
            }
            for (d, &(lo2, hi2)) in self.freq_ranges.iter().enumerate().skip(c + 1) {
                if lo <= hi2 && lo2 <= hi {
                    return bad(format!("frequency bands of classes {c} and {d} overlap"));
                }
            }
        }
        for (c, &(lo, hi)) in self.amp_ranges.iter().enumerate() {
            if !(lo >= 0.0 && hi >= lo) {
                return bad(format!("class {c} amplitude band is invalid"));
            }
        }
        Ok(layout)
    }
}

/// Generates `n_per_class` samples per class with an 80/20 stratified
/// `train`/`test` split. Pure function of its arguments.
pub fn generate_synthetic(
    spec: &SynthSpec,
    n_per_class: usize,
    seed: u64,
) -> Result<DatasetContainer> {
    let layout = Arc::new(spec.validate()?);
    if n_per_class < 1 {
        return Err(Error::Spec("n_per_class must be at least 1".into()));
    }
    let three_d = layout.name() == "ntu25";
    let (coord_type, channels) = if three_d {
        (CoordType::ThreeD, 3)
    } else {
        (CoordType::TwoD, 2)
    };
    let shape = SeqShape::new(spec.persons, spec.frames, layout.num_joints(), channels);
    let n_train = (n_per_class * 4 + 2) / 5;

    let mut samples = Vec::with_capacity(n_per_class * spec.num_classes);
    let mut splits: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for class in 0..spec.num_classes {
        for i in 0..n_per_class {
            let index = samples.len();
            let mut rng = Rng::derive(seed, index as u64, 0);
            let coords = render_sample(spec, class, shape, three_d, &mut rng);
            let image_size = (!three_d).then_some(COCO_IMAGE);
            samples.push(SkeletonSequence::new(
                coords,
                shape,
                None,
                class,
                Arc::clone(&layout),
                coord_type,
                image_size,
            )?);
            let split = if i < n_train { "train" } else { "test" };
            splits.entry(split.to_string()).or_default().push(index);
        }
    }
    splits.entry("train".into()).or_default();
    splits.entry("test".into()).or_default();
    Ok(DatasetContainer {
        samples,
        splits,
        num_classes: spec.num_classes,
    })
}

fn render_sample(
    spec: &SynthSpec,
    class: usize,
    shape: SeqShape,
    three_d: bool,
    rng: &mut Rng,
) -> Vec<f32> {
    let c = shape.channels;
    let unit = if three_d { 1.0 } else { 300.0 };
    let mut coords = vec![0f32; shape.len()];
    let (f_lo, f_hi) = spec.freq_ranges[class];
    let (a_lo, a_hi) = spec.amp_ranges[class];
    let driven = &spec.joints_per_class[class];
    for m in 0..shape.persons {
        let body = rng.uniform_range(0.9, 1.1);
        let mut shift = [0.0; 3];
        for s in shift.iter_mut().take(c) {
            *s = rng.uniform_range(-0.3, 0.3) * unit;
        }
        shift[0] += m as f64 * unit;
        let freq = rng.uniform_range(f_lo, f_hi);
        let amp = rng.uniform_range(a_lo, a_hi);
        let phase = rng.uniform_range(0.0, 2.0 * PI);
        for t in 0..shape.frames {
            let wave = amp * (2.0 * PI * freq * t as f64 / shape.frames as f64 + phase).sin();
            for v in 0..shape.joints {
                let rest: [f64; 3] = if three_d {
                    NTU25_REST[v]
                } else {
                    let [x, y] = COCO17_REST[v];
                    // scale about the image centre
                    [x - 320.0, y - 240.0, 0.0]
                };
                let moving = driven.contains(&v);
                let o = ((m * shape.frames + t) * shape.joints + v) * c;
                for k in 0..c {
                    let mut x = rest[k] * body + shift[k];
                    if !three_d {
                        x += if k == 0 { 320.0 } else { 240.0 };
                    }
                    if moving && k == 0 {
                        x += wave;
                    }
                    if spec.noise_sigma > 0.0 {
                        x += spec.noise_sigma * rng.normal();
                    }
                    coords[o + k] = x as f32;
                }
            }
        }
    }
    coords
}
