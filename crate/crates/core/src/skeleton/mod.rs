//! Skeleton data model: joint layouts, sequences and datasets.

mod container;
mod layout;
mod synth;

use std::sync::Arc;

pub use container::{
    load_container, save_container, splits_path, DatasetContainer, CONTAINER_MAGIC,
};
pub use layout::{builtin_layout, JointLayout};
pub use synth::{generate_synthetic, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordType {
    TwoD,
    ThreeD,
}

impl CoordType {
    pub fn channels(self) -> usize {
        match self {
            CoordType::TwoD => 2,
            CoordType::ThreeD => 3,
        }
    }
}

/// Dimensions of a sequence: persons × frames × joints × channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqShape {
    pub persons: usize,
    pub frames: usize,
    pub joints: usize,
    pub channels: usize,
}

impl SeqShape {
    pub fn new(persons: usize, frames: usize, joints: usize, channels: usize) -> Self {
        Self {
            persons,
            frames,
            joints,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.persons * self.frames * self.joints * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of (person, frame, joint) slots; the length of a confidence array.
    pub fn points(&self) -> usize {
        self.persons * self.frames * self.joints
    }

    pub fn with_frames(&self, frames: usize) -> Self {
        Self { frames, ..*self }
    }
}

/// Coordinates of `M` persons over `T` frames, row-major `[M][T][V][C]`.
#[derive(Debug, Clone)]
pub struct SkeletonSequence {
    pub coords: Vec<f32>,
    pub shape: SeqShape,
    /// Per-joint confidences, row-major `[M][T][V]`.
    pub conf: Option<Vec<f32>>,
    pub label: usize,
    pub layout: Arc<JointLayout>,
    pub coord_type: CoordType,
    /// Image `(width, height)` in pixels for un-normalized 2D coordinates.
    pub image_size: Option<(u16, u16)>,
}

/// A failed [`SkeletonSequence`] invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

impl SkeletonSequence {
    /// Builds a sequence, checking only that buffer lengths match `shape`.
    /// Use [`SkeletonSequence::validate`] for the full invariant set.
    pub fn new(
        coords: Vec<f32>,
        shape: SeqShape,
        conf: Option<Vec<f32>>,
        label: usize,
        layout: Arc<JointLayout>,
        coord_type: CoordType,
        image_size: Option<(u16, u16)>,
    ) -> crate::Result<Self> {
        if coords.len() != shape.len() {
            return Err(crate::Error::shape(format!(
                "coords has {} values, shape {:?} needs {}",
                coords.len(),
                shape,
                shape.len()
            )));
        }
        if let Some(c) = &conf {
            if c.len() != shape.points() {
                return Err(crate::Error::shape(format!(
                    "conf has {} values, expected {}",
                    c.len(),
                    shape.points()
                )));
            }
        }
        Ok(Self {
            coords,
            shape,
            conf,
            label,
            layout,
            coord_type,
            image_size,
        })
    }

    #[inline]
    pub fn offset(&self, m: usize, t: usize, v: usize) -> usize {
        ((m * self.shape.frames + t) * self.shape.joints + v) * self.shape.channels
    }

    /// Coordinates of one joint.
    pub fn joint(&self, m: usize, t: usize, v: usize) -> &[f32] {
        let o = self.offset(m, t, v);
        &self.coords[o..o + self.shape.channels]
    }

    pub fn joint_mut(&mut self, m: usize, t: usize, v: usize) -> &mut [f32] {
        let o = self.offset(m, t, v);
        let c = self.shape.channels;
        &mut self.coords[o..o + c]
    }

    /// All joints of one person in one frame, `[V][C]`.
    pub fn frame(&self, m: usize, t: usize) -> &[f32] {
        let o = self.offset(m, t, 0);
        &self.coords[o..o + self.shape.joints * self.shape.channels]
    }

    pub fn confidence(&self, m: usize, t: usize, v: usize) -> f32 {
        match &self.conf {
            Some(c) => c[(m * self.shape.frames + t) * self.shape.joints + v],
            None => 1.0,
        }
    }

    /// Copy of `self` with new coordinates and frame count; confidences are
    /// carried along by `frame_map` (output frame → source frame).
    pub(crate) fn remap_frames(&self, frames: usize, frame_map: impl Fn(usize) -> usize) -> Self {
        let shape = self.shape.with_frames(frames);
        let fsize = shape.joints * shape.channels;
        let mut coords = Vec::with_capacity(shape.len());
        for m in 0..shape.persons {
            for t in 0..frames {
                let src = frame_map(t);
                let o = self.offset(m, src, 0);
                coords.extend_from_slice(&self.coords[o..o + fsize]);
            }
        }
        let conf = self.conf.as_ref().map(|c| {
            let v = shape.joints;
            let mut out = Vec::with_capacity(shape.points());
            for m in 0..shape.persons {
                for t in 0..frames {
                    let o = (m * self.shape.frames + frame_map(t)) * v;
                    out.extend_from_slice(&c[o..o + v]);
                }
            }
            out
        });
        Self {
            coords,
            shape,
            conf,
            ..self.clone_meta()
        }
    }

    /// Copy of the metadata with empty buffers.
    pub(crate) fn clone_meta(&self) -> Self {
        Self {
            coords: Vec::new(),
            shape: self.shape,
            conf: None,
            label: self.label,
            layout: Arc::clone(&self.layout),
            coord_type: self.coord_type,
            image_size: self.image_size,
        }
    }

    /// Checks every sequence invariant; an empty list means the sequence is valid.
    pub fn validate(&self) -> Vec<Violation> {
        validate_sequence(self)
    }
}

/// Lists every violated [`SkeletonSequence`] invariant. Never fails.
pub fn validate_sequence(seq: &SkeletonSequence) -> Vec<Violation> {
    let mut out = Vec::new();
    let s = seq.shape;
    let mut push =
        |invariant: &'static str, detail: String| out.push(Violation { invariant, detail });

    if s.channels != seq.coord_type.channels() {
        push(
            "channel/coord_type consistency",
            format!("C = {} but coord_type is {:?}", s.channels, seq.coord_type),
        );
    }
    if s.persons < 1 {
        push("persons", "M must be at least 1".into());
    }
    if s.frames < 1 {
        push("frames", "T must be at least 1".into());
    }
    if s.joints != seq.layout.num_joints() {
        push(
            "joints",
            format!(
                "V = {} but layout {} has {}",
                s.joints,
                seq.layout.name(),
                seq.layout.num_joints()
            ),
        );
    }
    if seq.coords.len() != s.len() {
        push(
            "coords length",
            format!("{} values for shape needing {}", seq.coords.len(), s.len()),
        );
    }
    if let Some(i) = seq.coords.iter().position(|x| !x.is_finite()) {
        push(
            "finite",
            format!("coordinate at flat index {i} is {}", seq.coords[i]),
        );
    }
    if let Some(conf) = &seq.conf {
        if conf.len() != s.points() {
            push(
                "conf length",
                format!("{} values, expected {}", conf.len(), s.points()),
            );
        }
        if let Some(i) = conf.iter().position(|c| !(0.0..=1.0).contains(c)) {
            push(
                "conf range",
                format!("confidence at flat index {i} is {}", conf[i]),
            );
        }
    }
    out
}
