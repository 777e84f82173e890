//! Pre-processing, temporal sampling, spatial augmentation and stream
//! derivation for skeleton sequences.
//!
//! Every function here is pure given its inputs and, for the random ones, an
//! explicit [`Rng`]. Coordinates are stored as `f32`; arithmetic is done in
//! `f64` and rounded once on output.

use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::skeleton::{CoordType, SkeletonSequence};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TemporalAug {
    /// One random frame per equal-length split.
    #[default]
    UniformSample,
    /// Random substring, linearly resized to `crop_out_len`.
    CropResize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    /// Output length of uniform sampling.
    pub clip_len: usize,
    /// Rotation angles are drawn from `[-rot_range, rot_range]` radians.
    pub rot_range: f64,
    pub scale_range_3d: f64,
    pub scale_range_2d: f64,
    pub noise_sigma: f64,
    pub noise_frame_specific: bool,
    pub crop_ratio_range: (f64, f64),
    pub crop_out_len: usize,
    pub temporal: TemporalAug,
    pub random_rotate: bool,
    pub random_scale: bool,
    pub random_noise: bool,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            clip_len: 100,
            rot_range: 0.3,
            scale_range_3d: 0.1,
            scale_range_2d: 0.2,
            noise_sigma: 0.0,
            noise_frame_specific: true,
            crop_ratio_range: (0.5, 1.0),
            crop_out_len: 64,
            temporal: TemporalAug::UniformSample,
            random_rotate: false,
            random_scale: false,
            random_noise: false,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.clip_len == 0 || self.crop_out_len == 0 {
            return bad("clip_len and crop_out_len must be positive");
        }
        if !(self.rot_range > 0.0 && self.scale_range_3d > 0.0 && self.scale_range_2d > 0.0) {
            return bad("rotation and scale ranges must be positive");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        let (lo, hi) = self.crop_ratio_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("crop_ratio_range must satisfy 0 < lo <= hi <= 1");
        }
        Ok(())
    }

    pub fn scale_range(&self, coord_type: CoordType) -> f64 {
        match coord_type {
            CoordType::TwoD => self.scale_range_2d,
            CoordType::ThreeD => self.scale_range_3d,
        }
    }
}

/// Input modality fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    #[default]
    Joint,
    Bone,
    JointMotion,
    BoneMotion,
}

impl Stream {
    pub const ALL: [Stream; 4] = [
        Stream::Joint,
        Stream::Bone,
        Stream::JointMotion,
        Stream::BoneMotion,
    ];
}

fn map_coords(seq: &SkeletonSequence, f: impl Fn(&[f32], &mut [f32])) -> SkeletonSequence {
    let c = seq.shape.channels;
    let mut coords = vec![0f32; seq.coords.len()];
    for (src, dst) in seq.coords.chunks_exact(c).zip(coords.chunks_exact_mut(c)) {
        f(src, dst);
    }
    SkeletonSequence {
        coords,
        conf: seq.conf.clone(),
        ..seq.clone_meta()
    }
}

type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Rotation taking the direction of `from` onto the direction of `to`.
fn align_rotation(from: [f64; 3], to: [f64; 3]) -> Mat3 {
    let f = from.map(|x| x / norm(from));
    let t = to.map(|x| x / norm(to));
    let axis = cross(f, t);
    let s = norm(axis);
    let c = f[0] * t[0] + f[1] * t[1] + f[2] * t[2];
    if s < 1e-12 {
        if c > 0.0 {
            return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        }
        // antiparallel: half-turn about any axis orthogonal to `f`
        let helper = if f[0].abs() < 0.9 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 1.0, 0.0]
        };
        let k = cross(f, helper);
        let k = k.map(|x| x / norm(k));
        return [0, 1, 2]
            .map(|i| [0, 1, 2].map(|j| 2.0 * k[i] * k[j] - if i == j { 1.0 } else { 0.0 }));
    }
    let k = axis.map(|x| x / s);
    let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    let kx2 = mat_mul(&kx, &kx);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            r[i][j] = id + s * kx[i][j] + (1.0 - c) * kx2[i][j];
        }
    }
    r
}

fn joint_f64(seq: &SkeletonSequence, m: usize, t: usize, v: usize) -> [f64; 3] {
    let j = seq.joint(m, t, v);
    [j[0] as f64, j[1] as f64, j[2] as f64]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreNormOptions {
    /// Additionally turn about z so the right-minus-left shoulder vector
    /// points along +x in the xy-plane.
    pub align_shoulders: bool,
}

/// Moves person 1's frame-1 center joint to the origin and rotates every
/// joint so that person 1's frame-1 spine points along +z.
pub fn pre_normalize_3d(seq: &SkeletonSequence, opts: PreNormOptions) -> Result<SkeletonSequence> {
    if seq.coord_type != CoordType::ThreeD || seq.shape.channels != 3 {
        return Err(Error::CoordType(
            "pre_normalize_3d needs 3D coordinates".into(),
        ));
    }
    let layout = &seq.layout;
    let center = joint_f64(seq, 0, 0, layout.center());
    let (base, tip) = layout.spine();
    let b = joint_f64(seq, 0, 0, base);
    let t = joint_f64(seq, 0, 0, tip);
    let spine = [t[0] - b[0], t[1] - b[1], t[2] - b[2]];
    if !(norm(spine) > 0.0) {
        return Err(Error::DegenerateInput(
            "spine vector of person 1, frame 1 has zero length".into(),
        ));
    }
    let mut rot = align_rotation(spine, [0.0, 0.0, 1.0]);
    if opts.align_shoulders {
        let (r, l) = layout.shoulders().ok_or_else(|| {
            Error::MissingMetadata(format!("layout {} has no shoulder joints", layout.name()))
        })?;
        let rs = mat_vec(&rot, joint_f64(seq, 0, 0, r));
        let ls = mat_vec(&rot, joint_f64(seq, 0, 0, l));
        // turn about z only, so the spine stays on +z
        let (sx, sy) = (rs[0] - ls[0], rs[1] - ls[1]);
        if !(sx.hypot(sy) > 0.0) {
            return Err(Error::DegenerateInput(
                "shoulder vector is parallel to the spine".into(),
            ));
        }
        let (sin, cos) = (-sy.atan2(sx)).sin_cos();
        let rz = [[cos, -sin, 0.0], [sin, cos, 0.0], [0.0, 0.0, 1.0]];
        rot = mat_mul(&rz, &rot);
    }
    Ok(map_coords(seq, |src, dst| {
        let p = [
            src[0] as f64 - center[0],
            src[1] as f64 - center[1],
            src[2] as f64 - center[2],
        ];
        let q = mat_vec(&rot, p);
        for k in 0..3 {
            dst[k] = q[k] as f32;
        }
    }))
}

/// Maps pixel coordinates into `[-1, 1]` using the image size.
pub fn normalize_2d(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    if seq.coord_type != CoordType::TwoD {
        return Err(Error::CoordType("normalize_2d needs 2D coordinates".into()));
    }
    let (w, h) = seq
        .image_size
        .ok_or_else(|| Error::MissingMetadata("2D sequence has no image_size".into()))?;
    let (w, h) = (w as f64, h as f64);
    let mut out = map_coords(seq, |src, dst| {
        dst[0] = ((2.0 * src[0] as f64 - w) / w) as f32;
        dst[1] = ((2.0 * src[1] as f64 - h) / h) as f32;
    });
    out.image_size = None;
    Ok(out)
}

fn check_pad(seq: &SkeletonSequence, t_max: usize) -> Result<()> {
    if seq.shape.frames > t_max {
        return Err(Error::Length(format!(
            "sequence has {} frames, more than the pad target {t_max}",
            seq.shape.frames
        )));
    }
    Ok(())
}

/// Appends all-zero frames up to `t_max`.
pub fn pad_zero(seq: &SkeletonSequence, t_max: usize) -> Result<SkeletonSequence> {
    check_pad(seq, t_max)?;
    let t = seq.shape.frames;
    let shape = seq.shape.with_frames(t_max);
    let fsize = shape.joints * shape.channels;
    let mut coords = vec![0f32; shape.len()];
    for m in 0..shape.persons {
        let src = seq.offset(m, 0, 0);
        let dst = m * t_max * fsize;
        coords[dst..dst + t * fsize].copy_from_slice(&seq.coords[src..src + t * fsize]);
    }
    let conf = seq.conf.as_ref().map(|c| {
        let v = shape.joints;
        let mut out = vec![0f32; shape.points()];
        for m in 0..shape.persons {
            out[m * t_max * v..(m * t_max + t) * v].copy_from_slice(&c[m * t * v..(m + 1) * t * v]);
        }
        out
    });
    Ok(SkeletonSequence {
        coords,
        shape,
        conf,
        ..seq.clone_meta()
    })
}

/// Repeats the sequence cyclically up to `t_max` frames.
pub fn pad_loop(seq: &SkeletonSequence, t_max: usize) -> Result<SkeletonSequence> {
    check_pad(seq, t_max)?;
    let t = seq.shape.frames;
    Ok(seq.remap_frames(t_max, |i| i % t))
}

/// Frame indices for uniform sampling: slot `i` takes input frame
/// `floor((i + u_i) * T / M)`. With `rng = None` every `u_i` is 0.5.
pub fn uniform_sample_indices(frames: usize, clip_len: usize, rng: Option<&mut Rng>) -> Vec<usize> {
    let (t, m) = (frames, clip_len);
    let mut rng = rng;
    (0..m)
        .map(|i| {
            let u = match rng.as_deref_mut() {
                Some(r) => r.uniform(),
                None => 0.5,
            };
            let raw = ((i as f64 + u) * t as f64 / m as f64).floor() as usize;
            // keep rounding from leaving split i
            let lo = i * t / m;
            let hi = (((i + 1) * t + m - 1) / m).saturating_sub(1).max(lo);
            raw.clamp(lo, hi).min(t - 1)
        })
        .collect()
}

pub fn uniform_sample(seq: &SkeletonSequence, clip_len: usize, rng: &mut Rng) -> SkeletonSequence {
    let idx = uniform_sample_indices(seq.shape.frames, clip_len, Some(rng));
    seq.remap_frames(clip_len, |i| idx[i])
}

/// Deterministic variant of [`uniform_sample`] taking the middle of every split.
pub fn center_sample(seq: &SkeletonSequence, clip_len: usize) -> SkeletonSequence {
    let idx = uniform_sample_indices(seq.shape.frames, clip_len, None);
    seq.remap_frames(clip_len, |i| idx[i])
}

/// Crops frames `[start, start + len)` and linearly resizes them to `out_len`.
pub fn crop_resize(
    seq: &SkeletonSequence,
    start: usize,
    len: usize,
    out_len: usize,
) -> Result<SkeletonSequence> {
    let t = seq.shape.frames;
    if len == 0 || start + len > t || out_len == 0 {
        return Err(Error::Length(format!(
            "crop [{start}, {}) outside {t} frames",
            start + len
        )));
    }
    let shape = seq.shape.with_frames(out_len);
    let (v, c) = (shape.joints, shape.channels);
    let pos = |j: usize| -> (usize, usize, f64) {
        if out_len == 1 || len == 1 {
            return (start, start, 0.0);
        }
        let p = j as f64 * (len - 1) as f64 / (out_len - 1) as f64;
        let i0 = (p.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (start + i0, start + i1, p - i0 as f64)
    };
    let lerp = |a: f32, b: f32, w: f64| -> f32 {
        if w == 0.0 {
            a
        } else {
            ((1.0 - w) * a as f64 + w * b as f64) as f32
        }
    };
    let mut coords = Vec::with_capacity(shape.len());
    for m in 0..shape.persons {
        for j in 0..out_len {
            let (a, b, w) = pos(j);
            let fa = seq.frame(m, a);
            let fb = seq.frame(m, b);
            coords.extend(fa.iter().zip(fb).map(|(&x, &y)| lerp(x, y, w)));
        }
    }
    debug_assert_eq!(coords.len(), shape.persons * out_len * v * c);
    let conf = seq.conf.as_ref().map(|conf| {
        let mut out = Vec::with_capacity(shape.points());
        for m in 0..shape.persons {
            for j in 0..out_len {
                let (a, b, w) = pos(j);
                let oa = (m * t + a) * v;
                let ob = (m * t + b) * v;
                out.extend((0..v).map(|k| lerp(conf[oa + k], conf[ob + k], w)));
            }
        }
        out
    });
    Ok(SkeletonSequence {
        coords,
        shape,
        conf,
        ..seq.clone_meta()
    })
}

/// Random substring with length ratio drawn from `cfg.crop_ratio_range`,
/// resized to `cfg.crop_out_len` frames.
pub fn random_crop_resize(
    seq: &SkeletonSequence,
    cfg: &TransformConfig,
    rng: &mut Rng,
) -> Result<SkeletonSequence> {
    let t = seq.shape.frames;
    if t < 2 {
        return Err(Error::Length(
            "random_crop_resize needs at least 2 frames".into(),
        ));
    }
    let (lo, hi) = cfg.crop_ratio_range;
    let ratio = rng.uniform_range(lo, hi);
    let len = ((ratio * t as f64).round() as usize).clamp(1, t);
    let start = rng.below(t - len + 1);
    crop_resize(seq, start, len, cfg.crop_out_len)
}

/// `Rz(θz) · Ry(θy) · Rx(θx)`.
pub fn rotation_matrix(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let [ax, ay, az] = angles;
    let rx = [
        [1.0, 0.0, 0.0],
        [0.0, ax.cos(), -ax.sin()],
        [0.0, ax.sin(), ax.cos()],
    ];
    let ry = [
        [ay.cos(), 0.0, ay.sin()],
        [0.0, 1.0, 0.0],
        [-ay.sin(), 0.0, ay.cos()],
    ];
    let rz = [
        [az.cos(), -az.sin(), 0.0],
        [az.sin(), az.cos(), 0.0],
        [0.0, 0.0, 1.0],
    ];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

/// Rotates every joint of a 3D sequence about the origin.
pub fn rotate(seq: &SkeletonSequence, angles: [f64; 3]) -> Result<SkeletonSequence> {
    if seq.coord_type != CoordType::ThreeD {
        return Err(Error::CoordType(
            "rotation is only defined for 3D skeletons".into(),
        ));
    }
    let r = rotation_matrix(angles);
    Ok(map_coords(seq, |src, dst| {
        let q = mat_vec(&r, [src[0] as f64, src[1] as f64, src[2] as f64]);
        for k in 0..3 {
            dst[k] = q[k] as f32;
        }
    }))
}

pub fn draw_rotation_angles(cfg: &TransformConfig, rng: &mut Rng) -> [f64; 3] {
    let r = cfg.rot_range;
    [0; 3].map(|_| rng.uniform_range(-r, r))
}

pub fn random_rotate(
    seq: &SkeletonSequence,
    cfg: &TransformConfig,
    rng: &mut Rng,
) -> Result<SkeletonSequence> {
    let angles = draw_rotation_angles(cfg, rng);
    rotate(seq, angles)
}

/// Multiplies axis `k` of every joint by `factors[k]`.
pub fn scale_axes(seq: &SkeletonSequence, factors: &[f64]) -> Result<SkeletonSequence> {
    if factors.len() != seq.shape.channels {
        return Err(Error::shape(format!(
            "{} scale factors for {} channels",
            factors.len(),
            seq.shape.channels
        )));
    }
    Ok(map_coords(seq, |src, dst| {
        for k in 0..src.len() {
            dst[k] = (src[k] as f64 * factors[k]) as f32;
        }
    }))
}

/// Per-axis factors `1 + r`, `r` uniform in the range for `coord_type`.
pub fn draw_scale_factors(coord_type: CoordType, cfg: &TransformConfig, rng: &mut Rng) -> Vec<f64> {
    let r = cfg.scale_range(coord_type);
    (0..coord_type.channels())
        .map(|_| 1.0 + rng.uniform_range(-r, r))
        .collect()
}

pub fn random_scale(
    seq: &SkeletonSequence,
    cfg: &TransformConfig,
    rng: &mut Rng,
) -> SkeletonSequence {
    let factors = draw_scale_factors(seq.coord_type, cfg, rng);
    scale_axes(seq, &factors).expect("factor count follows coord_type")
}

/// Adds `N(0, σ²)` noise, either independently per frame or as one offset per
/// joint shared by all frames.
pub fn random_gaussian_noise(
    seq: &SkeletonSequence,
    cfg: &TransformConfig,
    rng: &mut Rng,
) -> SkeletonSequence {
    let sigma = cfg.noise_sigma;
    if sigma == 0.0 {
        return seq.clone();
    }
    let s = seq.shape;
    let mut out = seq.clone();
    if cfg.noise_frame_specific {
        for x in out.coords.iter_mut() {
            *x = (*x as f64 + sigma * rng.normal()) as f32;
        }
    } else {
        for m in 0..s.persons {
            let offsets: Vec<f64> = (0..s.joints * s.channels)
                .map(|_| sigma * rng.normal())
                .collect();
            for t in 0..s.frames {
                let o = seq.offset(m, t, 0);
                for (k, off) in offsets.iter().enumerate() {
                    out.coords[o + k] = (seq.coords[o + k] as f64 + off) as f32;
                }
            }
        }
    }
    out
}

/// Parent-relative joint offsets; the root bone is zero.
pub fn bone_stream(seq: &SkeletonSequence) -> SkeletonSequence {
    let s = seq.shape;
    let parent = seq.layout.parent();
    let mut out = seq.clone();
    for m in 0..s.persons {
        for t in 0..s.frames {
            for v in 0..s.joints {
                let p = parent[v];
                let (ov, op) = (seq.offset(m, t, v), seq.offset(m, t, p));
                for k in 0..s.channels {
                    out.coords[ov + k] = seq.coords[ov + k] - seq.coords[op + k];
                }
            }
        }
    }
    out
}

/// Forward frame differences; the last frame is zero.
pub fn motion_stream(seq: &SkeletonSequence) -> SkeletonSequence {
    let s = seq.shape;
    let fsize = s.joints * s.channels;
    let mut out = seq.clone();
    for m in 0..s.persons {
        for t in 0..s.frames {
            let o = seq.offset(m, t, 0);
            for k in 0..fsize {
                out.coords[o + k] = if t + 1 < s.frames {
                    seq.coords[o + fsize + k] - seq.coords[o + k]
                } else {
                    0.0
                };
            }
        }
    }
    out
}

pub fn derive_stream(seq: &SkeletonSequence, stream: Stream) -> SkeletonSequence {
    match stream {
        Stream::Joint => seq.clone(),
        Stream::Bone => bone_stream(seq),
        Stream::JointMotion => motion_stream(seq),
        Stream::BoneMotion => motion_stream(&bone_stream(seq)),
    }
}

/// Training-time chain: spatial augmentation, stream derivation, then
/// temporal sampling.
pub fn train_pipeline(
    seq: &SkeletonSequence,
    cfg: &TransformConfig,
    stream: Stream,
    rng: &mut Rng,
) -> Result<SkeletonSequence> {
    let mut s = seq.clone();
    if cfg.random_rotate && s.coord_type == CoordType::ThreeD {
        s = random_rotate(&s, cfg, rng)?;
    }
    if cfg.random_scale {
        s = random_scale(&s, cfg, rng);
    }
    if cfg.random_noise {
        s = random_gaussian_noise(&s, cfg, rng);
    }
    s = derive_stream(&s, stream);
    match cfg.temporal {
        TemporalAug::UniformSample => Ok(uniform_sample(&s, cfg.clip_len, rng)),
        TemporalAug::CropResize => random_crop_resize(&s, cfg, rng),
    }
}

/// Evaluation chain: stream derivation and deterministic center sampling.
pub fn eval_pipeline(
    seq: &SkeletonSequence,
    cfg: &TransformConfig,
    stream: Stream,
) -> Result<SkeletonSequence> {
    let s = derive_stream(seq, stream);
    match cfg.temporal {
        TemporalAug::UniformSample => Ok(center_sample(&s, cfg.clip_len)),
        TemporalAug::CropResize => {
            let t = s.shape.frames;
            crop_resize(&s, 0, t, cfg.crop_out_len)
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::skeleton::{builtin_layout, JointLayout, SeqShape};

    fn chain2() -> Arc<JointLayout> {
        Arc::new(JointLayout::from_parents("chain2", vec![0, 0], 0, (0, 1), None).unwrap())
    }

    fn seq3(layout: Arc<JointLayout>, frames: usize, coords: Vec<f32>) -> SkeletonSequence {
        let shape = SeqShape::new(1, frames, layout.num_joints(), 3);
        SkeletonSequence::new(coords, shape, None, 0, layout, CoordType::ThreeD, None).unwrap()
    }

    fn one_joint_track(xs: &[f32]) -> SkeletonSequence {
        let layout = Arc::new(JointLayout::from_parents("one", vec![0], 0, (0, 0), None).unwrap());
        let coords = xs.iter().flat_map(|&x| [x, 0.0, 0.0]).collect();
        seq3(layout, xs.len(), coords)
    }

    fn xs(seq: &SkeletonSequence) -> Vec<f32> {
        seq.coords.chunks(3).map(|c| c[0]).collect()
    }

    #[test]
    fn pre_normalize_identity_case() {
        // center (joint 0) at origin, spine (0 -> 1) = +z
        let s = seq3(chain2(), 1, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let out = pre_normalize_3d(&s, PreNormOptions::default()).unwrap();
        for (a, b) in s.coords.iter().zip(&out.coords) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pre_normalize_maps_x_spine_to_z() {
        let l = 2.5f32;
        let s = seq3(chain2(), 1, vec![0.0, 0.0, 0.0, l, 0.0, 0.0]);
        let out = pre_normalize_3d(&s, PreNormOptions::default()).unwrap();
        let b = out.joint(0, 0, 0);
        let t = out.joint(0, 0, 1);
        let spine = [t[0] - b[0], t[1] - b[1], t[2] - b[2]];
        assert!(spine[0].abs() < 1e-6 && spine[1].abs() < 1e-6);
        assert!((spine[2] - l).abs() < 1e-6);
    }

    #[test]
    fn pre_normalize_degenerate_spine() {
        let s = seq3(chain2(), 1, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(matches!(
            pre_normalize_3d(&s, PreNormOptions::default()),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn pre_normalize_antiparallel_spine() {
        let s = seq3(chain2(), 1, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let out = pre_normalize_3d(&s, PreNormOptions::default()).unwrap();
        let t = out.joint(0, 0, 1);
        let b = out.joint(0, 0, 0);
        assert!((t[2] - b[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shoulder_alignment_puts_shoulders_on_x() {
        let layout = Arc::new(builtin_layout("ntu25").unwrap());
        let shape = SeqShape::new(1, 1, 25, 3);
        let mut rng = Rng::new(5);
        let coords = (0..shape.len())
            .map(|_| rng.uniform_range(-1.0, 1.0) as f32)
            .collect();
        let s =
            SkeletonSequence::new(coords, shape, None, 0, layout, CoordType::ThreeD, None).unwrap();
        let out = pre_normalize_3d(
            &s,
            PreNormOptions {
                align_shoulders: true,
            },
        )
        .unwrap();
        let (r, l) = (out.joint(0, 0, 8), out.joint(0, 0, 4));
        assert!((r[1] - l[1]).abs() < 1e-5);
        assert!(r[0] - l[0] > 0.0);
        let (b, t) = (out.joint(0, 0, 0), out.joint(0, 0, 1));
        assert!((t[0] - b[0]).abs() < 1e-5 && (t[1] - b[1]).abs() < 1e-5);
        assert!(t[2] - b[2] > 0.0);
    }

    #[test]
    fn normalize_2d_corners_and_center() {
        let layout =
            Arc::new(JointLayout::from_parents("t", vec![0, 0, 0], 0, (0, 1), None).unwrap());
        let shape = SeqShape::new(1, 1, 3, 2);
        let s = SkeletonSequence::new(
            vec![320.0, 240.0, 0.0, 0.0, 640.0, 480.0],
            shape,
            None,
            0,
            layout,
            CoordType::TwoD,
            Some((640, 480)),
        )
        .unwrap();
        let out = normalize_2d(&s).unwrap();
        assert_eq!(out.coords, vec![0.0, 0.0, -1.0, -1.0, 1.0, 1.0]);
        let mut missing = s.clone();
        missing.image_size = None;
        assert!(matches!(
            normalize_2d(&missing),
            Err(Error::MissingMetadata(_))
        ));
    }

    #[test]
    fn padding() {
        let s = one_joint_track(&[1.0, 2.0]);
        assert_eq!(xs(&pad_loop(&s, 5).unwrap()), vec![1.0, 2.0, 1.0, 2.0, 1.0]);
        assert_eq!(xs(&pad_zero(&s, 3).unwrap()), vec![1.0, 2.0, 0.0]);
        assert_eq!(pad_zero(&s, 2).unwrap().coords, s.coords);
        assert_eq!(pad_loop(&s, 2).unwrap().coords, s.coords);
        assert!(matches!(pad_zero(&s, 1), Err(Error::Length(_))));
        assert!(matches!(pad_loop(&s, 1), Err(Error::Length(_))));
    }

    #[test]
    fn uniform_sampling_identity_when_lengths_match() {
        let s = one_joint_track(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        for seed in 0..20 {
            let out = uniform_sample(&s, 5, &mut Rng::new(seed));
            assert_eq!(out.coords, s.coords);
        }
    }

    #[test]
    fn uniform_sampling_300_to_100_stays_in_split() {
        let mut rng = Rng::new(1);
        for _ in 0..200 {
            let idx = uniform_sample_indices(300, 100, Some(&mut rng));
            for (i, &j) in idx.iter().enumerate() {
                assert!((3 * i..3 * i + 3).contains(&j));
            }
        }
    }

    #[test]
    fn uniform_sampling_short_sequence_repeats_frames() {
        let idx = uniform_sample_indices(2, 5, Some(&mut Rng::new(0)));
        assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        assert!(idx.iter().all(|&i| i < 2));
    }

    #[test]
    fn crop_resize_linear_interpolation() {
        let s = one_joint_track(&[0.0, 1.0, 2.0, 3.0]);
        let out = crop_resize(&s, 0, 4, 7).unwrap();
        assert_eq!(xs(&out), vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn random_crop_resize_full_ratio_is_identity() {
        let track: Vec<f32> = (0..64).map(|i| (i as f32).sin()).collect();
        let s = one_joint_track(&track);
        let cfg = TransformConfig {
            crop_ratio_range: (1.0, 1.0),
            ..Default::default()
        };
        let out = random_crop_resize(&s, &cfg, &mut Rng::new(3)).unwrap();
        assert_eq!(out.coords, s.coords);
    }

    #[test]
    fn random_crop_resize_of_constant_is_constant() {
        let s = one_joint_track(&[0.7; 10]);
        let out = random_crop_resize(&s, &TransformConfig::default(), &mut Rng::new(9)).unwrap();
        assert_eq!(out.shape.frames, 64);
        assert!(xs(&out).iter().all(|&x| x == 0.7));
    }

    #[test]
    fn rotation_quarter_turn_about_z() {
        let s = one_joint_track(&[1.0]);
        let out = rotate(&s, [0.0, 0.0, std::f64::consts::FRAC_PI_2]).unwrap();
        let p = out.joint(0, 0, 0);
        assert!(p[0].abs() < 1e-6 && (p[1] - 1.0).abs() < 1e-6 && p[2].abs() < 1e-6);
        assert_eq!(rotate(&s, [0.0; 3]).unwrap().coords, s.coords);
    }

    #[test]
    fn rotation_rejects_2d() {
        let layout = Arc::new(builtin_layout("coco17").unwrap());
        let shape = SeqShape::new(1, 1, 17, 2);
        let s = SkeletonSequence::new(
            vec![0.0; shape.len()],
            shape,
            None,
            0,
            layout,
            CoordType::TwoD,
            None,
        )
        .unwrap();
        assert!(matches!(rotate(&s, [0.1; 3]), Err(Error::CoordType(_))));
    }

    #[test]
    fn scale_by_explicit_factors() {
        let layout = Arc::new(JointLayout::from_parents("one", vec![0], 0, (0, 0), None).unwrap());
        let s = seq3(layout, 1, vec![1.0, 1.0, 1.0]);
        let out = scale_axes(&s, &[1.1, 0.9, 1.0]).unwrap();
        assert_eq!(out.coords, vec![1.1, 0.9, 1.0]);
        assert_eq!(scale_axes(&s, &[1.0; 3]).unwrap().coords, s.coords);
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let s = one_joint_track(&[1.0, 2.0, 3.0]);
        let out = random_gaussian_noise(&s, &TransformConfig::default(), &mut Rng::new(0));
        assert_eq!(out.coords, s.coords);
    }

    #[test]
    fn frame_agnostic_noise_is_constant_over_time() {
        let s = one_joint_track(&[1.0, 2.0, 3.0, 4.0]);
        let cfg = TransformConfig {
            noise_sigma: 0.05,
            noise_frame_specific: false,
            ..Default::default()
        };
        let out = random_gaussian_noise(&s, &cfg, &mut Rng::new(4));
        let d: Vec<f64> = out
            .coords
            .iter()
            .zip(&s.coords)
            .map(|(a, b)| (*a - *b) as f64)
            .collect();
        for k in 0..3 {
            let first = d[k];
            assert!(first != 0.0);
            for t in 1..4 {
                assert!((d[t * 3 + k] - first).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bone_stream_on_chain() {
        let s = seq3(chain2(), 1, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(bone_stream(&s).coords, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let same = seq3(chain2(), 1, vec![2.0, 3.0, 4.0, 2.0, 3.0, 4.0]);
        assert!(bone_stream(&same).coords.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn motion_stream_cases() {
        let s = one_joint_track(&[0.0, 0.5, 1.0, 1.5]);
        assert_eq!(xs(&motion_stream(&s)), vec![0.5, 0.5, 0.5, 0.0]);
        let single = one_joint_track(&[3.0]);
        assert_eq!(xs(&motion_stream(&single)), vec![0.0]);
        let still = one_joint_track(&[2.0; 5]);
        assert!(motion_stream(&still).coords.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn config_defaults_are_valid() {
        let cfg = TransformConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.clip_len, 100);
        assert_eq!(cfg.rot_range, 0.3);
        assert_eq!(cfg.crop_out_len, 64);
    }
}
