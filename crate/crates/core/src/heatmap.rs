//! Gaussian joint heatmaps and `K × T × H × W` heatmap volumes.
//!
//! Volumes are kept in double precision in memory and written as `HMV1`:
//!
//! ```text
//! "HMV1" | K u32 | T u32 | H u32 | W u32 | f32 payload [K][T][H][W]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::skeleton::{CoordType, SkeletonSequence};
use crate::{Error, Result};

pub const HEATMAP_MAGIC: &[u8; 4] = b"HMV1";

/// Default Gaussian width in pixels for a 64 × 64 canvas.
pub const DEFAULT_SIGMA: f64 = 0.6;

/// Values at squared distance beyond `(3σ)²` are dropped.
const TRUNCATE_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapVolume {
    /// Row-major `[K][T][H][W]`, every value in `[0, 1]`.
    pub data: Vec<f64>,
    pub joints: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
}

/// Accumulates `conf · exp(−((j−x)² + (i−y)²) / 2σ²)` into `map` by maximum.
fn splat_max(map: &mut [f64], x: f64, y: f64, conf: f64, sigma: f64, h: usize, w: usize) {
    if conf <= 0.0 {
        return;
    }
    let r = TRUNCATE_SIGMAS * sigma;
    let r2 = r * r;
    let two_s2 = 2.0 * sigma * sigma;
    // bounding box is generous; the distance test decides
    let i0 = ((y - r).floor() - 1.0).max(0.0);
    let i1 = ((y + r).ceil() + 1.0).min(h as f64 - 1.0);
    let j0 = ((x - r).floor() - 1.0).max(0.0);
    let j1 = ((x + r).ceil() + 1.0).min(w as f64 - 1.0);
    if !(i0 <= i1 && j0 <= j1) {
        return;
    }
    for i in i0 as usize..=i1 as usize {
        let dy = i as f64 - y;
        for j in j0 as usize..=j1 as usize {
            let dx = j as f64 - x;
            let d2 = dx * dx + dy * dy;
            if d2 > r2 {
                continue;
            }
            let v = conf * (-d2 / two_s2).exp();
            let slot = &mut map[i * w + j];
            if v > *slot {
                *slot = v;
            }
        }
    }
}

/// Gaussian map `[H][W]` of one joint at pixel `(x, y)`.
pub fn render_joint_map(
    x: f64,
    y: f64,
    conf: f64,
    sigma: f64,
    height: usize,
    width: usize,
) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let mut map = vec![0.0; height * width];
    splat_max(&mut map, x, y, conf, sigma, height, width);
    Ok(map)
}

/// Renders every joint of every frame; persons are merged by maximum.
/// Coordinates must already be in pixel units of the `H × W` canvas.
pub fn build_volume(
    seq: &SkeletonSequence,
    sigma: f64,
    height: usize,
    width: usize,
) -> Result<HeatmapVolume> {
    if seq.coord_type != CoordType::TwoD {
        return Err(Error::CoordType(
            "heatmap volumes need 2D coordinates".into(),
        ));
    }
    if !(sigma > 0.0) || height == 0 || width == 0 {
        return Err(Error::Config(format!(
            "invalid canvas {height}x{width} or sigma {sigma}"
        )));
    }
    let (k, t) = (seq.shape.joints, seq.shape.frames);
    let plane = height * width;
    let mut data = vec![0.0; k * t * plane];
    data.par_chunks_mut(plane).enumerate().for_each(|(r, map)| {
        let (v, ti) = (r / t, r % t);
        for m in 0..seq.shape.persons {
            let p = seq.joint(m, ti, v);
            let conf = seq.confidence(m, ti, v) as f64;
            splat_max(map, p[0] as f64, p[1] as f64, conf, sigma, height, width);
        }
    });
    Ok(HeatmapVolume {
        data,
        joints: k,
        frames: t,
        height,
        width,
        sigma,
    })
}

/// Maps 2D coordinates onto an `H × W` canvas: pixel coordinates are scaled
/// by the image size, normalized `[-1, 1]` coordinates are stretched.
pub fn to_canvas(seq: &SkeletonSequence, height: usize, width: usize) -> Result<SkeletonSequence> {
    if seq.coord_type != CoordType::TwoD {
        return Err(Error::CoordType(
            "canvas mapping needs 2D coordinates".into(),
        ));
    }
    let (h, w) = (height as f64, width as f64);
    let map: Box<dyn Fn(f64, f64) -> (f64, f64)> = match seq.image_size {
        Some((iw, ih)) => {
            let (sx, sy) = (w / iw as f64, h / ih as f64);
            Box::new(move |x, y| (x * sx, y * sy))
        }
        None => Box::new(move |x, y| ((x + 1.0) * 0.5 * w, (y + 1.0) * 0.5 * h)),
    };
    let mut out = seq.clone();
    for p in out.coords.chunks_exact_mut(seq.shape.channels) {
        let (x, y) = map(p[0] as f64, p[1] as f64);
        p[0] = x as f32;
        p[1] = y as f32;
    }
    out.image_size = Some((width as u16, height as u16));
    Ok(out)
}

impl HeatmapVolume {
    pub fn slice(&self, joint: usize, frame: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[(joint * self.frames + frame) * plane..][..plane]
    }

    pub fn get(&self, joint: usize, frame: usize, i: usize, j: usize) -> f64 {
        self.slice(joint, frame)[i * self.width + j]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.data.len());
        out.extend_from_slice(HEATMAP_MAGIC);
        for d in [self.joints, self.frames, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    /// Reads an `HMV1` dump; `sigma` is not stored and comes back as 0.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != HEATMAP_MAGIC {
            return Err(Error::Format("not an HMV1 heatmap dump".into()));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let dims = [word(4), word(8), word(12), word(16)];
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("heatmap dimensions overflow".into()))?;
        if bytes.len() - 20 != n * 4 {
            return Err(Error::Format(format!(
                "heatmap payload has {} bytes, dimensions {dims:?} need {}",
                bytes.len() - 20,
                n * 4
            )));
        }
        let data = bytes[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            data,
            joints: dims[0],
            frames: dims[1],
            height: dims[2],
            width: dims[3],
            sigma: 0.0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    /// Binary PGM (P5) image of one `(joint, frame)` slice, 0 → black, 1 → white.
    pub fn write_pgm(&self, joint: usize, frame: usize, path: &Path) -> Result<()> {
        if joint >= self.joints || frame >= self.frames {
            return Err(Error::Shape(format!(
                "slice ({joint}, {frame}) outside {}x{}",
                self.joints, self.frames
            )));
        }
        let mut f = fs::File::create(path)?;
        write!(f, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .slice(joint, frame)
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        f.write_all(&bytes)?;
        Ok(())
    }
}
