//! `SKL1` binary dataset container.
//!
//! Layout (little-endian):
//!
//! ```text
//! header:  "SKL1" | version u32 | num_classes u32 | sample_count u64
//! sample:  label u32 | M u16 | T u16 | V u16 | C u16 | flags u16
//!          [width u16 | height u16]          if flags & HAS_IMAGE_SIZE
//!          coords f32 [M][T][V][C]
//!          [conf f32 [M][T][V]]              if flags & HAS_CONF
//! ```
//!
//! Splits are stored next to the container in `<path>.splits.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{CoordType, JointLayout, SeqShape, SkeletonSequence};
use crate::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"SKL1";
const VERSION: u32 = 1;

const HAS_CONF: u16 = 1 << 0;
const HAS_IMAGE_SIZE: u16 = 1 << 1;
const THREE_D: u16 = 1 << 2;

#[derive(Debug, Clone, Default)]
pub struct DatasetContainer {
    pub samples: Vec<SkeletonSequence>,
    pub splits: BTreeMap<String, Vec<usize>>,
    pub num_classes: usize,
}

impl DatasetContainer {
    pub fn validate(&self) -> Result<()> {
        for (name, idx) in &self.splits {
            if let Some(&i) = idx.iter().find(|&&i| i >= self.samples.len()) {
                return Err(Error::Data(format!("split {name} references sample {i}")));
            }
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.num_classes {
                return Err(Error::Data(format!(
                    "sample {i} has label {} >= num_classes {}",
                    s.label, self.num_classes
                )));
            }
            if let Some(v) = s.validate().first() {
                return Err(Error::Data(format!(
                    "sample {i}: {} ({})",
                    v.invariant, v.detail
                )));
            }
            if s.shape.persons > u16::MAX as usize || s.shape.frames > u16::MAX as usize {
                return Err(Error::Data(format!("sample {i} is too large for SKL1")));
            }
        }
        Ok(())
    }

    pub fn split(&self, name: &str) -> Result<&[usize]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Data(format!("no split named {name:?}")))
    }
}

/// Path of the JSON splits sidecar for a container file.
pub fn splits_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".splits.json");
    PathBuf::from(s)
}

pub fn save_container(container: &DatasetContainer, path: &Path) -> Result<()> {
    container.validate()?;
    let mut buf = Vec::new();
    encode(container, &mut buf);
    fs::write(path, &buf)?;
    let json = serde_json::to_string_pretty(&container.splits)
        .map_err(|e| Error::Format(format!("splits: {e}")))?;
    fs::write(splits_path(path), json)?;
    Ok(())
}

pub fn load_container(path: &Path) -> Result<DatasetContainer> {
    let bytes = fs::read(path)?;
    let mut container = decode(&bytes)?;
    let sidecar = splits_path(path);
    if sidecar.exists() {
        let text = fs::read_to_string(&sidecar)?;
        container.splits = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("splits sidecar: {e}")))?;
    }
    container
        .validate()
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(container)
}

pub(crate) fn encode(c: &DatasetContainer, out: &mut Vec<u8>) {
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(c.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&(c.samples.len() as u64).to_le_bytes());
    for s in &c.samples {
        let mut flags = 0u16;
        if s.conf.is_some() {
            flags |= HAS_CONF;
        }
        if s.image_size.is_some() {
            flags |= HAS_IMAGE_SIZE;
        }
        if s.coord_type == CoordType::ThreeD {
            flags |= THREE_D;
        }
        out.extend_from_slice(&(s.label as u32).to_le_bytes());
        for d in [
            s.shape.persons,
            s.shape.frames,
            s.shape.joints,
            s.shape.channels,
        ] {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        out.extend_from_slice(&flags.to_le_bytes());
        if let Some((w, h)) = s.image_size {
            out.extend_from_slice(&w.to_le_bytes());
            out.extend_from_slice(&h.to_le_bytes());
        }
        for x in &s.coords {
            out.extend_from_slice(&x.to_le_bytes());
        }
        if let Some(conf) = &s.conf {
            for x in conf {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated payload: need {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<DatasetContainer> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r
        .take(4)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let num_classes = r.u32()? as usize;
    let count = r.u64()?;
    let mut samples = Vec::new();
    for _ in 0..count {
        let label = r.u32()? as usize;
        let (m, t, v, c) = (
            r.u16()? as usize,
            r.u16()? as usize,
            r.u16()? as usize,
            r.u16()? as usize,
        );
        let flags = r.u16()?;
        let image_size = if flags & HAS_IMAGE_SIZE != 0 {
            Some((r.u16()?, r.u16()?))
        } else {
            None
        };
        let shape = SeqShape::new(m, t, v, c);
        let coords = r.f32s(shape.len())?;
        let conf = if flags & HAS_CONF != 0 {
            Some(r.f32s(shape.points())?)
        } else {
            None
        };
        let layout = JointLayout::builtin_for_joints(v)
            .ok_or_else(|| Error::Format(format!("no built-in layout with {v} joints")))?;
        let coord_type = if flags & THREE_D != 0 {
            CoordType::ThreeD
        } else {
            CoordType::TwoD
        };
        samples.push(SkeletonSequence::new(
            coords,
            shape,
            conf,
            label,
            Arc::new(layout),
            coord_type,
            image_size,
        )?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(DatasetContainer {
        samples,
        splits: BTreeMap::new(),
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::builtin_layout;

    fn sample() -> DatasetContainer {
        let layout = Arc::new(builtin_layout("ntu25").unwrap());
        let shape = SeqShape::new(1, 3, 25, 3);
        let coords = (0..shape.len()).map(|i| i as f32 * 0.25 - 3.0).collect();
        let seq =
            SkeletonSequence::new(coords, shape, None, 1, layout, CoordType::ThreeD, None).unwrap();
        DatasetContainer {
            samples: vec![seq],
            splits: BTreeMap::from([("train".to_string(), vec![0])]),
            num_classes: 2,
        }
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut buf = Vec::new();
        encode(&sample(), &mut buf);
        buf[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&buf), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let mut buf = Vec::new();
        encode(&sample(), &mut buf);
        for cut in [3, 10, 20, buf.len() - 1] {
            assert!(
                matches!(decode(&buf[..cut]), Err(Error::Format(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn bad_version_is_format_error() {
        let mut buf = Vec::new();
        encode(&sample(), &mut buf);
        buf[4] = 9;
        assert!(matches!(decode(&buf), Err(Error::Format(_))));
    }

    #[test]
    fn empty_container_encodes_to_header_only() {
        let c = DatasetContainer {
            num_classes: 3,
            ..Default::default()
        };
        let mut buf = Vec::new();
        encode(&c, &mut buf);
        assert_eq!(buf.len(), 4 + 4 + 4 + 8);
        let back = decode(&buf).unwrap();
        assert!(back.samples.is_empty());
        assert_eq!(back.num_classes, 3);
    }

    #[test]
    fn header_bytes_are_little_endian() {
        let mut buf = Vec::new();
        encode(&sample(), &mut buf);
        assert_eq!(&buf[0..4], b"SKL1");
        assert_eq!(&buf[4..8], &[1, 0, 0, 0]);
        assert_eq!(&buf[8..12], &[2, 0, 0, 0]);
        assert_eq!(&buf[12..20], &[1, 0, 0, 0, 0, 0, 0, 0]);
        // label, M, T, V, C, flags
        assert_eq!(&buf[20..24], &[1, 0, 0, 0]);
        assert_eq!(&buf[24..34], &[1, 0, 3, 0, 25, 0, 3, 0, 4, 0]);
    }

    #[test]
    fn invalid_split_index_is_rejected_on_save() {
        let mut c = sample();
        c.splits.insert("test".into(), vec![5]);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            save_container(&c, &dir.path().join("x.skl")),
            Err(Error::Data(_))
        ));
    }
}
