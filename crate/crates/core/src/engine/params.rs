//! Named parameter storage and the `SKW1` checkpoint format.
//!
//! A checkpoint is the magic `"SKW1"` followed by one record per entry in
//! ascending name order, until end of file:
//!
//! ```text
//! name_len u32 | name utf-8 | rank u32 | dims u32 × rank | f32 payload
//! ```
//!
//! Integers are little-endian. Non-trainable buffers (batch-norm running
//! statistics) are stored alongside the weights.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::tensor::{Real, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SKW1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    /// Registers a tensor under a unique name.
    pub fn add(&mut self, name: &str, value: Tensor<F>, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            grad: Tensor::zeros(value.shape()),
            value,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    /// Mutable access to the values of two distinct entries.
    pub fn values_mut2(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor<F>, &mut Tensor<F>) {
        assert_ne!(a, b, "values_mut2 needs distinct entries");
        if a.0 < b.0 {
            let (lo, hi) = self.params.split_at_mut(b.0);
            (&mut lo[a.0].value, &mut hi[0].value)
        } else {
            let (lo, hi) = self.params.split_at_mut(a.0);
            (&mut hi[0].value, &mut lo[b.0].value)
        }
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameters in ascending name order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<F>)> {
        self.by_name.values().map(|&id| (id, &self.params[id.0]))
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.by_name.values().copied().collect()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::zero());
        }
    }

    /// Total element count of trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Copies every entry into a store of another precision.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Overwrites values from `(name, tensor)` entries; names and shapes must
    /// match this store exactly.
    pub fn load_entries(&mut self, entries: &[(String, Tensor<f32>)]) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} entries, model has {}",
                entries.len(),
                self.params.len()
            )));
        }
        for (name, t) in entries {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Format(format!("unknown checkpoint entry {name}")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "entry {name}: shape {:?} != {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.cast();
        }
        Ok(())
    }
}

pub fn save_checkpoint<F: Real>(store: &ParamStore<F>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in p.value.data() {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes)
}

pub(crate) fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let trunc = || Error::Format("truncated checkpoint".into());
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let mut pos: usize = 4;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(trunc)?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    let mut entries = Vec::new();
    loop {
        let head = match take(4) {
            Ok(h) => h,
            Err(_) => break,
        };
        let name_len = u32::from_le_bytes(head.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| Error::Format("checkpoint name is not utf-8".into()))?;
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let data = take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::new(&shape, data)?));
    }
    if pos != bytes.len() {
        return Err(trunc());
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_in_name_order() {
        let mut s = ParamStore::<f32>::new();
        s.add(
            "z.weight",
            Tensor::new(&[2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap(),
            true,
        );
        s.add(
            "a.bias",
            Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap(),
            true,
        );
        s.add(
            "a.running_mean",
            Tensor::new(&[1], vec![7.0]).unwrap(),
            false,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.skw");
        save_checkpoint(&s, &path).unwrap();
        let entries = load_checkpoint(&path).unwrap();
        let names: Vec<_> = entries.iter().map(|e| e.0.as_str()).collect();
        assert_eq!(names, ["a.bias", "a.running_mean", "z.weight"]);
        let mut fresh = s.clone();
        fresh.get_mut(ParamId(0)).value.fill(0.0);
        fresh.load_entries(&entries).unwrap();
        assert_eq!(fresh.get(ParamId(0)).value, s.get(ParamId(0)).value);
        assert_eq!(s.trainable_count(), 7);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.skw");
        save_checkpoint(&s, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 2]).is_err());
        assert!(decode_checkpoint(b"SKW0").is_err());
    }
}
