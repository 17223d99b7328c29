//! Named parameter storage, gradient buffers and the `ANC1` checkpoint format.
//!
//! Checkpoint layout (little-endian): the magic bytes `ANC1`, then for each
//! parameter in registration order: `u32` name length, UTF-8 name, `u32`
//! rank, `rank` × `u32` dims, and the `f32` values row-major.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ANC1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(t);
        id
    }

    /// Weights drawn from uniform(-bound, bound).
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let count = shape.iter().product();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let data = (0..count).map(|_| T::of(dist.sample(rng))).collect();
        self.add(name, Tensor::new(shape, data).expect("shape matches data"))
    }

    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let count = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..count).map(|_| T::of(dist.sample(rng))).collect();
        self.add(name, Tensor::new(shape, data).expect("shape matches data"))
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: Vec<usize>, v: f64) -> ParamId {
        let count = shape.iter().product();
        self.add(name, Tensor::new(shape, vec![T::of(v); count]).expect("shape matches data"))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            by_name: self.by_name.clone(),
        }
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                let f = v.to_f32().unwrap_or(f32::NAN);
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::invalid("checkpoint too short"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::invalid("not an ANC1 checkpoint (bad magic)"));
        }
        let mut store = ParamStore::new();
        while !r.is_empty() {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > r.len() {
                return Err(Error::invalid("checkpoint truncated in a parameter name"));
            }
            let (name, rest) = r.split_at(name_len);
            r = rest;
            let name = std::str::from_utf8(name)
                .map_err(|_| Error::invalid("checkpoint parameter name is not UTF-8"))?
                .to_string();
            let rank = read_u32(&mut r)? as usize;
            let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            if count * 4 > r.len() {
                return Err(Error::invalid(format!("checkpoint truncated in parameter {name}")));
            }
            let (vals, rest) = r.split_at(count * 4);
            r = rest;
            let data = vals
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            if store.id(&name).is_some() {
                return Err(Error::invalid(format!("checkpoint repeats parameter {name}")));
            }
            store.add(name, Tensor::new(shape, data)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
    }

    /// Overwrites values from `other`, matching parameters by name and shape.
    pub fn load_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} parameters, model expects {}",
                other.len(),
                self.len()
            )));
        }
        for id in self.ids().collect::<Vec<_>>() {
            let name = self.name(id).to_string();
            let src = other
                .id(&name)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks parameter {name}")))?;
            let src = other.get(src);
            if src.shape() != self.get(id).shape() {
                return Err(Error::invalid(format!(
                    "parameter {name} has shape {:?} in checkpoint, {:?} in model",
                    src.shape(),
                    self.get(id).shape()
                )));
            }
            *self.get_mut(id) = src.clone();
        }
        Ok(())
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::invalid("checkpoint truncated"))?;
    Ok(u32::from_le_bytes(b))
}

/// Gradient buffers keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    by_param: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn insert(&mut self, id: ParamId, g: Vec<T>) {
        self.by_param.insert(id, g);
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.by_param.get(&id).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.by_param.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (id, g) in other.iter() {
            let dst = self.by_param.entry(id).or_insert_with(|| vec![T::zero(); g.len()]);
            for (d, &s) in dst.iter_mut().zip(g) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, f: T) {
        for g in self.by_param.values_mut() {
            for v in g.iter_mut() {
                *v *= f;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::<f32>::new();
        s.add_uniform("enc.w", vec![3, 4], 0.5, &mut rng);
        s.add_normal("emb", vec![5, 2], 0.02, &mut rng);
        s.add_const("ln.g", vec![4], 1.0);
        let bytes = s.to_checkpoint_bytes();
        assert_eq!(&bytes[..4], b"ANC1");
        let back = ParamStore::<f32>::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_checkpoint_bytes(), bytes);
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add_const("w", vec![2, 2], 0.5);
        let bytes = s.to_checkpoint_bytes();
        assert!(ParamStore::<f32>::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ParamStore::<f32>::from_checkpoint_bytes(&bad).is_err());
    }
}
