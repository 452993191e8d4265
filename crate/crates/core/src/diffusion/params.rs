//! Flat parameter storage with named tensor views.

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Handle to one tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// All trainable values of one network in a single contiguous vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    entries: Vec<TensorEntry>,
    values: Vec<f64>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a zero-filled tensor.
    pub fn push(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let len = shape.iter().product();
        let offset = self.values.len();
        self.entries.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
            len,
        });
        self.values.resize(offset + len, 0.0);
        ParamId(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &TensorEntry {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let e = &self.entries[id.0];
        &self.values[e.offset..e.offset + e.len]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let e = &self.entries[id.0];
        &mut self.values[e.offset..e.offset + e.len]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Replaces all values; the layout must match.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                actual: values.len(),
            });
        }
        self.values = values;
        Ok(())
    }

    /// Gaussian fill scaled by `std`.
    pub fn init_normal<R: Rng + ?Sized>(&mut self, id: ParamId, std: f64, rng: &mut R) {
        for v in self.get_mut(id) {
            *v = std * rng.sample::<f64, _>(StandardNormal);
        }
    }

    /// Slice of a flat gradient vector laid out like this set.
    pub fn grad_slice<'a>(&self, grads: &'a mut [f64], id: ParamId) -> &'a mut [f64] {
        let e = &self.entries[id.0];
        &mut grads[e.offset..e.offset + e.len]
    }

    /// Two disjoint gradient slices (weight and bias of one layer).
    pub fn grad_pair<'a>(
        &self,
        grads: &'a mut [f64],
        weight: ParamId,
        bias: ParamId,
    ) -> (&'a mut [f64], &'a mut [f64]) {
        let (we, be) = (&self.entries[weight.0], &self.entries[bias.0]);
        assert!(we.offset + we.len <= be.offset, "bias must follow weight");
        let (head, tail) = grads.split_at_mut(be.offset);
        (
            &mut head[we.offset..we.offset + we.len],
            &mut tail[..be.len],
        )
    }

    /// SHA-256 over the little-endian bytes of every value.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.values {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let mut p = ParamSet::new();
        let a = p.push("a", &[2, 3]);
        let b = p.push("b", &[4]);
        assert_eq!(p.len(), 10);
        assert_eq!(p.entry(b).offset, 6);
        p.get_mut(a)[5] = 1.0;
        assert_eq!(p.values()[5], 1.0);
        assert_eq!(p.find("b"), Some(b));
    }

    #[test]
    fn checksum_tracks_values() {
        let mut p = ParamSet::new();
        let a = p.push("a", &[2]);
        let before = p.checksum();
        p.get_mut(a)[0] = 1e-300;
        assert_ne!(before, p.checksum());
    }
}
