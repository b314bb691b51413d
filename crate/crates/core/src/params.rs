//! Flat parameter vectors with named layer segments, and the global/local
//! split used by partial model-sharing.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordinal of a parameterized layer (position among parameterized layers in
/// model order; e.g. the standard ConvNet has 0=conv1, 1=conv2, 2=dense1,
/// 3=dense2).
pub type LayerId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub layer_id: LayerId,
    pub offset: usize,
    pub len: usize,
}

/// Flat parameter array carved into contiguous, ordered, non-overlapping
/// layer segments that cover the whole array.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    pub values: Vec<T>,
    pub segments: Vec<Segment>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn zeros_like(layout: &[Segment]) -> Self {
        let total: usize = layout.iter().map(|s| s.len).sum();
        ParamVector {
            values: vec![T::zero(); total],
            segments: layout.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout_matches(&self, other: &Self) -> bool {
        self.segments == other.segments && self.values.len() == other.values.len()
    }

    fn find(&self, layer_id: LayerId) -> Option<&Segment> {
        self.segments.iter().find(|s| s.layer_id == layer_id)
    }

    pub fn segment(&self, layer_id: LayerId) -> &[T] {
        let s = self.find(layer_id).expect("unknown layer segment");
        &self.values[s.offset..s.offset + s.len]
    }

    pub fn segment_mut(&mut self, layer_id: LayerId) -> &mut [T] {
        let s = *self.find(layer_id).expect("unknown layer segment");
        &mut self.values[s.offset..s.offset + s.len]
    }

    pub fn has_layer(&self, layer_id: LayerId) -> bool {
        self.find(layer_id).is_some()
    }

    /// New vector containing only the given layers' segments, re-packed
    /// contiguously in original layer order.
    pub fn restrict(&self, layers: &BTreeSet<LayerId>) -> Self {
        let mut values = Vec::new();
        let mut segments = Vec::new();
        for s in &self.segments {
            if layers.contains(&s.layer_id) {
                segments.push(Segment {
                    layer_id: s.layer_id,
                    offset: values.len(),
                    len: s.len,
                });
                values.extend_from_slice(&self.values[s.offset..s.offset + s.len]);
            }
        }
        ParamVector { values, segments }
    }

    /// Writes `other`'s segments over the matching segments of `self`.
    /// Every segment of `other` must exist in `self` with the same length.
    pub fn splice(&mut self, other: &Self) -> Result<()> {
        for s in other.segments.clone() {
            let dst = *self.find(s.layer_id).ok_or_else(|| {
                Error::InvalidArgument(format!("splice: layer {} not in target", s.layer_id))
            })?;
            if dst.len != s.len {
                return Err(Error::InvalidArgument(format!(
                    "splice: layer {} length {} vs {}",
                    s.layer_id, dst.len, s.len
                )));
            }
            self.values[dst.offset..dst.offset + dst.len]
                .copy_from_slice(&other.values[s.offset..s.offset + s.len]);
        }
        Ok(())
    }

    /// Bitwise equality of the stored values.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.segments == other.segments
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    /// L2 norm accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// The global/local split of parameterized layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamPartition {
    pub global_layers: BTreeSet<LayerId>,
    pub local_layers: BTreeSet<LayerId>,
}

impl ParamPartition {
    pub fn new(global: BTreeSet<LayerId>, local: BTreeSet<LayerId>) -> Result<Self> {
        if !global.is_disjoint(&local) {
            return Err(Error::Config("global/local layer sets overlap".into()));
        }
        Ok(ParamPartition {
            global_layers: global,
            local_layers: local,
        })
    }

    pub fn all_layers(&self) -> BTreeSet<LayerId> {
        self.global_layers.union(&self.local_layers).copied().collect()
    }
}
