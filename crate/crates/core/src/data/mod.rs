//! Dataset ingestion and client partitioning.

mod idx;
mod partition;
mod synth;

pub use idx::load_idx;
pub use partition::{dirichlet_partition, label_entropy, PartitionPlan};
pub use synth::synth_blobs;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Shuffled copy of a shard's sample indices; one visit draws this once and
/// wraps around it for every batch of the visit.
pub fn visit_order(indices: &[u32], rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    order
}

/// Indices of batch `t` within a visit order, always `batch` samples, wrapping
/// when the shard is smaller than `t * batch + batch`.
pub fn visit_batch(order: &[u32], t: usize, batch: usize) -> Vec<u32> {
    assert!(!order.is_empty(), "batch from an empty shard");
    (0..batch).map(|u| order[(t * batch + u) % order.len()]).collect()
}

/// Images as flat f32 pixels in \[0,1\], labels as small class indices.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub images: Vec<f32>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_size(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.sample_size();
        &self.images[i * n..(i + 1) * n]
    }

    /// Copies the given samples into a training batch.
    pub fn gather<T: Scalar>(&self, indices: &[u32]) -> (Tensor<T>, Vec<u8>) {
        let n = self.sample_size();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend(self.image(i as usize).iter().map(|&v| T::from_f64(v as f64)));
            labels.push(self.labels[i as usize]);
        }
        let t = Tensor::new(
            vec![indices.len(), self.channels, self.height, self.width],
            data,
        )
        .expect("gather shape is consistent");
        (t, labels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.len() * self.sample_size() {
            return Err(Error::Parse(format!(
                "dataset holds {} pixel values, expected {}",
                self.images.len(),
                self.len() * self.sample_size()
            )));
        }
        if self.images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parse("pixel values outside [0,1]".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= self.num_classes) {
            return Err(Error::Parse(format!(
                "label {} exceeds class count {}",
                bad, self.num_classes
            )));
        }
        Ok(())
    }
}
