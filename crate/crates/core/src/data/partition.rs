//! Heterogeneous client allocation: per-class Dirichlet proportions over
//! clients, realized by largest-remainder rounding, then a stratified 80/20
//! train/test split inside each client.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{domain, stream};

const MAX_REDRAWS: u64 = 10;
const TEST_FRACTION: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct PartitionPlan {
    pub alpha: f64,
    pub n_clients: usize,
    pub seed: u64,
    pub train: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
}

impl PartitionPlan {
    pub fn shard_len(&self, client: usize) -> usize {
        self.train[client].len() + self.test[client].len()
    }

    /// Class counts over the client's full shard (train + test).
    pub fn class_histogram(&self, ds: &LabeledDataset, client: usize) -> Vec<usize> {
        let mut counts = vec![0usize; ds.num_classes];
        for &i in self.train[client].iter().chain(&self.test[client]) {
            counts[ds.labels[i as usize] as usize] += 1;
        }
        counts
    }
}

/// Shannon entropy (nats) of a count vector.
pub fn label_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / total as f64;
            h -= p * p.ln();
        }
    }
    h
}

/// floor(p_i * total) per cell plus one extra for the largest remainders;
/// ties resolve to the lower index.
fn largest_remainder(props: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = props.iter().map(|p| (p * total as f64) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut rema: Vec<(usize, f64)> = props
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p * total as f64 - counts[i] as f64))
        .collect();
    rema.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..total - assigned {
        counts[rema[k].0] += 1;
    }
    counts
}

pub fn dirichlet_partition(
    ds: &LabeledDataset,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha must be > 0".into()));
    }
    if n_clients < 2 {
        return Err(Error::InvalidArgument("need at least 2 clients".into()));
    }
    let mut by_class: Vec<Vec<u32>> = vec![Vec::new(); ds.num_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l as usize].push(i as u32);
    }
    if let Some(k) = by_class.iter().position(|v| v.is_empty()) {
        return Err(Error::InvalidArgument(format!("class {} has zero samples", k)));
    }

    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("bad alpha {}: {}", alpha, e)))?;

    for attempt in 0..MAX_REDRAWS {
        let mut rng = stream(seed, domain::PARTITION, attempt, 0);
        let mut shards: Vec<Vec<u32>> = vec![Vec::new(); n_clients];
        for idx in &by_class {
            let mut idx = idx.clone();
            idx.shuffle(&mut rng);
            // Dirichlet(alpha) over clients via normalized Gamma draws
            let mut props: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = props.iter().sum();
            if total <= 0.0 {
                continue; // degenerate draw; next class redraw would also fail, retry attempt
            }
            for p in &mut props {
                *p /= total;
            }
            let counts = largest_remainder(&props, idx.len());
            let mut at = 0usize;
            for (client, &take) in counts.iter().enumerate() {
                shards[client].extend_from_slice(&idx[at..at + take]);
                at += take;
            }
        }
        if let Some(plan) = split_shards(ds, shards, n_clients, alpha, seed) {
            return Ok(plan);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not give every client a nonempty train and test split after {} attempts \
         (n_clients={}, alpha={}); dataset too small for this configuration",
        MAX_REDRAWS, n_clients, alpha
    )))
}

/// Stratified 80/20 split per client. Returns None if any client cannot get
/// both a nonempty train and test list (caller redraws).
fn split_shards(
    ds: &LabeledDataset,
    shards: Vec<Vec<u32>>,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Option<PartitionPlan> {
    let mut train = Vec::with_capacity(n_clients);
    let mut test = Vec::with_capacity(n_clients);
    for shard in &shards {
        if shard.len() < 2 {
            return None;
        }
        let mut by_class: Vec<Vec<u32>> = vec![Vec::new(); ds.num_classes];
        for &i in shard {
            by_class[ds.labels[i as usize] as usize].push(i);
        }
        let mut tr: Vec<u32> = Vec::new();
        let mut te: Vec<u32> = Vec::new();
        for members in &by_class {
            let n_test = (TEST_FRACTION * members.len() as f64).round() as usize;
            let cut = members.len() - n_test;
            tr.extend_from_slice(&members[..cut]);
            te.extend_from_slice(&members[cut..]);
        }
        if te.is_empty() {
            // move one sample of the client's largest class over
            let largest = by_class
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
                .map(|(k, _)| k)?;
            let moved = by_class[largest].last().copied()?;
            tr.retain(|&i| i != moved);
            te.push(moved);
        }
        if tr.is_empty() || te.is_empty() {
            return None;
        }
        train.push(tr);
        test.push(te);
    }
    Some(PartitionPlan { alpha, n_clients, seed, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn dataset() -> LabeledDataset {
        synth_blobs(10, 100, 16, 42).unwrap()
    }

    #[test]
    fn covers_everything_disjointly() {
        let ds = dataset();
        for alpha in [0.5, 5.0] {
            let plan = dirichlet_partition(&ds, 20, alpha, 7).unwrap();
            let mut seen = vec![false; ds.len()];
            for c in 0..20 {
                for &i in plan.train[c].iter().chain(&plan.test[c]) {
                    assert!(!seen[i as usize], "index {} assigned twice", i);
                    seen[i as usize] = true;
                }
                assert!(!plan.train[c].is_empty());
                assert!(!plan.test[c].is_empty());
            }
            assert!(seen.iter().all(|&s| s), "some samples unassigned");
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let ds = dataset();
        let a = dirichlet_partition(&ds, 10, 0.5, 3).unwrap();
        let b = dirichlet_partition(&ds, 10, 0.5, 3).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = dirichlet_partition(&ds, 10, 0.5, 4).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn high_alpha_is_near_uniform() {
        let ds = dataset();
        let plan = dirichlet_partition(&ds, 10, 1e6, 5).unwrap();
        for c in 0..10 {
            let hist = plan.class_histogram(&ds, c);
            for &count in &hist {
                // 100 samples/class over 10 clients -> about 10 each
                assert!((count as f64 - 10.0).abs() <= 2.0, "histogram {:?}", hist);
            }
        }
    }

    #[test]
    fn low_alpha_more_concentrated_than_high() {
        let ds = dataset();
        let mean_entropy = |alpha: f64| -> f64 {
            let mut total = 0.0;
            for seed in [1u64, 2, 3] {
                let plan = dirichlet_partition(&ds, 20, alpha, seed).unwrap();
                for c in 0..20 {
                    total += label_entropy(&plan.class_histogram(&ds, c));
                }
            }
            total / (3.0 * 20.0)
        };
        let low = mean_entropy(0.5);
        let high = mean_entropy(5.0);
        assert!(
            low < high,
            "entropy at alpha=0.5 ({:.3}) should be below alpha=5 ({:.3})",
            low,
            high
        );
    }

    #[test]
    fn largest_remainder_exact() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[0.2, 0.3, 0.5], 10), vec![2, 3, 5]);
        assert_eq!(largest_remainder(&[1.0, 0.0], 4), vec![4, 0]);
    }
}
