//! Defenses: server-side norm clipping of shared-segment deltas, and the two
//! post-training client-side repairs (full-model fine-tuning and private
//! segment reinitialization).

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;

use crate::data::{visit_batch, visit_order, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::optim::sgd_step;
use crate::params::{LayerId, ParamVector};
use crate::scalar::Scalar;

/// Scales `delta` down to `threshold` when its L2 norm exceeds it; otherwise
/// leaves it untouched bitwise. The committed values are guaranteed to pass a
/// fresh norm check, so a second application never changes anything.
pub fn norm_clip<T: Scalar>(delta: &mut ParamVector<T>, threshold: f64) {
    let norm = delta.l2_norm();
    if norm <= threshold || norm == 0.0 {
        return;
    }
    let original = delta.values.clone();
    let eps = T::epsilon().as_f64();
    let mut scale = threshold / norm;
    for k in 0..40u32 {
        for (out, v) in delta.values.iter_mut().zip(&original) {
            *out = T::from_f64(v.as_f64() * scale);
        }
        if delta.l2_norm() <= threshold {
            return;
        }
        // Rounding during the scale left the norm a hair over; shave a few
        // ulps more each try.
        scale *= 1.0 - eps * f64::from(1u32 << k.min(20));
    }
    unreachable!("clip scale failed to converge");
}

/// Post-training repair: SGD over the client's own clean shard, updating the
/// full parameter vector.
pub fn fine_tune<T: Scalar>(
    spec: &ModelSpec,
    params: &mut ParamVector<T>,
    ds: &LabeledDataset,
    shard: &[u32],
    iters: usize,
    batch_size: usize,
    lr: T,
    weight_decay: T,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    tune_loop(spec, params, &spec.layer_ids(), ds, shard, iters, batch_size, lr, weight_decay, rng)
}

/// Post-training repair: redraws the private segment from the initialization
/// scheme, then retrains only that segment. The shared segment is bitwise
/// untouched.
pub fn simple_tune<T: Scalar>(
    spec: &ModelSpec,
    params: &mut ParamVector<T>,
    local: &BTreeSet<LayerId>,
    ds: &LabeledDataset,
    shard: &[u32],
    iters: usize,
    batch_size: usize,
    lr: T,
    weight_decay: T,
    init_rng: &mut ChaCha8Rng,
    tune_rng: &mut ChaCha8Rng,
) -> Result<()> {
    let fresh: ParamVector<T> = spec.init_params(init_rng);
    params.splice(&fresh.restrict(local))?;
    tune_loop(spec, params, local, ds, shard, iters, batch_size, lr, weight_decay, tune_rng)
}

fn tune_loop<T: Scalar>(
    spec: &ModelSpec,
    params: &mut ParamVector<T>,
    filter: &BTreeSet<LayerId>,
    ds: &LabeledDataset,
    shard: &[u32],
    iters: usize,
    batch_size: usize,
    lr: T,
    weight_decay: T,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if shard.is_empty() {
        return Err(Error::Protocol("tuning over an empty shard".into()));
    }
    if iters == 0 {
        return Ok(());
    }
    let order = visit_order(shard, rng);
    for t in 0..iters {
        let idx = visit_batch(&order, t, batch_size);
        let (x, y) = ds.gather::<T>(&idx);
        let (_, grads) = spec.loss_and_grad(params, &x, &y)?;
        sgd_step(params, &grads, lr, weight_decay, filter)?;
    }
    Ok(())
}
