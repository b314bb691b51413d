//! Malicious-client local training rules.
//!
//! Four rules, forming a strict reduction chain so every variant can be
//! validated against the next simpler one:
//!   blackbox(b=0)        == benign step
//!   bapfl_plus(sigma=0)  == bapfl
//!   gen_bapfl(beta=0)    == bapfl_plus
//! Each holds bitwise under the fixed draw conventions below. Randomness
//! rules: the poison-subset draw consumes the client stream only when the
//! poison count is nonzero; local-segment noise is drawn from the client
//! stream only when sigma > 0 and the poison subset is non-empty; partner
//! selection and meta-batch draws live on separate streams owned by the
//! caller.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::optim::sgd_step;
use crate::params::{LayerId, ParamVector};
use crate::poison::{poison_batch, stamp_into, PoisonPolicy, PoisonSplit, TriggerSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Everything a malicious step needs besides the batch and the parameters.
pub struct AttackCtx<'a, T: Scalar> {
    pub spec: &'a ModelSpec,
    /// Shared (aggregated) layer ids.
    pub global: &'a BTreeSet<LayerId>,
    /// Every parameterized layer id.
    pub all: &'a BTreeSet<LayerId>,
    pub policy: &'a PoisonPolicy,
    pub trigger: &'a TriggerSpec,
    /// Already decayed for the current round.
    pub lr: T,
    pub weight_decay: T,
    /// Keep sampled noise in the local segment instead of restoring it.
    pub persistent_noise: bool,
}

/// Partner view captured at round start: the partner's private segment and a
/// clean meta-test batch drawn from the partner's shared pool.
pub struct PartnerBatch<'a, T: Scalar> {
    /// Partner parameters restricted to the non-shared layers.
    pub local: &'a ParamVector<T>,
    pub batch: &'a Tensor<T>,
}

/// One full-parameter SGD step on the mixed clean + poisoned batch.
/// All attack steps return the batch positions that were poisoned.
pub fn blackbox_step<T: Scalar>(
    ctx: &AttackCtx<'_, T>,
    params: &mut ParamVector<T>,
    batch_x: &Tensor<T>,
    batch_y: &[u8],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let split = poison_batch(batch_x, batch_y, ctx.policy, ctx.trigger, rng)?;
    if split.poison_y.is_empty() {
        let (_, grads) = ctx.spec.loss_and_grad(params, batch_x, batch_y)?;
        sgd_step(params, &grads, ctx.lr, ctx.weight_decay, ctx.all)?;
        return Ok(Vec::new());
    }
    let mut mixed = split.clean_x.data().to_vec();
    mixed.extend_from_slice(split.poison_x.data());
    let mut shape = batch_x.shape().to_vec();
    shape[0] = batch_y.len();
    let mixed_x = Tensor::new(shape, mixed)?;
    let mut mixed_y = split.clean_y.clone();
    mixed_y.extend_from_slice(&split.poison_y);
    let (_, grads) = ctx.spec.loss_and_grad(params, &mixed_x, &mixed_y)?;
    sgd_step(params, &grads, ctx.lr, ctx.weight_decay, ctx.all)?;
    Ok(split.poison_positions)
}

/// Clean full-parameter step, then a shared-segment-only step on the poisoned
/// subset with the private segment frozen.
pub fn bapfl_step<T: Scalar>(
    ctx: &AttackCtx<'_, T>,
    params: &mut ParamVector<T>,
    batch_x: &Tensor<T>,
    batch_y: &[u8],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    bapfl_plus_step(ctx, params, batch_x, batch_y, 0.0, rng)
}

/// As `bapfl_step`, but the poisoned-subset gradient is taken with transient
/// i.i.d. Normal(0, variance sigma) noise added to the private segment.
pub fn bapfl_plus_step<T: Scalar>(
    ctx: &AttackCtx<'_, T>,
    params: &mut ParamVector<T>,
    batch_x: &Tensor<T>,
    batch_y: &[u8],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let Some(split) = clean_step(ctx, params, batch_x, batch_y, rng)? else {
        return Ok(Vec::new());
    };
    let saved = noise_private_segment(ctx, params, sigma, rng);
    let (_, grads) =
        ctx.spec
            .loss_and_grad_filtered(params, &split.poison_x, &split.poison_y, Some(ctx.global))?;
    sgd_step(params, &grads, ctx.lr, ctx.weight_decay, ctx.global)?;
    restore_private_segment(ctx, params, saved);
    Ok(split.poison_positions)
}

/// As `bapfl_plus_step`, but the shared-segment update blends in a partner
/// gradient evaluated after a lookahead step: g_a on own poisoned data at
/// (shared, private + noise); g_b on the partner's poisoned batch at
/// (shared - mu * g_a, partner private); update by lr * (g_a + beta * g_b).
pub fn gen_bapfl_step<T: Scalar>(
    ctx: &AttackCtx<'_, T>,
    params: &mut ParamVector<T>,
    batch_x: &Tensor<T>,
    batch_y: &[u8],
    sigma: f64,
    beta: f64,
    mu: f64,
    partner: PartnerBatch<'_, T>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let Some(split) = clean_step(ctx, params, batch_x, batch_y, rng)? else {
        return Ok(Vec::new());
    };
    let saved = noise_private_segment(ctx, params, sigma, rng);
    let (_, g_a) =
        ctx.spec
            .loss_and_grad_filtered(params, &split.poison_x, &split.poison_y, Some(ctx.global))?;

    let spec = ctx.spec;
    let partner_local = partner.local;
    let result = meta_global_update(
        params,
        &g_a,
        |tilde| {
            let stamped = stamp_all(ctx, partner.batch)?;
            let target = vec![ctx.policy.target_label; stamped.shape()[0]];
            let mut at_partner = tilde.clone();
            at_partner.splice(partner_local)?;
            let (_, g_b) =
                spec.loss_and_grad_filtered(&at_partner, &stamped, &target, Some(ctx.global))?;
            Ok(g_b)
        },
        ctx.global,
        ctx.lr,
        ctx.weight_decay,
        T::from_f64(beta),
        T::from_f64(mu),
    );
    restore_private_segment(ctx, params, saved);
    result.map(|_| split.poison_positions)
}

/// First-order meta update of the shared segment:
///   tilde = shared - mu * g_a      (lookahead, no weight decay)
///   g_b   = grad at tilde          (supplied by the caller)
///   shared -= lr * (g_a + beta * g_b + weight_decay * shared)
/// `g_b_at` receives the full parameter vector with the lookahead applied.
/// With beta = 0 the evaluator is never called and the update is exactly the
/// plain step on g_a.
pub fn meta_global_update<T: Scalar>(
    params: &mut ParamVector<T>,
    g_a: &ParamVector<T>,
    g_b_at: impl FnOnce(&ParamVector<T>) -> Result<ParamVector<T>>,
    global: &BTreeSet<LayerId>,
    lr: T,
    weight_decay: T,
    beta: T,
    mu: T,
) -> Result<()> {
    if beta == T::zero() {
        return sgd_step(params, g_a, lr, weight_decay, global);
    }
    let mut tilde = params.clone();
    sgd_step(&mut tilde, g_a, mu, T::zero(), global)?;
    let g_b = g_b_at(&tilde)?;
    if !params.layout_matches(&g_b) {
        return Err(Error::InvalidArgument(
            "partner gradient layout does not match parameters".into(),
        ));
    }
    let mut total = g_a.clone();
    for (t, s) in total.values.iter_mut().zip(&g_b.values) {
        *t += beta * *s;
    }
    sgd_step(params, &total, lr, weight_decay, global)
}

/// Uniform draw over the other malicious clients.
pub fn select_partner(malicious: &[usize], self_id: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    let others: Vec<usize> = malicious.iter().copied().filter(|&m| m != self_id).collect();
    if others.is_empty() {
        return Err(Error::Config(
            "partner selection needs at least two malicious clients".into(),
        ));
    }
    use rand::Rng;
    Ok(others[rng.gen_range(0..others.len())])
}

/// Splits the batch and applies the clean full-parameter step. Returns the
/// split when a poison step should follow, None when the poison subset is
/// empty. An all-poison batch skips the clean step with a warning.
fn clean_step<T: Scalar>(
    ctx: &AttackCtx<'_, T>,
    params: &mut ParamVector<T>,
    batch_x: &Tensor<T>,
    batch_y: &[u8],
    rng: &mut ChaCha8Rng,
) -> Result<Option<PoisonSplit<T>>> {
    let split = poison_batch(batch_x, batch_y, ctx.policy, ctx.trigger, rng)?;
    if split.clean_y.is_empty() {
        log::warn!("entire batch poisoned; skipping the clean step");
    } else {
        let (_, grads) = ctx.spec.loss_and_grad(params, &split.clean_x, &split.clean_y)?;
        sgd_step(params, &grads, ctx.lr, ctx.weight_decay, ctx.all)?;
    }
    if split.poison_y.is_empty() {
        Ok(None)
    } else {
        Ok(Some(split))
    }
}

/// Adds Normal(0, variance sigma) noise to every private-segment coordinate.
/// Returns the pre-noise values unless the noise is persistent. Draws nothing
/// when sigma is zero.
fn noise_private_segment<T: Scalar>(
    ctx: &AttackCtx<'_, T>,
    params: &mut ParamVector<T>,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<T>> {
    if sigma == 0.0 {
        return None;
    }
    let normal = Normal::new(0.0, sigma.sqrt()).expect("finite std");
    let mut saved = Vec::new();
    for seg in &params.segments.clone() {
        if ctx.global.contains(&seg.layer_id) {
            continue;
        }
        let values = params.segment_mut(seg.layer_id);
        saved.extend_from_slice(values);
        for v in values {
            *v += T::from_f64(normal.sample(rng));
        }
    }
    if ctx.persistent_noise {
        None
    } else {
        Some(saved)
    }
}

fn restore_private_segment<T: Scalar>(
    ctx: &AttackCtx<'_, T>,
    params: &mut ParamVector<T>,
    saved: Option<Vec<T>>,
) {
    let Some(saved) = saved else { return };
    let mut taken = 0;
    for seg in &params.segments.clone() {
        if ctx.global.contains(&seg.layer_id) {
            continue;
        }
        let values = params.segment_mut(seg.layer_id);
        values.copy_from_slice(&saved[taken..taken + values.len()]);
        taken += values.len();
    }
}

/// Stamped copy of a whole [n, c, h, w] batch.
fn stamp_all<T: Scalar>(ctx: &AttackCtx<'_, T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
    let s = batch.shape();
    if s.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "expected an [n, c, h, w] batch, got {:?}",
            s
        )));
    }
    if s[0] == 0 {
        return Err(Error::Protocol("partner meta batch is empty".into()));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    ctx.trigger.validate(h, w)?;
    let mut out = batch.clone();
    let sample = c * h * w;
    for i in 0..n {
        stamp_into(&mut out.data_mut()[i * sample..(i + 1) * sample], c, h, w, ctx.trigger);
    }
    Ok(out)
}
