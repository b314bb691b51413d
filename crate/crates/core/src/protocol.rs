//! Round orchestration: client sampling, broadcast, local training (benign
//! or malicious), per-update defense transforms, weighted aggregation, and
//! the evaluation cadence.
//!
//! Determinism contract: every random decision draws from its own keyed
//! stream (see the rng module), so a run's outputs are byte-identical for a
//! given seed regardless of the worker count.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::attacks::{
    bapfl_plus_step, bapfl_step, blackbox_step, gen_bapfl_step, select_partner, AttackCtx,
    PartnerBatch,
};
use crate::config::{AttackKind, DefenseKind, PflMethod, RunConfig};
use crate::data::{visit_batch, visit_order, LabeledDataset, PartitionPlan};
use crate::defense::{fine_tune, norm_clip, simple_tune};
use crate::error::{Error, Result};
use crate::eval::{compute_asr, compute_mta, EvalRecord, Role};
use crate::model::ModelSpec;
use crate::optim::{lr_at_round, sgd_step};
use crate::params::{LayerId, ParamPartition, ParamVector};
use crate::rng::{domain, stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Shared/private layer split for a partial model-sharing method: fedper
/// shares the convolutional stack, lg_fedavg shares the dense head.
pub fn make_partition(method: PflMethod, spec: &ModelSpec) -> Result<ParamPartition> {
    let mut conv = BTreeSet::new();
    let mut dense = BTreeSet::new();
    let mut ordinal = 0usize;
    for layer in spec.layers() {
        match layer {
            crate::model::Layer::Conv { .. } => {
                conv.insert(ordinal);
                ordinal += 1;
            }
            crate::model::Layer::Dense { .. } => {
                dense.insert(ordinal);
                ordinal += 1;
            }
            _ => {}
        }
    }
    let (global, local) = match method {
        PflMethod::FedPer => (conv, dense),
        PflMethod::LgFedavg => (dense, conv),
    };
    if global.is_empty() || local.is_empty() {
        return Err(Error::Config(format!(
            "{method:?} needs both convolutional and dense layers in the model"
        )));
    }
    ParamPartition::new(global, local)
}

/// Uniform sample of `m` distinct client ids, ascending.
pub fn sample_clients(n_clients: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut picked = rand::seq::index::sample(rng, n_clients, m).into_vec();
    picked.sort_unstable();
    picked
}

/// Weighted mean of shared-segment updates, weights proportional to shard
/// sizes. Updates are re-sorted by client id and accumulated at 64-bit so the
/// result does not depend on arrival order.
pub fn aggregate<T: Scalar>(
    updates: Vec<(usize, ParamVector<T>)>,
    shard_sizes: &BTreeMap<usize, usize>,
) -> Result<ParamVector<T>> {
    if updates.is_empty() {
        return Err(Error::Protocol("aggregation over zero updates".into()));
    }
    let mut updates = updates;
    updates.sort_by_key(|(id, _)| *id);
    let total: f64 = updates
        .iter()
        .map(|(id, _)| shard_sizes.get(id).copied().unwrap_or(0) as f64)
        .sum();
    if total <= 0.0 {
        return Err(Error::Protocol("aggregation weights sum to zero".into()));
    }

    let layout = updates[0].1.segments.clone();
    let mut acc = vec![0.0f64; updates[0].1.values.len()];
    let mut weight_sum = 0.0f64;
    for (id, update) in &updates {
        if update.segments != layout {
            return Err(Error::Protocol(format!(
                "client {id} update layout does not match"
            )));
        }
        let w = shard_sizes.get(id).copied().unwrap_or(0) as f64 / total;
        weight_sum += w;
        for (a, v) in acc.iter_mut().zip(&update.values) {
            *a += w * v.as_f64();
        }
    }
    debug_assert!((weight_sum - 1.0).abs() < 1e-9);

    let mut out = updates.into_iter().next().unwrap().1;
    for (o, a) in out.values.iter_mut().zip(&acc) {
        *o = T::from_f64(*a);
    }
    Ok(out)
}

/// Observation points for replay-style tests. The hook fires for malicious
/// clients whenever an iteration applies a full-parameter step over a clean
/// gather: benign-mode iterations (whole batch) and the clean half of the
/// bapfl-family steps. Blackbox iterations with a nonzero poison count train
/// on a mixed batch and do not fire. `global_before` is the client's shared
/// segment right before the step.
pub trait RunHooks<T: Scalar> {
    const ACTIVE: bool = false;
    fn on_malicious_clean_step(
        &mut self,
        _round: usize,
        _client: usize,
        _iter: usize,
        _global_before: &ParamVector<T>,
        _clean_idx: &[u32],
    ) {
    }
}

pub struct NoHooks;

impl<T: Scalar> RunHooks<T> for NoHooks {}

#[derive(Clone, Debug)]
pub struct ClientRecord<T: Scalar> {
    pub id: usize,
    pub train_idx: Vec<u32>,
    pub test_idx: Vec<u32>,
    /// Restricted to the non-shared layers.
    pub local_params: ParamVector<T>,
    pub role: Role,
    /// Persistent stream driving this client's batch order, poison subset
    /// draws, and noise.
    pub rng: ChaCha8Rng,
    /// Train-shard subset visible to co-attackers (gen_bapfl only).
    pub shared_pool: Vec<u32>,
}

pub struct RunOutcome<T: Scalar> {
    /// Training-phase evaluations, sorted by (round, client_id).
    pub records: Vec<EvalRecord>,
    /// Post-defense evaluations of benign clients (fine_tune / simple_tune),
    /// recorded at round total_rounds + 1.
    pub post_defense: Option<Vec<EvalRecord>>,
    /// Final server parameters, restricted to shared layers.
    pub final_global: ParamVector<T>,
    pub clients: Vec<ClientRecord<T>>,
    /// (round, client_id, pre-clip L2 of the shared-segment delta) for every
    /// benign participant; input for choosing clip thresholds.
    pub benign_norms: Vec<(usize, usize, f64)>,
    pub partition: PartitionPlan,
    pub model: ModelSpec,
}

pub fn run_experiment<T: Scalar>(cfg: &RunConfig, seed: u64) -> Result<RunOutcome<T>> {
    run_experiment_with_hooks(cfg, seed, &mut NoHooks)
}

struct RoundCtx<'a, T: Scalar> {
    spec: &'a ModelSpec,
    ds: &'a LabeledDataset,
    global_set: &'a BTreeSet<LayerId>,
    local_set: &'a BTreeSet<LayerId>,
    all_set: &'a BTreeSet<LayerId>,
    cfg: &'a RunConfig,
    seed: u64,
    round: usize,
    lr: f64,
    attack_active: bool,
    /// Per selected attacker: the partner's private segment snapshot and
    /// shared pool, captured at round start.
    partners: BTreeMap<usize, (ParamVector<T>, Vec<u32>)>,
}

pub fn run_experiment_with_hooks<T: Scalar, H: RunHooks<T>>(
    cfg: &RunConfig,
    seed: u64,
    hooks: &mut H,
) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    let workers = cfg.protocol.workers;
    if H::ACTIVE && workers > 1 {
        return Err(Error::InvalidArgument(
            "replay hooks require workers = 1".into(),
        ));
    }

    let ds = cfg.dataset.load()?;
    ds.validate()?;
    if ds.height != ds.width {
        return Err(Error::Config(format!(
            "expected square images, got {}x{}",
            ds.height, ds.width
        )));
    }
    let spec = ModelSpec::convnet_for(ds.height, ds.num_classes)?;
    let partition = make_partition(cfg.protocol.pfl_method, &spec)?;
    let global_set = partition.global_layers.clone();
    let local_set = partition.local_layers.clone();
    let all_set = spec.layer_ids();

    let plan = crate::data::dirichlet_partition(
        &ds,
        cfg.partition.n_clients,
        cfg.partition.alpha,
        cfg.partition.seed.unwrap_or(seed),
    )?;

    let malicious: Vec<usize> = if cfg.attack.kind == AttackKind::None {
        Vec::new()
    } else if let Some(ids) = &cfg.attack.malicious_ids {
        let mut ids = ids.clone();
        ids.sort_unstable();
        ids
    } else {
        sample_clients(
            cfg.partition.n_clients,
            cfg.attack.n_malicious,
            &mut stream(seed, domain::MALSEL, 0, 0),
        )
    };

    let init: ParamVector<T> = spec.init_params(&mut stream(seed, domain::INIT, 0, 0));
    let mut global = init.restrict(&global_set);

    let mut clients: Vec<ClientRecord<T>> = (0..cfg.partition.n_clients)
        .map(|id| {
            let is_malicious = malicious.binary_search(&id).is_ok();
            let train_idx = plan.train[id].clone();
            let shared_pool = if is_malicious
                && cfg.attack.kind == AttackKind::GenBapfl
                && !train_idx.is_empty()
            {
                let k = ((train_idx.len() as f64 * cfg.attack.partner_share_fraction).ceil()
                    as usize)
                    .clamp(1, train_idx.len());
                let mut share_rng = stream(seed, domain::SHARE, id as u64, 0);
                let mut picks =
                    rand::seq::index::sample(&mut share_rng, train_idx.len(), k).into_vec();
                picks.sort_unstable();
                picks.into_iter().map(|p| train_idx[p]).collect()
            } else {
                Vec::new()
            };
            ClientRecord {
                id,
                train_idx,
                test_idx: plan.test[id].clone(),
                local_params: init.restrict(&local_set),
                role: if is_malicious { Role::Malicious } else { Role::Benign },
                rng: stream(seed, domain::CLIENT, id as u64, 0),
                shared_pool,
            }
        })
        .collect();

    let shard_sizes: BTreeMap<usize, usize> =
        clients.iter().map(|c| (c.id, c.train_idx.len())).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Protocol(format!("worker pool: {e}")))?;

    let mut records: Vec<EvalRecord> = Vec::new();
    let mut benign_norms: Vec<(usize, usize, f64)> = Vec::new();

    for round in 0..cfg.protocol.total_rounds {
        let mut server_rng = stream(seed, domain::SERVER, round as u64, 0);
        let sampled = sample_clients(
            cfg.partition.n_clients,
            cfg.protocol.participants_per_round,
            &mut server_rng,
        );
        let attack_active = cfg.attack.kind != AttackKind::None && round >= cfg.attack.start_round;
        let selected = if attack_active && cfg.attack.force_include {
            force_include(&sampled, &malicious, cfg.protocol.participants_per_round)
        } else {
            sampled
        };

        // Partner snapshots before anyone trains this round.
        let mut partners: BTreeMap<usize, (ParamVector<T>, Vec<u32>)> = BTreeMap::new();
        if attack_active && cfg.attack.kind == AttackKind::GenBapfl {
            for &id in &selected {
                if malicious.binary_search(&id).is_err() {
                    continue;
                }
                let mut partner_rng = stream(seed, domain::PARTNER, round as u64, id as u64);
                let partner = select_partner(&malicious, id, &mut partner_rng)?;
                partners.insert(
                    id,
                    (
                        clients[partner].local_params.clone(),
                        clients[partner].shared_pool.clone(),
                    ),
                );
            }
        }

        let ctx = RoundCtx {
            spec: &spec,
            ds: &ds,
            global_set: &global_set,
            local_set: &local_set,
            all_set: &all_set,
            cfg,
            seed,
            round,
            lr: lr_at_round(&cfg.optimizer, round),
            attack_active,
            partners,
        };

        let broadcast = global.clone();
        let mut participants: Vec<&mut ClientRecord<T>> = clients
            .iter_mut()
            .filter(|c| selected.binary_search(&c.id).is_ok())
            .collect();

        let updates: Vec<(usize, ParamVector<T>)> = if workers > 1 {
            pool.install(|| {
                participants
                    .par_iter_mut()
                    .map(|client| local_train(&ctx, *client, &broadcast, &mut NoHooks))
                    .collect::<Result<Vec<_>>>()
            })?
        } else {
            let mut out = Vec::with_capacity(participants.len());
            for client in &mut participants {
                out.push(local_train(&ctx, client, &broadcast, hooks)?);
            }
            out
        };
        drop(participants);

        for (id, update) in &updates {
            if clients[*id].role == Role::Benign {
                let mut delta = 0.0f64;
                for (u, b) in update.values.iter().zip(&broadcast.values) {
                    let d = u.as_f64() - b.as_f64();
                    delta += d * d;
                }
                benign_norms.push((round, *id, delta.sqrt()));
            }
        }

        let updates = if cfg.defense.kind == DefenseKind::NormClip {
            let threshold = cfg.defense.clip_threshold.expect("validated");
            updates
                .into_iter()
                .map(|(id, update)| {
                    let mut delta = update;
                    for (d, b) in delta.values.iter_mut().zip(&broadcast.values) {
                        *d -= *b;
                    }
                    norm_clip(&mut delta, threshold);
                    for (d, b) in delta.values.iter_mut().zip(&broadcast.values) {
                        *d += *b;
                    }
                    (id, delta)
                })
                .collect()
        } else {
            updates
        };

        global = aggregate(updates, &shard_sizes)
            .map_err(|e| Error::Protocol(format!("round {round}: {e}")))?;

        if (round + 1) % cfg.eval.eval_every == 0 {
            let evals = evaluate_all(&pool, workers, &spec, &ds, cfg, &global, &clients, round + 1)?;
            let benign: Vec<&EvalRecord> =
                evals.iter().filter(|r| r.role == Role::Benign).collect();
            let mta = benign.iter().map(|r| r.mta).sum::<f64>() / benign.len().max(1) as f64;
            let asr: Vec<f64> = benign.iter().filter_map(|r| r.asr).collect();
            log::info!(
                "seed {seed} round {}: benign mta {mta:.2} asr {:.2}",
                round + 1,
                asr.iter().sum::<f64>() / asr.len().max(1) as f64
            );
            records.extend(evals);
        }
    }

    let post_defense = match cfg.defense.kind {
        DefenseKind::FineTune | DefenseKind::SimpleTune => Some(apply_client_defense(
            &pool, workers, &spec, &ds, cfg, seed, &global, &global_set, &local_set,
            &mut clients,
        )?),
        _ => None,
    };

    Ok(RunOutcome {
        records,
        post_defense,
        final_global: global,
        clients,
        benign_norms,
        partition: plan,
        model: spec,
    })
}

/// Replaces enough non-malicious picks to seat every attacker, keeping the
/// sampled non-malicious clients' order of preference.
fn force_include(sampled: &[usize], malicious: &[usize], m: usize) -> Vec<usize> {
    let mut selected: Vec<usize> = malicious.to_vec();
    for &id in sampled {
        if selected.len() == m {
            break;
        }
        if malicious.binary_search(&id).is_err() {
            selected.push(id);
        }
    }
    selected.sort_unstable();
    selected
}

fn local_train<T: Scalar, H: RunHooks<T>>(
    ctx: &RoundCtx<'_, T>,
    client: &mut ClientRecord<T>,
    broadcast: &ParamVector<T>,
    hooks: &mut H,
) -> Result<(usize, ParamVector<T>)> {
    if client.train_idx.is_empty() {
        log::warn!("round {} client {}: empty shard, skipping", ctx.round, client.id);
        return Ok((client.id, broadcast.clone()));
    }
    train_visit(ctx, client, broadcast, hooks)
        .map_err(|e| Error::Protocol(format!("round {} client {}: {e}", ctx.round, client.id)))
}

fn train_visit<T: Scalar, H: RunHooks<T>>(
    ctx: &RoundCtx<'_, T>,
    client: &mut ClientRecord<T>,
    broadcast: &ParamVector<T>,
    hooks: &mut H,
) -> Result<(usize, ParamVector<T>)> {
    let cfg = ctx.cfg;
    let lr = T::from_f64(ctx.lr);
    let wd = T::from_f64(cfg.optimizer.weight_decay);
    let attacking = ctx.attack_active && client.role == Role::Malicious;

    let mut full = ParamVector::zeros_like(ctx.spec.param_layout());
    full.splice(broadcast)?;
    full.splice(&client.local_params)?;

    let attack_ctx = AttackCtx {
        spec: ctx.spec,
        global: ctx.global_set,
        all: ctx.all_set,
        policy: &cfg.attack.poison,
        trigger: &cfg.attack.trigger,
        lr,
        weight_decay: wd,
        persistent_noise: cfg.attack.persistent_noise,
    };

    let mut meta_rng = stream(ctx.seed, domain::META, client.id as u64, ctx.round as u64);
    let order = visit_order(&client.train_idx, &mut client.rng);

    for t in 0..cfg.protocol.local_iters {
        let batch_idx = visit_batch(&order, t, cfg.protocol.batch_size);
        let (x, y) = ctx.ds.gather::<T>(&batch_idx);

        let global_before = if H::ACTIVE && client.role == Role::Malicious {
            Some(full.restrict(ctx.global_set))
        } else {
            None
        };

        let poisoned_positions: Option<Vec<usize>> = if !attacking {
            let (_, grads) = ctx.spec.loss_and_grad(&full, &x, &y)?;
            sgd_step(&mut full, &grads, lr, wd, ctx.all_set)?;
            Some(Vec::new())
        } else {
            match cfg.attack.kind {
                AttackKind::Blackbox => {
                    let pos = blackbox_step(&attack_ctx, &mut full, &x, &y, &mut client.rng)?;
                    // Mixed-batch steps are not clean-replayable.
                    if pos.is_empty() {
                        Some(pos)
                    } else {
                        None
                    }
                }
                AttackKind::Bapfl => {
                    Some(bapfl_step(&attack_ctx, &mut full, &x, &y, &mut client.rng)?)
                }
                AttackKind::BapflPlus => Some(bapfl_plus_step(
                    &attack_ctx,
                    &mut full,
                    &x,
                    &y,
                    cfg.attack.sigma,
                    &mut client.rng,
                )?),
                AttackKind::GenBapfl => {
                    let (partner_local, partner_pool) =
                        ctx.partners.get(&client.id).ok_or_else(|| {
                            Error::Protocol(format!("client {} has no partner", client.id))
                        })?;
                    let k = cfg.attack.poison.poisoned_per_batch.min(partner_pool.len());
                    let partner_x = if k == 0 {
                        Tensor::new(
                            vec![0, ctx.ds.channels, ctx.ds.height, ctx.ds.width],
                            Vec::new(),
                        )?
                    } else {
                        let mut picks =
                            rand::seq::index::sample(&mut meta_rng, partner_pool.len(), k)
                                .into_vec();
                        picks.sort_unstable();
                        let idx: Vec<u32> = picks.into_iter().map(|p| partner_pool[p]).collect();
                        ctx.ds.gather::<T>(&idx).0
                    };
                    Some(gen_bapfl_step(
                        &attack_ctx,
                        &mut full,
                        &x,
                        &y,
                        cfg.attack.sigma,
                        cfg.attack.beta,
                        cfg.attack.mu,
                        PartnerBatch { local: partner_local, batch: &partner_x },
                        &mut client.rng,
                    )?)
                }
                AttackKind::None => unreachable!("attacking implies a kind"),
            }
        };

        if H::ACTIVE && client.role == Role::Malicious {
            if let Some(positions) = poisoned_positions {
                let clean_idx: Vec<u32> = batch_idx
                    .iter()
                    .enumerate()
                    .filter(|(p, _)| !positions.contains(p))
                    .map(|(_, &i)| i)
                    .collect();
                if !clean_idx.is_empty() {
                    hooks.on_malicious_clean_step(
                        ctx.round,
                        client.id,
                        t,
                        global_before.as_ref().expect("captured when active"),
                        &clean_idx,
                    );
                }
            }
        }
    }

    client.local_params = full.restrict(ctx.local_set);
    Ok((client.id, full.restrict(ctx.global_set)))
}

#[allow(clippy::too_many_arguments)]
fn evaluate_all<T: Scalar>(
    pool: &rayon::ThreadPool,
    workers: usize,
    spec: &ModelSpec,
    ds: &LabeledDataset,
    cfg: &RunConfig,
    global: &ParamVector<T>,
    clients: &[ClientRecord<T>],
    recorded_round: usize,
) -> Result<Vec<EvalRecord>> {
    let eval_one = |client: &ClientRecord<T>| -> Result<EvalRecord> {
        let mut full = ParamVector::zeros_like(spec.param_layout());
        full.splice(global)?;
        full.splice(&client.local_params)?;
        let (mta, n_mta) = compute_mta(spec, &full, ds, &client.test_idx)?;
        let eligible = client
            .test_idx
            .iter()
            .filter(|&&i| ds.labels[i as usize] != cfg.attack.poison.target_label)
            .count();
        let (asr, n_asr) = if eligible == 0 {
            (None, 0)
        } else {
            let (a, n) = compute_asr(
                spec,
                &full,
                ds,
                &client.test_idx,
                &cfg.attack.trigger,
                &cfg.attack.poison,
                client.id,
            )?;
            (Some(a), n)
        };
        Ok(EvalRecord {
            round: recorded_round,
            client_id: client.id,
            role: client.role,
            asr,
            mta,
            n_asr,
            n_mta,
        })
    };
    if workers > 1 {
        pool.install(|| clients.par_iter().map(eval_one).collect())
    } else {
        clients.iter().map(eval_one).collect()
    }
}

/// Runs the configured post-training client-side defense on every benign
/// client and re-evaluates them at round total_rounds + 1.
#[allow(clippy::too_many_arguments)]
fn apply_client_defense<T: Scalar>(
    pool: &rayon::ThreadPool,
    workers: usize,
    spec: &ModelSpec,
    ds: &LabeledDataset,
    cfg: &RunConfig,
    seed: u64,
    global: &ParamVector<T>,
    global_set: &BTreeSet<LayerId>,
    local_set: &BTreeSet<LayerId>,
    clients: &mut [ClientRecord<T>],
) -> Result<Vec<EvalRecord>> {
    let last_round = cfg.protocol.total_rounds.saturating_sub(1);
    let lr = T::from_f64(lr_at_round(&cfg.optimizer, last_round));
    let wd = T::from_f64(cfg.optimizer.weight_decay);

    let tune_one = |client: &mut ClientRecord<T>| -> Result<EvalRecord> {
        let mut full = ParamVector::zeros_like(spec.param_layout());
        full.splice(global)?;
        full.splice(&client.local_params)?;

        let mut tune_rng = stream(seed, domain::TUNE, client.id as u64, 0);
        match cfg.defense.kind {
            DefenseKind::FineTune => {
                fine_tune(
                    spec,
                    &mut full,
                    ds,
                    &client.train_idx,
                    cfg.defense.fine_tune_iters,
                    cfg.protocol.batch_size,
                    lr,
                    wd,
                    &mut tune_rng,
                )?;
            }
            DefenseKind::SimpleTune => {
                let fresh_seed = client.rng.gen::<u64>();
                let mut init_rng = stream(fresh_seed, domain::INIT, client.id as u64, 1);
                simple_tune(
                    spec,
                    &mut full,
                    local_set,
                    ds,
                    &client.train_idx,
                    cfg.defense.simple_tune_iters,
                    cfg.protocol.batch_size,
                    lr,
                    wd,
                    &mut init_rng,
                    &mut tune_rng,
                )?;
                debug_assert!(full.restrict(global_set).bits_eq(global));
            }
            _ => unreachable!("only client-side defenses reach here"),
        }
        client.local_params = full.restrict(local_set);

        let (mta, n_mta) = compute_mta(spec, &full, ds, &client.test_idx)?;
        let eligible = client
            .test_idx
            .iter()
            .filter(|&&i| ds.labels[i as usize] != cfg.attack.poison.target_label)
            .count();
        let (asr, n_asr) = if eligible == 0 {
            (None, 0)
        } else {
            let (a, n) = compute_asr(
                spec,
                &full,
                ds,
                &client.test_idx,
                &cfg.attack.trigger,
                &cfg.attack.poison,
                client.id,
            )?;
            (Some(a), n)
        };
        Ok(EvalRecord {
            round: cfg.protocol.total_rounds + 1,
            client_id: client.id,
            role: client.role,
            asr,
            mta,
            n_asr,
            n_mta,
        })
    };

    let mut benign: Vec<&mut ClientRecord<T>> =
        clients.iter_mut().filter(|c| c.role == Role::Benign).collect();
    if workers > 1 {
        pool.install(|| benign.par_iter_mut().map(|c| tune_one(c)).collect())
    } else {
        benign.iter_mut().map(|c| tune_one(c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;
    use crate::params::Segment;

    fn synth_config(text: &str) -> RunConfig {
        RunConfig::from_json(text).unwrap()
    }

    #[test]
    fn fedper_shares_convolutions_and_lgfedavg_the_complement() {
        let spec = ModelSpec::convnet(10);
        let fp = make_partition(PflMethod::FedPer, &spec).unwrap();
        assert_eq!(fp.global_layers, [0, 1].into_iter().collect());
        assert_eq!(fp.local_layers, [2, 3].into_iter().collect());
        let lg = make_partition(PflMethod::LgFedavg, &spec).unwrap();
        assert_eq!(lg.global_layers, fp.local_layers);
        assert_eq!(lg.local_layers, fp.global_layers);

        let dense_only = ModelSpec::dense_net((1, 8, 8), &[16], 4).unwrap();
        assert!(make_partition(PflMethod::FedPer, &dense_only).is_err());
    }

    #[test]
    fn sampling_covers_edge_sizes_and_is_roughly_uniform() {
        let mut rng = stream(1, domain::SERVER, 0, 0);
        assert_eq!(sample_clients(4, 4, &mut rng), vec![0, 1, 2, 3]);
        assert_eq!(sample_clients(7, 1, &mut rng).len(), 1);

        let mut counts = vec![0usize; 50];
        for round in 0..10_000u64 {
            let mut r = stream(9, domain::SERVER, round, 0);
            for id in sample_clients(50, 5, &mut r) {
                counts[id] += 1;
            }
        }
        for (id, &n) in counts.iter().enumerate() {
            let freq = n as f64 / 10_000.0;
            assert!((freq - 0.1).abs() < 0.015, "client {id} freq {freq}");
        }
    }

    #[test]
    fn aggregation_weighted_mean_and_order_invariance() {
        let layout = vec![Segment { layer_id: 0, offset: 0, len: 2 }];
        let mk = |a: f64, b: f64| {
            let mut p = ParamVector::<f64>::zeros_like(&layout);
            p.values = vec![a, b];
            p
        };
        let sizes: BTreeMap<usize, usize> = [(0, 1), (1, 3)].into_iter().collect();

        let out = aggregate(vec![(0, mk(0.0, 2.0)), (1, mk(4.0, 2.0))], &sizes).unwrap();
        assert_eq!(out.values, vec![3.0, 2.0]);

        let fwd = aggregate(vec![(0, mk(1.0, -1.0)), (1, mk(0.5, 3.0))], &sizes).unwrap();
        let rev = aggregate(vec![(1, mk(0.5, 3.0)), (0, mk(1.0, -1.0))], &sizes).unwrap();
        assert!(fwd.bits_eq(&rev));

        let same = aggregate(vec![(0, mk(0.25, -1.5)), (1, mk(0.25, -1.5))], &sizes).unwrap();
        assert!((same.values[0] - 0.25).abs() < 1e-12);
        assert!((same.values[1] + 1.5).abs() < 1e-12);

        assert!(aggregate::<f64>(Vec::new(), &sizes).is_err());
    }

    #[test]
    fn force_include_seats_attackers_and_keeps_sampled_order() {
        assert_eq!(force_include(&[3, 8, 12, 20, 41], &[5, 9], 5), vec![3, 5, 8, 9, 12]);
        // Attacker already sampled: no duplicate seat.
        assert_eq!(force_include(&[3, 5, 12, 20, 41], &[5, 9], 5), vec![3, 5, 9, 12, 20]);
        // All seats go to attackers when m equals their count.
        assert_eq!(force_include(&[1, 2], &[7, 8], 2), vec![7, 8]);
    }

    fn tiny_run_config() -> RunConfig {
        synth_config(
            r#"{
            "dataset": {"kind": "synth", "classes": 4, "samples_per_class": 30, "side": 8},
            "partition": {"n_clients": 4, "alpha": 5.0},
            "protocol": {"total_rounds": 4, "local_iters": 3, "batch_size": 8,
                         "participants_per_round": 2},
            "eval": {"eval_every": 2},
            "seeds": [1]
        }"#,
        )
    }

    #[test]
    fn zero_rounds_returns_initial_state_and_empty_log() {
        let mut cfg = tiny_run_config();
        cfg.protocol.total_rounds = 0;
        let seed = 3;
        let out: RunOutcome<f32> = run_experiment(&cfg, seed).unwrap();

        let spec = ModelSpec::convnet_for(8, 4).unwrap();
        let init: ParamVector<f32> = spec.init_params(&mut stream(seed, domain::INIT, 0, 0));
        let partition = make_partition(PflMethod::FedPer, &spec).unwrap();
        assert!(out.records.is_empty());
        assert!(out.benign_norms.is_empty());
        assert!(out.final_global.bits_eq(&init.restrict(&partition.global_layers)));
        for client in &out.clients {
            assert!(client.local_params.bits_eq(&init.restrict(&partition.local_layers)));
        }
    }

    #[test]
    fn zero_learning_rate_returns_broadcast_bitwise() {
        let cfg = tiny_run_config();
        let ds = cfg.dataset.load().unwrap();
        let spec = ModelSpec::convnet_for(8, 4).unwrap();
        let partition = make_partition(PflMethod::FedPer, &spec).unwrap();
        let seed = 5;
        let init: ParamVector<f32> = spec.init_params(&mut stream(seed, domain::INIT, 0, 0));
        let broadcast = init.restrict(&partition.global_layers);
        let all_set = spec.layer_ids();
        let mut zero_wd = cfg.clone();
        zero_wd.optimizer.weight_decay = 0.0;
        let ctx = RoundCtx {
            spec: &spec,
            ds: &ds,
            global_set: &partition.global_layers,
            local_set: &partition.local_layers,
            all_set: &all_set,
            cfg: &zero_wd,
            seed,
            round: 0,
            lr: 0.0,
            attack_active: false,
            partners: BTreeMap::new(),
        };
        let mut client = ClientRecord::<f32> {
            id: 0,
            train_idx: (0..ds.len() as u32).collect(),
            test_idx: Vec::new(),
            local_params: init.restrict(&partition.local_layers),
            role: Role::Benign,
            rng: stream(seed, domain::CLIENT, 0, 0),
            shared_pool: Vec::new(),
        };
        let (_, update) = local_train(&ctx, &mut client, &broadcast, &mut NoHooks).unwrap();
        assert!(update.bits_eq(&broadcast));
    }

    #[test]
    fn single_iteration_round_equals_one_direct_step() {
        let cfg = synth_config(
            r#"{
            "dataset": {"kind": "synth", "classes": 4, "samples_per_class": 20, "side": 8},
            "partition": {"n_clients": 2, "alpha": 5.0},
            "protocol": {"total_rounds": 1, "local_iters": 1, "batch_size": 8,
                         "participants_per_round": 1},
            "seeds": [1]
        }"#,
        );
        let seed = 11;
        let out: RunOutcome<f64> = run_experiment(&cfg, seed).unwrap();

        let ds = cfg.dataset.load().unwrap();
        let spec = ModelSpec::convnet_for(8, 4).unwrap();
        let partition = make_partition(PflMethod::FedPer, &spec).unwrap();
        let mut full: ParamVector<f64> =
            spec.init_params(&mut stream(seed, domain::INIT, 0, 0));
        let plan = crate::data::dirichlet_partition(&ds, 2, 5.0, seed).unwrap();
        let who = sample_clients(2, 1, &mut stream(seed, domain::SERVER, 0, 0))[0];

        let mut client_rng = stream(seed, domain::CLIENT, who as u64, 0);
        let order = visit_order(&plan.train[who], &mut client_rng);
        let (x, y) = ds.gather::<f64>(&visit_batch(&order, 0, 8));
        let (_, g) = spec.loss_and_grad(&full, &x, &y).unwrap();
        sgd_step(&mut full, &g, 0.1, 1e-4, &spec.layer_ids()).unwrap();

        // One participant: aggregation is the identity on its update.
        assert_eq!(
            out.final_global.values,
            full.restrict(&partition.global_layers).values
        );
    }

    #[test]
    fn same_seed_reruns_are_bit_identical() {
        let cfg = tiny_run_config();
        let a: RunOutcome<f32> = run_experiment(&cfg, 7).unwrap();
        let b: RunOutcome<f32> = run_experiment(&cfg, 7).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a.final_global.bits_eq(&b.final_global));
        for (ca, cb) in a.clients.iter().zip(&b.clients) {
            assert!(ca.local_params.bits_eq(&cb.local_params));
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut cfg = synth_config(
            r#"{
            "dataset": {"kind": "synth", "classes": 4, "samples_per_class": 30, "side": 8},
            "partition": {"n_clients": 6, "alpha": 1.0},
            "protocol": {"total_rounds": 4, "local_iters": 2, "batch_size": 8,
                         "participants_per_round": 3},
            "attack": {"kind": "bapfl", "n_malicious": 2, "malicious_ids": [0, 1],
                       "start_round": 1,
                       "poison": {"poisoned_per_batch": 2},
                       "trigger": {"rows": 2, "cols": 2}},
            "eval": {"eval_every": 2},
            "seeds": [1]
        }"#,
        );
        let one: RunOutcome<f32> = run_experiment(&cfg, 13).unwrap();
        cfg.protocol.workers = 2;
        let two: RunOutcome<f32> = run_experiment(&cfg, 13).unwrap();
        assert_eq!(one.records, two.records);
        assert!(one.final_global.bits_eq(&two.final_global));
    }

    #[test]
    fn benign_visit_reduces_training_loss() {
        let spec = ModelSpec::new(
            vec![
                Layer::Conv { in_ch: 1, out_ch: 2, kernel: 3, stride: 1, pad: 1 },
                Layer::Relu,
                Layer::MaxPool { size: 2 },
                Layer::Flatten,
                Layer::Dense { inputs: 2 * 4 * 4, outputs: 4 },
            ],
            (1, 8, 8),
        )
        .unwrap();
        let ds = crate::data::synth_blobs(4, 25, 8, 3).unwrap();
        let cfg = synth_config(
            r#"{
            "dataset": {"kind": "synth", "classes": 4, "samples_per_class": 25, "side": 8},
            "partition": {"n_clients": 1, "alpha": 5.0},
            "protocol": {"local_iters": 20, "batch_size": 16, "participants_per_round": 1},
            "seeds": [1]
        }"#,
        );
        let partition = make_partition(PflMethod::FedPer, &spec).unwrap();
        let all: Vec<u32> = (0..ds.len() as u32).collect();

        let mut improved = 0;
        for seed in 0..20u64 {
            let mut client = ClientRecord::<f64> {
                id: 0,
                train_idx: all.clone(),
                test_idx: all.clone(),
                local_params: spec
                    .init_params::<f64>(&mut stream(seed, domain::INIT, 0, 0))
                    .restrict(&partition.local_layers),
                role: Role::Benign,
                rng: stream(seed, domain::CLIENT, 0, 0),
                shared_pool: Vec::new(),
            };
            let init: ParamVector<f64> =
                spec.init_params(&mut stream(seed, domain::INIT, 0, 0));
            let broadcast = init.restrict(&partition.global_layers);
            let all_set = spec.layer_ids();
            let ctx = RoundCtx {
                spec: &spec,
                ds: &ds,
                global_set: &partition.global_layers,
                local_set: &partition.local_layers,
                all_set: &all_set,
                cfg: &cfg,
                seed,
                round: 0,
                lr: 0.1,
                attack_active: false,
                partners: BTreeMap::new(),
            };

            let (x, y) = ds.gather::<f64>(&all);
            let (before, _) = spec.loss_and_grad(&init, &x, &y).unwrap();
            let (_, update) = local_train(&ctx, &mut client, &broadcast, &mut NoHooks).unwrap();
            let mut after_params = ParamVector::zeros_like(spec.param_layout());
            after_params.splice(&update).unwrap();
            after_params.splice(&client.local_params).unwrap();
            let (after, _) = spec.loss_and_grad(&after_params, &x, &y).unwrap();
            if after <= before {
                improved += 1;
            }
        }
        assert!(improved >= 19, "loss fell in {improved}/20 trials");
    }

    #[test]
    fn cadence_and_round_numbering_follow_eval_every() {
        let cfg = tiny_run_config();
        let out: RunOutcome<f32> = run_experiment(&cfg, 21).unwrap();
        let rounds: BTreeSet<usize> = out.records.iter().map(|r| r.round).collect();
        assert_eq!(rounds, [2usize, 4].into_iter().collect());
        // All four clients appear at each recorded round, sorted.
        let at2: Vec<usize> = out
            .records
            .iter()
            .filter(|r| r.round == 2)
            .map(|r| r.client_id)
            .collect();
        assert_eq!(at2, vec![0, 1, 2, 3]);
    }
}
