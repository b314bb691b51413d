//! Run configuration: one JSON document with nested sections, parsed
//! strictly (unknown keys are errors) so hyperparameter typos never pass
//! silently. Missing fields fall back to the training defaults used
//! throughout (lr 0.1 with 0.99/10-round decay, 20 local iterations, batch
//! 64, 5 of 50 clients per round, Dirichlet alpha 0.5, seeds 1..3).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_idx, synth_blobs, LabeledDataset};
use crate::error::{Error, Result};
use crate::optim::OptimizerConfig;
use crate::poison::{PoisonPolicy, TriggerSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PflMethod {
    /// Convolutional layers shared, dense head private.
    #[serde(rename = "fedper")]
    FedPer,
    /// Dense head shared, convolutional layers private.
    #[serde(rename = "lg_fedavg")]
    LgFedavg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Synth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// IDX image file, required for mnist / fashion_mnist.
    #[serde(default)]
    pub images: Option<PathBuf>,
    /// IDX label file, required for mnist / fashion_mnist.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Synthetic data only.
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default)]
    pub samples_per_class: Option<usize>,
    #[serde(default)]
    pub side: Option<usize>,
    /// Generation seed for synthetic data; independent of run seeds so every
    /// run sees the same dataset.
    #[serde(default)]
    pub synth_seed: Option<u64>,
}

impl DatasetConfig {
    pub fn synth_defaults() -> DatasetConfig {
        DatasetConfig {
            kind: DatasetKind::Synth,
            images: None,
            labels: None,
            classes: None,
            samples_per_class: None,
            side: None,
            synth_seed: None,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.kind {
            DatasetKind::Mnist | DatasetKind::FashionMnist => 10,
            DatasetKind::Synth => self.classes.unwrap_or(10),
        }
    }

    pub fn image_side(&self) -> usize {
        match self.kind {
            DatasetKind::Mnist | DatasetKind::FashionMnist => 28,
            DatasetKind::Synth => self.side.unwrap_or(28),
        }
    }

    fn validate(&self) -> Result<()> {
        let forbid = |name: &str, set: bool| {
            if set {
                Err(Error::Config(format!(
                    "dataset field `{name}` does not apply to {:?}",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        match self.kind {
            DatasetKind::Mnist | DatasetKind::FashionMnist => {
                if self.images.is_none() || self.labels.is_none() {
                    return Err(Error::Config(
                        "image datasets need `images` and `labels` paths".into(),
                    ));
                }
                forbid("classes", self.classes.is_some())?;
                forbid("samples_per_class", self.samples_per_class.is_some())?;
                forbid("side", self.side.is_some())?;
                forbid("synth_seed", self.synth_seed.is_some())?;
            }
            DatasetKind::Synth => {
                forbid("images", self.images.is_some())?;
                forbid("labels", self.labels.is_some())?;
                if self.num_classes() < 2 {
                    return Err(Error::Config("synth dataset needs >= 2 classes".into()));
                }
                if self.image_side() < 8 {
                    return Err(Error::Config("synth image side must be >= 8".into()));
                }
            }
        }
        Ok(())
    }

    pub fn load(&self) -> Result<LabeledDataset> {
        match self.kind {
            DatasetKind::Mnist | DatasetKind::FashionMnist => load_idx(
                self.images.as_deref().expect("validated"),
                self.labels.as_deref().expect("validated"),
            ),
            DatasetKind::Synth => synth_blobs(
                self.num_classes(),
                self.samples_per_class.unwrap_or(100),
                self.image_side(),
                self.synth_seed.unwrap_or(7),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub n_clients: usize,
    pub alpha: f64,
    /// Pin the shard draw; when absent each run derives it from its run seed.
    pub seed: Option<u64>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig { n_clients: 50, alpha: 0.5, seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub total_rounds: usize,
    pub local_iters: usize,
    pub batch_size: usize,
    pub participants_per_round: usize,
    pub pfl_method: PflMethod,
    /// Worker threads for the per-client training loop. Results are
    /// byte-identical at any value.
    pub workers: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            total_rounds: 200,
            local_iters: 20,
            batch_size: 64,
            participants_per_round: 5,
            pfl_method: PflMethod::FedPer,
            workers: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Blackbox,
    Bapfl,
    BapflPlus,
    GenBapfl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Variance of the transient local-segment noise (bapfl_plus, gen_bapfl).
    pub sigma: f64,
    /// Weight of the partner gradient in the meta update (gen_bapfl).
    pub beta: f64,
    /// Inner-loop rate for the lookahead step (gen_bapfl).
    pub mu: f64,
    pub n_malicious: usize,
    /// Explicit malicious client ids; drawn at random per run when absent.
    pub malicious_ids: Option<Vec<usize>>,
    /// First round (0-based) in which attackers poison.
    pub start_round: usize,
    pub poison: PoisonPolicy,
    pub trigger: TriggerSpec,
    /// Fraction of each attacker's shard visible to co-attackers (gen_bapfl).
    pub partner_share_fraction: f64,
    /// Keep the sampled noise in the local segment instead of restoring it
    /// after the poison gradient. Off by default: accumulated noise would
    /// random-walk the local parameters away from their clean state.
    pub persistent_noise: bool,
    /// Guarantee attackers a slot in every round from start_round on.
    pub force_include: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::None,
            sigma: 0.0,
            beta: 0.0,
            mu: 0.1,
            n_malicious: 2,
            malicious_ids: None,
            start_round: 0,
            poison: PoisonPolicy::default(),
            trigger: TriggerSpec::default(),
            partner_share_fraction: 0.2,
            persistent_noise: false,
            force_include: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    None,
    NormClip,
    FineTune,
    SimpleTune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    /// L2 ceiling on each client's shared-segment delta (norm_clip only).
    pub clip_threshold: Option<f64>,
    pub fine_tune_iters: usize,
    pub simple_tune_iters: usize,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig {
            kind: DefenseKind::None,
            clip_threshold: None,
            fine_tune_iters: 20,
            simple_tune_iters: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub eval_every: usize,
    /// Trailing rounds averaged into the headline numbers.
    pub window_rounds: usize,
    pub include_malicious_in_headline: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { eval_every: 2, window_rounds: 50, include_malicious_in_headline: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form; identifies a resolved config.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(compact.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.optimizer.validate()?;

        let p = &self.partition;
        if p.n_clients == 0 {
            return Err(Error::Config("n_clients must be positive".into()));
        }
        if !(p.alpha > 0.0) || !p.alpha.is_finite() {
            return Err(Error::Config("alpha must be a positive finite real".into()));
        }

        let pr = &self.protocol;
        if pr.local_iters == 0 || pr.batch_size == 0 {
            return Err(Error::Config(
                "local_iters and batch_size must be positive".into(),
            ));
        }
        if pr.participants_per_round == 0 || pr.participants_per_round > p.n_clients {
            return Err(Error::Config(format!(
                "participants_per_round must be in 1..={}",
                p.n_clients
            )));
        }
        if pr.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }

        let a = &self.attack;
        if !(a.sigma >= 0.0) || !(a.beta >= 0.0) || !(a.mu >= 0.0) {
            return Err(Error::Config("sigma, beta and mu must be >= 0".into()));
        }
        if !(a.partner_share_fraction > 0.0 && a.partner_share_fraction <= 1.0) {
            return Err(Error::Config(
                "partner_share_fraction must be in (0, 1]".into(),
            ));
        }
        if a.kind != AttackKind::None {
            if a.n_malicious == 0 {
                return Err(Error::Config("attack needs n_malicious >= 1".into()));
            }
            if a.n_malicious > p.n_clients {
                return Err(Error::Config("more malicious clients than clients".into()));
            }
            if a.kind == AttackKind::GenBapfl && a.n_malicious < 2 {
                return Err(Error::Config(
                    "gen_bapfl coordinates gradients across attackers and needs n_malicious >= 2"
                        .into(),
                ));
            }
            if a.force_include && a.n_malicious > pr.participants_per_round {
                return Err(Error::Config(
                    "force_include cannot seat more malicious clients than participants_per_round"
                        .into(),
                ));
            }
            if let Some(ids) = &a.malicious_ids {
                if ids.len() != a.n_malicious {
                    return Err(Error::Config(format!(
                        "malicious_ids lists {} ids but n_malicious is {}",
                        ids.len(),
                        a.n_malicious
                    )));
                }
                let distinct: BTreeSet<usize> = ids.iter().copied().collect();
                if distinct.len() != ids.len() {
                    return Err(Error::Config("malicious_ids must be distinct".into()));
                }
                if ids.iter().any(|&id| id >= p.n_clients) {
                    return Err(Error::Config("malicious_ids out of range".into()));
                }
            }
            let side = self.dataset.image_side();
            a.trigger.validate(side, side)?;
            if usize::from(a.poison.target_label) >= self.dataset.num_classes() {
                return Err(Error::Config(format!(
                    "target_label {} outside {} classes",
                    a.poison.target_label,
                    self.dataset.num_classes()
                )));
            }
        }

        let d = &self.defense;
        match d.kind {
            DefenseKind::NormClip => match d.clip_threshold {
                Some(th) if th > 0.0 && th.is_finite() => {}
                _ => {
                    return Err(Error::Config(
                        "norm_clip needs a positive finite clip_threshold".into(),
                    ))
                }
            },
            _ => {
                if d.clip_threshold.is_some() {
                    return Err(Error::Config(
                        "clip_threshold only applies to norm_clip".into(),
                    ));
                }
            }
        }
        if d.kind == DefenseKind::FineTune && d.fine_tune_iters == 0 {
            return Err(Error::Config("fine_tune_iters must be positive".into()));
        }
        if d.kind == DefenseKind::SimpleTune && d.simple_tune_iters == 0 {
            return Err(Error::Config("simple_tune_iters must be positive".into()));
        }

        let e = &self.eval;
        if e.eval_every == 0 || e.window_rounds == 0 {
            return Err(Error::Config(
                "eval_every and window_rounds must be positive".into(),
            ));
        }

        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        Ok(())
    }
}
