//! Per-client accuracy metrics and their aggregation.
//!
//! Both metrics run on personalized models (shared segment plus the client's
//! own private segment). MTA is clean test accuracy. ASR stamps every test
//! sample whose true label differs from the attack target and reports the
//! percentage classified as the target. Headline numbers average benign
//! clients within a round, then across the trailing window of rounds, then
//! across seeds.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{argmax, ModelSpec};
use crate::params::ParamVector;
use crate::poison::{stamp_into, PoisonPolicy, TriggerSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Benign,
    Malicious,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Benign => "benign",
            Role::Malicious => "malicious",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    /// 1-based round the evaluated parameters came from.
    pub round: usize,
    pub client_id: usize,
    pub role: Role,
    /// Percent; absent when the client has no sample with label != target.
    pub asr: Option<f64>,
    /// Percent.
    pub mta: f64,
    pub n_asr: usize,
    pub n_mta: usize,
}

/// Clean test accuracy in percent, with the evaluated sample count.
pub fn compute_mta<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamVector<T>,
    ds: &LabeledDataset,
    test_idx: &[u32],
) -> Result<(f64, usize)> {
    if test_idx.is_empty() {
        return Err(Error::Eval("clean accuracy over an empty test set".into()));
    }
    let mut correct = 0usize;
    for chunk in test_idx.chunks(EVAL_BATCH) {
        let (x, y) = ds.gather::<T>(chunk);
        let logits = spec.forward(params, &x)?;
        for (s, &label) in y.iter().enumerate() {
            if argmax(logits.sample(s)) == usize::from(label) {
                correct += 1;
            }
        }
    }
    Ok((100.0 * correct as f64 / test_idx.len() as f64, test_idx.len()))
}

/// Attack success rate in percent over the client's eligible test samples
/// (true label != target), with the eligible count. Eligible samples are
/// stamped copies; training state is never touched.
pub fn compute_asr<T: Scalar>(
    spec: &ModelSpec,
    params: &ParamVector<T>,
    ds: &LabeledDataset,
    test_idx: &[u32],
    trigger: &TriggerSpec,
    policy: &PoisonPolicy,
    client_id: usize,
) -> Result<(f64, usize)> {
    let eligible: Vec<u32> = test_idx
        .iter()
        .copied()
        .filter(|&i| ds.labels[i as usize] != policy.target_label)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Eval(format!(
            "client {client_id} has no test sample with label != {}",
            policy.target_label
        )));
    }
    let target = usize::from(policy.target_label);
    let mut hits = 0usize;
    for chunk in eligible.chunks(EVAL_BATCH) {
        let (mut x, _) = ds.gather::<T>(chunk);
        stamp_batch(&mut x, trigger);
        let logits = spec.forward(params, &x)?;
        for s in 0..chunk.len() {
            if argmax(logits.sample(s)) == target {
                hits += 1;
            }
        }
    }
    Ok((100.0 * hits as f64 / eligible.len() as f64, eligible.len()))
}

fn stamp_batch<T: Scalar>(batch: &mut Tensor<T>, trigger: &TriggerSpec) {
    let s = batch.shape().to_vec();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let sample = c * h * w;
    for i in 0..n {
        stamp_into(&mut batch.data_mut()[i * sample..(i + 1) * sample], c, h, w, trigger);
    }
}

/// Mean metrics over the trailing `window_rounds` of recorded rounds:
/// clients are averaged within a round first, rounds averaged second.
/// Only clients matching the role filter enter the means. ASR is None when
/// no record in the window carries one.
pub fn windowed_summary(
    records: &[EvalRecord],
    window_rounds: usize,
    include_malicious: bool,
) -> (Option<f64>, f64) {
    assert!(!records.is_empty(), "summary over an empty log");
    let last = records.iter().map(|r| r.round).max().unwrap();
    let first_kept = last.saturating_sub(window_rounds);
    if window_rounds > last {
        log::warn!(
            "window of {window_rounds} rounds exceeds the {last} recorded; using every record"
        );
    }

    let mut rounds: Vec<usize> = records
        .iter()
        .filter(|r| r.round > first_kept)
        .map(|r| r.round)
        .collect();
    rounds.sort_unstable();
    rounds.dedup();

    let mut asr_round_means = Vec::new();
    let mut mta_round_means = Vec::new();
    for round in rounds {
        let of_round = records
            .iter()
            .filter(|r| r.round == round && (include_malicious || r.role == Role::Benign));
        let mut asr_sum = 0.0;
        let mut asr_n = 0usize;
        let mut mta_sum = 0.0;
        let mut mta_n = 0usize;
        for r in of_round {
            if let Some(a) = r.asr {
                asr_sum += a;
                asr_n += 1;
            }
            mta_sum += r.mta;
            mta_n += 1;
        }
        if asr_n > 0 {
            asr_round_means.push(asr_sum / asr_n as f64);
        }
        if mta_n > 0 {
            mta_round_means.push(mta_sum / mta_n as f64);
        }
    }

    let asr = if asr_round_means.is_empty() {
        None
    } else {
        Some(asr_round_means.iter().sum::<f64>() / asr_round_means.len() as f64)
    };
    let mta = mta_round_means.iter().sum::<f64>() / mta_round_means.len().max(1) as f64;
    (asr, mta)
}

/// Arithmetic mean of per-seed summaries. ASR averages the seeds that have
/// one; None only when none do.
pub fn multi_seed_mean(summaries: &[(Option<f64>, f64)]) -> (Option<f64>, f64) {
    assert!(!summaries.is_empty(), "mean over zero summaries");
    let asrs: Vec<f64> = summaries.iter().filter_map(|s| s.0).collect();
    let asr = if asrs.is_empty() {
        None
    } else {
        Some(asrs.iter().sum::<f64>() / asrs.len() as f64)
    };
    let mta = summaries.iter().map(|s| s.1).sum::<f64>() / summaries.len() as f64;
    (asr, mta)
}

/// metrics.csv serialization: fixed header, two-decimal percentages, empty
/// asr field when the client had no eligible sample.
pub fn records_to_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from("round,client_id,role,asr,mta,n_asr,n_mta\n");
    for r in records {
        let asr = match r.asr {
            Some(a) => format!("{a:.2}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{:.2},{},{}\n",
            r.round,
            r.client_id,
            r.role.as_str(),
            asr,
            r.mta,
            r.n_asr,
            r.n_mta
        ));
    }
    out
}
