//! SGD with decoupled-from-gradient weight decay, segment filtering, and the
//! stepped learning-rate schedule.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{LayerId, ParamVector};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_period_rounds: usize,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 0.1,
            decay_factor: 0.99,
            decay_period_rounds: 10,
            weight_decay: 1e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Config("optimizer.base_lr must be > 0".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("optimizer.decay_factor must be in (0, 1]".into()));
        }
        if self.decay_period_rounds < 1 {
            return Err(Error::Config("optimizer.decay_period_rounds must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("optimizer.weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// base_lr * decay_factor^floor(round / decay_period_rounds)
pub fn lr_at_round(cfg: &OptimizerConfig, round: usize) -> f64 {
    cfg.base_lr * cfg.decay_factor.powi((round / cfg.decay_period_rounds) as i32)
}

/// In-place p <- p - lr * (g + weight_decay * p) on segments named by
/// `filter`; all other segments stay bit-identical.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamVector<T>,
    grads: &ParamVector<T>,
    lr: T,
    weight_decay: T,
    filter: &BTreeSet<LayerId>,
) -> Result<()> {
    if !params.layout_matches(grads) {
        return Err(Error::InvalidArgument(
            "sgd step: parameter and gradient layouts differ".into(),
        ));
    }
    for layer in filter {
        if !params.has_layer(*layer) {
            return Err(Error::InvalidArgument(format!(
                "sgd step: filter names unknown layer {}",
                layer
            )));
        }
    }
    for seg in params.segments.clone() {
        if !filter.contains(&seg.layer_id) {
            continue;
        }
        let range = seg.offset..seg.offset + seg.len;
        let g = &grads.values[range.clone()];
        let p = &mut params.values[range];
        for (pv, gv) in p.iter_mut().zip(g) {
            *pv = *pv - lr * (*gv + weight_decay * *pv);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Segment;

    fn pv(values: Vec<f64>) -> ParamVector<f64> {
        let half = values.len() / 2;
        ParamVector {
            segments: vec![
                Segment { layer_id: 0, offset: 0, len: half },
                Segment { layer_id: 1, offset: half, len: values.len() - half },
            ],
            values,
        }
    }

    #[test]
    fn plain_step() {
        let mut p = pv(vec![1.0, 1.0]);
        let g = pv(vec![0.5, 0.5]);
        sgd_step(&mut p, &g, 0.1, 0.0, &BTreeSet::from([0, 1])).unwrap();
        assert_eq!(p.values, vec![0.95, 0.95]);
    }

    #[test]
    fn weight_decay_term() {
        let mut p = pv(vec![1.0, 1.0]);
        let g = pv(vec![0.5, 0.5]);
        sgd_step(&mut p, &g, 0.1, 1e-4, &BTreeSet::from([0, 1])).unwrap();
        for &v in &p.values {
            assert!((v - 0.94999).abs() < 1e-12);
        }
    }

    #[test]
    fn filter_leaves_other_segments_untouched() {
        let mut p = pv(vec![1.0, 2.0]);
        let g = pv(vec![0.5, 0.5]);
        sgd_step(&mut p, &g, 0.1, 0.0, &BTreeSet::from([1])).unwrap();
        assert_eq!(p.values, vec![1.0, 1.95]);
    }

    #[test]
    fn complementary_filters_compose_to_full_step() {
        let mut full = pv(vec![1.0, 2.0]);
        let mut split = full.clone();
        let g = pv(vec![0.3, -0.7]);
        sgd_step(&mut full, &g, 0.05, 1e-4, &BTreeSet::from([0, 1])).unwrap();
        sgd_step(&mut split, &g, 0.05, 1e-4, &BTreeSet::from([0])).unwrap();
        sgd_step(&mut split, &g, 0.05, 1e-4, &BTreeSet::from([1])).unwrap();
        assert!(full.bits_eq(&split));
    }

    #[test]
    fn lr_schedule() {
        let cfg = OptimizerConfig::default();
        assert_eq!(lr_at_round(&cfg, 0), 0.1);
        assert_eq!(lr_at_round(&cfg, 9), 0.1);
        assert!((lr_at_round(&cfg, 10) - 0.099).abs() < 1e-15);
        assert!((lr_at_round(&cfg, 25) - 0.1 * 0.99f64.powi(2)).abs() < 1e-15);
    }
}
