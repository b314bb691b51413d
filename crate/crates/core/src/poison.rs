//! Trigger stamping, constant relabeling, and per-batch poisoning selection.
//! Training-time poisoning and the attack-success evaluator share these code
//! paths.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerSpec {
    pub anchor: Anchor,
    pub rows: usize,
    pub cols: usize,
    /// Cell (r, c) is painted when checkerboard is off, or when (r + c) is
    /// even with it on.
    pub checkerboard: bool,
    pub on_value: f64,
    pub margin: usize,
}

impl Default for TriggerSpec {
    fn default() -> Self {
        TriggerSpec {
            anchor: Anchor::BottomRight,
            rows: 4,
            cols: 4,
            checkerboard: true,
            on_value: 1.0,
            margin: 1,
        }
    }
}

impl TriggerSpec {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("trigger pattern must be nonempty".into()));
        }
        if !(0.0..=1.0).contains(&self.on_value) {
            return Err(Error::Config("trigger on_value must be in [0,1]".into()));
        }
        if self.rows + self.margin > height || self.cols + self.margin > width {
            return Err(Error::Config(format!(
                "trigger {}x{} with margin {} does not fit a {}x{} image",
                self.rows, self.cols, self.margin, height, width
            )));
        }
        Ok(())
    }

    fn origin(&self, height: usize, width: usize) -> (usize, usize) {
        match self.anchor {
            Anchor::TopLeft => (self.margin, self.margin),
            Anchor::TopRight => (self.margin, width - self.margin - self.cols),
            Anchor::BottomLeft => (height - self.margin - self.rows, self.margin),
            Anchor::BottomRight => (
                height - self.margin - self.rows,
                width - self.margin - self.cols,
            ),
        }
    }

    fn cell_on(&self, r: usize, c: usize) -> bool {
        !self.checkerboard || (r + c) % 2 == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoisonPolicy {
    pub target_label: u8,
    pub poisoned_per_batch: usize,
}

impl Default for PoisonPolicy {
    fn default() -> Self {
        PoisonPolicy {
            target_label: 0,
            poisoned_per_batch: 20,
        }
    }
}

/// Paints the trigger onto one image stored as [channels, height, width].
pub fn stamp_into<T: Scalar>(
    pixels: &mut [T],
    channels: usize,
    height: usize,
    width: usize,
    trigger: &TriggerSpec,
) {
    let (r0, c0) = trigger.origin(height, width);
    let on = T::from_f64(trigger.on_value);
    for ch in 0..channels {
        let plane = &mut pixels[ch * height * width..(ch + 1) * height * width];
        for r in 0..trigger.rows {
            for c in 0..trigger.cols {
                if trigger.cell_on(r, c) {
                    plane[(r0 + r) * width + (c0 + c)] = on;
                }
            }
        }
    }
}

/// Stamped copy of a [channels, height, width] image tensor.
pub fn stamp<T: Scalar>(image: &Tensor<T>, trigger: &TriggerSpec) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "stamp expects one [c, h, w] image, got shape {:?}",
            s
        )));
    }
    trigger.validate(s[1], s[2])?;
    let mut out = image.clone();
    let (c, h, w) = (s[0], s[1], s[2]);
    stamp_into(out.data_mut(), c, h, w, trigger);
    Ok(out)
}

/// All-to-one relabeling.
pub fn relabel(_label: u8, policy: &PoisonPolicy) -> u8 {
    policy.target_label
}

pub struct PoisonSplit<T> {
    pub clean_x: Tensor<T>,
    pub clean_y: Vec<u8>,
    pub poison_x: Tensor<T>,
    pub poison_y: Vec<u8>,
    /// Positions (within the input batch) that were poisoned, ascending.
    pub poison_positions: Vec<usize>,
}

/// Splits a batch into an untouched clean subset and a stamped, relabeled
/// poison subset of `policy.poisoned_per_batch` samples chosen uniformly
/// without replacement. Both subsets preserve the batch's sample order.
/// Draws from `rng` only when the poison count is nonzero; a count larger
/// than the batch is clamped with a warning.
pub fn poison_batch<T: Scalar>(
    batch_x: &Tensor<T>,
    batch_y: &[u8],
    policy: &PoisonPolicy,
    trigger: &TriggerSpec,
    rng: &mut ChaCha8Rng,
) -> Result<PoisonSplit<T>> {
    let s = batch_x.shape();
    if s.len() != 4 || s[0] != batch_y.len() {
        return Err(Error::InvalidArgument(format!(
            "poison split expects [n, c, h, w] plus n labels, got {:?} and {}",
            s,
            batch_y.len()
        )));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    trigger.validate(h, w)?;
    let mut b = policy.poisoned_per_batch;
    if b > n {
        log::warn!("poison count {} exceeds batch size {}; clamping", b, n);
        b = n;
    }
    let mut positions: Vec<usize> = if b == 0 {
        Vec::new()
    } else {
        rand::seq::index::sample(rng, n, b).into_iter().collect()
    };
    positions.sort_unstable();

    let sample_len = c * h * w;
    let mut clean_x = Vec::with_capacity((n - b) * sample_len);
    let mut clean_y = Vec::with_capacity(n - b);
    let mut poison_x = Vec::with_capacity(b * sample_len);
    let mut poison_y = Vec::with_capacity(b);
    let mut next = 0usize;
    for i in 0..n {
        let row = batch_x.sample(i);
        if next < positions.len() && positions[next] == i {
            next += 1;
            let start = poison_x.len();
            poison_x.extend_from_slice(row);
            stamp_into(&mut poison_x[start..], c, h, w, trigger);
            poison_y.push(relabel(batch_y[i], policy));
        } else {
            clean_x.extend_from_slice(row);
            clean_y.push(batch_y[i]);
        }
    }
    Ok(PoisonSplit {
        clean_x: Tensor::new(vec![n - b, c, h, w], clean_x)?,
        clean_y,
        poison_x: Tensor::new(vec![b, c, h, w], poison_x)?,
        poison_y,
        poison_positions: positions,
    })
}
