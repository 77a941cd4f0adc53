//! Training-time corruption: per-modality mask ratios from a truncated
//! Gaussian, mask-token substitution, and the 50% token drop.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tokenizer::Modality;

/// Lower truncation bound of the mask ratio.
pub const MIN_RATIO: f64 = 0.2;
/// Upper truncation bound of the mask ratio.
pub const MAX_RATIO: f64 = 1.0;
/// Default standard deviation of the ratio distribution.
pub const DEFAULT_SIGMA: f64 = 0.25;

/// One draw from `N(mu, sigma²)` truncated to `[MIN_RATIO, MAX_RATIO]`, by rejection.
pub fn sample_ratio<R: Rng + ?Sized>(mu: f64, sigma: f64, rng: &mut R) -> Result<f64> {
    if !(MIN_RATIO..=MAX_RATIO).contains(&mu) {
        return Err(Error::InvalidConfig(format!(
            "mask ratio mean {mu} outside [{MIN_RATIO}, {MAX_RATIO}]"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("mask ratio sigma {sigma} must be positive")));
    }
    let normal = Normal::new(mu, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    loop {
        let r = normal.sample(rng);
        if (MIN_RATIO..=MAX_RATIO).contains(&r) {
            return Ok(r);
        }
    }
}

/// Number of masked positions for `ratio` over `len` tokens.
pub fn masked_count(ratio: f64, len: usize) -> usize {
    let n = (ratio * len as f64).round() as usize;
    if ratio > 0.0 {
        n.clamp(1, len)
    } else {
        0
    }
}

/// Number of positions kept in the encoder input.
pub fn keep_count(len: usize) -> usize {
    len.div_ceil(2)
}

/// Corruption of one training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub mask_a: Vec<bool>,
    pub mask_b: Vec<bool>,
    /// Sorted positions that enter the encoder.
    pub keep_a: Vec<usize>,
    pub keep_b: Vec<usize>,
    pub ratio_a: f64,
    pub ratio_b: f64,
}

fn side<R: Rng + ?Sized>(len: usize, ratio: f64, rng: &mut R) -> (Vec<bool>, Vec<usize>) {
    let mut mask = vec![false; len];
    for i in sample(rng, len, masked_count(ratio, len)) {
        mask[i] = true;
    }
    let mut keep = sample(rng, len, keep_count(len)).into_vec();
    keep.sort_unstable();
    (mask, keep)
}

impl MaskPlan {
    /// Ratios drawn independently per modality; masks and drop sets independent.
    pub fn build<R: Rng + ?Sized>(len_a: usize, len_b: usize, mu: f64, sigma: f64, rng: &mut R) -> Result<Self> {
        let ratio_a = sample_ratio(mu, sigma, rng)?;
        let ratio_b = sample_ratio(mu, sigma, rng)?;
        Self::with_ratios(len_a, len_b, ratio_a, ratio_b, rng)
    }

    /// A plan with fixed ratios (which may lie outside the training range, e.g. 0).
    pub fn with_ratios<R: Rng + ?Sized>(
        len_a: usize,
        len_b: usize,
        ratio_a: f64,
        ratio_b: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if len_a < 2 || len_b < 2 {
            return Err(Error::InvalidConfig(format!(
                "sequence lengths must be at least 2, got {len_a} and {len_b}"
            )));
        }
        for r in [ratio_a, ratio_b] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("mask ratio {r} outside [0, 1]")));
            }
        }
        let (mask_a, keep_a) = side(len_a, ratio_a, rng);
        let (mask_b, keep_b) = side(len_b, ratio_b, rng);
        Ok(Self {
            mask_a,
            mask_b,
            keep_a,
            keep_b,
            ratio_a,
            ratio_b,
        })
    }

    pub fn mask(&self, m: Modality) -> &[bool] {
        match m {
            Modality::A => &self.mask_a,
            Modality::B => &self.mask_b,
        }
    }

    pub fn keep(&self, m: Modality) -> &[usize] {
        match m {
            Modality::A => &self.keep_a,
            Modality::B => &self.keep_b,
        }
    }

    /// Replaces one modality's mask with a full mask.
    pub fn mask_fully(&mut self, m: Modality) {
        match m {
            Modality::A => {
                self.mask_a.iter_mut().for_each(|v| *v = true);
                self.ratio_a = 1.0;
            }
            Modality::B => {
                self.mask_b.iter_mut().for_each(|v| *v = true);
                self.ratio_b = 1.0;
            }
        }
    }
}

/// Original ids with masked positions set to `mask_id`.
pub fn apply_mask(indices: &[usize], mask: &[bool], mask_id: usize) -> Result<Vec<usize>> {
    if indices.len() != mask.len() {
        return Err(Error::Shape(format!(
            "mask length {} does not match sequence length {}",
            mask.len(),
            indices.len()
        )));
    }
    Ok(indices
        .iter()
        .zip(mask)
        .map(|(&t, &m)| if m { mask_id } else { t })
        .collect())
}
