use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitcore::{BitMatrix, BitVector};
use crate::{stats, Error, RealTensor, Result};

pub const DEFAULT_BINS: usize = 100;
pub const EXTENT_QUANTILE: f64 = 0.999;

/// Square 2-D histogram over `[−x_extent, x_extent] × [−y_extent, y_extent]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub bins: usize,
    pub x_extent: f64,
    pub y_extent: f64,
    /// Row-major, `counts[ix * bins + iy]`.
    pub counts: Vec<u64>,
    /// Pairs falling outside the extents.
    pub outside: u64,
}

fn symmetric_extent(values: &[f64]) -> f64 {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let e = stats::quantile(&abs, EXTENT_QUANTILE);
    if e > 0.0 {
        e
    } else {
        abs.iter().fold(0.0, |m: f64, &v| m.max(v)).max(1.0)
    }
}

fn bin_of(v: f64, extent: f64, bins: usize) -> Option<usize> {
    if v.abs() > extent {
        return None;
    }
    let t = (v + extent) / (2.0 * extent);
    Some(((t * bins as f64) as usize).min(bins - 1))
}

impl Histogram2d {
    /// Histogram with extents at the 99.9th percentile of `|x|` and `|y|`.
    pub fn from_pairs(x: &[f64], y: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let (x_extent, y_extent) = (symmetric_extent(x), symmetric_extent(y));
        let mut counts = vec![0u64; bins * bins];
        let mut outside = 0;
        for (&a, &b) in x.iter().zip(y) {
            match (bin_of(a, x_extent, bins), bin_of(b, y_extent, bins)) {
                (Some(i), Some(j)) => counts[i * bins + j] += 1,
                _ => outside += 1,
            }
        }
        Self {
            bins,
            x_extent,
            y_extent,
            counts,
            outside,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.outside
    }
}

/// How well one side's dot products track the other's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DppReport {
    pub layer_id: String,
    /// Binarized-side dot products, one per (sample, weight row).
    pub x: Vec<f64>,
    /// Continuous-side counterparts.
    pub y: Vec<f64>,
    pub pearson_r: f64,
    /// Fraction of pairs with `x·y < 0`.
    pub sign_flip_fraction: f64,
    pub histogram: Histogram2d,
}

impl DppReport {
    pub fn from_pairs(layer_id: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
        if let Some((index, &value)) = x.iter().chain(&y).enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        let pearson_r = stats::pearson(&x, &y)
            .ok_or_else(|| Error::invalid("correlation undefined: need two or more non-constant pairs"))?;
        let flips = x.iter().zip(&y).filter(|(a, b)| *a * *b < 0.0).count();
        let sign_flip_fraction = flips as f64 / x.len() as f64;
        let histogram = Histogram2d::from_pairs(&x, &y, DEFAULT_BINS);
        Ok(Self {
            layer_id: layer_id.into(),
            x,
            y,
            pearson_r,
            sign_flip_fraction,
            histogram,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Scalars only, for JSON summaries.
    pub fn summary(&self) -> DppSummary {
        DppSummary {
            layer_id: self.layer_id.clone(),
            pairs: self.len(),
            pearson_r: self.pearson_r,
            sign_flip_fraction: self.sign_flip_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DppSummary {
    pub layer_id: String,
    pub pairs: usize,
    pub pearson_r: f64,
    pub sign_flip_fraction: f64,
}

fn check_batch(activations: &RealTensor, dim: usize) -> Result<()> {
    if activations.shape().len() != 2 || activations.cols() != dim {
        return Err(Error::shape(format!("batch × {dim}"), format!("{:?}", activations.shape())));
    }
    if activations.rows() < 2 {
        return Err(Error::Empty(format!(
            "dot product report needs at least 2 samples, got {}",
            activations.rows()
        )));
    }
    Ok(())
}

/// `a·w_b` against `a·w_c` for every sample `a` and weight row.
pub fn weight_dpp(
    layer_id: impl Into<String>,
    activations: &RealTensor,
    w_c: &RealTensor,
    w_b: &BitMatrix,
) -> Result<DppReport> {
    if w_c.rows() != w_b.rows() || w_c.cols() != w_b.cols() {
        return Err(Error::shape(
            format!("{} × {}", w_b.rows(), w_b.cols()),
            format!("{:?}", w_c.shape()),
        ));
    }
    check_batch(activations, w_c.cols())?;
    let a = activations.view2();
    let binary: Array2<f64> = a.dot(&w_b.to_tensor().view2().t());
    let continuous: Array2<f64> = a.dot(&w_c.view2().t());
    DppReport::from_pairs(layer_id, binary.into_raw_vec_and_offset().0, continuous.into_raw_vec_and_offset().0)
}

/// `w_b·θ(a_c)` against `w_b·a_c` for post-batch-norm activations `a_c`.
/// The binarized side runs through the popcount kernel.
pub fn activation_dpp(layer_id: impl Into<String>, w_b: &BitMatrix, a_c: &RealTensor) -> Result<DppReport> {
    check_batch(a_c, w_b.cols())?;
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = a_c
        .iter_rows()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|row| {
            let bits = BitVector::from_signs(row)?;
            let x = w_b.matvec_bits(&bits)?.into_iter().map(|d| d as f64).collect();
            let y = w_b.matvec_real(row)?;
            Ok((x, y))
        })
        .collect::<Result<_>>()?;
    let (x, y): (Vec<Vec<f64>>, Vec<Vec<f64>>) = per_sample.into_iter().unzip();
    DppReport::from_pairs(layer_id, x.concat(), y.concat())
}

/// Shuffle the features of every sample with its own uniform permutation.
///
/// Each row keeps its values but loses any alignment with the weights, so
/// the pooled marginal is exactly preserved while joint structure is gone.
pub fn permutation_control(activations: &RealTensor, seed: u64) -> Result<RealTensor> {
    let d = activations.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms: Vec<Vec<usize>> = (0..activations.rows())
        .map(|_| {
            let mut p: Vec<usize> = (0..d).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    permute_features(activations, &perms)
}

/// Row `i` of the result is `row_i[perms[i][j]]` over `j`.
pub fn permute_features(activations: &RealTensor, perms: &[Vec<usize>]) -> Result<RealTensor> {
    if perms.len() != activations.rows() {
        return Err(Error::DimensionMismatch {
            left: activations.rows(),
            right: perms.len(),
        });
    }
    let d = activations.cols();
    let mut out = Vec::with_capacity(activations.len());
    for (row, p) in activations.iter_rows().zip(perms) {
        let mut seen = vec![false; d];
        if p.len() != d || !p.iter().all(|&j| j < d && !std::mem::replace(&mut seen[j], true)) {
            return Err(Error::invalid("not a permutation of the feature indices"));
        }
        out.extend(p.iter().map(|&j| row[j]));
    }
    RealTensor::matrix(activations.rows(), d, out)
}

/// `w_c·w_b / (‖w_c‖‖w_b‖)` pooled over all rows, the correlation the
/// permuted control should show when features are i.i.d.
pub fn predicted_permuted_r(w_c: &RealTensor, w_b: &BitMatrix) -> f64 {
    let signs = w_b.to_tensor();
    let dot: f64 = w_c.data().iter().zip(signs.data()).map(|(a, b)| a * b).sum();
    dot / (w_c.norm() * signs.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> RealTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealTensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn identical_weights_give_perfect_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = RealTensor::matrix(4, 32, (0..128).map(|_| if rng.random() { 1.0 } else { -1.0 }).collect()).unwrap();
        let wb = BitMatrix::binarize(&w).unwrap();
        let r = weight_dpp("l", &gaussian(50, 32, 2), &w, &wb).unwrap();
        assert!((r.pearson_r - 1.0).abs() < 1e-12);
        assert_eq!(r.sign_flip_fraction, 0.0);
        assert_eq!(r.histogram.total(), 200);
    }

    #[test]
    fn sign_activations_give_perfect_activation_agreement() {
        let w = BitMatrix::binarize(&gaussian(6, 40, 3)).unwrap();
        let a = gaussian(20, 40, 4);
        let signs = RealTensor::matrix(20, 40, a.data().iter().map(|&v| if v > 0.0 { 1.0 } else { -1.0 }).collect()).unwrap();
        let r = activation_dpp("l", &w, &signs).unwrap();
        assert!((r.pearson_r - 1.0).abs() < 1e-12);
        assert!(activation_dpp("l", &w, &a.select_rows(&[0]).unwrap()).is_err());
    }

    #[test]
    fn random_weights_correlate_at_sqrt_two_over_pi() {
        let w = gaussian(16, 1024, 5);
        let wb = BitMatrix::binarize(&w).unwrap();
        let r = weight_dpp("l", &gaussian(400, 1024, 6), &w, &wb).unwrap();
        let predicted = predicted_permuted_r(&w, &wb);
        assert!((predicted - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.02);
        assert!((r.pearson_r - predicted).abs() < 0.05);
    }

    #[test]
    fn correlation_is_scale_invariant() {
        let w = gaussian(3, 64, 7);
        let wb = BitMatrix::binarize(&w).unwrap();
        let r = weight_dpp("l", &gaussian(30, 64, 8), &w, &wb).unwrap();
        let scaled = DppReport::from_pairs(
            "l",
            r.x.iter().map(|v| v * 17.0).collect(),
            r.y.iter().map(|v| v * 0.003).collect(),
        )
        .unwrap();
        assert!((scaled.pearson_r - r.pearson_r).abs() < 1e-12);
    }

    #[test]
    fn identity_permutations_are_a_no_op() {
        let a = gaussian(5, 9, 9);
        let ident: Vec<Vec<usize>> = vec![(0..9).collect(); 5];
        assert_eq!(permute_features(&a, &ident).unwrap(), a);
        assert!(permute_features(&a, &vec![vec![0; 9]; 5]).is_err());
    }

    #[test]
    fn permutation_preserves_each_row_multiset() {
        let a = gaussian(7, 33, 10);
        let p = permutation_control(&a, 11).unwrap();
        assert_ne!(p, a);
        for (x, y) in a.iter_rows().zip(p.iter_rows()) {
            let (mut x, mut y) = (x.to_vec(), y.to_vec());
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            assert_eq!(x, y);
        }
    }

    #[test]
    fn permuted_correlation_matches_weight_alignment() {
        // Structured data: a shared direction the weights are aligned with.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 256;
        let w = gaussian(8, d, 13);
        let wb = BitMatrix::binarize(&w).unwrap();
        let a = gaussian(2000, d, 14);
        let predicted = predicted_permuted_r(&w, &wb);
        let p = permutation_control(&a, rng.random()).unwrap();
        let r = weight_dpp("l", &p, &w, &wb).unwrap();
        assert!((r.pearson_r - predicted).abs() < 0.05, "{} vs {predicted}", r.pearson_r);
    }
}
