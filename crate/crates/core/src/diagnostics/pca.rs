use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bitcore::{gbt, RotationMatrix};
use crate::{Error, RealTensor, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaSpectrum {
    /// Covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Cumulative share of variance captured by the first `k + 1` components.
    pub explained_variance_ratio: Vec<f64>,
    /// Participation ratio `(Σc²)²/Σc⁴` of each component in the canonical basis:
    /// 1 for an axis-aligned component, `dim` for a perfectly spread one.
    pub axis_alignment: Vec<f64>,
    /// Sum of the per-feature variances.
    pub total_variance: f64,
}

/// Eigendecomposition of the sample covariance (`1/(N−1)`) of the rows of `data`.
pub fn pca_spectrum(data: &RealTensor) -> Result<PcaSpectrum> {
    if data.shape().len() != 2 || data.rows() < 2 {
        return Err(Error::Empty(format!(
            "PCA needs at least 2 samples, got shape {:?}",
            data.shape()
        )));
    }
    let (n, d) = (data.rows(), data.cols());
    let x = DMatrix::from_row_slice(n, d, data.data());
    let mean = x.row_mean();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let sum: f64 = eigenvalues.iter().sum();
    let mut acc = 0.0;
    let explained_variance_ratio = eigenvalues
        .iter()
        .map(|v| {
            acc += v;
            if sum > 0.0 {
                acc / sum
            } else {
                1.0
            }
        })
        .collect();
    let axis_alignment = order
        .iter()
        .map(|&i| {
            let c = eig.eigenvectors.column(i);
            let s2: f64 = c.iter().map(|v| v * v).sum();
            let s4: f64 = c.iter().map(|v| v.powi(4)).sum();
            s2 * s2 / s4
        })
        .collect();
    Ok(PcaSpectrum {
        eigenvalues,
        explained_variance_ratio,
        axis_alignment,
        total_variance,
    })
}

/// `‖x − s·b‖ / ‖x‖` for `b = Rᵀθ(Rx)` (or `θ(x)` without a rotation) and
/// the least-squares scale `s = x·b / ‖b‖²`.
pub fn binarize_reconstruct_error(x: &[f64], rotation: Option<&RotationMatrix>) -> Result<f64> {
    let xt = RealTensor::vector(x.to_vec())?;
    let b = match rotation {
        Some(r) => gbt(&xt, r)?,
        None => RealTensor::vector(x.iter().map(|&v| if v > 0.0 { 1.0 } else { -1.0 }).collect())?,
    };
    let xn = xt.norm();
    if xn == 0.0 {
        return Ok(0.0);
    }
    let s = xt.dot(&b)? / b.dot(&b)?;
    let r: f64 = x
        .iter()
        .zip(b.data())
        .map(|(a, c)| (a - s * c).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(r / xn)
}

/// Mean relative reconstruction error over the rows of `data`.
pub fn mean_reconstruct_error(data: &RealTensor, rotation: Option<&RotationMatrix>) -> Result<f64> {
    let errs = data
        .iter_rows()
        .map(|row| binarize_reconstruct_error(row, rotation))
        .collect::<Result<Vec<_>>>()?;
    Ok(crate::stats::mean(&errs))
}
