use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bnn::{Layer, Network};
use crate::{hdgeom, stats, Error, RealTensor, Result};

/// Angle in degrees between `w` and `θ(w)`; 90° for the zero vector.
pub fn binarization_angle_deg(w: &[f64]) -> f64 {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 90.0;
    }
    // 2·atan2(‖u − v‖, ‖u + v‖) for unit u, v stays accurate near 0°.
    let inv_sqrt_d = 1.0 / (w.len() as f64).sqrt();
    let (mut diff, mut sum) = (0.0, 0.0);
    for &x in w {
        let u = x / norm;
        let v = if x > 0.0 { inv_sqrt_d } else { -inv_sqrt_d };
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    (2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees()
}

/// Angles between every weight row and its binarization, with the
/// Gaussian-vector prediction at the row dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleHistogram {
    pub layer_id: String,
    pub dim: usize,
    pub angles_deg: Vec<f64>,
    pub theory_mean_deg: f64,
    pub theory_std_deg: f64,
    /// One-degree bins over `[0, 90]`.
    pub counts: Vec<u64>,
}

impl AngleHistogram {
    pub fn from_rows(layer_id: impl Into<String>, w: &RealTensor) -> Result<Self> {
        let dim = w.cols();
        let theory = hdgeom::binarized_cosine_stats(dim as u64)?;
        let angles_deg: Vec<f64> = w.iter_rows().map(binarization_angle_deg).collect();
        let mut counts = vec![0u64; 90];
        for &a in &angles_deg {
            counts[(a as usize).min(89)] += 1;
        }
        Ok(Self {
            layer_id: layer_id.into(),
            dim,
            angles_deg,
            theory_mean_deg: theory.mean_angle_deg,
            theory_std_deg: theory.angle_std_deg(),
            counts,
        })
    }

    pub fn mean_deg(&self) -> f64 {
        stats::mean(&self.angles_deg)
    }

    pub fn std_deg(&self) -> f64 {
        stats::std_dev(&self.angles_deg)
    }
}

/// `layer{k}`, counting dense layers from 1.
pub fn layer_id(dense_index: usize) -> String {
    format!("layer{}", dense_index + 1)
}

/// One histogram per binary dense layer.
pub fn weight_angle_histogram(net: &Network) -> Result<Vec<AngleHistogram>> {
    let mut out = Vec::new();
    for (k, &i) in net.dense_layers().iter().enumerate() {
        if let Layer::BinaryDense(l) = &net.layers()[i] {
            out.push(AngleHistogram::from_rows(layer_id(k), l.latent())?);
        }
    }
    Ok(out)
}

/// Monte Carlo mean and standard deviation of the binarization angle of
/// vectors with i.i.d. uniform `[−1, 1]` entries.
pub fn uniform_angle_oracle(dim: usize, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; dim];
    let angles: Vec<f64> = (0..samples)
        .map(|_| {
            w.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            binarization_angle_deg(&w)
        })
        .collect();
    (stats::mean(&angles), stats::std_dev(&angles))
}

/// Histogram of the entries of one weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentHistogram {
    pub layer_id: String,
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mass_below_zero: f64,
    pub mass_above_zero: f64,
    /// Fraction of entries with `|w| ≤ 0.05·max|w|`.
    pub near_zero_mass: f64,
    /// `near_zero_mass` divided by what a zero-mean Gaussian of the same
    /// standard deviation would put there.
    pub near_zero_excess: f64,
}

impl ComponentHistogram {
    pub fn from_values(layer_id: impl Into<String>, values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("component histogram of no weights".into()));
        }
        let n = values.len() as f64;
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (edges, counts) = if lo == hi {
            (vec![lo, hi], vec![values.len() as u64])
        } else {
            let bins = bins.max(1);
            let width = (hi - lo) / bins as f64;
            let mut counts = vec![0u64; bins];
            for &v in values {
                counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
            }
            ((0..=bins).map(|i| lo + i as f64 * width).collect(), counts)
        };
        let max_abs = lo.abs().max(hi.abs());
        let band = 0.05 * max_abs;
        let near_zero_mass = values.iter().filter(|v| v.abs() <= band).count() as f64 / n;
        let sd = stats::std_dev(values);
        let gaussian_mass = if sd > 0.0 {
            statrs::function::erf::erf(band / (sd * std::f64::consts::SQRT_2))
        } else {
            1.0
        };
        Ok(Self {
            layer_id: layer_id.into(),
            edges,
            counts,
            mass_below_zero: values.iter().filter(|&&v| v < 0.0).count() as f64 / n,
            mass_above_zero: values.iter().filter(|&&v| v > 0.0).count() as f64 / n,
            near_zero_mass,
            near_zero_excess: near_zero_mass / gaussian_mass,
        })
    }

    /// `|left − right| / max(left, right)`.
    pub fn asymmetry(&self) -> f64 {
        let m = self.mass_below_zero.max(self.mass_above_zero);
        if m == 0.0 {
            0.0
        } else {
            (self.mass_below_zero - self.mass_above_zero).abs() / m
        }
    }

    /// p-value of a chi-square test that the counts are uniform across bins.
    pub fn uniformity_p_value(&self) -> f64 {
        chi_square_uniform_p(&self.counts)
    }
}

pub fn chi_square_uniform_p(counts: &[u64]) -> f64 {
    let k = counts.len();
    if k < 2 {
        return 1.0;
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / k as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((k - 1) as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(chi2)
}

/// Entry histograms for every dense layer (continuous ones included).
pub fn weight_component_histogram(net: &Network, bins: usize) -> Result<Vec<ComponentHistogram>> {
    let mut out = Vec::new();
    for (k, &i) in net.dense_layers().iter().enumerate() {
        let w = match &net.layers()[i] {
            Layer::BinaryDense(l) => l.latent(),
            Layer::ContinuousDense(l) => l.weights(),
            _ => unreachable!("dense layer"),
        };
        out.push(ComponentHistogram::from_values(layer_id(k), w.data(), bins)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::ArchSpec;

    #[test]
    fn equal_entries_have_zero_angle() {
        assert!(binarization_angle_deg(&[0.3; 17]).abs() < 1e-6);
        assert!(binarization_angle_deg(&[-0.2; 5]).abs() < 1e-6);
        assert_eq!(binarization_angle_deg(&[0.0; 4]), 90.0);
    }

    #[test]
    fn angles_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [1usize, 2, 3, 10, 100] {
            for _ in 0..200 {
                let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let a = binarization_angle_deg(&w);
                assert!((0.0..=90.0).contains(&a));
            }
        }
    }

    #[test]
    fn initialized_network_matches_uniform_oracle() {
        let arch: ArchSpec = "64c-256b-128b-10s".parse().unwrap();
        let net = Network::from_arch(&arch, 3).unwrap();
        let hists = weight_angle_histogram(&net).unwrap();
        assert_eq!(hists.len(), 2);
        for h in hists {
            let (m, sd) = uniform_angle_oracle(h.dim, 20_000, 4);
            let se = sd / (h.angles_deg.len() as f64).sqrt();
            assert!((h.mean_deg() - m).abs() < 3.0 * se + 1e-9, "{}: {} vs {m}", h.layer_id, h.mean_deg());
            assert!(h.angles_deg.iter().all(|a| (0.0..=90.0).contains(a)));
        }
    }

    #[test]
    fn component_histograms() {
        let h = ComponentHistogram::from_values("l", &[0.4; 10], 20).unwrap();
        assert_eq!(h.counts, vec![10]);
        let arch: ArchSpec = "300b-200b-10s".parse().unwrap();
        let net = Network::from_arch(&arch, 5).unwrap();
        for h in weight_component_histogram(&net, 20).unwrap() {
            assert!(h.uniformity_p_value() > 0.01, "{}: {}", h.layer_id, h.uniformity_p_value());
            assert!(h.asymmetry() < 0.1);
        }
    }
}
