use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::{Error, RealTensor, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `x ~ N(0, I)`, a single class.
    IsotropicGaussian,
    /// `x = F·z + noise` with `z ~ N(0, I_rank)` and isotropic noise at 1%
    /// of the per-coordinate signal scale. With `axis_aligned` the columns of
    /// `F` are the first `rank` canonical basis vectors; otherwise they are
    /// Gaussian and so randomly oriented.
    LowRank { rank: usize, axis_aligned: bool },
    /// Two classes on either side of a random hyperplane through the origin,
    /// each point at distance at least `margin` from it.
    SeparableClassification { margin: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub dim: usize,
    pub num_samples: usize,
    pub seed: u64,
}

const LOW_RANK_NOISE: f64 = 0.01;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Deterministic synthetic dataset.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec {
        kind,
        dim,
        num_samples: n,
        seed,
    } = *spec;
    if dim == 0 || n == 0 {
        return Err(Error::invalid("synthetic data needs dim >= 1 and num_samples >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    let (labels, num_classes) = match kind {
        SyntheticKind::IsotropicGaussian => {
            data.extend((0..n * dim).map(|_| gaussian(&mut rng)));
            (vec![0; n], 1)
        }
        SyntheticKind::LowRank { rank, axis_aligned } => {
            if rank == 0 || rank > dim {
                return Err(Error::invalid(format!("rank {rank} must be in 1..={dim}")));
            }
            // factors[k] is the k-th column of F.
            let factors: Vec<Vec<f64>> = (0..rank)
                .map(|k| {
                    if axis_aligned {
                        (0..dim).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
                    } else {
                        (0..dim)
                            .map(|_| gaussian(&mut rng) / (dim as f64).sqrt())
                            .collect()
                    }
                })
                .collect();
            let signal: f64 = factors.iter().flatten().map(|v| v * v).sum();
            let noise = LOW_RANK_NOISE * (signal / dim as f64).sqrt();
            let mut x = vec![0.0; dim];
            for _ in 0..n {
                x.iter_mut().for_each(|v| *v = noise * gaussian(&mut rng));
                for f in &factors {
                    let z = gaussian(&mut rng);
                    x.iter_mut().zip(f).for_each(|(v, fi)| *v += z * fi);
                }
                data.extend_from_slice(&x);
            }
            (vec![0; n], 1)
        }
        SyntheticKind::SeparableClassification { margin } => {
            if !(margin > 0.0 && margin.is_finite()) {
                return Err(Error::invalid("margin must be positive"));
            }
            let mut u: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            u.iter_mut().for_each(|v| *v /= norm);
            let mut labels: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
            labels.shuffle(&mut rng);
            for &label in &labels {
                let mut x: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
                let along: f64 = x.iter().zip(&u).map(|(a, b)| a * b).sum();
                let side = if label == 1 { 1.0 } else { -1.0 };
                let offset = side * (margin + gaussian(&mut rng).abs()) - along;
                x.iter_mut().zip(&u).for_each(|(v, ui)| *v += offset * ui);
                data.extend_from_slice(&x);
            }
            (labels, 2)
        }
    };
    Dataset::new(
        RealTensor::matrix(n, dim, data)?,
        labels,
        num_classes,
        Split::Synthetic,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::pca_spectrum;

    #[test]
    fn isotropic_covariance_is_identity() {
        let ds = generate_synthetic(&SyntheticSpec {
            kind: SyntheticKind::IsotropicGaussian,
            dim: 16,
            num_samples: 100_000,
            seed: 1,
        })
        .unwrap();
        let x = ds.images.view2();
        let cov = x.t().dot(&x) / 100_000.0;
        for i in 0..16 {
            for j in 0..16 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((cov[[i, j]] - target).abs() < 5e-2);
            }
        }
    }

    #[test]
    fn low_rank_top_components_dominate() {
        for axis_aligned in [false, true] {
            let ds = generate_synthetic(&SyntheticSpec {
                kind: SyntheticKind::LowRank {
                    rank: 3,
                    axis_aligned,
                },
                dim: 27,
                num_samples: 5000,
                seed: 2,
            })
            .unwrap();
            let spec = pca_spectrum(&ds.images).unwrap();
            assert!(spec.explained_variance_ratio[2] > 0.9);
        }
    }

    #[test]
    fn rank_above_dim_is_rejected() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::LowRank {
                rank: 5,
                axis_aligned: false,
            },
            dim: 4,
            num_samples: 10,
            seed: 0,
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::SeparableClassification { margin: 1.0 },
            dim: 20,
            num_samples: 50,
            seed: 9,
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn separable_data_is_separated_by_margin() {
        let ds = generate_synthetic(&SyntheticSpec {
            kind: SyntheticKind::SeparableClassification { margin: 2.0 },
            dim: 10,
            num_samples: 400,
            seed: 4,
        })
        .unwrap();
        // Perceptron converges in finitely many passes iff the data is separable.
        let mut w = vec![0.0; 11];
        let converged = (0..1000).any(|_| {
            let mut mistakes = 0;
            for (row, &l) in ds.images.iter_rows().zip(&ds.labels) {
                let y = if l == 1 { 1.0 } else { -1.0 };
                let score = w[10] + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                if y * score <= 0.0 {
                    mistakes += 1;
                    w.iter_mut().zip(row).for_each(|(wi, xi)| *wi += y * xi);
                    w[10] += y;
                }
            }
            mistakes == 0
        });
        assert!(converged);
    }
}
