use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, RealTensor, Result};

/// Which construction [`random_rotation`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RotationKind {
    /// Orthogonalized Gaussian matrix, `O(d²)` to apply.
    Dense,
    /// Random ±1 diagonal followed by a normalized Walsh–Hadamard transform,
    /// `O(d log d)` to apply. Requires a power-of-two dimension.
    Fast,
}

/// An orthogonal matrix `R` with `det R = +1` in dense form.
#[derive(Clone, Debug, PartialEq)]
pub enum RotationMatrix {
    Dense(RealTensor),
    /// `R·x = H·(D·x)/√d` with `D = diag(signs)`.
    Fast { signs: Vec<f64> },
}

/// In-place unnormalized Walsh–Hadamard transform; `data.len()` must be a power of two.
pub fn fwht(data: &mut [f64]) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in data.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

impl RotationMatrix {
    pub fn identity(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("rotation dimension must be positive"));
        }
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Ok(Self::Dense(RealTensor::matrix(dim, dim, data)?))
    }

    /// Wrap an explicit matrix, checking `RᵀR = I` to 1e-10.
    pub fn from_dense(m: RealTensor) -> Result<Self> {
        let (r, c) = (m.rows(), m.cols());
        if m.shape().len() != 2 || r != c {
            return Err(Error::shape("square matrix", format!("{:?}", m.shape())));
        }
        let rot = Self::Dense(m);
        let err = rot.orthogonality_error();
        if err > 1e-10 {
            return Err(Error::invalid(format!(
                "matrix is not orthogonal (max |RᵀR − I| = {err:e})"
            )));
        }
        Ok(rot)
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dense(m) => m.rows(),
            Self::Fast { signs } => signs.len(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: x.len(),
            });
        }
        Ok(())
    }

    /// `R·x`
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(match self {
            Self::Dense(m) => m.iter_rows().map(|row| dot(row, x)).collect(),
            Self::Fast { signs } => {
                let mut y: Vec<f64> = x.iter().zip(signs).map(|(a, s)| a * s).collect();
                fwht(&mut y);
                let scale = (signs.len() as f64).sqrt().recip();
                y.iter_mut().for_each(|v| *v *= scale);
                y
            }
        })
    }

    /// `Rᵀ·y`
    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y)?;
        Ok(match self {
            Self::Dense(m) => {
                let d = self.dim();
                let mut out = vec![0.0; d];
                for (row, &yi) in m.iter_rows().zip(y) {
                    for (o, r) in out.iter_mut().zip(row) {
                        *o += r * yi;
                    }
                }
                out
            }
            Self::Fast { signs } => {
                let mut x = y.to_vec();
                fwht(&mut x);
                let scale = (signs.len() as f64).sqrt().recip();
                x.iter_mut().zip(signs).for_each(|(v, s)| *v *= s * scale);
                x
            }
        })
    }

    /// Materialize as a dense matrix (column `j` is `R·eⱼ`).
    pub fn to_dense(&self) -> RealTensor {
        match self {
            Self::Dense(m) => m.clone(),
            Self::Fast { .. } => {
                let d = self.dim();
                let mut data = vec![0.0; d * d];
                let mut e = vec![0.0; d];
                for j in 0..d {
                    e[j] = 1.0;
                    let col = self.apply(&e).expect("dimension matches");
                    e[j] = 0.0;
                    for (i, v) in col.into_iter().enumerate() {
                        data[i * d + j] = v;
                    }
                }
                RealTensor::matrix(d, d, data).expect("finite")
            }
        }
    }

    /// `max |RᵀR − I|` by explicit multiplication.
    pub fn orthogonality_error(&self) -> f64 {
        let m = self.to_dense();
        let d = m.rows();
        let r = DMatrix::from_row_slice(d, d, m.data());
        let gram = r.transpose() * &r;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Seeded random rotation of the requested kind.
///
/// The dense form orthogonalizes a standard-normal matrix by QR, fixes the
/// column signs so the draw is Haar-distributed on O(d), then flips one
/// column if needed so that `det R = +1`.
pub fn random_rotation(dim: usize, seed: u64, kind: RotationKind) -> Result<RotationMatrix> {
    if dim == 0 {
        return Err(Error::invalid("rotation dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        RotationKind::Fast => {
            if !dim.is_power_of_two() {
                return Err(Error::invalid(format!(
                    "fast rotation needs a power-of-two dimension, got {dim}"
                )));
            }
            let signs = (0..dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            Ok(RotationMatrix::Fast { signs })
        }
        RotationKind::Dense => {
            let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
            let qr = g.qr();
            let (mut q, r) = (qr.q(), qr.r());
            for j in 0..dim {
                if r[(j, j)] < 0.0 {
                    q.column_mut(j).neg_mut();
                }
            }
            if q.determinant() < 0.0 {
                q.column_mut(0).neg_mut();
            }
            let data: Vec<f64> = q.transpose().iter().copied().collect();
            Ok(RotationMatrix::Dense(RealTensor::matrix(dim, dim, data)?))
        }
    }
}

/// Generalized binarization `θ_R(x) = Rᵀ·θ(R·x)`.
///
/// The result is real-valued: `Rᵀ` does not preserve the ±1 lattice.
pub fn gbt(x: &RealTensor, rotation: &RotationMatrix) -> Result<RealTensor> {
    if !x.is_vector() {
        return Err(Error::shape("vector", format!("{:?}", x.shape())));
    }
    let rotated = rotation.apply(x.data())?;
    let signs: Vec<f64> = rotated
        .iter()
        .map(|&v| if v > 0.0 { 1.0 } else { -1.0 })
        .collect();
    RealTensor::vector(rotation.apply_transpose(&signs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcore::binarize;

    fn dense_matvec(m: &RealTensor, x: &[f64]) -> Vec<f64> {
        m.iter_rows().map(|r| dot(r, x)).collect()
    }

    fn dense_matvec_t(m: &RealTensor, y: &[f64]) -> Vec<f64> {
        let d = m.cols();
        (0..d)
            .map(|j| (0..m.rows()).map(|i| m.row(i)[j] * y[i]).sum())
            .collect()
    }

    #[test]
    fn fwht_of_delta_is_constant() {
        let mut x = vec![0.0; 8];
        x[0] = 1.0;
        fwht(&mut x);
        assert_eq!(x, vec![1.0; 8]);
        fwht(&mut x);
        assert_eq!(x[0], 8.0);
        assert!(x[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dim_one_is_plus_or_minus_one() {
        for seed in 0..5 {
            let r = random_rotation(1, seed, RotationKind::Dense).unwrap();
            let v = r.to_dense().data()[0];
            assert!(v == 1.0 || v == -1.0);
            assert!(r.orthogonality_error() < 1e-15);
        }
    }

    #[test]
    fn dense_rotation_is_orthogonal_with_positive_determinant() {
        let r = random_rotation(32, 9, RotationKind::Dense).unwrap();
        assert!(r.orthogonality_error() < 1e-10);
        let m = r.to_dense();
        let det = DMatrix::from_row_slice(32, 32, m.data()).determinant();
        assert!((det - 1.0).abs() < 1e-8);
    }

    #[test]
    fn fast_rotation_round_trips() {
        let r = random_rotation(64, 4, RotationKind::Fast).unwrap();
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let back = r.apply_transpose(&r.apply(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(r.orthogonality_error() < 1e-10);
    }

    #[test]
    fn fast_rotation_rejects_non_power_of_two() {
        assert!(random_rotation(48, 0, RotationKind::Fast).is_err());
        assert!(random_rotation(0, 0, RotationKind::Dense).is_err());
    }

    #[test]
    fn rotation_is_deterministic_in_seed() {
        let a = random_rotation(16, 77, RotationKind::Dense).unwrap();
        let b = random_rotation(16, 77, RotationKind::Dense).unwrap();
        assert_eq!(a, b);
        let c = random_rotation(16, 78, RotationKind::Dense).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gbt_identity_is_binarize() {
        let x = RealTensor::vector(vec![0.3, -2.0, 0.0, 5.0]).unwrap();
        let id = RotationMatrix::identity(4).unwrap();
        let out = gbt(&x, &id).unwrap();
        assert_eq!(out.data(), binarize(&x).unwrap().unpack().as_slice());
        let zero = RealTensor::vector(vec![0.0; 6]).unwrap();
        let out = gbt(&zero, &RotationMatrix::identity(6).unwrap()).unwrap();
        assert_eq!(out.data(), &[-1.0; 6]);
    }

    #[test]
    fn gbt_matches_dense_composition() {
        let r = random_rotation(64, 21, RotationKind::Dense).unwrap();
        let m = r.to_dense();
        let x: Vec<f64> = (0..64).map(|i| ((i * 7 % 13) as f64 - 6.0) * 0.1).collect();
        let rx = dense_matvec(&m, &x);
        let b = binarize(&RealTensor::vector(rx).unwrap()).unwrap().unpack();
        let want = dense_matvec_t(&m, &b);
        let got = gbt(&RealTensor::vector(x).unwrap(), &r).unwrap();
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn gbt_output_has_norm_sqrt_d() {
        for kind in [RotationKind::Dense, RotationKind::Fast] {
            let r = random_rotation(32, 5, kind).unwrap();
            let x = RealTensor::vector((0..32).map(|i| (i as f64).cos()).collect()).unwrap();
            let y = gbt(&x, &r).unwrap();
            assert!((y.norm() - 32f64.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn from_dense_rejects_non_orthogonal() {
        let m = RealTensor::matrix(2, 2, vec![1.0, 0.1, 0.0, 1.0]).unwrap();
        assert!(RotationMatrix::from_dense(m).is_err());
    }
}
