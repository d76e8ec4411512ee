//! Learning dynamics of binary-weight linear regression.
//!
//! Backpropagating a squared loss through `w_b = θ(w_c)` with the identity
//! straight-through rule and averaging over data gives
//! `Δw_c ∝ C_yx − θ(w_c)·C_xx`. With `C_xx = I` every entry decouples into
//! the scalar map `w ← w + ε(α − θ(w))`: for `|α| ≤ 1` the weight settles
//! into a band `|w| ≤ 2ε` and oscillates so that `θ(w)` is `+1` a fraction
//! `(1 + α)/2` of the time, making `θ(w)` correct on average; for `|α| > 1`
//! the step never changes sign and `w` diverges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{stats, Error, RealTensor, Result};

fn sign(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// Trajectory of the scalar map `w ← w + ε(α − θ(w))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarTrace {
    pub alpha: f64,
    pub epsilon: f64,
    /// `w` before each update; `w_trajectory[0] = w0`.
    pub w_trajectory: Vec<f64>,
    /// `θ(w_trajectory[t])`.
    pub theta_trajectory: Vec<i8>,
    /// First step inside the `|w| ≤ 2ε` band, or `steps / 10` if never reached.
    pub burn_in: usize,
}

/// Run `steps` updates from `w0` (default `α·ε`).
pub fn simulate_scalar(alpha: f64, epsilon: f64, steps: usize, w0: Option<f64>) -> Result<ScalarTrace> {
    check_epsilon(epsilon)?;
    if steps < 1 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    if !alpha.is_finite() {
        return Err(Error::invalid("alpha must be finite"));
    }
    let mut w = w0.unwrap_or(alpha * epsilon);
    let mut w_trajectory = Vec::with_capacity(steps);
    let mut theta_trajectory = Vec::with_capacity(steps);
    for _ in 0..steps {
        let t = sign(w);
        w_trajectory.push(w);
        theta_trajectory.push(t as i8);
        w += epsilon * (alpha - t);
    }
    let band = 2.0 * epsilon;
    let burn_in = w_trajectory
        .iter()
        .position(|w| w.abs() <= band)
        .unwrap_or(steps / 10);
    Ok(ScalarTrace {
        alpha,
        epsilon,
        w_trajectory,
        theta_trajectory,
        burn_in,
    })
}

impl ScalarTrace {
    pub fn steps(&self) -> usize {
        self.w_trajectory.len()
    }

    fn post_burn_in(&self) -> &[i8] {
        &self.theta_trajectory[self.burn_in.min(self.steps())..]
    }

    /// Time average of `θ(w)` after burn-in.
    pub fn time_avg_theta(&self) -> f64 {
        self.time_avg_theta_until(self.steps())
    }

    /// Time average of `θ(w)` over `[burn_in, horizon)`.
    pub fn time_avg_theta_until(&self, horizon: usize) -> f64 {
        let end = horizon.min(self.steps());
        let window = &self.theta_trajectory[self.burn_in.min(end)..end];
        let vals: Vec<f64> = window.iter().map(|&t| f64::from(t)).collect();
        stats::mean(&vals)
    }

    /// Fraction of post-burn-in steps with `w > 0`.
    pub fn p_hat(&self) -> f64 {
        let window = self.post_burn_in();
        window.iter().filter(|&&t| t > 0).count() as f64 / window.len() as f64
    }

    /// Largest `|w|` from burn-in onwards.
    pub fn max_abs_after_burn_in(&self) -> f64 {
        self.w_trajectory[self.burn_in.min(self.steps())..]
            .iter()
            .fold(0.0, |m, w| m.max(w.abs()))
    }

    pub fn sign_changes(&self) -> usize {
        self.theta_trajectory.windows(2).filter(|w| w[0] != w[1]).count()
    }

    pub fn summary(&self) -> ScalarSummary {
        ScalarSummary {
            alpha: self.alpha,
            epsilon: self.epsilon,
            steps: self.steps(),
            p_hat: self.p_hat(),
            time_avg_theta: self.time_avg_theta(),
            burn_in: self.burn_in,
            sign_changes: self.sign_changes(),
            max_abs_w_after_burn_in: self.max_abs_after_burn_in(),
            final_w: *self.w_trajectory.last().expect("steps >= 1"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub alpha: f64,
    pub epsilon: f64,
    pub steps: usize,
    pub p_hat: f64,
    pub time_avg_theta: f64,
    pub burn_in: usize,
    pub sign_changes: usize,
    pub max_abs_w_after_burn_in: f64,
    pub final_w: f64,
}

/// Second-moment statistics of a linear regression `y ≈ W·x`.
///
/// `c_yx` is `out × in`, `c_xx` is `in × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionProblem {
    pub c_yx: RealTensor,
    pub c_xx: RealTensor,
}

impl RegressionProblem {
    pub fn new(c_yx: RealTensor, c_xx: RealTensor) -> Result<Self> {
        if c_yx.shape().len() != 2 || c_xx.shape().len() != 2 {
            return Err(Error::shape("matrices", format!("{:?} and {:?}", c_yx.shape(), c_xx.shape())));
        }
        let d = c_xx.rows();
        if c_xx.cols() != d || c_yx.cols() != d {
            return Err(Error::shape(
                format!("C_yx (out × {d}) and C_xx ({d} × {d})"),
                format!("{:?} and {:?}", c_yx.shape(), c_xx.shape()),
            ));
        }
        let m = nalgebra::DMatrix::from_row_slice(d, d, c_xx.data());
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-10 {
            return Err(Error::invalid(format!("C_xx is not symmetric (max asymmetry {asym:e})")));
        }
        let min_eig = m.symmetric_eigenvalues().min();
        if min_eig < -1e-10 {
            return Err(Error::invalid(format!("C_xx is not PSD (eigenvalue {min_eig:e})")));
        }
        Ok(Self { c_yx, c_xx })
    }

    /// Estimate `C_yx = E[y xᵀ]` and `C_xx = E[x xᵀ]` from samples (rows of `x`, `y`).
    pub fn from_data(x: &RealTensor, y: &RealTensor) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::DimensionMismatch {
                left: x.rows(),
                right: y.rows(),
            });
        }
        let n = x.rows() as f64;
        let (xv, yv) = (x.view2(), y.view2());
        let c_xx = xv.t().dot(&xv) / n;
        let c_xx = (&c_xx + &c_xx.t()) / 2.0;
        let c_yx = yv.t().dot(&xv) / n;
        Self::new(RealTensor::from_array2(c_yx)?, RealTensor::from_array2(c_xx)?)
    }

    pub fn identity_covariance(c_yx: RealTensor) -> Result<Self> {
        let d = c_yx.cols();
        let mut eye = vec![0.0; d * d];
        (0..d).for_each(|i| eye[i * d + i] = 1.0);
        Self::new(c_yx, RealTensor::matrix(d, d, eye)?)
    }

    pub fn outputs(&self) -> usize {
        self.c_yx.rows()
    }

    pub fn inputs(&self) -> usize {
        self.c_xx.rows()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixSpec {
    c_yx: Vec<Vec<f64>>,
    c_xx: Option<Vec<Vec<f64>>>,
}

/// Parse a JSON regression problem: `{"c_yx": [[..], ..], "c_xx": [[..], ..]}`,
/// both as lists of rows. A missing `c_xx` means the identity.
pub fn parse_matrix_spec(text: &str) -> Result<RegressionProblem> {
    let spec: MatrixSpec =
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("matrix spec: {e}")))?;
    if spec.c_yx.is_empty() || spec.c_yx[0].is_empty() {
        return Err(Error::invalid("matrix spec: c_yx must be non-empty"));
    }
    let c_yx = RealTensor::from_rows(&spec.c_yx)?;
    match spec.c_xx {
        None => RegressionProblem::identity_covariance(c_yx),
        Some(rows) if rows.is_empty() => Err(Error::invalid("matrix spec: c_xx must be non-empty")),
        Some(rows) => RegressionProblem::new(c_yx, RealTensor::from_rows(&rows)?),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTrace {
    pub epsilon: f64,
    pub steps: usize,
    /// Steps discarded before averaging (the first tenth).
    pub burn_in: usize,
    /// Per-entry time average of `θ(w_c)` after burn-in.
    pub time_avg_theta: RealTensor,
    pub final_w: RealTensor,
    /// Every iterate including the start, when recording was requested.
    pub trajectory: Option<Vec<RealTensor>>,
}

/// One update `w ← clip(w + ε(C_yx − θ(w)·C_xx), −1, 1)`.
pub fn regression_step(w: &mut [f64], problem: &RegressionProblem, epsilon: f64) {
    let (out, d) = (problem.outputs(), problem.inputs());
    let theta: Vec<f64> = w.iter().map(|&v| sign(v)).collect();
    let cxx = problem.c_xx.data();
    let cyx = problem.c_yx.data();
    for o in 0..out {
        let trow = &theta[o * d..(o + 1) * d];
        for j in 0..d {
            let mut tc = 0.0;
            for (k, t) in trow.iter().enumerate() {
                tc += t * cxx[k * d + j];
            }
            let idx = o * d + j;
            w[idx] = (w[idx] + epsilon * (cyx[idx] - tc)).clamp(-1.0, 1.0);
        }
    }
}

/// Iterate the matrix dynamics from a small seeded start in `[−ε, ε]`.
pub fn simulate_regression(
    problem: &RegressionProblem,
    epsilon: f64,
    steps: usize,
    seed: u64,
    record_trajectory: bool,
) -> Result<RegressionTrace> {
    check_epsilon(epsilon)?;
    if steps < 1 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    let (out, d) = (problem.outputs(), problem.inputs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..out * d).map(|_| rng.random_range(-epsilon..=epsilon)).collect();
    let burn_in = steps / 10;
    let mut theta_sum = vec![0.0; out * d];
    let mut trajectory = record_trajectory.then(|| Vec::with_capacity(steps + 1));
    for t in 0..steps {
        if let Some(tr) = trajectory.as_mut() {
            tr.push(RealTensor::matrix(out, d, w.clone())?);
        }
        if t >= burn_in {
            theta_sum.iter_mut().zip(&w).for_each(|(s, &v)| *s += sign(v));
        }
        regression_step(&mut w, problem, epsilon);
    }
    if let Some(tr) = trajectory.as_mut() {
        tr.push(RealTensor::matrix(out, d, w.clone())?);
    }
    let counted = (steps - burn_in) as f64;
    Ok(RegressionTrace {
        epsilon,
        steps,
        burn_in,
        time_avg_theta: RealTensor::matrix(out, d, theta_sum.iter().map(|s| s / counted).collect())?,
        final_w: RealTensor::matrix(out, d, w)?,
        trajectory,
    })
}

/// Variance over time of the normalized dot-product error
/// `(θ(w)·x − α·x) / ‖x‖²` for a fixed seeded ±1 probe `x`.
///
/// Each coordinate runs the scalar map from a uniformly random point of its
/// oscillation band `(−ε(1 − α), ε(1 + α)]`, so the coordinates start out of
/// phase. The result shrinks like `1/dim`.
pub fn dot_product_estimator_variance(alphas: &[f64], epsilon: f64, steps: usize, seed: u64) -> Result<f64> {
    check_epsilon(epsilon)?;
    if alphas.is_empty() || steps < 1 {
        return Err(Error::invalid("need at least one alpha and one step"));
    }
    if let Some(a) = alphas.iter().find(|a| !(a.abs() < 1.0)) {
        return Err(Error::invalid(format!(
            "alpha {a} is in the divergent regime |alpha| >= 1"
        )));
    }
    let dim = alphas.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe: Vec<f64> = (0..dim)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let mut w: Vec<f64> = alphas
        .iter()
        .map(|&a| {
            let lo = -epsilon * (1.0 - a);
            let hi = epsilon * (1.0 + a);
            // (lo, hi]: reflect the half-open [lo, hi) draw.
            hi - rng.random_range(0.0..(hi - lo))
        })
        .collect();
    let target: f64 = alphas.iter().zip(&probe).map(|(a, x)| a * x).sum();
    let norm_sq = dim as f64;
    let mut series = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut dot = 0.0;
        for ((wi, &a), &x) in w.iter_mut().zip(alphas).zip(&probe) {
            let t = sign(*wi);
            dot += t * x;
            *wi += epsilon * (a - t);
        }
        series.push((dot - target) / norm_sq);
    }
    Ok(stats::variance(&series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_alpha_fixed_point() {
        let tr = simulate_scalar(0.5, 1e-3, 100_000, None).unwrap();
        assert!((tr.p_hat() - 0.75).abs() < 0.02);
        assert!((tr.time_avg_theta() - 0.5).abs() < 0.04);
    }

    #[test]
    fn zero_alpha_is_symmetric() {
        let tr = simulate_scalar(0.0, 1e-3, 100_000, None).unwrap();
        assert!(tr.time_avg_theta().abs() < 0.02);
    }

    #[test]
    fn large_alpha_diverges() {
        let eps = 1e-3;
        let tr = simulate_scalar(1.5, eps, (100.0 / eps) as usize, None).unwrap();
        assert!(tr.w_trajectory.iter().any(|&w| w > 10.0));
        // Eventually monotone.
        assert!(tr.w_trajectory.windows(2).skip(10).all(|p| p[1] > p[0]));
        let neg = simulate_scalar(-1.5, eps, 20_000, None).unwrap();
        assert!(neg.w_trajectory.last().unwrap() < &-9.0);
    }

    #[test]
    fn burn_in_falls_back_when_band_is_never_reached() {
        let tr = simulate_scalar(0.3, 1e-3, 1000, Some(5.0)).unwrap();
        assert_eq!(tr.burn_in, 100);
        let tr = simulate_scalar(0.3, 1e-3, 1000, Some(0.01)).unwrap();
        assert!(tr.burn_in > 0 && tr.burn_in < 100);
    }

    #[test]
    fn step_sizes_are_exact() {
        let (alpha, eps) = (0.3, 0.01);
        let tr = simulate_scalar(alpha, eps, 5000, Some(0.0)).unwrap();
        for (w, pair) in tr.theta_trajectory.iter().zip(tr.w_trajectory.windows(2)) {
            let step = pair[1] - pair[0];
            let want = if *w > 0 { -eps * (1.0 - alpha) } else { eps * (1.0 + alpha) };
            assert!((step - want).abs() < 1e-15);
        }
    }

    #[test]
    fn bounded_oscillation_and_many_sign_changes() {
        for alpha in [-0.99, -0.7, -0.2, 0.0, 0.1, 0.6, 0.95, 1.0, -1.0] {
            let eps = 1e-3;
            let tr = simulate_scalar(alpha, eps, 100_000, None).unwrap();
            assert!(tr.max_abs_after_burn_in() <= 2.0 * eps, "alpha = {alpha}");
            if f64::abs(alpha) < 1.0 {
                assert!(tr.sign_changes() >= 100, "alpha = {alpha}");
            }
        }
    }

    #[test]
    fn time_average_error_decays_like_inverse_horizon() {
        // Irrational alpha so the orbit is not periodic.
        let alpha = 1.0 / std::f64::consts::PI;
        let tr = simulate_scalar(alpha, 1e-3, 400_000, None).unwrap();
        for horizon in [1_000usize, 10_000, 100_000, 400_000] {
            let err = (tr.time_avg_theta_until(horizon) - alpha).abs();
            // Discrepancy of a rotation: |error| · T stays bounded.
            assert!(err * horizon as f64 <= 4.0, "T = {horizon}: {err}");
        }
    }

    #[test]
    fn identity_covariance_regression_tracks_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cyx: Vec<f64> = (0..100).map(|_| rng.random_range(-0.95..0.95)).collect();
        let problem = RegressionProblem::identity_covariance(RealTensor::matrix(1, 100, cyx.clone()).unwrap()).unwrap();
        let tr = simulate_regression(&problem, 1e-3, 100_000, 1, false).unwrap();
        let worst = tr
            .time_avg_theta
            .data()
            .iter()
            .zip(&cyx)
            .map(|(t, a)| (t - a).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "{worst}");
    }

    #[test]
    fn zero_target_oscillates_about_zero() {
        let problem = RegressionProblem::identity_covariance(RealTensor::zeros(vec![2, 8]).unwrap()).unwrap();
        let tr = simulate_regression(&problem, 1e-3, 20_000, 3, false).unwrap();
        assert!(tr.time_avg_theta.data().iter().all(|t| t.abs() <= 0.05));
    }

    #[test]
    fn diagonal_covariance_matches_brute_force_oracle() {
        let problem = RegressionProblem::new(
            RealTensor::matrix(1, 2, vec![0.5, 0.5]).unwrap(),
            RealTensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 4.0]).unwrap(),
        )
        .unwrap();
        let eps = 0.01;
        let tr = simulate_regression(&problem, eps, 500, 11, true).unwrap();
        let traj = tr.trajectory.unwrap();
        // Diagonal C_xx decouples: entry j follows w ← clip(w + ε(c_j − θ(w)·d_j)).
        let (c, dgn) = ([0.5, 0.5], [1.0, 4.0]);
        let mut w = traj[0].data().to_vec();
        for state in &traj[1..] {
            for j in 0..2 {
                let t = if w[j] > 0.0 { 1.0 } else { -1.0 };
                w[j] = (w[j] + eps * (c[j] - t * dgn[j])).clamp(-1.0, 1.0);
            }
            assert_eq!(state.data(), w.as_slice());
        }
    }

    #[test]
    fn problem_validation() {
        let bad = RealTensor::matrix(2, 2, vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(RegressionProblem::new(RealTensor::zeros(vec![1, 2]).unwrap(), bad).is_err());
        let neg = RealTensor::matrix(2, 2, vec![-1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(RegressionProblem::new(RealTensor::zeros(vec![1, 2]).unwrap(), neg).is_err());
        let eye = RealTensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(RegressionProblem::new(RealTensor::zeros(vec![1, 3]).unwrap(), eye).is_err());
    }

    #[test]
    fn regression_from_data_recovers_moments() {
        let x = RealTensor::matrix(4, 2, vec![1., 0., -1., 0., 0., 1., 0., -1.]).unwrap();
        let y = RealTensor::matrix(4, 1, vec![1., -1., 0.5, -0.5]).unwrap();
        let p = RegressionProblem::from_data(&x, &y).unwrap();
        assert_eq!(p.c_xx.data(), &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(p.c_yx.data(), &[0.5, 0.25]);
    }

    #[test]
    fn estimator_variance_examples() {
        let v = dot_product_estimator_variance(&[0.0], 1e-3, 10_000, 0).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
        let v = dot_product_estimator_variance(&[0.999; 4], 1e-3, 100_000, 0).unwrap();
        // Per coordinate Var θ = 1 − α² ≈ 0.002; averaged over 4 coordinates.
        assert!(v < 0.002, "{v}");
        assert!(dot_product_estimator_variance(&[0.5, 1.0], 1e-3, 10, 0).is_err());
    }

    #[test]
    fn matrix_spec_parsing() {
        let p = parse_matrix_spec(r#"{"c_yx": [[0.5, -0.2]], "c_xx": [[1, 0], [0, 4]]}"#).unwrap();
        assert_eq!((p.outputs(), p.inputs()), (1, 2));
        let p = parse_matrix_spec(r#"{"c_yx": [[0.5], [0.1]]}"#).unwrap();
        assert_eq!(p.c_xx.data(), &[1.0]);
        for bad in [
            "",
            "{}",
            r#"{"c_yx": []}"#,
            r#"{"c_yx": [[1, 2], [3]]}"#,
            r#"{"c_yx": [[1]], "c_xx": [[1, 2], [0, 1]]}"#,
            r#"{"c_yx": [[1]], "c_xx": [[-1]]}"#,
            r#"{"c_yx": [[1]], "extra": 1}"#,
        ] {
            assert!(parse_matrix_spec(bad).is_err(), "{bad}");
        }
    }
}
