use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bitgeo::bitcore::{binarize, dot_bb, gbt, random_rotation, BitVector, RotationKind, RotationMatrix};
use bitgeo::data_io::{dataset_from_idx, encode_idx_images, parse_idx_images, write_idx, IdxImages, Split};
use bitgeo::diagnostics::{binarization_angle_deg, pca_spectrum, permute_features, DppReport};
use bitgeo::dynamics::simulate_scalar;
use bitgeo::hdgeom::{expected_cosine_binarized, mc_angle_samples};
use bitgeo::RealTensor;

fn signs(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

#[test]
fn expected_cosine_decreases_with_n() {
    let mut prev = expected_cosine_binarized(1).unwrap();
    for n in 2..=10_000 {
        let e = expected_cosine_binarized(n).unwrap();
        assert!(e < prev, "n = {n}: {e} >= {prev}");
        prev = e;
    }
}

#[test]
fn binarized_and_random_angles_separate_at_512() {
    let s = mc_angle_samples(512, 100_000, 512).unwrap();
    let n = s.num_samples as f64;
    let wide_eta = s.eta_angles_deg().iter().filter(|&&a| a > 50.0).count() as f64 / n;
    let off_rho = s.rho_angles_deg().iter().filter(|&&a| (90.0 - a).abs() > 20.0).count() as f64 / n;
    assert!(wide_eta < 1e-3, "{wide_eta}");
    assert!(off_rho < 1e-3, "{off_rho}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dot_bb_parity_and_bound(seed in any::<u64>(), d in 1usize..3000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = BitVector::from_signs(&signs(&mut rng, d)).unwrap();
        let b = BitVector::from_signs(&signs(&mut rng, d)).unwrap();
        let dot = dot_bb(&a, &b).unwrap();
        prop_assert!(dot.unsigned_abs() as usize <= d);
        prop_assert_eq!((dot - d as i64).rem_euclid(2), 0);
        prop_assert_eq!(dot_bb(&a, &a).unwrap(), d as i64);
        prop_assert_eq!(dot_bb(&a, &a.negated()).unwrap(), -(d as i64));
    }

    #[test]
    fn gbt_with_identity_is_binarize(seed in any::<u64>(), d in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = RealTensor::vector(gaussian_vec(&mut rng, d)).unwrap();
        let g = gbt(&x, &RotationMatrix::identity(d).unwrap()).unwrap();
        prop_assert_eq!(g.data().to_vec(), binarize(&x).unwrap().unpack());
    }

    #[test]
    fn gbt_output_has_norm_sqrt_d(seed in any::<u64>(), log_d in 0u32..9, dense in any::<bool>()) {
        let d = 1usize << log_d;
        let kind = if dense { RotationKind::Dense } else { RotationKind::Fast };
        let r = random_rotation(d, seed, kind).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let x = RealTensor::vector(gaussian_vec(&mut rng, d)).unwrap();
        let n = gbt(&x, &r).unwrap().norm();
        prop_assert!((n - (d as f64).sqrt()).abs() < 1e-9 * (d as f64).sqrt(), "{} vs {}", n, d);
    }

    #[test]
    fn scalar_steps_are_exact_and_bounded(alpha in -0.99f64..0.99, eps_exp in -5i32..-1, w0_frac in -1.0f64..1.0) {
        let eps = 10f64.powi(eps_exp);
        let t = simulate_scalar(alpha, eps, 5_000, Some(w0_frac * eps)).unwrap();
        for (w, next) in t.w_trajectory.iter().zip(&t.w_trajectory[1..]) {
            let step = next - w;
            let expected = if *w > 0.0 { -eps * (1.0 - alpha) } else { eps * (1.0 + alpha) };
            prop_assert!((step - expected).abs() <= 1e-12 * eps.max(w.abs()), "{} vs {}", step, expected);
        }
        prop_assert!(t.max_abs_after_burn_in() <= 2.0 * eps * (1.0 + 1e-9));
    }

    #[test]
    fn pearson_r_ignores_positive_rescaling(seed in any::<u64>(), sx in 1e-6f64..1e6, sy in 1e-6f64..1e6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_vec(&mut rng, 200);
        let y: Vec<f64> = x.iter().map(|v| v + 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let base = DppReport::from_pairs("l", x.clone(), y.clone()).unwrap().pearson_r;
        let scaled = DppReport::from_pairs(
            "l",
            x.iter().map(|v| v * sx).collect(),
            y.iter().map(|v| v * sy).collect(),
        )
        .unwrap()
        .pearson_r;
        prop_assert!((base - scaled).abs() < 1e-12, "{} vs {}", base, scaled);
    }

    #[test]
    fn equal_axes_have_no_sign_flips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_vec(&mut rng, 100);
        let r = DppReport::from_pairs("l", x.clone(), x).unwrap();
        prop_assert_eq!(r.sign_flip_fraction, 0.0);
    }

    #[test]
    fn permutation_keeps_each_row_multiset(seed in any::<u64>(), rows in 1usize..20, cols in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = RealTensor::matrix(rows, cols, gaussian_vec(&mut rng, rows * cols)).unwrap();
        let perms: Vec<Vec<usize>> = (0..rows)
            .map(|_| {
                let mut p: Vec<usize> = (0..cols).collect();
                rand::seq::SliceRandom::shuffle(p.as_mut_slice(), &mut rng);
                p
            })
            .collect();
        let y = permute_features(&x, &perms).unwrap();
        for (a, b) in x.iter_rows().zip(y.iter_rows()) {
            let (mut a, mut b) = (a.to_vec(), b.to_vec());
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn pca_eigenvalues_sum_to_total_variance(seed in any::<u64>(), n in 2usize..60, d in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = RealTensor::matrix(n, d, gaussian_vec(&mut rng, n * d)).unwrap();
        let s = pca_spectrum(&x).unwrap();
        let sum: f64 = s.eigenvalues.iter().sum();
        prop_assert!((sum - s.total_variance).abs() <= 1e-8 * s.total_variance.max(1e-300));
    }

    #[test]
    fn binarization_angles_in_range(w in proptest::collection::vec(-1.0f64..=1.0, 1..200)) {
        let a = binarization_angle_deg(&w);
        prop_assert!((0.0..=90.0).contains(&a));
    }

    #[test]
    fn idx_round_trip(seed in any::<u64>(), count in 1usize..8, rows in 1usize..6, cols in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = IdxImages {
            count,
            rows,
            cols,
            pixels: (0..count * rows * cols).map(|_| rng.random()).collect(),
        };
        let labels: Vec<u8> = (0..count).map(|_| rng.random_range(0..10)).collect();
        prop_assert_eq!(parse_idx_images(&encode_idx_images(&images)).unwrap(), images.clone());
        let ds = dataset_from_idx(&images, &labels, Split::Other).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&ds, &ip, &lp).unwrap();
        let back = bitgeo::data_io::load_idx(&ip, &lp).unwrap();
        prop_assert_eq!(back.images.data(), ds.images.data());
        prop_assert_eq!(back.labels, ds.labels);
    }
}
