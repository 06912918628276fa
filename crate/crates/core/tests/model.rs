use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use splitgp_core::data::standardize_columns;
use splitgp_core::faer::Mat;
use splitgp_core::kernel::{KernelParams, DEFAULT_JITTER};
use splitgp_core::partition::{make_resampled_plan, MIN_SUBSET_SIZE};
use splitgp_core::simulation::{gen_data, SimConfig};
use splitgp_core::summary::{predict_h, Predictor};
use splitgp_core::{make_partition, sketch, split_count, Error};
use splitgp_core::data::{KernelDraw, KernelMode, PosteriorDraw};

fn normal_mat(rng: &mut ChaCha8Rng, n: usize, q: usize) -> Mat<f64> {
    Mat::from_fn(n, q, |_, _| rng.sample(StandardNormal))
}

fn to_na(m: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// exp(-Σ r_l (a_l - b_l)²), written out directly.
fn ard_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let d: f64 = r.iter().enumerate().map(|(l, w)| w * (a[(i, l)] - b[(j, l)]).powi(2)).sum();
        (-d).exp()
    })
}

proptest! {
    #[test]
    fn partition_is_a_balanced_cover(n in 1usize..400, k_frac in 0.0f64..1.0, seed: u64) {
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let plan = make_partition(n, k, seed).unwrap();
        prop_assert_eq!(plan.index_sets.len(), k);
        let mut seen = vec![false; n];
        for set in &plan.index_sets {
            prop_assert!(set.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(set.len() == n / k || set.len() == n / k + 1);
            for &i in set {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn resampled_subsets_have_floor_size(n in 2usize..300, k in 1usize..10, seed: u64) {
        prop_assume!(k <= n);
        let plan = make_resampled_plan(n, k, seed).unwrap();
        for set in &plan.index_sets {
            prop_assert_eq!(set.len(), n / k);
            prop_assert!(set.iter().all(|&i| i < n));
            prop_assert!(set.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn split_count_matches_rounding(n in 1usize..5000, t in 0.0f64..0.7) {
        let expected = ((n as f64).powf(t).round() as usize).clamp(1, n);
        match split_count(n, t, MIN_SUBSET_SIZE) {
            Ok(k) => {
                prop_assert_eq!(k, expected);
                prop_assert!(k == 1 || n / k >= MIN_SUBSET_SIZE);
            }
            Err(Error::SubsetTooSmall { k, .. }) => {
                prop_assert_eq!(k, expected);
                prop_assert!(n / k < MIN_SUBSET_SIZE);
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn standardized_columns_round_trip(n in 3usize..60, q in 1usize..4, seed: u64, shift in -50.0f64..50.0, spread in 0.01f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let original = Mat::from_fn(n, q, |_, _| shift + spread * rng.sample::<f64, _>(StandardNormal));
        let mut m = original.clone();
        let s = standardize_columns(&mut m).unwrap();
        for j in 0..q {
            let mean = (0..n).map(|i| m[(i, j)]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (m[(i, j)] - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
            for i in 0..n {
                let back = s.to_original(j, m[(i, j)]);
                prop_assert!((back - original[(i, j)]).abs() < 1e-9 * (1.0 + original[(i, j)].abs()));
            }
        }
    }
}

#[test]
fn prediction_matches_dense_conditional() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, m, q) = (30, 7, 3);
    let z = normal_mat(&mut rng, n, q);
    let z_star = normal_mat(&mut rng, m, q);
    let h: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let r = vec![0.7, 0.2, 0.0];
    let draw = PosteriorDraw {
        beta: vec![],
        sigma2: 0.3,
        lambda: 2.5,
        kernel: KernelDraw::Ard { r: r.clone(), eta: vec![true, true, false] },
        h: h.clone(),
    };
    let mean = predict_h::<ChaCha8Rng>(&draw, &KernelMode::Ard, z.as_ref(), z_star.as_ref(), DEFAULT_JITTER, None).unwrap();

    let (za, zs) = (to_na(&z), to_na(&z_star));
    let k = ard_kernel(&za, &za, &r) + DMatrix::identity(n, n) * DEFAULT_JITTER;
    let ks = ard_kernel(&zs, &za, &r);
    let kss = ard_kernel(&zs, &zs, &r);
    let chol = k.clone().cholesky().unwrap();
    let oracle_mean = &ks * chol.solve(&DVector::from_vec(h));
    for i in 0..m {
        assert!((mean[i] - oracle_mean[i]).abs() < 1e-6, "{i}: {} vs {}", mean[i], oracle_mean[i]);
    }

    let tau = draw.lambda * draw.sigma2;
    let oracle_cov = (&kss - &ks * chol.solve(&ks.transpose())) * tau;
    let p = Predictor::new(z.as_ref(), KernelParams::Ard { r }, DEFAULT_JITTER).unwrap();
    let cov = p.covariance(z_star.as_ref(), tau).unwrap();
    for i in 0..m {
        for j in 0..m {
            assert!((cov[(i, j)] - oracle_cov[(i, j)]).abs() < 1e-6);
        }
    }
}

#[test]
fn prediction_at_training_sites_returns_h() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z = normal_mat(&mut rng, 20, 2);
    let h: Vec<f64> = (0..20).map(|_| rng.sample(StandardNormal)).collect();
    let p = Predictor::new(z.as_ref(), KernelParams::Isotropic { rho: 1.3, power: 4.0 }, DEFAULT_JITTER).unwrap();
    let back = p.mean(z.as_ref(), &h).unwrap();
    for (a, b) in back.iter().zip(&h) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn sketch_scales_rows_by_root_k() {
    let (ds, _) = gen_data(&SimConfig { n: 90, ..SimConfig::default() }, 1).unwrap();
    let plan = make_partition(ds.n(), 9, 2).unwrap();
    let mut covered = 0;
    for k in 0..plan.k {
        let sk = sketch(&ds, &plan, k, true).unwrap();
        assert_eq!(sk.scale_c, 9.0);
        for (row, &i) in sk.indices.iter().enumerate() {
            assert!((sk.y_t[row] - 3.0 * ds.y[i]).abs() < 1e-12);
            assert!((sk.x_t[(row, 0)] - 3.0 * ds.x[(i, 0)]).abs() < 1e-12);
            assert_eq!(sk.z_sub[(row, 1)], ds.z[(i, 1)]);
        }
        covered += sk.n_k();
    }
    assert_eq!(covered, 90);
}

#[test]
fn generated_data_has_the_stated_structure() {
    let n = 10_000;
    let (ds, h) = gen_data(&SimConfig { n, ..SimConfig::default() }, 77).unwrap();
    let x: Vec<f64> = (0..n).map(|i| ds.x[(i, 0)]).collect();
    let r: Vec<f64> = (0..n).map(|i| ds.y[i] - h[i]).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let cov = |a: &[f64], b: &[f64]| {
        let (ma, mb) = (mean(a), mean(b));
        a.iter().zip(b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / a.len() as f64
    };
    // y - h0 regressed on x recovers the coefficient and the noise variance
    let slope = cov(&x, &r) / cov(&x, &x);
    assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
    let resid: Vec<f64> = x.iter().zip(&r).map(|(xi, ri)| ri - slope * xi).collect();
    assert!((cov(&resid, &resid) - 0.5).abs() < 0.05);
    // confounding runs through cos z1
    let c: Vec<f64> = (0..n).map(|i| ds.z[(i, 0)].cos()).collect();
    let corr = cov(&x, &c) / (cov(&x, &x) * cov(&c, &c)).sqrt();
    assert!(corr > 0.5, "corr {corr}");
    for j in 0..ds.q() {
        let zj: Vec<f64> = (0..n).map(|i| ds.z[(i, j)]).collect();
        assert!(mean(&zj).abs() < 0.05 && (cov(&zj, &zj) - 1.0).abs() < 0.05);
    }
}
