use super::*;
use crate::data::{Dataset, InitialValues, UpdateFlags};
use crate::kernel::gram;
use crate::partition::{make_partition, sketch};
use faer::Mat;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;

fn toy(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Mat::from_fn(n, 2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let x = Mat::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { z[(i, 0)] + rng.random::<f64>() });
    let y = Col::from_fn(n, |i| 0.5 + 2.0 * x[(i, 1)] + (z[(i, 0)] * z[(i, 1)]).sin() + 0.3 * rng.random::<f64>());
    Dataset::new(y, x, z).unwrap()
}

fn to_na(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn iso(rho: f64) -> KernelParams {
    KernelParams::Isotropic { rho, power: 4.0 }
}

struct Dense {
    k: DMatrix<f64>,
    vinv: DMatrix<f64>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

/// Untempered quantities built with explicit inverses.
fn dense(data: &SketchedSubset, rho: f64, lambda: f64) -> Dense {
    let g = gram(data.z_sub.as_ref(), &iso(rho), 1e-8).unwrap();
    let k = to_na(g.m.as_ref());
    let n = k.nrows();
    let c = data.scale_c.sqrt();
    let v = DMatrix::identity(n, n) + &k * lambda;
    Dense {
        vinv: v.try_inverse().unwrap(),
        k,
        x: to_na(data.x_t.as_ref()) / c,
        y: DVector::from_fn(n, |i, _| data.y_t[i] / c),
    }
}

#[test]
fn beta_conditional_matches_dense_inverse() {
    let ds = toy(14, 1);
    let plan = make_partition(14, 2, 3).unwrap();
    for temper in [false, true] {
        let sk = sketch(&ds, &plan, 0, temper).unwrap();
        let cache = FactorCache::new(&sk, iso(1.3), 0.7, 1e-8).unwrap();
        let cond = beta_conditional(&sk, &cache.v).unwrap();
        let d = dense(&sk, 1.3, 0.7);
        let a = d.x.transpose() * &d.vinv * &d.x;
        let mean = a.clone().try_inverse().unwrap() * d.x.transpose() * &d.vinv * &d.y;
        for j in 0..2 {
            assert!((cond.mean[j] - mean[j]).abs() < 1e-8 * (1.0 + mean[j].abs()), "temper={temper}");
        }
        let wss_dense = {
            let e = &d.y - &d.x * &mean;
            (e.transpose() * &d.vinv * &e)[(0, 0)]
        };
        let wss = weighted_ss(&sk, &cache.v, &col_to_vec(cond.mean.as_ref()));
        assert!((wss - wss_dense).abs() < 1e-8 * wss_dense, "{wss} vs {wss_dense}");
    }
}

#[test]
fn duplicated_column_is_rank_deficient() {
    let ds = toy(10, 2);
    let x = Mat::from_fn(10, 2, |i, _| ds.x[(i, 1)]);
    let ds = Dataset::new(ds.y.clone(), x, ds.z.clone()).unwrap();
    let sk = SketchedSubset::full(&ds);
    let cache = FactorCache::new(&sk, iso(1.0), 1.0, 1e-8).unwrap();
    assert!(matches!(beta_conditional(&sk, &cache.v), Err(Error::RankDeficient(_))));
}

#[test]
fn precision_draws_have_gamma_moments() {
    let prior = GammaPrior::new(2.0, 3.0);
    let (wss, n) = (7.0, 10);
    let (shape, rate) = sigma2_gamma_params(wss, n, &prior);
    assert_eq!((shape, rate), (7.0, 6.5));
    let mut rng = rng_from_seed(5);
    let m = 40_000;
    let prec: Vec<f64> = (0..m)
        .map(|_| 1.0 / sample_sigma2(&mut rng, wss, n, &prior, false).unwrap())
        .collect();
    let mean = prec.iter().sum::<f64>() / m as f64;
    let se = (shape / (rate * rate) / m as f64).sqrt();
    assert!((mean - shape / rate).abs() < 4.0 * se, "{mean}");

    let literal: Vec<f64> = (0..m)
        .map(|_| sample_sigma2(&mut rng, wss, n, &prior, true).unwrap())
        .collect();
    let mean = literal.iter().sum::<f64>() / m as f64;
    assert!((mean - shape / rate).abs() < 4.0 * se, "{mean}");
    assert!(sample_sigma2(&mut rng, f64::INFINITY, n, &prior, false).is_err());
}

#[test]
fn h_draws_match_dense_conditional_moments() {
    let ds = toy(8, 4);
    let plan = make_partition(8, 2, 9).unwrap();
    let (rho, lambda, sigma2) = (1.1, 2.0, 0.4);
    let beta = vec![0.3, 1.9];
    for temper in [false, true] {
        let sk = sketch(&ds, &plan, 1, temper).unwrap();
        let mut cache = FactorCache::new(&sk, iso(rho), lambda, 1e-8).unwrap();
        let d = dense(&sk, rho, lambda);
        let e = &d.y - &d.x * DVector::from_vec(beta.clone());
        let kv = &d.k * &d.vinv;
        let mean = &kv * &e * lambda;
        let cov = &kv * (sigma2 * lambda);

        let analytic = h_conditional_mean(&sk, &cache, &beta);
        for i in 0..4 {
            assert!((analytic[i] - mean[i]).abs() < 1e-8);
        }

        let mut rng = rng_from_seed(11);
        let m = 20_000;
        let mut sum = vec![0.0; 4];
        let mut sq = vec![0.0; 4];
        for _ in 0..m {
            let h = sample_h(&mut rng, &sk, &mut cache, &beta, sigma2).unwrap();
            for i in 0..4 {
                sum[i] += h[i];
                sq[i] += (h[i] - mean[i]).powi(2);
            }
        }
        for i in 0..4 {
            let sd = cov[(i, i)].sqrt();
            assert!((sum[i] / m as f64 - mean[i]).abs() < 4.0 * sd / (m as f64).sqrt(), "temper={temper} i={i}");
            let var = sq[i] / m as f64;
            assert!((var / cov[(i, i)] - 1.0).abs() < 0.05, "temper={temper} i={i}: {var} vs {}", cov[(i, i)]);
        }
    }
}

#[test]
fn vanishing_lambda_gives_vanishing_h() {
    let ds = toy(10, 6);
    let sk = SketchedSubset::full(&ds);
    let mut cache = FactorCache::new(&sk, iso(1.0), 1e-14, 1e-8).unwrap();
    let mut rng = rng_from_seed(1);
    let h = sample_h(&mut rng, &sk, &mut cache, &[0.0, 2.0], 1.0).unwrap();
    assert!(h.iter().all(|v| v.abs() < 1e-5), "{h:?}");
}

fn small_cfg() -> ModelConfig {
    ModelConfig {
        iters: 60,
        burnin: 20,
        thin: 4,
        ..ModelConfig::default()
    }
}

#[test]
fn zero_step_lambda_move_is_always_accepted() {
    let ds = toy(12, 7);
    let sk = SketchedSubset::full(&ds);
    let cfg = ModelConfig {
        initial_step: 0.0,
        ..small_cfg()
    };
    let mut state = ChainState::new(&sk, &cfg, 3).unwrap();
    for _ in 0..20 {
        let (lambda, acc) = mh_lambda(&mut state, &sk, &cfg).unwrap();
        assert!(acc);
        assert_eq!(lambda, 1.0);
    }
}

#[test]
fn overflowing_lambda_proposals_are_rejected() {
    let ds = toy(12, 7);
    let sk = SketchedSubset::full(&ds);
    let cfg = ModelConfig {
        initial_step: 400.0,
        ..small_cfg()
    };
    let mut state = ChainState::new(&sk, &cfg, 3).unwrap();
    let mut rejected = 0;
    for _ in 0..50 {
        let before = state.draw.lambda;
        let (after, acc) = mh_lambda(&mut state, &sk, &cfg).unwrap();
        assert!(after.is_finite() && after > 0.0);
        if !acc {
            rejected += 1;
            assert_eq!(after, before);
        }
    }
    assert!(rejected > 0);
}

#[test]
fn spike_and_slab_respects_degenerate_priors() {
    let ds = toy(12, 8);
    let sk = SketchedSubset::full(&ds);
    let cfg = ModelConfig {
        kernel: KernelMode::Ard,
        inclusion_prob: vec![0.0, 1.0],
        ..small_cfg()
    };
    let mut state = ChainState::new(&sk, &cfg, 5).unwrap();
    for _ in 0..200 {
        let (r0, e0, _) = mh_r(&mut state, &sk, &cfg, 0).unwrap();
        let (r1, e1, _) = mh_r(&mut state, &sk, &cfg, 1).unwrap();
        assert!(!e0 && r0 == 0.0);
        assert!(e1 && r1 > 0.0);
    }
}

#[test]
fn isotropic_state_rejects_ard_move() {
    let ds = toy(12, 8);
    let sk = SketchedSubset::full(&ds);
    let cfg = small_cfg();
    let mut state = ChainState::new(&sk, &cfg, 5).unwrap();
    assert!(matches!(mh_r(&mut state, &sk, &cfg, 0), Err(Error::ModeError)));
}

#[test]
fn chain_keeps_thinned_draws_and_is_reproducible() {
    let ds = toy(16, 9);
    let sk = SketchedSubset::full(&ds);
    for kernel in [KernelMode::Ard, small_cfg().kernel] {
        let cfg = ModelConfig { kernel, ..small_cfg() };
        let a = run_chain(&sk, &cfg, 42).unwrap();
        let b = run_chain(&sk, &cfg, 42).unwrap();
        assert_eq!(a.draws.len(), 10);
        assert_eq!(a.draws, b.draws);
        assert!(a.draws.iter().all(|d| d.check_invariants() && d.h.len() == 16));
        let c = run_chain(&sk, &cfg, 43).unwrap();
        assert_ne!(a.draws, c.draws);
    }
}

#[test]
fn frozen_blocks_keep_initial_values() {
    let ds = toy(12, 10);
    let sk = SketchedSubset::full(&ds);
    let cfg = ModelConfig {
        updates: UpdateFlags {
            beta: false,
            lambda: false,
            kernel: false,
            ..UpdateFlags::default()
        },
        init: InitialValues {
            beta: Some(vec![1.0, 2.0]),
            lambda: Some(3.0),
            rho: Some(0.8),
            ..InitialValues::default()
        },
        ..small_cfg()
    };
    let out = run_chain(&sk, &cfg, 1).unwrap();
    for d in &out.draws {
        assert_eq!(d.beta, vec![1.0, 2.0]);
        assert_eq!(d.lambda, 3.0);
        assert_eq!(d.kernel, KernelDraw::Isotropic { rho: 0.8 });
    }
}

#[test]
fn tempering_leaves_the_chain_unchanged() {
    let ds = toy(24, 12);
    let plan = make_partition(24, 3, 2).unwrap();
    let cfg = small_cfg();
    let a = run_chain(&sketch(&ds, &plan, 2, true).unwrap(), &cfg, 8).unwrap();
    let b = run_chain(&sketch(&ds, &plan, 2, false).unwrap(), &cfg, 8).unwrap();
    for (da, db) in a.draws.iter().zip(&b.draws) {
        assert!((da.sigma2 - db.sigma2).abs() < 1e-8 * db.sigma2);
        for (x, y) in da.h.iter().zip(&db.h) {
            assert!((x - y).abs() < 1e-7);
        }
    }
}

#[test]
fn draw_file_round_trip() {
    let ds = toy(10, 13);
    let plan = make_partition(10, 2, 2).unwrap();
    let sk = sketch(&ds, &plan, 1, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for kernel in [KernelMode::Ard, small_cfg().kernel] {
        let cfg = ModelConfig { kernel, ..small_cfg() };
        let out = run_chain(&sk, &cfg, 77).unwrap();
        let path = dir.path().join("subset_2.csv");
        write_draws_csv(&out, &path).unwrap();
        let back = read_draws_csv(&path).unwrap();
        assert_eq!(back.subset, Some(1));
        assert_eq!(back.seed, 77);
        assert_eq!(back.n_sites, 5);
        assert_eq!(back.draws, out.draws);
    }
}
