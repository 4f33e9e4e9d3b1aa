//! Synthetic meta-distributions: oracle consistency with Monte Carlo and
//! the closed-form quantile.

use approx::assert_abs_diff_eq;
use metapac::synthetic::{
    adapt, draw_bundle, draw_task, logistic, normal_cdf, normal_quantile, Adaptation, AdaptedTask, Family,
    MetaDistribution, SyntheticTask,
};
use metapac::Threshold;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn adapted(meta: &MetaDistribution, t: usize, rng: &mut ChaCha8Rng) -> AdaptedTask {
    let task = draw_task(meta, rng);
    adapt(meta, task, t, rng)
}

#[test]
fn quantile_inverts_cdf() {
    for i in 1..1000 {
        let p = i as f64 / 1000.0;
        assert_abs_diff_eq!(normal_cdf(normal_quantile(p)), p, epsilon = 1e-9);
    }
    let meta = MetaDistribution::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let a = adapted(&meta, 5, &mut rng);
        for &eps in &[0.01, 0.1, 0.37] {
            let sup = a.sup_t_eps(eps).unwrap();
            assert_abs_diff_eq!(a.true_label_score_cdf(sup.value()).unwrap(), eps, epsilon = 1e-9);
        }
    }
}

#[test]
fn membership_agrees_with_score_cdf() {
    let meta = MetaDistribution {
        sigma_task: 1.0,
        penalty: 2.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < 10_000 {
        let a = adapted(&meta, rng.random_range(0..30), &mut rng);
        let tau = Threshold::new(rng.random()).unwrap();
        let eps = rng.random_range(0.01..0.5);
        let mass = a.true_label_score_cdf(tau.value()).unwrap();
        // skip pairs on the boundary of the bisection tolerance
        if (mass - eps).abs() < 1e-8 {
            continue;
        }
        assert_eq!(a.is_eps_correct(tau, eps).unwrap(), mass <= eps);
        checked += 1;
    }
}

#[test]
fn monte_carlo_error_matches_exact_mass() {
    let meta = MetaDistribution::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let a = adapted(&meta, 25, &mut rng);
        let sup = a.sup_t_eps(0.1).unwrap();
        for tau in [sup, Threshold::new(sup.value() * 0.8).unwrap()] {
            let exact = a.true_label_score_cdf(tau.value()).unwrap();
            let mc = a.empirical_error(tau, 100_000, &mut rng);
            assert!((mc - exact).abs() <= 0.01, "{mc} vs {exact}");
        }
    }
}

#[test]
fn calibration_scores_follow_the_task_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = adapted(&MetaDistribution::default(), 25, &mut rng);
    let b = draw_bundle(&a, 100_000, &mut rng).unwrap();
    for &eps in &[0.05, 0.1, 0.5, 0.9] {
        let sorted = b.calibration_scores.sorted();
        let empirical = sorted[(eps * sorted.len() as f64) as usize];
        let exact = a.true_label_score_cdf(empirical).unwrap();
        assert!((exact - eps).abs() < 0.005, "eps={eps}: {exact}");
    }
}

#[test]
fn homogeneous_limit_has_one_task() {
    let meta = MetaDistribution {
        sigma_task: 0.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let first = adapted(&meta, 0, &mut rng).sup_t_eps(0.1).unwrap();
    for _ in 0..50 {
        assert_eq!(adapted(&meta, 0, &mut rng).sup_t_eps(0.1).unwrap(), first);
    }
    // μ_G = μ0 = 1 when every task sits at the prior mean
    assert_abs_diff_eq!(first.value(), logistic(1.0 + normal_quantile(0.1)), epsilon = 1e-12);
}

#[test]
fn heterogeneity_grows_with_task_spread() {
    let spread = |sigma_task: f64| {
        let meta = MetaDistribution {
            sigma_task,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v: Vec<f64> = (0..4000)
            .map(|_| adapted(&meta, 25, &mut rng).sup_t_eps(0.1).unwrap().value())
            .collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
    };
    let (a, b, c) = (spread(0.1), spread(0.5), spread(1.5));
    assert!(a < b && b < c, "{a} {b} {c}");
}

#[test]
fn adaptation_penalty_shifts_location() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let meta = MetaDistribution {
        penalty: 3.0,
        ..Default::default()
    };
    for _ in 0..100 {
        let a = adapted(&meta, 4, &mut rng);
        let (SyntheticTask::Scalar(theta), Adaptation::Mean(m)) = (&a.task, &a.adaptation) else {
            unreachable!()
        };
        assert_abs_diff_eq!(a.score_location().unwrap(), theta - 3.0 * (m - theta).abs(), epsilon = 1e-15);
    }
}

#[test]
fn golden_draws_at_seed_42() {
    let meta = MetaDistribution::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a = adapted(&meta, 25, &mut rng);
    let (SyntheticTask::Scalar(theta), Adaptation::Mean(m)) = (&a.task, &a.adaptation) else {
        unreachable!()
    };
    assert_eq!((*theta, *m), GOLDEN_SEED_42);
}

const GOLDEN_SEED_42: (f64, f64) = (1.238990619175511, 1.2334311859782199);

#[test]
fn classification_sizes_at_the_extremes() {
    let meta = MetaDistribution::classification();
    assert_eq!(meta.family, Family::Classification);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = adapted(&meta, 5, &mut rng);
    assert_eq!(a.empirical_size(Threshold::ZERO, 200, &mut rng).unwrap(), meta.classes as f64);
    assert_eq!(a.empirical_size(Threshold::INFINITY, 200, &mut rng).unwrap(), 0.0);
    assert_eq!(a.empirical_error(Threshold::ZERO, 200, &mut rng), 0.0);
    assert_eq!(a.empirical_error(Threshold::INFINITY, 200, &mut rng), 1.0);
    assert!(a.sup_t_eps(0.1).is_err());
    for ex in a.draw_labeled_scores(100, &mut rng).unwrap() {
        assert!(ex.label < meta.classes);
        assert!(ex.scores.iter().all(|&s| s > 0.0 && s <= 0.5));
    }
}

#[test]
fn better_adaptation_lowers_error() {
    let meta = MetaDistribution::classification();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tau = Threshold::new(0.1).unwrap();
    let mean_error = |t: usize, rng: &mut ChaCha8Rng| {
        (0..40)
            .map(|_| adapted(&meta, t, rng).empirical_error(tau, 300, rng))
            .sum::<f64>()
            / 40.0
    };
    let coarse = mean_error(1, &mut rng);
    let fine = mean_error(50, &mut rng);
    assert!(fine < coarse, "{fine} vs {coarse}");
}
