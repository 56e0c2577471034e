use eplguard::mvn::{Averaging, MvnModel, DEFAULT_EPS};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

/// Symmetric positive definite `a * a^T + shift * I` from a flat `k x k` matrix.
fn spd(a: &[f64], k: usize, shift: f64) -> Vec<f64> {
    let mut s = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            s[i * k + j] = (0..k).map(|m| a[i * k + m] * a[j * k + m]).sum();
        }
        s[i * k + i] += shift;
    }
    for i in 0..k {
        for j in 0..i {
            s[j * k + i] = s[i * k + j];
        }
    }
    s
}

fn model_strategy() -> impl Strategy<Value = (MvnModel, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|k| {
        (
            prop::collection::vec(-5.0f64..5.0, k),
            prop::collection::vec(-2.0f64..2.0, k * k),
            0.05f64..3.0,
            prop::collection::vec(-20.0f64..20.0, k),
        )
            .prop_map(move |(mu, a, shift, x)| (MvnModel::new(mu, spd(&a, k, shift)).unwrap(), x))
    })
}

proptest! {
    #[test]
    fn mode_bounds_every_density((m, x) in model_strategy()) {
        prop_assert!(m.density(&x).unwrap() <= m.max_density());
        prop_assert!(m.mahalanobis_sq(&x).unwrap() >= 0.0);
        prop_assert_eq!(m.log_density(m.mu()).unwrap(), m.log_norm_const());
    }

    #[test]
    fn log_and_linear_agree((m, x) in model_strategy()) {
        let d = m.density(&x).unwrap();
        if d > 1e-300 {
            let rel = (m.log_density(&x).unwrap().exp() - d).abs() / d;
            prop_assert!(rel < 1e-12, "{}", rel);
        }
    }

    #[test]
    fn doubling_covariance_scales_the_mode((m, _x) in model_strategy()) {
        let doubled: Vec<f64> = m.sigma().iter().map(|v| 2.0 * v).collect();
        let m2 = MvnModel::new(m.mu().to_vec(), doubled).unwrap();
        let want = m.max_density() * 2f64.powf(-(m.k() as f64) / 2.0);
        prop_assert!((m2.max_density() - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn fitted_mean_shifts_with_the_data(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 5..40),
        c in prop::collection::vec(-100.0f64..100.0, 3),
    ) {
        let m = MvnModel::fit(&rows, DEFAULT_EPS).unwrap();
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&c).map(|(a, b)| a + b).collect()).collect();
        let ms = MvnModel::fit(&shifted, DEFAULT_EPS).unwrap();
        for i in 0..3 {
            prop_assert!((ms.mu()[i] - m.mu()[i] - c[i]).abs() < 1e-9);
        }
    }
}

#[test]
fn six_dimensional_identity_mode() {
    let mut eye = vec![0.0; 36];
    for i in 0..6 {
        eye[i * 7] = 1.0;
    }
    let m = MvnModel::new(vec![0.0; 6], eye).unwrap();
    assert!((m.density(&[0.0; 6]).unwrap() - 4.0314e-3).abs() < 1e-7);
}

#[test]
fn tiny_peak_density_from_broad_covariance() {
    let target: f64 = 6e-27;
    let det = ((2.0 * std::f64::consts::PI).powi(-3) / target).powi(2);
    let d = det.powf(1.0 / 6.0);
    let mut sigma = vec![0.0; 36];
    for i in 0..6 {
        sigma[i * 7] = d;
    }
    let m = MvnModel::new(vec![3.0; 6], sigma).unwrap();
    let peak = m.density(&[3.0; 6]).unwrap();
    assert!((peak - target).abs() / target < 1e-9, "{peak}");
}

#[test]
fn extreme_thresholds_live_in_log_space() {
    let log_t = 1.177e-192f64.ln();
    assert!((log_t - (-441.9)).abs() < 0.05, "{log_t}");
    assert!(log_t.exp() > 0.0);
}

fn draws(n: usize, seed: u64, mu: &[f64; 3], l: &[[f64; 3]; 3]) -> Vec<Vec<f64>> {
    let mut rng = eplguard::seed::rng(seed, &[]);
    (0..n)
        .map(|_| {
            let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            (0..3)
                .map(|i| mu[i] + (0..=i).map(|j| l[i][j] * z[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

const MU: [f64; 3] = [1.0, -2.0, 0.5];
const L: [[f64; 3]; 3] = [[2.0, 0.0, 0.0], [0.6, 1.0, 0.0], [-0.4, 0.3, 0.5]];

#[test]
fn fit_recovers_known_mean() {
    let n = 10_000;
    let m = MvnModel::fit(&draws(n, 8, &MU, &L), DEFAULT_EPS).unwrap();
    for i in 0..3 {
        let sd = (0..=i).map(|j| L[i][j] * L[i][j]).sum::<f64>().sqrt();
        assert!(
            (m.mu()[i] - MU[i]).abs() < 5.0 * sd / (n as f64).sqrt(),
            "{i}: {}",
            m.mu()[i]
        );
    }
}

#[test]
fn averaged_scores_vary_less_than_single_scores() {
    let m = MvnModel::fit(&draws(2000, 1, &MU, &L), DEFAULT_EPS).unwrap();
    let var = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let test = draws(20_000, 2, &MU, &L);
    let single: Vec<f64> = test[..200].iter().map(|x| m.density(x).unwrap()).collect();
    let averaged: Vec<f64> = test
        .chunks(100)
        .map(|c| m.avg_log_score(c, Averaging::Scores).unwrap().exp())
        .collect();
    assert_eq!(averaged.len(), 200);
    assert!(var(&averaged) < var(&single) / 10.0);
}
