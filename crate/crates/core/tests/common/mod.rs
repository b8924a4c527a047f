#![allow(dead_code)]

use krsml::Dataset;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, half_width: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-half_width..half_width)).collect())
        .collect()
}

/// Smooth nonlinear target of every coordinate, plus a little noise.
pub fn random_regression(seed: u64, n: usize, d: usize) -> Dataset {
    let mut rng = rng(seed);
    let rows = uniform_rows(&mut rng, n, d, 1.5);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets = rows
        .iter()
        .map(|r| {
            let s: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
            s.sin() + 0.3 * r[0] * r[0] + rng.random_range(-0.05..0.05)
        })
        .collect();
    Dataset::from_rows(&rows, targets).unwrap()
}

/// `B B^T` for a random `d x r` matrix `B`.
pub fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let r = rng.random_range(1..=d);
    let b = DMatrix::from_fn(d, r, |_, _| rng.random_range(-2.0..2.0));
    &b * b.transpose()
}

pub fn planted_target(x: &[f64]) -> f64 {
    (1.5 * x[0]).sin() + 0.5 * x[1] * x[1] - 0.8 * x[2]
}

/// Ten Gaussian features of which only the first three drive the target.
/// `noise_scale` multiplies the standard deviation of the seven distractors.
pub fn planted_task(seed: u64, n_train: usize, n_test: usize, noise_scale: f64) -> (Dataset, Dataset) {
    let mut rng = rng(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let eps = Normal::new(0.0, 0.05).unwrap();
    let mut make = |n: usize| {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..10)
                    .map(|j| {
                        let z = std_normal.sample(&mut rng);
                        if j < 3 {
                            z
                        } else {
                            noise_scale * z
                        }
                    })
                    .collect()
            })
            .collect();
        let targets = rows
            .iter()
            .map(|r| planted_target(r) + eps.sample(&mut rng))
            .collect();
        Dataset::from_rows(&rows, targets).unwrap()
    };
    let train = make(n_train);
    let test = make(n_test);
    (train, test)
}

/// Daily-cycle series around a positive level, with Gaussian noise.
pub fn sinusoid_series(seed: u64, len: usize, noise_sd: f64) -> Vec<f64> {
    let mut rng = rng(seed);
    let eps = Normal::new(0.0, noise_sd).unwrap();
    (0..len)
        .map(|t| {
            let phase = 2.0 * std::f64::consts::PI * t as f64 / 24.0;
            10.0 + 3.0 * phase.sin() + eps.sample(&mut rng)
        })
        .collect()
}
