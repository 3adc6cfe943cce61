//! Seeded synthetic benchmarks used by tests, benches and the CLI demo.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;
use crate::rng::Seed;

/// Isotropic unit-variance Gaussian blobs. Class `c` is centred at
/// `separation` along axis `c % d`, rows grouped by class.
pub fn gaussian_blobs(counts: &[usize], d: usize, separation: f64, seed: Seed) -> Dataset {
    let n: usize = counts.iter().sum();
    let mut rng = seed.derive("blobs").rng();
    let mut x = Array2::<f64>::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    let mut i = 0;
    for (c, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[[i, j]] = z + if j == c % d { separation } else { 0.0 };
            }
            y.push(c);
            i += 1;
        }
    }
    Dataset::from_arrays(x, y, counts.len()).expect("valid blobs")
}

const INFORMATIVE: usize = 6;
const REDUNDANT: usize = 4;
const CLUSTERS_PER_CLASS: usize = 2;

/// Nonlinear 3-class benchmark with `d >= 10` features. Each class is a union
/// of two correlated Gaussian clusters centred on distinct vertices of the
/// `{-1, 1}^6` hypercube, so no single hyperplane separates a class. The
/// first 6 features are informative, the next 4 are random linear
/// combinations of them and the rest are noise. Class sizes follow the ratio
/// `weights`; rows are grouped by class.
pub fn nonlinear_benchmark(n: usize, d: usize, weights: [usize; 3], seed: Seed) -> Dataset {
    assert!(d >= INFORMATIVE + REDUNDANT, "benchmark needs at least 10 features");
    let mut rng = seed.derive("nonlinear").rng();
    let total: usize = weights.iter().sum();
    let cut = [n * weights[0] / total, n * (weights[0] + weights[1]) / total];
    let counts = [cut[0], cut[1] - cut[0], n - cut[1]];

    let n_clusters = 3 * CLUSTERS_PER_CLASS;
    let vertices = rand::seq::index::sample(&mut rng, 1 << INFORMATIVE, n_clusters).into_vec();
    let mut centre = Array2::<f64>::zeros((n_clusters, INFORMATIVE));
    let mut mixing = Vec::with_capacity(n_clusters);
    for (k, &v) in vertices.iter().enumerate() {
        for j in 0..INFORMATIVE {
            centre[[k, j]] = if v >> j & 1 == 1 { 1.0 } else { -1.0 };
        }
        mixing.push(Array2::from_shape_fn((INFORMATIVE, INFORMATIVE), |_| rng.random_range(-1.0..1.0)));
    }
    let redundant = Array2::from_shape_fn((INFORMATIVE, REDUNDANT), |_| rng.random_range(-1.0..1.0));

    let mut x = Array2::<f64>::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    let mut i = 0;
    for (c, &count) in counts.iter().enumerate() {
        for r in 0..count {
            let k = c * CLUSTERS_PER_CLASS + r % CLUSTERS_PER_CLASS;
            let z = Array2::from_shape_fn((1, INFORMATIVE), |_| StandardNormal.sample(&mut rng));
            let inf = z.dot(&mixing[k]) + centre.row(k);
            let red = inf.dot(&redundant);
            for j in 0..d {
                x[[i, j]] = if j < INFORMATIVE {
                    inf[[0, j]]
                } else if j < INFORMATIVE + REDUNDANT {
                    red[[0, j - INFORMATIVE]]
                } else {
                    StandardNormal.sample(&mut rng)
                };
            }
            y.push(c);
            i += 1;
        }
    }
    Dataset::from_arrays(x, y, 3).expect("valid benchmark")
}

/// Two uniform features on `[0, 4)`; the class is `floor(x0) mod 3`, so a
/// tree needs three cuts on `x0` (depth two or more) to separate it.
pub fn interval_benchmark(n: usize, seed: Seed) -> Dataset {
    let mut rng = seed.derive("interval").rng();
    let mut x = Array2::<f64>::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let a: f64 = rng.random_range(0.0..4.0);
        x[[i, 0]] = a;
        x[[i, 1]] = rng.random_range(0.0..4.0);
        y.push((a.floor() as usize) % 3);
    }
    Dataset::from_arrays(x, y, 3).expect("valid benchmark")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_class_ratio() {
        let ds = nonlinear_benchmark(2000, 20, [10, 3, 1], Seed(1));
        let c = ds.class_counts();
        assert_eq!(c.iter().sum::<usize>(), 2000);
        assert_eq!(c, vec![1428, 429, 143]);
        assert_eq!(ds, nonlinear_benchmark(2000, 20, [10, 3, 1], Seed(1)));
    }

    #[test]
    fn blobs_counts() {
        let ds = gaussian_blobs(&[5, 7, 9], 4, 10.0, Seed(0));
        assert_eq!(ds.class_counts(), vec![5, 7, 9]);
        assert_eq!(ds.d(), 4);
    }
}
