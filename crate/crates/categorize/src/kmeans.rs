use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{CategorizeError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    /// Row `j` is centroid `j`.
    pub centroids: DMatrix<f64>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(c.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Row indices of `k` seeds chosen by k-means++: the first uniformly, each
/// next one with probability proportional to its squared distance to the
/// nearest seed so far.
pub fn kmeans_plus_plus<R: Rng + ?Sized>(x: &DMatrix<f64>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = x.nrows();
    let mut seeds = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(x, i, x, seeds[0])).collect();
    while seeds.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = nearest.iter().rposition(|&w| w > 0.0).expect("total > 0");
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All points coincide with a seed; take the first unused row.
            (0..n).find(|i| !seeds.contains(i)).expect("n >= k")
        };
        seeds.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, x, next));
        }
    }
    seeds
}

/// Lloyd iterations from k-means++ seeds until labels stop changing. An
/// empty cluster keeps its previous centroid.
pub fn kmeans<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    k: usize,
    max_iters: usize,
    rng: &mut R,
) -> Result<KMeans> {
    let (n, d) = x.shape();
    if k == 0 || k > n {
        return Err(CategorizeError::InvalidParameter(format!(
            "k = {k} needs 1 <= k <= {n}"
        )));
    }
    let seeds = kmeans_plus_plus(x, k, rng);
    let mut centroids = DMatrix::from_fn(k, d, |j, c| x[(seeds[j], c)]);
    let mut labels = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .map(|j| (j, sq_dist(x, i, &centroids, j)))
                .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
                .0;
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = DMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            let mut row = sums.row_mut(l);
            row += x.row(i);
            counts[l] += 1;
        }
        for (j, &count) in counts.iter().enumerate() {
            if count > 0 {
                centroids.set_row(j, &(sums.row(j) / count as f64));
            }
        }
    }
    let inertia = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(x, i, &centroids, l))
        .sum();
    Ok(KMeans {
        labels,
        centroids,
        inertia,
        iterations,
    })
}

/// Fraction of point pairs on which two labelings agree about being in the
/// same cluster (Rand index).
pub fn rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len() as f64;
    if a.len() < 2 {
        return 1.0;
    }
    let pairs = |c: f64| c * (c - 1.0) / 2.0;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ca: HashMap<usize, f64> = HashMap::new();
    let mut cb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *ca.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
    }
    let both: f64 = joint.values().copied().map(pairs).sum();
    let same_a: f64 = ca.values().copied().map(pairs).sum();
    let same_b: f64 = cb.values().copied().map(pairs).sum();
    let total = pairs(n);
    (total + 2.0 * both - same_a - same_b) / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn two_blobs(seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut truth = Vec::new();
        let x = DMatrix::from_fn(80, 2, |i, _| {
            let base = if i < 40 { 0.0 } else { 8.0 };
            base + noise.sample(&mut rng)
        });
        for i in 0..80 {
            truth.push(usize::from(i >= 40));
        }
        (x, truth)
    }

    #[test]
    fn separated_blobs_match_truth_up_to_permutation() {
        let (x, truth) = two_blobs(1);
        let km = kmeans(&x, 2, 100, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(rand_index(&km.labels, &truth), 1.0);
    }

    #[test]
    fn single_cluster_inertia_is_total_scatter() {
        let (x, _) = two_blobs(3);
        let km = kmeans(&x, 1, 100, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(km.labels.iter().all(|&l| l == 0));
        let mean = x.row_mean();
        let scatter: f64 = x.row_iter().map(|r| (r - &mean).norm_squared()).sum();
        assert!((km.inertia - scatter).abs() < 1e-9);
    }

    #[test]
    fn one_cluster_per_point_has_zero_inertia() {
        let (x, _) = two_blobs(5);
        let km = kmeans(&x, x.nrows(), 100, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert!(km.inertia < 1e-12);
        assert!(kmeans(&x, x.nrows() + 1, 10, &mut ChaCha8Rng::seed_from_u64(6)).is_err());
    }

    #[test]
    fn rand_index_examples() {
        assert_eq!(rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        // Pair (0,2) is split in both; (0,1) and (1,2) disagree.
        let r = rand_index(&[0, 0, 1], &[0, 1, 1]);
        assert!((r - 1.0 / 3.0).abs() < 1e-12);
    }
}
