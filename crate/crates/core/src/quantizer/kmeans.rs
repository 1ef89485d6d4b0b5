use rand::Rng;

use crate::scalar::{squared_distance, Scalar};

/// Lloyd's k-means with k-means++ seeding. Returns `k × dim` centroids,
/// row-major. When there are fewer distinct points than `k` the extra
/// centroids duplicate sampled points. Empty clusters keep their centroid.
pub fn kmeans<T: Scalar>(points: &[&[T]], k: usize, iterations: usize, rng: &mut impl Rng) -> Vec<T> {
    assert!(!points.is_empty(), "k-means needs at least one point");
    let dim = points[0].len();
    let mut centroids: Vec<Vec<T>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].to_vec());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]).to_f64_lossy())
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c).to_f64_lossy());
        }
        centroids.push(c);
    }

    let mut assign = vec![0usize; points.len()];
    for _ in 0..iterations {
        for (a, p) in assign.iter_mut().zip(points) {
            let mut best = (0, T::infinity());
            for (i, c) in centroids.iter().enumerate() {
                let d = squared_distance(p, c);
                if d < best.1 {
                    best = (i, d);
                }
            }
            *a = best.0;
        }
        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                let n = T::from_usize(n).expect("count fits");
                *c = s.into_iter().map(|x| x / n).collect();
            }
        }
    }
    centroids.concat()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [vec![1.0f64, 2.0], vec![3.0, 6.0], vec![-1.0, 1.0]];
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let c = kmeans(&refs, 1, 10, &mut ChaCha8Rng::seed_from_u64(1));
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn separates_obvious_clusters() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let e = i as f64 * 1e-3;
            pts.push(vec![e, 0.0]);
            pts.push(vec![10.0 + e, 10.0]);
        }
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let c = kmeans(&refs, 2, 10, &mut ChaCha8Rng::seed_from_u64(5));
        let mut xs = [c[0], c[2]];
        xs.sort_by(f64::total_cmp);
        assert!(xs[0] < 1.0 && xs[1] > 9.0);
    }

    #[test]
    fn more_clusters_than_points() {
        let pts = [vec![1.0f64], vec![2.0]];
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let c = kmeans(&refs, 4, 10, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|&x| x == 1.0 || x == 2.0));
    }
}
