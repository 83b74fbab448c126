//! Lloyd's algorithm with k-means++ seeding.

use rand::{Rng, RngCore};

use crate::error::{CdeError, Result};

const MAX_ITERATIONS: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters `points` (row-major, `dim` columns) into `k` centers, returned
/// row-major.
pub fn kmeans(points: &[f64], dim: usize, k: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(CdeError::invalid("points buffer does not match dimension"));
    }
    let n = points.len() / dim;
    if k == 0 {
        return Err(CdeError::invalid("k must be positive"));
    }
    if n < k {
        return Err(CdeError::invalid(format!("k-means needs at least k={k} points, got {n}")));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    while centers.len() < k * dim {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 && u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centers.extend_from_slice(&c);
    }

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (i, slot) in assignment.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (c, sq_dist(row(i), &centers[c * dim..(c + 1) * dim])))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
                .0;
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let j = rng.random_range(0..n);
                centers[c * dim..(c + 1) * dim].copy_from_slice(row(j));
                changed = true;
            } else {
                for (dst, s) in centers[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    debug_assert!(centers.iter().all(|c| c.is_finite()));
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, std_normal};

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn separated_pairs() {
        let c = kmeans(&[0.0, 0.0, 10.0, 10.0], 1, 2, &mut seeded(0)).unwrap();
        assert_eq!(sorted(c), vec![0.0, 10.0]);
    }

    #[test]
    fn k_equals_n_returns_points() {
        let pts = vec![3.0, -1.0, 7.5, 0.25, 2.0];
        let c = kmeans(&pts, 1, 5, &mut seeded(9)).unwrap();
        assert_eq!(sorted(c), sorted(pts));
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0];
        let c = kmeans(&pts, 2, 1, &mut seeded(2)).unwrap();
        assert!((c[0] - 3.0).abs() < 1e-12 && (c[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn two_blobs() {
        let mut rng = seeded(17);
        let mut pts = Vec::new();
        for i in 0..400 {
            let centre = if i % 2 == 0 { -10.0 } else { 10.0 };
            pts.push(centre + std_normal(&mut rng));
            pts.push(centre + std_normal(&mut rng));
        }
        let blob_mean = |sign: f64| {
            let sel: Vec<&[f64]> = pts.chunks(2).filter(|p| p[0].signum() == sign).collect();
            let n = sel.len() as f64;
            (sel.iter().map(|p| p[0]).sum::<f64>() / n, sel.iter().map(|p| p[1]).sum::<f64>() / n)
        };
        let c = kmeans(&pts, 2, 2, &mut seeded(3)).unwrap();
        let mut cs = [(c[0], c[1]), (c[2], c[3])];
        cs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for (got, sign) in cs.iter().zip([-1.0, 1.0]) {
            let m = blob_mean(sign);
            assert!((got.0 - m.0).abs() < 0.1 && (got.1 - m.1).abs() < 0.1);
        }
    }

    #[test]
    fn rejects_too_few_points() {
        assert!(kmeans(&[1.0], 1, 2, &mut seeded(0)).is_err());
    }
}
