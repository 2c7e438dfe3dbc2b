use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAX_ITERS: usize = 300;
pub const SHIFT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Matrix,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Stops when the largest center shift drops below [`SHIFT_TOL`] or after
/// [`MAX_ITERS`] rounds. An empty cluster is re-seeded with the point
/// farthest from its current center.
pub fn kmeans(data: &Matrix, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = data.rows();
    if k == 0 || k > n {
        return Err(Error::param(format!("cannot form {k} clusters from {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(data, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut iterations = 0;

    loop {
        iterations += 1;
        assign(data, &centers, &mut labels, &mut dist);

        let mut sums = Matrix::zeros(k, data.cols());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }

        let mut moved_points = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                // Farthest point not already used to re-seed this round.
                let far = (0..n)
                    .filter(|i| !moved_points.contains(i))
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("k <= n leaves a candidate");
                moved_points.push(far);
                sums.row_mut(c).copy_from_slice(data.row(far));
                counts[c] = 1;
                dist[far] = 0.0;
            } else {
                let inv = 1.0 / counts[c] as f64;
                sums.row_mut(c).iter_mut().for_each(|v| *v *= inv);
            }
        }

        let shift = (0..k)
            .map(|c| sums.row_sq_dist(c, &centers, c).sqrt())
            .fold(0.0, f64::max);
        centers = sums;
        if shift < SHIFT_TOL || iterations >= MAX_ITERS {
            break;
        }
    }

    assign(data, &centers, &mut labels, &mut dist);
    let inertia = dist.iter().sum();
    Ok(KMeansResult {
        centers,
        labels,
        inertia,
        iterations,
    })
}

/// Best of `restarts` seeded runs by inertia; ties keep the earliest run.
///
/// Run 0 uses `seed` itself, so one restart equals [`kmeans`].
pub fn kmeans_restarts(data: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if restarts == 0 {
        return Err(Error::param("k-means needs at least one restart"));
    }
    let mut best = kmeans(data, k, seed)?;
    for r in 1..restarts as u64 {
        let run = kmeans(data, k, seed.wrapping_add(r.wrapping_mul(0x9E37_79B9_7F4A_7C15)))?;
        if run.inertia < best.inertia {
            best = run;
        }
    }
    Ok(best)
}

fn assign(data: &Matrix, centers: &Matrix, labels: &mut [usize], dist: &mut [f64]) {
    for i in 0..data.rows() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..centers.rows() {
            let d = data.row_sq_dist(i, centers, c);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels[i] = best;
        dist[i] = best_d;
    }
}

fn plus_plus_init(data: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = data.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n).map(|i| data.row_sq_dist(i, data, chosen[0])).collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if target < d {
                    pick = Some(i);
                    break;
                }
                target -= d;
            }
            // Rounding can walk past the end; fall back to the last candidate.
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("positive mass"))
        } else {
            // All remaining points coincide with a chosen center.
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(data.row_sq_dist(i, data, next));
        }
    }
    data.select_rows(&chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let x = Matrix::from_rows(&[[0.0, 1.0], [3.0, 4.0], [-2.0, 5.0]]);
        let r = kmeans(&x, 3, 9).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut l = r.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);
    }

    #[test]
    fn hand_means() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.1], [10.0, 10.0], [10.0, 10.1]]);
        for seed in 0..10 {
            let r = kmeans(&x, 2, seed).unwrap();
            let mut c: Vec<(f64, f64)> = r.centers.iter_rows().map(|r| (r[0], r[1])).collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert!((c[0].0 - 0.0).abs() < 1e-12 && (c[0].1 - 0.05).abs() < 1e-12);
            assert!((c[1].0 - 10.0).abs() < 1e-12 && (c[1].1 - 10.05).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_clusters() {
        assert!(matches!(kmeans(&Matrix::zeros(2, 1), 3, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn duplicate_points_still_yield_k_clusters() {
        let x = Matrix::from_rows(&[[1.0], [1.0], [1.0], [5.0]]);
        let r = kmeans(&x, 3, 4).unwrap();
        assert_eq!(r.centers.rows(), 3);
        assert!(r.inertia.is_finite());
    }

    #[test]
    fn seeded_runs_repeat() {
        let x = Matrix::from_fn(40, 3, |i, j| ((i * 7 + j * 13) % 11) as f64);
        assert_eq!(kmeans(&x, 4, 42).unwrap(), kmeans(&x, 4, 42).unwrap());
    }

    #[test]
    fn restarts_keep_lowest_inertia() {
        let x = Matrix::from_fn(40, 2, |i, j| ((i * 7 + j * 13) % 11) as f64 + if i % 4 == 0 { 20.0 } else { 0.0 });
        assert_eq!(kmeans_restarts(&x, 4, 5, 1).unwrap(), kmeans(&x, 4, 5).unwrap());
        let best = kmeans_restarts(&x, 4, 5, 8).unwrap();
        for r in 0..8u64 {
            let run = kmeans(&x, 4, 5u64.wrapping_add(r.wrapping_mul(0x9E37_79B9_7F4A_7C15))).unwrap();
            assert!(best.inertia <= run.inertia);
        }
        assert!(matches!(kmeans_restarts(&x, 4, 5, 0), Err(Error::Parameter(_))));
    }
}
