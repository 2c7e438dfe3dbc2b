use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Per-sample silhouette `(b − a) / max(a, b)` under Euclidean distance.
///
/// `a(i)` is the mean distance to the other members of `i`'s cluster and
/// `b(i)` the smallest mean distance to any other non-empty cluster.
/// Members of singleton clusters score 0.
pub fn silhouette(features: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::param(format!("{} labels for {n} samples", labels.len())));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::DegenerateClustering(
            "silhouette needs at least two non-empty clusters".into(),
        ));
    }

    let mut out = Vec::with_capacity(n);
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += features.row_sq_dist(i, features, j).sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            out.push(0.0);
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        let w = if denom > 0.0 { (b - a) / denom } else { 0.0 };
        out.push(w.clamp(-1.0, 1.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Matrix {
        Matrix::from_fn(points.len(), 1, |i, _| points[i])
    }

    #[test]
    fn hand_computed_line() {
        // A = {0, 1}, B = {5, 6}; for x = 0: a = 1, b = (5 + 6) / 2 = 5.5.
        let w = silhouette(&line(&[0.0, 1.0, 5.0, 6.0]), &[0, 0, 1, 1]).unwrap();
        assert!((w[0] - 4.5 / 5.5).abs() < 1e-12);
        assert!((w[0] - 0.81818).abs() < 1e-5);
    }

    #[test]
    fn duplicates_approach_one() {
        let mut prev = -1.0;
        for sep in [1.0, 10.0, 100.0, 1000.0] {
            let w = silhouette(&line(&[0.0, 0.0, sep, sep]), &[0, 0, 1, 1]).unwrap();
            assert!(w[0] >= prev);
            prev = w[0];
        }
        assert!((prev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn misassigned_point_is_negative() {
        // Points 0, 1, 10 with labels {0, 1} vs {10}: x = 1 assigned with 10.
        // For x = 1: a = 9, b = 1 → (1 − 9) / 9 < 0.
        let w = silhouette(&line(&[0.0, 1.0, 10.0]), &[0, 1, 1]).unwrap();
        assert!((w[1] - (1.0 - 9.0) / 9.0).abs() < 1e-12);
        assert!(w[1] < 0.0);
        assert_eq!(w[0], 0.0, "singleton scores zero");
    }

    #[test]
    fn single_cluster_is_degenerate() {
        assert!(matches!(
            silhouette(&line(&[0.0, 1.0]), &[0, 0]),
            Err(Error::DegenerateClustering(_))
        ));
    }
}
