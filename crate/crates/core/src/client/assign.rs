//! Student-t soft assignment, its sharpened target and the KL objective,
//! evaluated on plain matrices (no tape).

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// `q_ij ∝ (1 + ‖h_i − u_j‖²)⁻¹`, rows normalized to 1.
pub fn soft_assign(features: &Matrix, centers: &Matrix) -> Result<Matrix> {
    if features.cols() != centers.cols() {
        return Err(Error::Shape {
            op: "soft_assign",
            left: features.shape(),
            right: centers.shape(),
        });
    }
    if centers.rows() < 2 {
        return Err(Error::param(format!("need at least 2 centers, got {}", centers.rows())));
    }
    let mut q = Matrix::from_fn(features.rows(), centers.rows(), |i, j| {
        1.0 / (1.0 + features.row_sq_dist(i, centers, j))
    });
    for r in 0..q.rows() {
        let s: f64 = q.row(r).iter().sum();
        q.row_mut(r).iter_mut().for_each(|v| *v /= s);
    }
    Ok(q)
}

/// Sharpened self-training target: `p_ij ∝ q_ij² / f_j` with cluster
/// frequency `f_j = Σ_i q_ij`, rows normalized to 1.
pub fn target_distribution(q: &Matrix) -> Result<Matrix> {
    let freq = q.col_sums();
    if let Some(column) = freq.iter().position(|f| !(*f > 0.0)) {
        return Err(Error::DegenerateCluster { column });
    }
    let mut p = Matrix::from_fn(q.rows(), q.cols(), |i, j| q.get(i, j) * q.get(i, j) / freq[j]);
    for r in 0..p.rows() {
        let s: f64 = p.row(r).iter().sum();
        if !(s > 0.0) {
            return Err(Error::Numeric(format!("target row {r} has no mass")));
        }
        p.row_mut(r).iter_mut().for_each(|v| *v /= s);
    }
    Ok(p)
}

/// `Σ_i Σ_j p_ij ln(p_ij / q_ij)` with `0 · ln 0 = 0`.
pub fn kl_divergence(p: &Matrix, q: &Matrix) -> Result<f64> {
    p.ensure_same_shape(q, "kl_divergence")?;
    let mut total = 0.0;
    for (k, (&pv, &qv)) in p.as_slice().iter().zip(q.as_slice()).enumerate() {
        if pv == 0.0 {
            continue;
        }
        if !(qv > 0.0) {
            return Err(Error::Numeric(format!(
                "q is {qv} where p is {pv} (row {}, column {})",
                k / q.cols(),
                k % q.cols()
            )));
        }
        total += pv * (pv / qv).ln();
    }
    Ok(total)
}

/// Row-wise argmax; ties resolve to the lowest column.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.iter_rows()
        .map(|r| {
            let mut best = 0;
            for (j, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
