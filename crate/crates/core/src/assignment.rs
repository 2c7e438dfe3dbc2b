//! Minimum-cost bipartite assignment (Kuhn–Munkres, O(n³)).

/// Solve a square or rectangular assignment problem.
///
/// `cost[r][c]`; returns for every row the column assigned to it, or `None`
/// when there are more rows than columns and the row was left unmatched.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    // Pad to square with zeros; padded cells never change the optimum among
    // real cells.
    let at = |r: usize, c: usize| -> f64 {
        if r < rows && c < cols {
            cost[r][c]
        } else {
            0.0
        }
    };

    // Potentials formulation with 1-based sentinel column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for r in 1..=n {
        matched_row[0] = r;
        let mut col0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = matched_row[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let cur = at(r0 - 1, c - 1) - u[r0] - v[c];
                if cur < minv[c] {
                    minv[c] = cur;
                    way[c] = col0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[matched_row[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
            if matched_row[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            matched_row[col0] = matched_row[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; rows];
    for c in 1..=n {
        let r = matched_row[c];
        if r >= 1 && r - 1 < rows && c - 1 < cols {
            out[r - 1] = Some(c - 1);
        }
    }
    out
}

/// Maximum-weight variant of [`min_cost_assignment`].
pub fn max_weight_assignment(weight: &[Vec<f64>]) -> Vec<Option<usize>> {
    let neg: Vec<Vec<f64>> = weight.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    min_cost_assignment(&neg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_min(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], r: usize, used: &mut Vec<bool>) -> f64 {
            if r == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..cost[0].len() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[r][c] + rec(cost, r + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost[0].len()])
    }

    #[test]
    fn matches_brute_force() {
        let mut s = 7u64;
        for n in 1..=6 {
            for _ in 0..10 {
                let cost: Vec<Vec<f64>> = (0..n)
                    .map(|_| {
                        (0..n)
                            .map(|_| {
                                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                                ((s >> 33) % 100) as f64
                            })
                            .collect()
                    })
                    .collect();
                let a = min_cost_assignment(&cost);
                let total: f64 = a.iter().enumerate().map(|(r, c)| cost[r][c.unwrap()]).sum();
                assert_eq!(total, brute_min(&cost));
            }
        }
    }

    #[test]
    fn rectangular_more_columns() {
        let cost = vec![vec![5.0, 1.0, 9.0], vec![2.0, 8.0, 0.5]];
        assert_eq!(min_cost_assignment(&cost), vec![Some(1), Some(2)]);
    }

    #[test]
    fn rectangular_more_rows() {
        let cost = vec![vec![5.0], vec![1.0], vec![3.0]];
        assert_eq!(min_cost_assignment(&cost), vec![None, Some(0), None]);
    }
}
