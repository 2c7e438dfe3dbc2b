//! External clustering metrics: accuracy under the best label matching,
//! normalized mutual information and the adjusted Rand index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_assignment;
use crate::error::{Error, Result};

/// Counts of samples per (predicted, true) label pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    total: u64,
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.is_empty() {
            return Err(Error::param("metrics need at least one sample"));
        }
        if pred.len() != truth.len() {
            return Err(Error::param(format!(
                "prediction length {} differs from truth length {}",
                pred.len(),
                truth.len()
            )));
        }
        let p = dense_codes(pred);
        let t = dense_codes(truth);
        let kp = p.iter().max().map_or(0, |m| m + 1);
        let kt = t.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0u64; kt]; kp];
        for (&a, &b) in p.iter().zip(&t) {
            counts[a][b] += 1;
        }
        Ok(Self {
            counts,
            total: pred.len() as u64,
        })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<u64> {
        let kt = self.counts.first().map_or(0, Vec::len);
        (0..kt).map(|c| self.counts.iter().map(|r| r[c]).sum()).collect()
    }
}

fn dense_codes(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    for &l in labels {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    // Re-number in sorted label order so codes are independent of first
    // appearance.
    for (i, v) in map.values_mut().enumerate() {
        *v = i;
    }
    labels.iter().map(|l| map[l]).collect()
}

/// Fraction of samples matched under the best one-to-one relabeling.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let weights: Vec<Vec<f64>> = table
        .counts
        .iter()
        .map(|r| r.iter().map(|&c| c as f64).collect())
        .collect();
    let matched: u64 = max_weight_assignment(&weights)
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| table.counts[r][c]))
        .sum();
    Ok(matched as f64 / table.total as f64)
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the geometric mean of the entropies.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let n = table.total as f64;
    let rs = table.row_sums();
    let cs = table.col_sums();
    let hp = entropy(&rs, n);
    let ht = entropy(&cs, n);

    if hp == 0.0 || ht == 0.0 {
        // A constant partition shares no information with anything but
        // another constant partition.
        return Ok(if hp == 0.0 && ht == 0.0 { 1.0 } else { 0.0 });
    }

    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += (c / n) * ((c * n) / (rs[i] as f64 * cs[j] as f64)).ln();
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

fn pairs(c: u64) -> f64 {
    let c = c as f64;
    c * (c - 1.0) / 2.0
}

/// Adjusted Rand index (pair counting, corrected for chance).
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ContingencyTable::new(pred, truth)?;
    let index: f64 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: f64 = table.row_sums().into_iter().map(pairs).sum();
    let b: f64 = table.col_sums().into_iter().map(pairs).sum();
    let total = pairs(table.total);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = a * b / total;
    let max = 0.5 * (a + b);
    if max == expected {
        // Both partitions are trivial in the same way.
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// ACC / NMI / ARI triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<Scores> {
    Ok(Scores {
        acc: accuracy(pred, truth)?,
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Best matched fraction by trying every injective relabeling.
    fn brute_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
        let kp = pred.iter().max().unwrap() + 1;
        let kt = truth.iter().max().unwrap() + 1;
        let k = kp.max(kt);
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = 0usize;
        permute(&mut perm, 0, &mut |p| {
            let hit = pred.iter().zip(truth).filter(|(a, b)| p[**a] == **b).count();
            best = best.max(hit);
        });
        best as f64 / pred.len() as f64
    }

    fn permute(v: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
        if i == v.len() {
            f(v);
            return;
        }
        for j in i..v.len() {
            v.swap(i, j);
            permute(v, i + 1, f);
            v.swap(i, j);
        }
    }

    /// Rand-style pair enumeration.
    fn brute_ari(pred: &[usize], truth: &[usize]) -> f64 {
        let n = pred.len();
        let (mut both, mut same_p, mut same_t, mut all) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let sp = pred[i] == pred[j];
                let st = truth[i] == truth[j];
                all += 1.0;
                if sp {
                    same_p += 1.0;
                }
                if st {
                    same_t += 1.0;
                }
                if sp && st {
                    both += 1.0;
                }
            }
        }
        let expected = same_p * same_t / all;
        (both - expected) / (0.5 * (same_p + same_t) - expected)
    }

    #[test]
    fn identical_is_perfect() {
        let p = [0, 1, 2, 2, 1, 0, 0];
        assert_eq!(accuracy(&p, &p).unwrap(), 1.0);
        assert!((nmi(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        assert!((ari(&p, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relabeled_is_perfect() {
        let p = [0, 0, 1, 1];
        let t = [1, 1, 0, 0];
        assert_eq!(accuracy(&p, &t).unwrap(), 1.0);
        assert!((nmi(&p, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!((ari(&p, &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_partitions() {
        let p = [0, 1, 0, 1];
        let t = [0, 0, 1, 1];
        let acc = brute_accuracy(&p, &t);
        assert_eq!(acc, 0.5);
        assert!((accuracy(&p, &t).unwrap() - acc).abs() < 1e-9);
        // Contingency table is all ones, so I = 0.
        assert!(nmi(&p, &t).unwrap().abs() < 1e-9);
        let oracle = brute_ari(&p, &t);
        assert!((oracle + 0.5).abs() < 1e-12);
        assert!((ari(&p, &t).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn constant_prediction_has_zero_nmi() {
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(accuracy(&[], &[]), Err(Error::Parameter(_))));
        assert!(matches!(nmi(&[0], &[0, 1]), Err(Error::Parameter(_))));
        assert!(matches!(ari(&[], &[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn hungarian_matches_brute_force_on_small_inputs() {
        let mut s = 11u64;
        for _ in 0..200 {
            let n = 9;
            let mut next = |m: u64| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) % m) as usize
            };
            let p: Vec<usize> = (0..n).map(|_| next(4)).collect();
            let t: Vec<usize> = (0..n).map(|_| next(3)).collect();
            let a = accuracy(&p, &t).unwrap();
            assert!((a - brute_accuracy(&p, &t)).abs() < 1e-12, "{p:?} {t:?}");
            let r = ari(&p, &t).unwrap();
            let rb = brute_ari(&p, &t);
            if rb.is_finite() {
                assert!((r - rb).abs() < 1e-9);
            }
        }
    }
}
