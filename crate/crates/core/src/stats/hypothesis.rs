//! Friedman, Wilcoxon signed-rank and Holm step-down adjustment.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Average (1-based) ranks of `values`, ties sharing the mean of their
/// positions, together with the tie-group sizes.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        order[i..j].iter().for_each(|&o| ranks[o] = r);
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

/// Friedman χ² statistic and p-value for `rows` of paired observations
/// (one column per treatment), tie-corrected.
pub fn friedman(rows: &[Vec<f64>]) -> Result<(f64, f64)> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::Argument(format!("Friedman needs N >= 2 and k >= 2 (got {n} x {k})")));
    }
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::Shape("ragged Friedman matrix".into()));
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for row in rows {
        let (ranks, ties) = average_ranks(row);
        rank_sums.iter_mut().zip(&ranks).for_each(|(s, r)| *s += r);
        tie_term += ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * rank_sums.iter().map(|r| r * r).sum::<f64>() - 3.0 * nf * (kf + 1.0);
    let divisor = 1.0 - tie_term / (nf * kf * (kf * kf - 1.0));
    if divisor <= 1e-12 {
        return Ok((0.0, 1.0));
    }
    let stat = (raw / divisor).max(0.0);
    let chi = ChiSquared::new(kf - 1.0).expect("k >= 2");
    Ok((stat, chi.sf(stat)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub w_minus: f64,
    /// Non-zero differences used.
    pub m: usize,
    pub p: f64,
    pub exact: bool,
}

impl WilcoxonResult {
    /// `W⁺ − W⁻`; changes sign when the arguments are swapped.
    pub fn signed(&self) -> f64 {
        self.w_plus - self.w_minus
    }
}

/// Largest number of non-zero differences for which the exact null
/// distribution is used.
pub const EXACT_LIMIT: usize = 25;

/// Two-sided paired Wilcoxon signed-rank test of `x − y`. Zero differences
/// are discarded and tied magnitudes share average ranks.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("paired lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::Argument("Wilcoxon needs at least one pair".into()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let m = d.len();
    if m == 0 {
        return Ok(WilcoxonResult { w_plus: 0.0, w_minus: 0.0, m: 0, p: 1.0, exact: true });
    }
    let mags: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = average_ranks(&mags);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (m * (m + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let (p, exact) = if m <= EXACT_LIMIT {
        (exact_p(&ranks, w_plus), true)
    } else {
        let mean = total / 2.0;
        let tie_adj: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = (m * (m + 1) * (2 * m + 1)) as f64 / 24.0 - tie_adj;
        let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        ((2.0 * normal.sf(z)).min(1.0), false)
    };
    Ok(WilcoxonResult { w_plus, w_minus, m, p, exact })
}

/// Exact two-sided p over all `2^m` sign assignments. Average ranks are
/// multiples of 1/2, so the null distribution is built over doubled ranks.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let obs = (2.0 * w_plus).round() as usize;
    let le: u64 = counts[..=obs].iter().sum();
    let ge: u64 = counts[obs..].iter().sum();
    let all = 2f64.powi(ranks.len() as i32);
    (2.0 * le.min(ge) as f64 / all).min(1.0)
}

/// Holm step-down adjusted p-values, in input order.
pub fn holm_bonferroni(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (j, &i) in order.iter().enumerate() {
        running = running.max(((m - j) as f64 * p[i]).min(1.0));
        adjusted[i] = running;
    }
    adjusted
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn friedman_hand_value() {
        let rows = vec![vec![1.0, 2.0, 3.0]; 4];
        let (stat, p) = friedman(&rows).unwrap();
        assert!((stat - 8.0).abs() < 1e-12);
        assert!((p - (-4.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn friedman_identical_columns() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64; 3]).collect();
        assert_eq!(friedman(&rows).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn friedman_tie_correction() {
        // one tie per row: ranks (1.5, 1.5, 3), R = (4.5, 4.5, 9) over N = 3
        let rows = vec![vec![1.0, 1.0, 2.0]; 3];
        let raw = 12.0 / (3.0 * 3.0 * 4.0) * (4.5f64 * 4.5 + 4.5 * 4.5 + 81.0) - 3.0 * 3.0 * 4.0;
        let divisor = 1.0 - 3.0 * 6.0 / (3.0 * 3.0 * 8.0);
        let (stat, _) = friedman(&rows).unwrap();
        assert!((stat - raw / divisor).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_hand_values() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
        assert_eq!(r.w_plus, 15.0);
        assert!((r.p - 0.0625).abs() < 1e-15);
        let same = wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((same.p, same.signed()), (1.0, 0.0));
    }

    #[test]
    fn wilcoxon_zero_differences_dropped() {
        let a = wilcoxon_signed_rank(&[0.0, 1.0, 2.0, 3.0], &[0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(a.m, 3);
        assert_eq!(a.p, 0.25);
    }

    #[test]
    fn wilcoxon_normal_branch() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 + 0.5).collect();
        let y: Vec<f64> = (0..40).map(|i| if i % 4 == 0 { i as f64 + 1.0 } else { i as f64 }).collect();
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert!(!r.exact);
        assert!(r.p > 0.0 && r.p < 0.01);
        let s = wilcoxon_signed_rank(&y, &x).unwrap();
        assert_eq!(r.p, s.p);
        assert_eq!(r.signed(), -s.signed());
    }

    #[test]
    fn holm_hand_values() {
        let adj = holm_bonferroni(&[0.01, 0.04, 0.03]);
        let expect = [0.03, 0.06, 0.06];
        adj.iter().zip(expect).for_each(|(a, e)| assert!((a - e).abs() < 1e-15));
        assert_eq!(holm_bonferroni(&[0.2]), vec![0.2]);
        assert_eq!(holm_bonferroni(&[0.6, 0.7]), vec![1.0, 1.0]);
    }

    fn brute_force_p(d: &[f64]) -> f64 {
        let d: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
        let m = d.len();
        if m == 0 {
            return 1.0;
        }
        let (ranks, _) = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let obs: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u32..(1 << m) {
            let w: f64 = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= obs + 1e-9 {
                le += 1;
            }
            if w >= obs - 1e-9 {
                ge += 1;
            }
        }
        (2.0 * le.min(ge) as f64 / (1u64 << m) as f64).min(1.0)
    }

    proptest! {
        #[test]
        fn exact_p_matches_enumeration(d in proptest::collection::vec(-4i32..=4, 1..=12)) {
            let x: Vec<f64> = d.iter().map(|v| *v as f64).collect();
            let r = wilcoxon_signed_rank(&x, &vec![0.0; x.len()]).unwrap();
            prop_assert_eq!(r.p, brute_force_p(&x));
        }

        #[test]
        fn wilcoxon_swap_symmetry(d in proptest::collection::vec(-50i32..=50, 1..60)) {
            let x: Vec<f64> = d.iter().map(|v| *v as f64).collect();
            let z = vec![0.0; x.len()];
            let a = wilcoxon_signed_rank(&x, &z).unwrap();
            let b = wilcoxon_signed_rank(&z, &x).unwrap();
            prop_assert_eq!(a.p, b.p);
            prop_assert_eq!(a.signed(), -b.signed());
        }

        #[test]
        fn friedman_monotone_invariant(rows in proptest::collection::vec(proptest::collection::vec(-5i32..5, 4), 2..20)) {
            let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| *v as f64).collect()).collect();
            let warped: Vec<Vec<f64>> = rows.iter().enumerate()
                .map(|(i, r)| r.iter().map(|v| (v * 0.3).exp() * (i + 1) as f64 - 2.0).collect())
                .collect();
            let (a, _) = friedman(&rows).unwrap();
            let (b, _) = friedman(&warped).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn friedman_column_permutation(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 2..20)) {
            let perm: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[2], r[0], r[1]]).collect();
            let (a, _) = friedman(&rows).unwrap();
            let (b, _) = friedman(&perm).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn holm_properties(p in proptest::collection::vec(0.0f64..=1.0, 1..12), rot in 0usize..12) {
            let adj = holm_bonferroni(&p);
            for (a, q) in adj.iter().zip(&p) {
                prop_assert!(*a >= *q && *a <= 1.0);
            }
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
            prop_assert!(order.windows(2).all(|w| adj[w[0]] <= adj[w[1]]));
            let r = rot % p.len();
            let mut rotated = p.clone();
            rotated.rotate_left(r);
            let mut adj_rot = holm_bonferroni(&rotated);
            adj_rot.rotate_right(r);
            prop_assert_eq!(adj_rot, adj);
        }
    }
}
