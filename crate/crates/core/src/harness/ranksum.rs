use alloc::vec;
use alloc::vec::Vec;

use crate::stats::{average_ranks, normal_sf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankSumMethod {
    /// Exact null distribution for small tie-free samples, normal otherwise.
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RankSumError {
    #[error("rank-sum test needs at least one value in each sample")]
    Empty,
    #[error("exact test is only defined without ties")]
    TiesInExact,
    #[error("non-finite value in sample")]
    NonFinite,
}

pub const EXACT_MAX_TOTAL: usize = 12;

/// Two-sided Mann-Whitney U test.
pub fn rank_sum_test(xs: &[f64], ys: &[f64]) -> Result<f64, RankSumError> {
    rank_sum_test_with(xs, ys, RankSumMethod::Auto)
}

pub fn rank_sum_test_with(xs: &[f64], ys: &[f64], method: RankSumMethod) -> Result<f64, RankSumError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(RankSumError::Empty);
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(RankSumError::NonFinite);
    }
    let (n, m) = (xs.len(), ys.len());
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let ranks = average_ranks(&pooled);
    let rank_sum_x: f64 = ranks[..n].iter().sum();
    let u = rank_sum_x - (n * (n + 1)) as f64 / 2.0;
    let tie_groups = tie_sizes(&pooled);
    let has_ties = tie_groups.iter().any(|&t| t > 1);
    let exact = match method {
        RankSumMethod::Exact => {
            if has_ties {
                return Err(RankSumError::TiesInExact);
            }
            true
        }
        RankSumMethod::Normal => false,
        RankSumMethod::Auto => !has_ties && n + m <= EXACT_MAX_TOTAL,
    };
    if exact {
        Ok(exact_p(u as usize, n, m))
    } else {
        Ok(normal_p(u, n, m, &tie_groups))
    }
}

fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        out.push(j - i);
        i = j;
    }
    out
}

/// Number of arrangements giving each U value, for sample sizes `n`, `m`.
pub fn u_distribution(n: usize, m: usize) -> Vec<f64> {
    // f[i][j][u]: arrangements of i x's and j y's with statistic u. The
    // largest element is either an x (beating all j y's) or a y.
    let max_u = n * m;
    let mut f = vec![vec![vec![0.0f64; max_u + 1]; m + 1]; n + 1];
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 || j == 0 {
                f[i][j][0] = 1.0;
                continue;
            }
            for u in 0..=i * j {
                let with_x = if u >= j { f[i - 1][j][u - j] } else { 0.0 };
                f[i][j][u] = with_x + f[i][j - 1][u];
            }
        }
    }
    f[n][m].clone()
}

fn exact_p(u: usize, n: usize, m: usize) -> f64 {
    let dist = u_distribution(n, m);
    let total: f64 = dist.iter().sum();
    let cdf: f64 = dist[..=u].iter().sum::<f64>() / total;
    let sf: f64 = dist[u..].iter().sum::<f64>() / total;
    (2.0 * cdf.min(sf)).min(1.0)
}

fn normal_p(u: f64, n: usize, m: usize, ties: &[usize]) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let total = nf + mf;
    let mean = nf * mf / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    let var = nf * mf / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    if !(var > 0.0) {
        return 1.0;
    }
    let z = ((u - mean).abs() - 0.5) / libm::sqrt(var);
    (2.0 * normal_sf(z)).min(1.0)
}
