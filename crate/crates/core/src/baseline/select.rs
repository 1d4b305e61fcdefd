use alloc::vec;
use alloc::vec::Vec;

use super::{BaselineError, SparseVec};
use crate::Label;

/// Chi-squared statistic of each column against the class, treating feature
/// values as frequencies. Columns that are zero everywhere score 0.
pub fn chi2_scores(rows: &[SparseVec], n_cols: usize, labels: &[Label]) -> Vec<f64> {
    let mut observed = [vec![0.0; n_cols], vec![0.0; n_cols]];
    let mut class_n = [0usize; 2];
    for (row, label) in rows.iter().zip(labels) {
        let c = label.as_u8() as usize;
        class_n[c] += 1;
        for &(j, v) in row {
            observed[c][j] += v;
        }
    }
    let n = rows.len() as f64;
    (0..n_cols)
        .map(|j| {
            let total = observed[0][j] + observed[1][j];
            let mut chi2 = 0.0;
            for c in 0..2 {
                let expected = class_n[c] as f64 / n * total;
                if expected > 0.0 {
                    let d = observed[c][j] - expected;
                    chi2 += d * d / expected;
                }
            }
            chi2
        })
        .collect()
}

/// Indices of the `k` highest-scoring columns, ascending. Ties go to the
/// lower column index.
pub fn select_k_best(rows: &[SparseVec], n_cols: usize, labels: &[Label], k: usize) -> Result<Vec<usize>, BaselineError> {
    if k == 0 || k > n_cols {
        return Err(BaselineError::InvalidK { k, columns: n_cols });
    }
    if rows.len() != labels.len() {
        return Err(BaselineError::LengthMismatch);
    }
    let scores = chi2_scores(rows, n_cols, labels);
    let mut order: Vec<usize> = (0..n_cols).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}
