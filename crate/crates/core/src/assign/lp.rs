//! Dense-tableau primal simplex for the packing relaxation
//! `min c·x  s.t.  A x ≤ 1, x ≥ 0` with a 0/1 matrix `A`.

const EPS: f64 = 1e-9;
/// Degenerate pivots in a row before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PackingLp {
    pub value: f64,
    pub x: Vec<f64>,
    /// Non-negative row multipliers: `c_j + Σ_i duals_i A_ij ≥ 0` for every
    /// column at the optimum.
    pub duals: Vec<f64>,
}

/// `cols[j] = (c_j, rows covered by column j)`. Returns `None` if the
/// iteration cap is hit.
pub(crate) fn solve_packing_lp(n_rows: usize, cols: &[(f64, Vec<usize>)]) -> Option<PackingLp> {
    let (m, n) = (n_rows, cols.len());
    let width = n + m + 1;
    let rhs = width - 1;
    let mut tab = vec![0.0f64; (m + 1) * width];
    for (j, (c, rows)) in cols.iter().enumerate() {
        for &i in rows {
            tab[i * width + j] = 1.0;
        }
        tab[m * width + j] = *c;
    }
    for i in 0..m {
        tab[i * width + n + i] = 1.0;
        tab[i * width + rhs] = 1.0;
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let mut streak = 0;
    let max_iter = 50 * (n + m) + 1000;
    for _ in 0..max_iter {
        let obj = &tab[m * width..(m + 1) * width - 1];
        let entering = if streak < DEGENERATE_STREAK {
            obj.iter()
                .enumerate()
                .filter(|(_, &r)| r < -EPS)
                .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                .map(|(j, _)| j)
        } else {
            obj.iter().position(|&r| r < -EPS)
        };
        let Some(j) = entering else {
            let mut x = vec![0.0; n];
            for (i, &b) in basis.iter().enumerate() {
                if b < n {
                    x[b] = tab[i * width + rhs];
                }
            }
            let duals = (0..m).map(|i| tab[m * width + n + i].max(0.0)).collect();
            let value = cols.iter().zip(&x).map(|((c, _), xj)| c * xj).sum();
            return Some(PackingLp { value, x, duals });
        };
        let mut leave: Option<(f64, usize)> = None;
        for i in 0..m {
            let a = tab[i * width + j];
            if a > EPS {
                let ratio = tab[i * width + rhs] / a;
                let better = match leave {
                    None => true,
                    Some((r, li)) => ratio < r - EPS || (ratio <= r + EPS && basis[i] < basis[li]),
                };
                if better {
                    leave = Some((ratio, i));
                }
            }
        }
        // Columns are bounded by their vehicle row, so a pivot row exists.
        let (ratio, r) = leave?;
        streak = if ratio <= EPS { streak + 1 } else { 0 };
        pivot(&mut tab, width, m, r, j);
        basis[r] = j;
    }
    None
}

fn pivot(tab: &mut [f64], width: usize, m: usize, r: usize, j: usize) {
    let p = tab[r * width + j];
    for k in 0..width {
        tab[r * width + k] /= p;
    }
    let pivot_row = tab[r * width..(r + 1) * width].to_vec();
    for i in 0..=m {
        if i == r {
            continue;
        }
        let f = tab[i * width + j];
        if f != 0.0 {
            let row = &mut tab[i * width..(i + 1) * width];
            for (x, &pr) in row.iter_mut().zip(&pivot_row) {
                *x -= f * pr;
            }
            row[j] = 0.0;
        }
    }
}
