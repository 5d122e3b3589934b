//! Minimum-cost rectangular assignment (Hungarian method with potentials).

/// Solve the assignment problem for a `rows x cols` cost matrix given in
/// row-major order. Returns, for every row, the assigned column; when there
/// are more rows than columns some rows stay `None`.
pub fn solve(costs: &[f64], rows: usize, cols: usize) -> Vec<Option<usize>> {
    assert_eq!(costs.len(), rows * cols, "cost matrix shape mismatch");
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let mut transposed = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                transposed[c * rows + r] = costs[r * cols + c];
            }
        }
        let by_col = solve(&transposed, cols, rows);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }

    // rows <= cols; 1-based arrays with a virtual column 0.
    let (n, m) = (rows, cols);
    let cost = |i: usize, j: usize| costs[(i - 1) * m + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(costs: &[f64], rows: usize, cols: usize) -> f64 {
        fn rec(costs: &[f64], cols: usize, row: usize, rows: usize, used: &mut Vec<bool>) -> f64 {
            if row == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..cols {
                if !used[c] {
                    used[c] = true;
                    let v = costs[row * cols + c] + rec(costs, cols, row + 1, rows, used);
                    used[c] = false;
                    best = best.min(v);
                }
            }
            best
        }
        rec(costs, cols, 0, rows, &mut vec![false; cols])
    }

    fn total(costs: &[f64], cols: usize, assignment: &[Option<usize>]) -> f64 {
        assignment
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| costs[r * cols + c]))
            .sum()
    }

    #[test]
    fn optimal_on_random_square_and_wide() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let rows = rng.random_range(1..6);
            let cols = rng.random_range(rows..7);
            let costs: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(0.0..10.0))
                .collect();
            let a = solve(&costs, rows, cols);
            assert!(a.iter().all(Option::is_some));
            let got = total(&costs, cols, &a);
            assert!((got - brute_force(&costs, rows, cols)).abs() < 1e-9);
        }
    }

    #[test]
    fn tall_matrix_leaves_rows_unassigned() {
        let costs = [1.0, 5.0, 2.0];
        let a = solve(&costs, 3, 1);
        assert_eq!(a, vec![Some(0), None, None]);
    }

    #[test]
    fn empty_inputs() {
        assert!(solve(&[], 0, 3).is_empty());
        assert_eq!(solve(&[], 2, 0), vec![None, None]);
    }
}
