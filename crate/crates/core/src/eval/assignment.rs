//! Exact linear assignment by shortest augmenting paths with potentials.

/// Minimum-cost perfect matching on a square cost matrix (row-major `m × m`).
///
/// Returns `assign[row] = column`. Runs in `O(m³)`. Ties are broken towards
/// the lowest column index.
pub fn solve(cost: &[f64], m: usize) -> Vec<usize> {
    assert_eq!(cost.len(), m * m, "cost matrix must be square");
    if m == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
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
                    let cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
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
    let mut assign = vec![0; m];
    for j in 1..=m {
        assign[p[j] - 1] = j - 1;
    }
    assign
}
