//! Exact dense linear assignment (Jonker–Volgenant).
//!
//! Column reduction, reduction transfer and two passes of augmenting row
//! reduction produce a partial assignment with feasible column prices. Rows
//! left free are then routed by shortest augmenting paths. O(n³) worst case,
//! much faster in practice on random Euclidean costs.

/// Cap on row re-insertions during augmenting row reduction. Floating point
/// price decrements can become tiny; past the cap the remaining rows go to
/// the shortest-path phase, which is exact on its own.
const ARR_CAP_FACTOR: usize = 2;

/// Minimum-cost perfect matching on an n×n cost matrix given row-major.
///
/// Returns `assign` with row `i` matched to column `assign[i]`. Costs must be
/// finite.
pub fn solve(costs: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(costs.len(), n * n, "cost matrix must be n×n");
    match n {
        0 => return Vec::new(),
        1 => return vec![0],
        _ => {}
    }
    const NONE: usize = usize::MAX;
    // Row reduction leaves the optimum unchanged and stops column reduction
    // from piling every column onto one row when the clouds are far apart.
    let mut reduced = costs.to_vec();
    for row in reduced.chunks_exact_mut(n) {
        let m = row.iter().copied().fold(f64::INFINITY, f64::min);
        row.iter_mut().for_each(|x| *x -= m);
    }
    let c = |i: usize, j: usize| reduced[i * n + j];
    let mut v = vec![0.0f64; n];
    let mut rowsol = vec![NONE; n];
    let mut colsol = vec![NONE; n];
    let mut matches = vec![0u32; n];

    for j in (0..n).rev() {
        let mut imin = 0;
        let mut min = c(0, j);
        for i in 1..n {
            if c(i, j) < min {
                min = c(i, j);
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            rowsol[imin] = j;
            colsol[j] = imin;
        } else if v[j] < v[rowsol[imin]] {
            let j1 = rowsol[imin];
            rowsol[imin] = j;
            colsol[j] = imin;
            colsol[j1] = NONE;
        } else {
            colsol[j] = NONE;
        }
    }

    let mut free = Vec::with_capacity(n);
    for i in 0..n {
        if matches[i] == 0 {
            free.push(i);
        } else if matches[i] == 1 {
            let j1 = rowsol[i];
            let mut min = f64::INFINITY;
            for j in 0..n {
                if j != j1 {
                    min = min.min(c(i, j) - v[j]);
                }
            }
            v[j1] -= min;
        }
    }

    
    let cap = ARR_CAP_FACTOR * n;
    let mut work = 0usize;
    for _ in 0..2 {
        let prev = free.len();
        let mut k = 0;
        let mut numfree = 0;
        while k < prev {
            work += 1;
            if work > cap {
                for m in k..prev {
                    free[numfree] = free[m];
                    numfree += 1;
                }
                break;
            }
            let i = free[k];
            k += 1;
            let mut umin = c(i, 0) - v[0];
            let mut j1 = 0;
            let mut j2 = NONE;
            let mut usubmin = f64::INFINITY;
            for j in 1..n {
                let h = c(i, j) - v[j];
                if h < usubmin {
                    if h >= umin {
                        usubmin = h;
                        j2 = j;
                    } else {
                        usubmin = umin;
                        umin = h;
                        j2 = j1;
                        j1 = j;
                    }
                }
            }
            let mut i0 = colsol[j1];
            let strict = umin < usubmin;
            if strict {
                v[j1] -= usubmin - umin;
            } else if i0 != NONE {
                j1 = j2;
                i0 = colsol[j2];
            }
            rowsol[i] = j1;
            colsol[j1] = i;
            if i0 != NONE {
                rowsol[i0] = NONE;
                if strict {
                    k -= 1;
                    free[k] = i0;
                } else {
                    free[numfree] = i0;
                    numfree += 1;
                }
            }
        }
        free.truncate(numfree);
    }

    let mut d = vec![0.0f64; n];
    let mut pred = vec![0usize; n];
    let mut collist: Vec<usize> = (0..n).collect();
    for &freerow in &free {
        for j in 0..n {
            d[j] = c(freerow, j) - v[j];
            pred[j] = freerow;
            collist[j] = j;
        }
        // collist[..low] ready, collist[low..up] at current minimum, rest todo.
        let mut low = 0;
        let mut up = 0;
        let mut last = 0;
        let mut min = 0.0;
        let endofpath;
        'search: loop {
            if up == low {
                last = low;
                min = d[collist[up]];
                up += 1;
                for k in up..n {
                    let j = collist[k];
                    let h = d[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                }
                for &j in &collist[low..up] {
                    if colsol[j] == NONE {
                        endofpath = j;
                        break 'search;
                    }
                }
            }
            let j1 = collist[low];
            low += 1;
            let i = colsol[j1];
            let row = &reduced[i * n..(i + 1) * n];
            let h = row[j1] - v[j1] - min;
            let mut k = up;
            while k < n {
                let j = collist[k];
                let v2 = row[j] - v[j] - h;
                if v2 < d[j] {
                    pred[j] = i;
                    d[j] = v2;
                    if v2 == min {
                        if colsol[j] == NONE {
                            endofpath = j;
                            break 'search;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                }
                k += 1;
            }
        }
        for &j1 in &collist[..last] {
            v[j1] += d[j1] - min;
        }
        let mut j = endofpath;
        loop {
            let i = pred[j];
            colsol[j] = i;
            let next = rowsol[i];
            rowsol[i] = j;
            if i == freerow {
                break;
            }
            j = next;
        }
    }
    rowsol
}

/// Total cost of an assignment.
pub fn cost_of(costs: &[f64], n: usize, assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &j)| costs[i * n + j]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(c: &[f64], n: usize) -> f64 {
        fn rec(c: &[f64], n: usize, i: usize, used: &mut [bool]) -> f64 {
            if i == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    best = best.min(c[i * n + j] + rec(c, n, i + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(c, n, 0, &mut vec![false; n])
    }

    fn is_perm(a: &[usize]) -> bool {
        let mut seen = vec![false; a.len()];
        a.iter().all(|&j| j < a.len() && !std::mem::replace(&mut seen[j], true))
    }

    #[test]
    fn small_known() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = solve(&c, 3);
        assert_eq!(cost_of(&c, 3, &a), 5.0);
    }

    #[test]
    fn empty_and_single() {
        assert!(solve(&[], 0).is_empty());
        assert_eq!(solve(&[7.0], 1), vec![0]);
    }

    #[test]
    fn all_ties() {
        let c = vec![1.0; 16];
        let a = solve(&c, 4);
        assert!(is_perm(&a));
        assert_eq!(solve(&c, 4), a);
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut s = 12345u64;
        for n in 2..=7 {
            for _ in 0..40 {
                let c: Vec<f64> = (0..n * n)
                    .map(|_| {
                        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        ((s >> 33) % 5) as f64
                    })
                    .collect();
                let a = solve(&c, n);
                assert!(is_perm(&a));
                assert_eq!(cost_of(&c, n, &a), brute(&c, n));
            }
        }
    }
}
