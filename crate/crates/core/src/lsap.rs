//! Linear sum assignment by the O(n³) shortest-augmenting-path Hungarian method.

use crate::error::{MastError, Result};

/// Finite cost reserved for padding rows or columns of rectangular problems.
pub const PAD_COST: f64 = 1e9;

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row.
    pub cols: Vec<usize>,
    /// Sum of the chosen costs, accumulated in row order.
    pub total: f64,
}

/// Minimizes `Σ_i cost[i][σ(i)]` over permutations `σ` of a square matrix.
pub fn lsap_assign(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    for (i, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(MastError::Shape {
                op: "lsap_assign",
                lhs: vec![n, n],
                rhs: vec![i, row.len()],
            });
        }
        if row.iter().any(|c| !c.is_finite()) {
            return Err(MastError::Config(format!("non-finite cost in row {i}")));
        }
    }
    if n == 0 {
        return Ok(Assignment {
            cols: vec![],
            total: 0.0,
        });
    }
    // Potentials u (rows) and v (columns), 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut cols = vec![0; n];
    for j in 1..=n {
        cols[owner[j] - 1] = j - 1;
    }
    let total = cols.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok(Assignment { cols, total })
}

/// Rectangular assignment of `rows × cols` costs. The smaller side is padded
/// with [`PAD_COST`]; rows matched to padding come back as `None`.
pub fn lsap_rectangular(cost: &[Vec<f64>], cols: usize) -> Result<Vec<Option<usize>>> {
    let rows = cost.len();
    let n = rows.max(cols);
    let square: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i < rows && j < cols { cost[i][j] } else { PAD_COST })
                .collect()
        })
        .collect();
    let a = lsap_assign(&square)?;
    Ok((0..rows).map(|i| Some(a.cols[i]).filter(|&j| j < cols)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..cost.len() {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, acc + cost[row][j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
        best
    }

    #[test]
    fn two_by_two() {
        let a = lsap_assign(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(a.cols, vec![0, 1]);
        assert_eq!(a.total, 2.0);
    }

    #[test]
    fn recovers_zero_permutation() {
        let perm = [3, 0, 4, 1, 2];
        let cost: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..5).map(|j| if perm[i] == j { 0.0 } else { 1.0 }).collect())
            .collect();
        let a = lsap_assign(&cost).unwrap();
        assert_eq!(a.cols, perm.to_vec());
        assert_eq!(a.total, 0.0);
    }

    #[test]
    fn matches_brute_force_on_integers() {
        let mut rng = stream(31, 0);
        for _ in 0..300 {
            let n = rng.gen_range(1..=7);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(0..20) as f64).collect())
                .collect();
            assert_eq!(lsap_assign(&cost).unwrap().total, brute_force(&cost));
        }
    }

    #[test]
    fn rectangular_leaves_extra_rows_unassigned() {
        let cost = vec![vec![5.0], vec![1.0], vec![3.0]];
        assert_eq!(lsap_rectangular(&cost, 1).unwrap(), vec![None, Some(0), None]);
        let wide = vec![vec![4.0, 1.0, 9.0]];
        assert_eq!(lsap_rectangular(&wide, 3).unwrap(), vec![Some(1)]);
    }

    #[test]
    fn rejects_ragged_or_infinite() {
        assert!(lsap_assign(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(lsap_assign(&[vec![f64::NAN]]).is_err());
        assert_eq!(lsap_assign(&[]).unwrap().total, 0.0);
    }

    proptest! {
        #[test]
        fn result_is_a_permutation_no_worse_than_identity(
            n in 1usize..7,
            seed in any::<u64>(),
        ) {
            let mut rng = stream(seed, 1);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(0.0..100.0)).collect())
                .collect();
            let a = lsap_assign(&cost).unwrap();
            let mut seen = a.cols.clone();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            let identity: f64 = (0..n).map(|i| cost[i][i]).sum();
            prop_assert!(a.total <= identity + 1e-9);
        }
    }
}
