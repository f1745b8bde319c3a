use crate::{Error, Result};

/// Minimum-cost perfect matching on a dense `n × n` cost matrix (row-major)
/// using the O(n³) shortest-augmenting-path Hungarian method with
/// potentials. Returns the column assigned to each row and the total cost.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Result<(Vec<usize>, f64)> {
    if cost.len() != n * n {
        return Err(Error::Shape(format!("cost matrix has {} entries, expected {}", cost.len(), n * n)));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Argument("cost matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-based arrays; column 0 is a virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1]; // owner[col] = row matched to col
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut next = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[(r - 1) * n + (col - 1)] - u[r] - v[col];
                if reduced < min_to[col] {
                    min_to[col] = reduced;
                    way[col] = col0;
                }
                if min_to[col] < delta {
                    delta = min_to[col];
                    next = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            col0 = next;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for col in 1..=n {
        assign[owner[col] - 1] = col - 1;
    }
    let total = assign.iter().enumerate().map(|(r, &c)| cost[r * n + c]).sum();
    Ok((assign, total))
}
