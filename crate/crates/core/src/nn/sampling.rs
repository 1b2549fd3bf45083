//! Point sampling and grouping used by the set-abstraction block.

use crate::error::{Error, Result};

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy farthest point sampling: starting at `start`, repeatedly pick the
/// point maximizing the distance to the already-selected set. Ties break to
/// the smaller index. Output is in selection order.
pub fn farthest_point_sampling(positions: &[[f64; 3]], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = positions.len();
    if m > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {m} centroids from {n} points"
        )));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    assert!(start < n, "start index out of range");
    let mut selected = Vec::with_capacity(m);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = start;
    selected.push(current);
    for _ in 1..m {
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            let d = dist2(&positions[i], &positions[current]);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > best_d {
                best_d = min_dist[i];
                best = i;
            }
        }
        current = best;
        selected.push(current);
    }
    Ok(selected)
}

/// Index of the point nearest to the centroid of mass (smallest index on ties).
/// Pinning the FPS start here makes the whole sampling stage invariant to
/// input permutation.
pub fn center_of_mass_index(positions: &[[f64; 3]]) -> usize {
    let n = positions.len() as f64;
    let mut com = [0.0; 3];
    for p in positions {
        for d in 0..3 {
            com[d] += p[d];
        }
    }
    for v in &mut com {
        *v /= n;
    }
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, p) in positions.iter().enumerate() {
        let d = dist2(p, &com);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// The `k` nearest points to `center` (the center itself is eligible when it
/// is one of `positions`), ties toward smaller index.
pub fn k_nearest_to(positions: &[[f64; 3]], center: &[f64; 3], k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = positions
        .iter()
        .enumerate()
        .map(|(j, p)| (dist2(center, p), j))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    order.truncate(k);
    order.into_iter().map(|(_, j)| j).collect()
}
