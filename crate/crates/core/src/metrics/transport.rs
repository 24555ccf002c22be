//! Exact Wasserstein-2 between equal-size empirical measures.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PointSet;
use crate::error::{check_dim, invalid, Result};

/// Largest point-set size [`wasserstein2_exact`] accepts.
pub const W2_MAX_POINTS: usize = 4096;

/// Minimum-cost perfect matching on a dense square cost matrix (row-major).
///
/// Column reduction seeds a partial assignment; each remaining row is then
/// matched by a shortest augmenting path (Dijkstra on reduced costs) with
/// the dual update deferred to the end of the search. `O(n^3)` worst case.
/// Returns the column assigned to each row.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    const FREE: usize = usize::MAX;
    let mut u = vec![0.0; n];
    let mut v = vec![f64::INFINITY; n];
    let mut col4row = vec![FREE; n];
    let mut row4col = vec![FREE; n];
    // column reduction: v_j = min_i c_ij keeps every reduced cost >= 0,
    // and a free row at the minimum can take the column at zero slack
    let mut argmin = vec![0; n];
    for i in 0..n {
        for (j, &c) in cost[i * n..(i + 1) * n].iter().enumerate() {
            if c < v[j] {
                v[j] = c;
                argmin[j] = i;
            }
        }
    }
    for j in 0..n {
        let i = argmin[j];
        if col4row[i] == FREE {
            col4row[i] = j;
            row4col[j] = i;
        }
    }

    let mut shortest = vec![f64::INFINITY; n];
    let mut path = vec![FREE; n];
    let mut remaining: Vec<usize> = Vec::with_capacity(n);
    let mut scanned_rows: Vec<usize> = Vec::with_capacity(n);
    let mut scanned_cols: Vec<usize> = Vec::with_capacity(n);
    for start in 0..n {
        if col4row[start] != FREE {
            continue;
        }
        shortest.fill(f64::INFINITY);
        remaining.clear();
        remaining.extend((0..n).rev());
        scanned_rows.clear();
        scanned_cols.clear();
        let mut min_val = 0.0;
        let mut i = start;
        let sink = loop {
            scanned_rows.push(i);
            let row = &cost[i * n..(i + 1) * n];
            let mut lowest = f64::INFINITY;
            let mut pick = 0;
            for (k, &j) in remaining.iter().enumerate() {
                let r = min_val + row[j] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                // ties go to free columns so the search ends sooner
                if shortest[j] < lowest || (shortest[j] == lowest && row4col[j] == FREE) {
                    lowest = shortest[j];
                    pick = k;
                }
            }
            min_val = lowest;
            let j = remaining.swap_remove(pick);
            scanned_cols.push(j);
            if row4col[j] == FREE {
                break j;
            }
            i = row4col[j];
        };
        u[start] += min_val;
        for &r in &scanned_rows[1..] {
            u[r] += min_val - shortest[col4row[r]];
        }
        for &c in &scanned_cols {
            v[c] -= min_val - shortest[c];
        }
        let mut j = sink;
        loop {
            let i = path[j];
            row4col[j] = i;
            let prev = std::mem::replace(&mut col4row[i], j);
            if i == start {
                break;
            }
            j = prev;
        }
    }
    col4row
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean(s: &PointSet) -> Vec<f64> {
    let mut m = vec![0.0; s.dim()];
    for p in s.points() {
        for (acc, x) in m.iter_mut().zip(p) {
            *acc += x;
        }
    }
    m.iter().map(|v| v / s.len() as f64).collect()
}

/// `sqrt(min_perm sum ||a_i - b_perm(i)||^2 / n)`.
pub fn wasserstein2_exact(a: &PointSet, b: &PointSet) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let n = a.len();
    if b.len() != n {
        return Err(invalid("point sets", format!("sizes differ: {} vs {}", n, b.len())));
    }
    if n > W2_MAX_POINTS {
        return Err(invalid(
            "point sets",
            format!("{n} points exceed the exact-solver cap of {W2_MAX_POINTS}; subsample first"),
        ));
    }
    // Every coupling has E|X - Y|^2 = |m_a - m_b|^2 + E|(X - m_a) - (Y - m_b)|^2,
    // so centring both sets leaves the optimal matching unchanged and keeps
    // the solver from wading through a large common offset. The cost of the
    // matching is then summed on the original points.
    let (ma, mb) = (mean(a), mean(b));
    let centred = |s: &PointSet, m: &[f64]| -> Vec<Vec<f64>> {
        s.points().iter().map(|p| p.iter().zip(m).map(|(x, c)| x - c).collect()).collect()
    };
    let (ca, cb) = (centred(a, &ma), centred(b, &mb));
    let mut cost = Vec::with_capacity(n * n);
    for p in &ca {
        for q in &cb {
            cost.push(sq_dist(p, q));
        }
    }
    let assignment = min_cost_assignment(&cost, n);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| sq_dist(&a.points()[i], &b.points()[j]))
        .sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Result of [`wasserstein2_capped`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CappedDistance {
    pub value: f64,
    /// Points actually used from each set.
    pub used: usize,
    pub subsampled: bool,
}

/// [`wasserstein2_exact`] after drawing at most `cap` points from each set
/// with a fixed-seed ChaCha8 stream. Sizes must still agree.
pub fn wasserstein2_capped(a: &PointSet, b: &PointSet, cap: usize, seed: u64) -> Result<CappedDistance> {
    if a.len() != b.len() {
        return Err(invalid("point sets", format!("sizes differ: {} vs {}", a.len(), b.len())));
    }
    let cap = cap.clamp(1, W2_MAX_POINTS);
    if a.len() <= cap {
        return Ok(CappedDistance {
            value: wasserstein2_exact(a, b)?,
            used: a.len(),
            subsampled: false,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |s: &PointSet, rng: &mut ChaCha8Rng| -> Result<PointSet> {
        let mut idx = sample(rng, s.len(), cap).into_vec();
        idx.sort_unstable();
        PointSet::new(idx.into_iter().map(|i| s.points()[i].clone()).collect())
    };
    let sa = pick(a, &mut rng)?;
    let sb = pick(b, &mut rng)?;
    Ok(CappedDistance {
        value: wasserstein2_exact(&sa, &sb)?,
        used: cap,
        subsampled: true,
    })
}

/// Closed-form W2 between 1D Gaussians.
pub fn wasserstein2_gaussian_1d(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Result<f64> {
    if !(sigma1 >= 0.0 && sigma2 >= 0.0) {
        return Err(invalid("sigma", "standard deviations must be non-negative"));
    }
    Ok(((mu1 - mu2).powi(2) + (sigma1 - sigma2).powi(2)).sqrt())
}
