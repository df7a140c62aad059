use alloc::vec::Vec;

use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-center selection over flattened `dim`-wide embeddings.
///
/// Each pick is the candidate whose minimum Euclidean distance to the
/// existing centers and all earlier picks is largest; ties go to the lowest
/// candidate index. Returns candidate indices in pick order.
pub fn kcenter_greedy(
    candidates: &[f64],
    centers: &[f64],
    dim: usize,
    k: usize,
) -> Result<Vec<usize>> {
    if dim == 0 || candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if centers.is_empty() {
        return Err(Error::EmptyCenters);
    }
    let n = candidates.len() / dim;
    if k > n {
        return Err(Error::TooManyRequested {
            requested: k,
            available: n,
        });
    }
    let point = |i: usize| &candidates[i * dim..(i + 1) * dim];
    let mut min_dist: Vec<f64> = (0..n)
        .map(|i| {
            centers
                .chunks(dim)
                .map(|c| sq_dist(point(i), c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = alloc::vec![false; n];
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            if best.map_or(true, |b| min_dist[i] > min_dist[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k <= n leaves a candidate");
        taken[b] = true;
        chosen.push(b);
        for i in 0..n {
            if !taken[i] {
                let d = sq_dist(point(i), point(b));
                if d < min_dist[i] {
                    min_dist[i] = d;
                }
            }
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn farthest_point_on_a_line() {
        let candidates = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(kcenter_greedy(&candidates, &[0.0], 1, 1).unwrap(), vec![3]);
    }

    #[test]
    fn equidistant_tie_goes_to_lowest_index() {
        // Points 1 and 2 are both at distance 1 from the centers {0, 3}.
        assert_eq!(kcenter_greedy(&[1.0, 2.0], &[0.0, 3.0], 1, 1).unwrap(), vec![0]);
    }

    #[test]
    fn errors() {
        assert_eq!(kcenter_greedy(&[1.0], &[], 1, 1), Err(Error::EmptyCenters));
        assert_eq!(kcenter_greedy(&[], &[0.0], 1, 1), Err(Error::EmptyCandidates));
        assert!(matches!(kcenter_greedy(&[1.0], &[0.0], 1, 2), Err(Error::TooManyRequested { .. })));
    }

    #[test]
    fn later_picks_account_for_earlier_ones() {
        // 10 is farthest from 0; then 5 is farthest from {0, 10}.
        let c = [1.0, 5.0, 9.0, 10.0];
        assert_eq!(kcenter_greedy(&c, &[0.0], 1, 2).unwrap(), vec![3, 1]);
    }
}
