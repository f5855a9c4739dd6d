use crate::error::{ensure_width, Error, Result};

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Greedy max-min selection of `k` points starting from `start`.
///
/// Each pick maximizes the distance to its nearest already-picked point;
/// ties go to the lowest index.
pub fn farthest_point_sampling(points: &[Vec<f64>], k: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::Input(format!("k must lie in 1..={n}, got {k}")));
    }
    if start >= n {
        return Err(Error::Index {
            index: start,
            lo: 0,
            hi: n - 1,
        });
    }
    let dim = points[0].len();
    for p in points {
        ensure_width("fps point", dim, p.len())?;
    }
    let mut picked = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(k);
    let mut current = start;
    loop {
        picked[current] = true;
        order.push(current);
        if order.len() == k {
            return Ok(order);
        }
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if picked[i] {
                continue;
            }
            nearest[i] = nearest[i].min(euclid(&points[i], &points[current]));
            if best.is_none_or(|(_, d)| nearest[i] > d) {
                best = Some((i, nearest[i]));
            }
        }
        current = best.expect("k <= n leaves a candidate").0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::RngStream;
    use proptest::prelude::*;

    fn line(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64]).collect()
    }

    #[test]
    fn collinear_examples() {
        assert_eq!(farthest_point_sampling(&line(10), 2, 0).unwrap(), vec![0, 9]);
        assert_eq!(farthest_point_sampling(&line(10), 3, 0).unwrap(), vec![0, 9, 4]);
    }

    #[test]
    fn errors() {
        assert!(matches!(farthest_point_sampling(&line(3), 4, 0), Err(Error::Input(_))));
        assert!(farthest_point_sampling(&line(3), 0, 0).is_err());
        assert!(farthest_point_sampling(&line(3), 2, 3).is_err());
        assert!(farthest_point_sampling(&[vec![0.0], vec![1.0, 2.0]], 2, 0).is_err());
    }

    pub(crate) fn naive(points: &[Vec<f64>], k: usize, start: usize) -> Vec<usize> {
        let mut sel = vec![start];
        while sel.len() < k {
            let mut best = None;
            let mut best_d = f64::NEG_INFINITY;
            for i in 0..points.len() {
                if sel.contains(&i) {
                    continue;
                }
                let d = sel.iter().map(|&j| euclid(&points[i], &points[j])).fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = Some(i);
                }
            }
            sel.push(best.unwrap());
        }
        sel
    }

    #[test]
    fn matches_naive_on_random_instances() {
        let mut r = RngStream::new(0, "fps");
        for _ in 0..200 {
            let n = 1 + r.below(50);
            let grid = r.uniform() < 0.3;
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..2)
                        .map(|_| if grid { r.below(4) as f64 } else { r.uniform() })
                        .collect()
                })
                .collect();
            let k = 1 + r.below(n);
            let s = r.below(n);
            assert_eq!(farthest_point_sampling(&pts, k, s).unwrap(), naive(&pts, k, s));
        }
    }

    proptest! {
        #[test]
        fn full_selection_is_permutation_and_min_distance_shrinks(
            pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 2..20),
        ) {
            let n = pts.len();
            let all = farthest_point_sampling(&pts, n, 0).unwrap();
            let mut sorted = all.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            let mut prev = f64::INFINITY;
            for k in 2..=n {
                let sel = &all[..k];
                let mut m = f64::INFINITY;
                for a in 0..k {
                    for b in a + 1..k {
                        m = m.min(euclid(&pts[sel[a]], &pts[sel[b]]));
                    }
                }
                prop_assert!(m <= prev);
                prev = m;
            }
        }
    }
}
