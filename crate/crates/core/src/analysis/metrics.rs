use crate::envsim::Vec2;
use crate::error::{Error, Result};

/// Mean norm of the third forward difference `(p_{t+3} − 3p_{t+2} + 3p_{t+1} − p_t) / dt³`
/// over the `T − 3` valid indices.
pub fn average_jerk(positions: &[Vec2], dt: f64) -> Result<f64> {
    let t = positions.len();
    if t < 4 {
        return Err(Error::Input(format!("jerk needs at least 4 positions, got {t}")));
    }
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    let dt3 = dt * dt * dt;
    let total: f64 = positions
        .windows(4)
        .map(|w| {
            let jx = w[3][0] - 3.0 * w[2][0] + 3.0 * w[1][0] - w[0][0];
            let jy = w[3][1] - 3.0 * w[2][1] + 3.0 * w[1][1] - w[0][1];
            jx.hypot(jy) / dt3
        })
        .sum();
    Ok(total / (t - 3) as f64)
}

/// Fraction of starts with a success among their first `k` attempts.
pub fn pass_at_k(outcomes: &[Vec<bool>], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    if outcomes.is_empty() {
        return Err(Error::Input("no starts to score".into()));
    }
    if let Some((i, o)) = outcomes.iter().enumerate().find(|(_, o)| o.len() < k) {
        return Err(Error::Input(format!("start {i} has {} attempts, need {k}", o.len())));
    }
    let hits = outcomes.iter().filter(|o| o[..k].iter().any(|&s| s)).count();
    Ok(hits as f64 / outcomes.len() as f64)
}

/// `(after − before) / before`; `None` when `before` is zero.
pub fn relative_improvement(before: f64, after: f64) -> Option<f64> {
    (before > 0.0).then(|| (after - before) / before)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(f: impl Fn(f64) -> f64, n: usize) -> Vec<Vec2> {
        (0..n).map(|t| [f(t as f64), 0.0]).collect()
    }

    #[test]
    fn jerk_cases() {
        assert_eq!(average_jerk(&traj(|t| 0.25 * t + 1.0, 10), 0.5).unwrap(), 0.0);
        assert_eq!(average_jerk(&traj(|t| t * t, 10), 1.0).unwrap(), 0.0);
        assert_eq!(average_jerk(&traj(|t| t * t * t, 10), 1.0).unwrap(), 6.0);
        assert!(average_jerk(&traj(|t| t, 3), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn jerk_translation_and_time_scaling(
            pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4..30),
            dx in -5.0f64..5.0,
            dy in -5.0f64..5.0,
            dt in 0.05f64..2.0,
        ) {
            let p: Vec<Vec2> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let shifted: Vec<Vec2> = p.iter().map(|q| [q[0] + dx, q[1] + dy]).collect();
            let j = average_jerk(&p, 1.0).unwrap();
            let js = average_jerk(&shifted, 1.0).unwrap();
            prop_assert!((j - js).abs() <= 1e-9 * j.max(1.0));
            let jd = average_jerk(&p, dt).unwrap();
            prop_assert!((jd - j / dt.powi(3)).abs() <= 1e-9 * jd.max(1.0));
        }

        #[test]
        fn pass_at_k_monotone(outcomes in prop::collection::vec(prop::collection::vec(any::<bool>(), 5), 1..10)) {
            let mut prev = 0.0;
            for k in 1..=5 {
                let v = pass_at_k(&outcomes, k).unwrap();
                prop_assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn pass_at_k_cases() {
        assert_eq!(pass_at_k(&[vec![true, false, false, false, false]], 5).unwrap(), 1.0);
        assert_eq!(pass_at_k(&vec![vec![false; 5]; 3], 5).unwrap(), 0.0);
        assert!(pass_at_k(&[vec![true; 4]], 5).is_err());
        let table = vec![
            vec![false, false, true, false, false],
            vec![false; 5],
            vec![true, true, true, true, true],
            vec![false, false, false, false, true],
        ];
        // direct enumeration: starts 0, 2, 3 hit within 5; only 2 within 2
        let mut hits5 = 0;
        let mut hits2 = 0;
        for row in &table {
            if row.contains(&true) {
                hits5 += 1;
            }
            if row[0] || row[1] {
                hits2 += 1;
            }
        }
        assert_eq!(pass_at_k(&table, 5).unwrap(), hits5 as f64 / 4.0);
        assert_eq!(pass_at_k(&table, 2).unwrap(), hits2 as f64 / 4.0);
    }

    #[test]
    fn relative_improvement_table_convention() {
        let r = relative_improvement(0.47, 0.56).unwrap();
        assert!((r - 0.19148936170212766).abs() < 1e-12);
        assert_eq!(relative_improvement(0.0, 0.3), None);
    }
}
