//! Distances and divergences between measures on the ordered colors `0..K`
//! (unit spacing).

use crate::error::{invalid_arg, Result};

/// Above this many colors the bounded-Lipschitz optimum is found by dynamic
/// programming instead of enumerating the candidate profiles.
const ENUMERATION_MAX_COLORS: usize = 8;

fn same_length(mu: &[f64], nu: &[f64]) -> Result<()> {
    if mu.len() != nu.len() || mu.is_empty() {
        return Err(invalid_arg(format!(
            "measures on {} and {} colors cannot be compared",
            mu.len(),
            nu.len()
        )));
    }
    Ok(())
}

/// Wasserstein-1 distance for the ground metric `|z - z'|`: the L1 distance of the CDFs.
pub fn w1_discrete(mu: &[f64], nu: &[f64]) -> Result<f64> {
    same_length(mu, nu)?;
    let mut gap = 0.0;
    let mut total = 0.0;
    for z in 0..mu.len() - 1 {
        gap += mu[z] - nu[z];
        total += gap.abs();
    }
    Ok(total)
}

/// Bounded-Lipschitz distance: `sup { sum g (mu - nu) : |g| <= 1, |g(z) - g(z')| <= |z - z'| }`.
///
/// The constraint matrix is an interval system, so the optimum sits at a profile
/// `g in {-1, 0, 1}^K` whose consecutive values differ by at most one.
pub fn d_bl(mu: &[f64], nu: &[f64]) -> Result<f64> {
    same_length(mu, nu)?;
    let diff: Vec<f64> = mu.iter().zip(nu).map(|(a, b)| a - b).collect();
    Ok(if diff.len() <= ENUMERATION_MAX_COLORS {
        d_bl_enumerate(&diff)
    } else {
        d_bl_dynamic(&diff)
    })
}

/// Maximise over all admissible integer profiles.
pub(crate) fn d_bl_enumerate(diff: &[f64]) -> f64 {
    let k = diff.len();
    let mut g = vec![-1i8; k];
    let mut best = f64::NEG_INFINITY;
    loop {
        if g.windows(2).all(|w| (w[1] - w[0]).abs() <= 1) {
            let v: f64 = g.iter().zip(diff).map(|(&x, d)| x as f64 * d).sum();
            best = best.max(v);
        }
        // Odometer over {-1, 0, 1}^K.
        let mut i = 0;
        loop {
            if i == k {
                return best;
            }
            if g[i] < 1 {
                g[i] += 1;
                break;
            }
            g[i] = -1;
            i += 1;
        }
    }
}

/// Viterbi pass over the three levels.
pub(crate) fn d_bl_dynamic(diff: &[f64]) -> f64 {
    let mut best = [-diff[0], 0.0, diff[0]];
    for d in &diff[1..] {
        let prev = best;
        for (level, slot) in best.iter_mut().enumerate() {
            let lo = level.saturating_sub(1);
            let hi = (level + 1).min(2);
            let reach = prev[lo..=hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            *slot = reach + (level as f64 - 1.0) * d;
        }
    }
    best.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `sum p log(p / q)` with `0 log 0 = 0`; `+inf` when `p` charges a color `q` does not.
pub fn relative_entropy(p: &[f64], q: &[f64]) -> Result<f64> {
    same_length(p, q)?;
    let mut h = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(f64::INFINITY);
            }
            h += a * (a / b).ln();
        }
    }
    Ok(h)
}

/// `1/2 sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    same_length(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Generic LP by vertex enumeration: every choice of `K` active constraints among
    /// `g_z = +-1` and `g_{z+1} - g_z = +-1` (plus `g_0 = 0` when unbounded) is solved
    /// and the best feasible vertex kept.
    fn lp_by_vertices(diff: &[f64], bounded: bool) -> f64 {
        let k = diff.len();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for z in 0..k - 1 {
            let mut a = vec![0.0; k];
            a[z + 1] = 1.0;
            a[z] = -1.0;
            rows.push((a.clone(), 1.0));
            rows.push((a.iter().map(|x| -x).collect(), 1.0));
        }
        let mut eqs: Vec<(Vec<f64>, f64)> = Vec::new();
        if bounded {
            for z in 0..k {
                let mut a = vec![0.0; k];
                a[z] = 1.0;
                rows.push((a.clone(), 1.0));
                rows.push((a.iter().map(|x| -x).collect(), 1.0));
            }
        } else {
            let mut a = vec![0.0; k];
            a[0] = 1.0;
            eqs.push((a, 0.0));
        }
        let need = k - eqs.len();
        let mut best = f64::NEG_INFINITY;
        let n = rows.len();
        let mut pick: Vec<usize> = (0..need).collect();
        loop {
            let mut sys: Vec<(Vec<f64>, f64)> = eqs.clone();
            sys.extend(pick.iter().map(|&i| rows[i].clone()));
            if let Some(g) = solve(sys) {
                if rows.iter().all(|(a, b)| a.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>() <= b + 1e-9) {
                    best = best.max(g.iter().zip(diff).map(|(x, d)| x * d).sum());
                }
            }
            // next combination
            let mut i = need;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if pick[i] < n - need + i {
                    pick[i] += 1;
                    for j in i + 1..need {
                        pick[j] = pick[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn solve(mut sys: Vec<(Vec<f64>, f64)>) -> Option<Vec<f64>> {
        let k = sys.len();
        for c in 0..k {
            let p = (c..k).max_by(|&a, &b| sys[a].0[c].abs().total_cmp(&sys[b].0[c].abs()))?;
            if sys[p].0[c].abs() < 1e-12 {
                return None;
            }
            sys.swap(c, p);
            for r in 0..k {
                if r != c {
                    let f = sys[r].0[c] / sys[c].0[c];
                    let (pivot, rhs) = (sys[c].0.clone(), sys[c].1);
                    for (x, y) in sys[r].0.iter_mut().zip(&pivot) {
                        *x -= f * y;
                    }
                    sys[r].1 -= f * rhs;
                }
            }
        }
        Some((0..k).map(|c| sys[c].1 / sys[c].0[c]).collect())
    }

    #[test]
    fn w1_examples() {
        assert_eq!(w1_discrete(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(w1_discrete(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        let v = w1_discrete(&[0.5, 0.0, 0.5], &[0.0, 1.0, 0.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!((lp_by_vertices(&[0.5, -1.0, 0.5], false) - 1.0).abs() < 1e-12);
        assert!(w1_discrete(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn d_bl_examples() {
        for k in 3..7 {
            let mut far = vec![0.0; k];
            far[k - 1] = 1.0;
            let mut near = vec![0.0; k];
            near[0] = 1.0;
            assert_eq!(d_bl(&near, &far).unwrap(), 2.0);
        }
        assert_eq!(d_bl(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(d_bl(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(relative_entropy(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((relative_entropy(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(relative_entropy(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), f64::INFINITY);
    }

    fn prob(k: usize) -> impl Strategy<Value = Vec<f64>> {
        // Some colors get exactly zero mass.
        prop::collection::vec(prop_oneof![Just(0.0f64), 0.0f64..1.0], k).prop_map(|mut w| {
            w[0] += 1e-3;
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        })
    }

    fn pair(max_k: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2..=max_k).prop_flat_map(|k| (prob(k), prob(k)))
    }

    fn triple(max_k: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (2..=max_k).prop_flat_map(|k| (prob(k), prob(k), prob(k)))
    }

    proptest! {
        #[test]
        fn bl_matches_generic_lp((a, b) in pair(5)) {
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let v = d_bl(&a, &b).unwrap();
            prop_assert!((v - lp_by_vertices(&diff, true)).abs() < 1e-12);
        }

        #[test]
        fn w1_matches_generic_lp((a, b) in pair(5)) {
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            prop_assert!((w1_discrete(&a, &b).unwrap() - lp_by_vertices(&diff, false)).abs() < 1e-12);
        }

        #[test]
        fn enumeration_and_dynamic_programming_agree((a, b) in pair(8)) {
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            prop_assert!((d_bl_enumerate(&diff) - d_bl_dynamic(&diff)).abs() < 1e-12);
        }

        #[test]
        fn bl_equals_w1_on_small_diameter((a, b) in pair(3)) {
            prop_assert!((d_bl(&a, &b).unwrap() - w1_discrete(&a, &b).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn bl_below_w1_and_two((a, b) in pair(12)) {
            let v = d_bl(&a, &b).unwrap();
            prop_assert!(v <= w1_discrete(&a, &b).unwrap() + 1e-12);
            prop_assert!(v <= 2.0 + 1e-12);
        }

        #[test]
        fn metric_axioms((a, b, c) in triple(10)) {
            for f in [d_bl, w1_discrete] {
                let ab = f(&a, &b).unwrap();
                prop_assert_eq!(ab, f(&b, &a).unwrap());
                prop_assert_eq!(f(&a, &a).unwrap(), 0.0);
                prop_assert!(ab <= f(&a, &c).unwrap() + f(&c, &b).unwrap() + 1e-12);
                if a != b {
                    prop_assert!(ab > 0.0);
                }
            }
        }

        #[test]
        fn entropy_nonnegative((a, b) in pair(6)) {
            prop_assert!(relative_entropy(&a, &b).unwrap() >= -1e-15);
        }
    }
}
