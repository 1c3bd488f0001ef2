use crate::error::{Error, Result};

/// Log-f0 with unvoiced gaps filled.
///
/// Voiced frames hold `ln(f0_raw)`. Interior unvoiced runs are linearly
/// interpolated in the log domain between the flanking voiced frames; leading
/// and trailing runs hold the nearest voiced value.
pub fn interpolate_f0(f0_raw: &[f64], vuv: &[bool]) -> Result<Vec<f64>> {
    if f0_raw.len() != vuv.len() {
        return Err(Error::Shape(format!(
            "f0 has {} frames but vuv has {}",
            f0_raw.len(),
            vuv.len()
        )));
    }
    let voiced: Vec<usize> = (0..vuv.len()).filter(|&t| vuv[t]).collect();
    if voiced.is_empty() {
        return Err(Error::Unusable("no voiced frames".into()));
    }
    for &t in &voiced {
        if !(f0_raw[t] > 0.0) || !f0_raw[t].is_finite() {
            return Err(Error::Domain(format!(
                "voiced frame {t} has non-positive f0 {}",
                f0_raw[t]
            )));
        }
    }

    let mut out = vec![0.0; f0_raw.len()];
    let first = voiced[0];
    let last = *voiced.last().unwrap();
    let first_val = f0_raw[first].ln();
    let last_val = f0_raw[last].ln();
    out[..first].iter_mut().for_each(|v| *v = first_val);
    out[last + 1..].iter_mut().for_each(|v| *v = last_val);

    for pair in voiced.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let va = f0_raw[a].ln();
        let vb = f0_raw[b].ln();
        out[a] = va;
        let span = (b - a) as f64;
        for (k, slot) in out[a + 1..b].iter_mut().enumerate() {
            let w = (k + 1) as f64 / span;
            *slot = va + w * (vb - va);
        }
    }
    out[last] = last_val;
    Ok(out)
}

/// Subtract the utterance mean.
pub fn normalize_f0(logf0: &[f64]) -> Vec<f64> {
    if logf0.is_empty() {
        return Vec::new();
    }
    let mean = logf0.iter().sum::<f64>() / logf0.len() as f64;
    let mut out: Vec<f64> = logf0.iter().map(|v| v - mean).collect();
    // A second pass removes the rounding residue of the first.
    let resid = out.iter().sum::<f64>() / out.len() as f64;
    out.iter_mut().for_each(|v| *v -= resid);
    out
}

/// `normalize_f0(interpolate_f0(..))`.
pub fn normalized_log_f0(f0_raw: &[f64], vuv: &[bool]) -> Result<Vec<f64>> {
    Ok(normalize_f0(&interpolate_f0(f0_raw, vuv)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    /// Walks left and right from every gap independently of the main routine.
    fn two_pointer_oracle(f0: &[f64], vuv: &[bool]) -> Vec<f64> {
        let n = f0.len();
        let mut out = vec![0.0; n];
        for t in 0..n {
            if vuv[t] {
                out[t] = f0[t].ln();
                continue;
            }
            let left = (0..t).rev().find(|&i| vuv[i]);
            let right = (t + 1..n).find(|&i| vuv[i]);
            out[t] = match (left, right) {
                (Some(l), Some(r)) => {
                    let a = f0[l].ln();
                    let b = f0[r].ln();
                    a + (b - a) * (t - l) as f64 / (r - l) as f64
                }
                (Some(l), None) => f0[l].ln(),
                (None, Some(r)) => f0[r].ln(),
                (None, None) => unreachable!(),
            };
        }
        out
    }

    #[test]
    fn constant_voiced_contour() {
        let out = interpolate_f0(&[100.0; 6], &[true; 6]).unwrap();
        for v in out {
            assert_eq!(v, 100f64.ln());
        }
    }

    #[test]
    fn interior_gap_is_linear() {
        let f0 = [2f64.exp(), 0.0, 0.0, 4f64.exp()];
        let vuv = [true, false, false, true];
        let out = interpolate_f0(&f0, &vuv).unwrap();
        let expect = [2.0, 2.0 + 2.0 / 3.0, 2.0 + 4.0 / 3.0, 4.0];
        for (a, b) in out.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out[1] - 2.6667).abs() < 1e-4);
        assert!((out[2] - 3.3333).abs() < 1e-4);
    }

    #[test]
    fn edges_hold_nearest_voiced_value() {
        let f0 = [0.0, 0.0, 150.0, 0.0, 120.0, 0.0];
        let vuv = [false, false, true, false, true, false];
        let out = interpolate_f0(&f0, &vuv).unwrap();
        assert_eq!(out[0], 150f64.ln());
        assert_eq!(out[1], 150f64.ln());
        assert_eq!(out[5], 120f64.ln());
    }

    #[test]
    fn all_unvoiced_is_unusable() {
        assert!(matches!(
            interpolate_f0(&[0.0; 4], &[false; 4]),
            Err(Error::Unusable(_))
        ));
    }

    #[test]
    fn random_masks_match_two_pointer_oracle() {
        let mut rng = SeededRng::new(21);
        for _ in 0..200 {
            let vuv: Vec<bool> = (0..50).map(|_| rng.uniform() < 0.5).collect();
            if !vuv.iter().any(|&v| v) {
                continue;
            }
            let f0: Vec<f64> = vuv
                .iter()
                .map(|&v| if v { rng.uniform_range(80.0, 300.0) } else { 0.0 })
                .collect();
            let got = interpolate_f0(&f0, &vuv).unwrap();
            let want = two_pointer_oracle(&f0, &vuv);
            for (t, (a, b)) in got.iter().zip(&want).enumerate() {
                assert!((a - b).abs() <= 1e-12, "frame {t}: {a} vs {b}");
                if vuv[t] {
                    assert_eq!(*a, f0[t].ln());
                }
            }
        }
    }

    #[test]
    fn normalization_examples() {
        assert!(normalize_f0(&[3.5; 5]).iter().all(|v| v.abs() < 1e-15));
        let out = normalize_f0(&[1.0, 2.0, 3.0]);
        for (a, b) in out.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn normalized_mean_vanishes(v in proptest::collection::vec(-10.0f64..10.0, 1..200)) {
            let out = normalize_f0(&v);
            let mean = out.iter().sum::<f64>() / out.len() as f64;
            prop_assert!(mean.abs() <= 1e-12);
        }

        #[test]
        fn normalization_is_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 1..200)) {
            let once = normalize_f0(&v);
            let twice = normalize_f0(&once);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
