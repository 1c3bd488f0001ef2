use crate::error::{Error, Result};
use crate::numerics::FrameMatrix;

/// Fold time into channels: output channel `j * C + c` at frame `t` holds
/// input channel `c` at frame `t * factor + j`.
pub fn squeeze(x: &FrameMatrix, factor: usize) -> Result<FrameMatrix> {
    if factor == 0 || x.frames() % factor != 0 {
        return Err(Error::Shape(format!(
            "{} frames are not divisible by squeeze factor {factor}",
            x.frames()
        )));
    }
    let c = x.channels();
    let t_out = x.frames() / factor;
    Ok(FrameMatrix::from_fn(c * factor, t_out, |ch, t| {
        let (j, src) = (ch / c, ch % c);
        x.get(src, t * factor + j)
    }))
}

pub fn unsqueeze(x: &FrameMatrix, factor: usize) -> Result<FrameMatrix> {
    if factor == 0 || x.channels() % factor != 0 {
        return Err(Error::Shape(format!(
            "{} channels are not divisible by squeeze factor {factor}",
            x.channels()
        )));
    }
    let c = x.channels() / factor;
    Ok(FrameMatrix::from_fn(c, x.frames() * factor, |ch, t| {
        x.get((t % factor) * c + ch, t / factor)
    }))
}

/// Largest frame count `<= frames` divisible by `factor`.
pub fn usable_frames(frames: usize, factor: usize) -> usize {
    frames - frames % factor
}

/// Drop trailing frames so the squeeze divides evenly; returns the trimmed count.
pub fn trim_for_squeeze(x: &FrameMatrix, factor: usize) -> (FrameMatrix, usize) {
    let keep = usable_frames(x.frames(), factor);
    (x.truncate_frames(keep), x.frames() - keep)
}

/// Factor out the last `k` channels.
pub fn split(x: &FrameMatrix, k: usize) -> Result<(FrameMatrix, FrameMatrix)> {
    if k == 0 || k >= x.channels() {
        return Err(Error::Shape(format!(
            "cannot split {k} of {} channels",
            x.channels()
        )));
    }
    let keep = x.channels() - k;
    Ok((x.channel_slice(0, keep), x.channel_slice(keep, x.channels())))
}

pub fn merge(kept: &FrameMatrix, factored: &FrameMatrix) -> Result<FrameMatrix> {
    kept.concat_channels(factored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn squeeze_layout() {
        let x = FrameMatrix::from_fn(2, 4, |c, t| (10 * c + t) as f64);
        let s = squeeze(&x, 2).unwrap();
        assert_eq!((s.channels(), s.frames()), (4, 2));
        assert_eq!(s.column(0), vec![x.get(0, 0), x.get(1, 0), x.get(0, 1), x.get(1, 1)]);
        assert_eq!(s.column(1), vec![x.get(0, 2), x.get(1, 2), x.get(0, 3), x.get(1, 3)]);
    }

    #[test]
    fn unit_factor_is_identity() {
        let x = FrameMatrix::from_fn(3, 5, |c, t| (c * t) as f64 + 0.5);
        assert_eq!(squeeze(&x, 1).unwrap(), x);
    }

    #[test]
    fn non_divisible_frames_error() {
        let x = FrameMatrix::zeros(2, 5);
        assert!(squeeze(&x, 2).is_err());
        let (t, trimmed) = trim_for_squeeze(&x, 2);
        assert_eq!((t.frames(), trimmed), (4, 1));
    }

    #[test]
    fn split_boundaries() {
        let x = FrameMatrix::from_fn(4, 3, |c, t| (c + t) as f64);
        assert!(split(&x, 0).is_err());
        assert!(split(&x, 4).is_err());
        let (kept, fac) = split(&x, 3).unwrap();
        assert_eq!(kept.channels(), 1);
        assert_eq!(fac.channels(), 3);
        assert_eq!(fac.row(0), x.row(1));
    }

    proptest! {
        #[test]
        fn squeeze_and_split_invert_bitwise(
            c in 1usize..6, t_half in 1usize..6, factor in 1usize..4, seed in 0u64..1000
        ) {
            let mut rng = SeededRng::new(seed);
            let x = FrameMatrix::from_vec(c, t_half * factor, rng.standard_normal_vec(c * t_half * factor)).unwrap();
            let s = squeeze(&x, factor).unwrap();
            prop_assert_eq!(s.len(), x.len());
            prop_assert_eq!(&unsqueeze(&s, factor).unwrap(), &x);
            if s.channels() > 1 {
                let k = 1 + (seed as usize) % (s.channels() - 1);
                let (kept, fac) = split(&s, k).unwrap();
                prop_assert_eq!(kept.len() + fac.len(), s.len());
                prop_assert_eq!(merge(&kept, &fac).unwrap(), s);
            }
        }
    }
}
