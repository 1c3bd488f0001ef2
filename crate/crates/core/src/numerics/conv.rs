//! 1-D "same" convolution over the time axis of channel-major buffers.
//!
//! Weights are laid out `[out][in][tap]`; tap `j` reads frame `t + j - k/2`
//! and frames outside `[0, frames)` read as zero. Every routine accumulates
//! into its output.

#[inline]
fn tap_span(j: usize, half: usize, frames: usize) -> (isize, usize, usize) {
    let shift = j as isize - half as isize;
    let lo = (-shift).max(0) as usize;
    let hi = (frames as isize - shift).min(frames as isize).max(0) as usize;
    (shift, lo, hi)
}

/// `y += W * x`.
pub fn conv1d_forward(
    w: &[f64],
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
    x: &[f64],
    frames: usize,
    y: &mut [f64],
) {
    debug_assert_eq!(w.len(), out_ch * in_ch * kernel);
    debug_assert_eq!(x.len(), in_ch * frames);
    debug_assert_eq!(y.len(), out_ch * frames);
    let half = kernel / 2;
    for o in 0..out_ch {
        let yo = &mut y[o * frames..(o + 1) * frames];
        for i in 0..in_ch {
            let xi = &x[i * frames..(i + 1) * frames];
            for j in 0..kernel {
                let wv = w[(o * in_ch + i) * kernel + j];
                if wv == 0.0 {
                    continue;
                }
                let (shift, lo, hi) = tap_span(j, half, frames);
                for t in lo..hi {
                    yo[t] += wv * xi[(t as isize + shift) as usize];
                }
            }
        }
    }
}

/// Accumulate `dW` and, when requested, `dx` for `y = W * x`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    w: &[f64],
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
    x: &[f64],
    frames: usize,
    dy: &[f64],
    dw: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let half = kernel / 2;
    for o in 0..out_ch {
        let dyo = &dy[o * frames..(o + 1) * frames];
        for i in 0..in_ch {
            let xi = &x[i * frames..(i + 1) * frames];
            for j in 0..kernel {
                let idx = (o * in_ch + i) * kernel + j;
                let (shift, lo, hi) = tap_span(j, half, frames);
                let mut acc = 0.0;
                for t in lo..hi {
                    acc += dyo[t] * xi[(t as isize + shift) as usize];
                }
                dw[idx] += acc;
                if let Some(dx) = dx.as_deref_mut() {
                    let wv = w[idx];
                    if wv != 0.0 {
                        let dxi = &mut dx[i * frames..(i + 1) * frames];
                        for t in lo..hi {
                            dxi[(t as isize + shift) as usize] += wv * dyo[t];
                        }
                    }
                }
            }
        }
    }
}

/// `y[o, t] += Σ_i m[o, i] · x[i, t]` for a row-major `rows × cols` matrix.
pub fn matmul_frames(m: &[f64], rows: usize, cols: usize, x: &[f64], frames: usize, y: &mut [f64]) {
    conv1d_forward(m, rows, cols, 1, x, frames, y);
}

/// `y[i, t] += Σ_o m[o, i] · dy[o, t]`, the transpose product.
pub fn matmul_frames_transposed(
    m: &[f64],
    rows: usize,
    cols: usize,
    dy: &[f64],
    frames: usize,
    y: &mut [f64],
) {
    for o in 0..rows {
        let dyo = &dy[o * frames..(o + 1) * frames];
        for i in 0..cols {
            let mv = m[o * cols + i];
            if mv == 0.0 {
                continue;
            }
            let yi = &mut y[i * frames..(i + 1) * frames];
            for t in 0..frames {
                yi[t] += mv * dyo[t];
            }
        }
    }
}

/// `dm[o, i] += Σ_t dy[o, t] · x[i, t]`.
pub fn outer_frames(dm: &mut [f64], rows: usize, cols: usize, dy: &[f64], x: &[f64], frames: usize) {
    for o in 0..rows {
        let dyo = &dy[o * frames..(o + 1) * frames];
        for i in 0..cols {
            let xi = &x[i * frames..(i + 1) * frames];
            let mut acc = 0.0;
            for t in 0..frames {
                acc += dyo[t] * xi[t];
            }
            dm[o * cols + i] += acc;
        }
    }
}
