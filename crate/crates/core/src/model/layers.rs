//! Scalar forward/backward kernels for the layer kinds.
//!
//! Convolutions are 3x3, stride 1, zero-padded by 1 (same-size output);
//! pooling is 2x2 stride 2. All loops run in a frozen ascending order so
//! gradient accumulation is bit-reproducible.

/// Kernel side length for every convolution.
pub const KERNEL: usize = 3;
/// Zero padding applied on each border.
pub const PAD: usize = 1;

/// weights layout: [out][in][ky][kx]; input/output channel-planar.
pub fn conv2d_forward(
    input: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; out_ch * h * w];
    for o in 0..out_ch {
        let w_o = &weights[o * in_ch * KERNEL * KERNEL..(o + 1) * in_ch * KERNEL * KERNEL];
        let out_o = &mut out[o * h * w..(o + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[o];
                for i in 0..in_ch {
                    let plane = &input[i * h * w..(i + 1) * h * w];
                    let w_oi = &w_o[i * KERNEL * KERNEL..(i + 1) * KERNEL * KERNEL];
                    for ky in 0..KERNEL {
                        let iy = y + ky;
                        if iy < PAD || iy - PAD >= h {
                            continue;
                        }
                        let iy = iy - PAD;
                        for kx in 0..KERNEL {
                            let ix = x + kx;
                            if ix < PAD || ix - PAD >= w {
                                continue;
                            }
                            acc += w_oi[ky * KERNEL + kx] * plane[iy * w + ix - PAD];
                        }
                    }
                }
                out_o[y * w + x] = acc;
            }
        }
    }
    out
}

/// Returns (d_weights, d_bias, d_input).
pub fn conv2d_backward(
    input: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    out_ch: usize,
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut d_weights = vec![0.0; out_ch * in_ch * KERNEL * KERNEL];
    let mut d_bias = vec![0.0; out_ch];
    let mut d_input = vec![0.0; in_ch * h * w];
    for o in 0..out_ch {
        let w_o = &weights[o * in_ch * KERNEL * KERNEL..(o + 1) * in_ch * KERNEL * KERNEL];
        let dw_o = &mut d_weights[o * in_ch * KERNEL * KERNEL..(o + 1) * in_ch * KERNEL * KERNEL];
        for y in 0..h {
            for x in 0..w {
                let g = d_out[o * h * w + y * w + x];
                if g == 0.0 {
                    continue;
                }
                d_bias[o] += g;
                for i in 0..in_ch {
                    for ky in 0..KERNEL {
                        let iy = y + ky;
                        if iy < PAD || iy - PAD >= h {
                            continue;
                        }
                        let iy = iy - PAD;
                        for kx in 0..KERNEL {
                            let ix = x + kx;
                            if ix < PAD || ix - PAD >= w {
                                continue;
                            }
                            let ix = ix - PAD;
                            let widx = i * KERNEL * KERNEL + ky * KERNEL + kx;
                            dw_o[widx] += g * input[i * h * w + iy * w + ix];
                            d_input[i * h * w + iy * w + ix] += g * w_o[widx];
                        }
                    }
                }
            }
        }
    }
    (d_weights, d_bias, d_input)
}

pub fn relu_forward(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn relu_backward(input: &[f64], d_out: &[f64]) -> Vec<f64> {
    input
        .iter()
        .zip(d_out)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

/// 2x2 stride-2 max pool; output dims floor(h/2) x floor(w/2).
pub fn maxpool2_forward(input: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                out[c * oh * ow + y * ow + x] = window_max(plane, w, y, x).1;
            }
        }
    }
    out
}

pub fn maxpool2_backward(
    input: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    d_out: &[f64],
) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut d_input = vec![0.0; channels * h * w];
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let (idx, _) = window_max(plane, w, y, x);
                d_input[c * h * w + idx] += d_out[c * oh * ow + y * ow + x];
            }
        }
    }
    d_input
}

/// Max over the 2x2 window at output cell (y, x); ties resolve to the
/// first maximal element in row-major window order.
#[inline]
fn window_max(plane: &[f64], w: usize, y: usize, x: usize) -> (usize, f64) {
    let mut best_idx = 2 * y * w + 2 * x;
    let mut best = plane[best_idx];
    for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
        let idx = (2 * y + dy) * w + 2 * x + dx;
        if plane[idx] > best {
            best = plane[idx];
            best_idx = idx;
        }
    }
    (best_idx, best)
}

/// weights layout: [out][in].
pub fn dense_forward(input: &[f64], weights: &[f64], bias: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = input.len();
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &weights[o * in_dim..(o + 1) * in_dim];
        let mut acc = bias[o];
        for (wv, xv) in row.iter().zip(input) {
            acc += wv * xv;
        }
        out.push(acc);
    }
    out
}

/// Returns (d_weights, d_bias, d_input).
pub fn dense_backward(
    input: &[f64],
    weights: &[f64],
    out_dim: usize,
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let in_dim = input.len();
    let mut d_weights = vec![0.0; out_dim * in_dim];
    let mut d_input = vec![0.0; in_dim];
    for o in 0..out_dim {
        let g = d_out[o];
        let row = &weights[o * in_dim..(o + 1) * in_dim];
        let d_row = &mut d_weights[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            d_row[i] = g * input[i];
            d_input[i] += g * row[i];
        }
    }
    (d_weights, d_out.to_vec(), d_input)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// log(sum(exp(logits))), stable.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_hand_convolution_on_3x3() {
        // one input channel slot used (others zero), one output channel,
        // identity-ish kernel picking the center: output == input
        let input: Vec<f64> = (1..=9).map(f64::from).collect();
        let mut input3 = input.clone();
        input3.extend(vec![0.0; 18]); // channels 2 and 3 zero
        let mut weights = vec![0.0; 27];
        weights[4] = 1.0; // center tap of channel 0
        let out = conv2d_forward(&input3, 3, 3, 3, &weights, &[0.0], 1);
        assert_eq!(out, input);

        // all-ones 3x3 kernel on channel 0: hand-computed windowed sums
        let ones = {
            let mut w = vec![0.0; 27];
            for v in w.iter_mut().take(9) {
                *v = 1.0;
            }
            w
        };
        let out = conv2d_forward(&input3, 3, 3, 3, &ones, &[0.5], 1);
        // center pixel: sum of all nine + bias
        assert_eq!(out[4], 45.0 + 0.5);
        // top-left: 1+2+4+5 + bias
        assert_eq!(out[0], 12.0 + 0.5);
    }

    #[test]
    fn maxpool_first_wins_on_ties() {
        let plane = vec![5.0, 5.0, 5.0, 5.0];
        let out = maxpool2_forward(&plane, 1, 2, 2);
        assert_eq!(out, vec![5.0]);
        let din = maxpool2_backward(&plane, 1, 2, 2, &[2.0]);
        assert_eq!(din, vec![2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_ignores_odd_edges() {
        // 3x3 plane: only the top-left 2x2 window contributes
        let plane: Vec<f64> = (0..9).map(f64::from).collect();
        let out = maxpool2_forward(&plane, 1, 3, 3);
        assert_eq!(out, vec![4.0]);
    }

    #[test]
    fn softmax_rows_normalize_and_translate() {
        let probs = softmax(&[1.0, 2.0, 3.0]);
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let shifted = softmax(&[101.0, 102.0, 103.0]);
        for (a, b) in probs.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_is_affine() {
        let out = dense_forward(&[1.0, 2.0], &[3.0, 4.0, 5.0, 6.0], &[0.5, -0.5], 2);
        assert_eq!(out, vec![3.0 + 8.0 + 0.5, 5.0 + 12.0 - 0.5]);
    }
}
