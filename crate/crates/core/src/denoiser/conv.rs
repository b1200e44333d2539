//! Same-size, zero-padded 2-D convolution over channel-major planes.

/// Adds `weight * input` into `out` (which the caller pre-fills with the bias).
pub(crate) fn conv_forward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    out: &mut [f64],
) {
    if k == 3 && w >= 2 {
        return conv3_forward(input, cin, h, w, weight, cout, out);
    }
    let n = h * w;
    let r = (k / 2) as isize;
    for o in 0..cout {
        let out_plane = &mut out[o * n..(o + 1) * n];
        for i in 0..cin {
            let in_plane = &input[i * n..(i + 1) * n];
            for ky in 0..k {
                let dy = ky as isize - r;
                for kx in 0..k {
                    let dx = kx as isize - r;
                    let wv = weight[((o * cin + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = span(w, dx);
                    let (y0, y1) = span(h, dy);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        let s0 = (sy * w) as isize + x0 as isize + dx;
                        let src = &in_plane[s0 as usize..s0 as usize + (x1 - x0)];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 case of [`conv_forward`] as a matrix product: each band of rows is
/// unfolded into a `(cin * 9) x pixels` patch matrix and multiplied by the
/// `cout x (cin * 9)` weight matrix.
fn conv3_forward(input: &[f64], cin: usize, h: usize, w: usize, weight: &[f64], cout: usize, out: &mut [f64]) {
    const BAND_PIXELS: usize = 2048;
    let n = h * w;
    let rows = (BAND_PIXELS / w).clamp(1, h);
    let depth = cin * 9;
    let mut patches = vec![0.0; depth * rows * w];
    for y0 in (0..h).step_by(rows) {
        let y1 = (y0 + rows).min(h);
        let m = (y1 - y0) * w;
        for i in 0..cin {
            let plane = &input[i * n..(i + 1) * n];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut patches[(i * 9 + ky * 3 + kx) * m..(i * 9 + ky * 3 + kx + 1) * m];
                    for y in y0..y1 {
                        let dst = &mut row[(y - y0) * w..(y - y0 + 1) * w];
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        match kx {
                            0 => {
                                dst[0] = 0.0;
                                dst[1..].copy_from_slice(&src[..w - 1]);
                            }
                            1 => dst.copy_from_slice(src),
                            _ => {
                                dst[..w - 1].copy_from_slice(&src[1..]);
                                dst[w - 1] = 0.0;
                            }
                        }
                    }
                }
            }
        }
        // SAFETY: the operand extents below lie within `weight`, `patches`
        // and `out`, and `out` does not alias either input.
        unsafe {
            matrixmultiply::dgemm(
                cout,
                depth,
                m,
                1.0,
                weight.as_ptr(),
                depth as isize,
                1,
                patches.as_ptr(),
                m as isize,
                1,
                1.0,
                out.as_mut_ptr().add(y0 * w),
                n as isize,
                1,
            );
        }
    }
}

/// Accumulates weight gradients and, when `grad_in` is given, input gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let n = h * w;
    let r = (k / 2) as isize;
    for o in 0..cout {
        let go = &grad_out[o * n..(o + 1) * n];
        grad_b[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let in_plane = &input[i * n..(i + 1) * n];
            for ky in 0..k {
                let dy = ky as isize - r;
                for kx in 0..k {
                    let dx = kx as isize - r;
                    let widx = ((o * cin + i) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let (x0, x1) = span(w, dx);
                    let (y0, y1) = span(h, dy);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = ((sy * w) as isize + x0 as isize + dx) as usize;
                        let g = &go[y * w + x0..y * w + x1];
                        let src = &in_plane[s0..s0 + (x1 - x0)];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(gi) = grad_in.as_deref_mut() {
                            let gi_row = &mut gi[i * n + s0..i * n + s0 + (x1 - x0)];
                            for (d, gv) in gi_row.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                    grad_w[widx] += acc;
                }
            }
        }
    }
}

/// Output index range `[a, b)` whose source `idx + d` stays inside `0..len`.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let a = (-d).max(0) as usize;
    let b = (len as isize - d.max(0)).max(a as isize) as usize;
    (a.min(len), b.min(len))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(input: &[f64], cin: usize, h: usize, w: usize, weight: &[f64], cout: usize, k: usize) -> Vec<f64> {
        let r = (k / 2) as isize;
        let mut out = vec![0.0; cout * h * w];
        for o in 0..cout {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = 0.0;
                    for i in 0..cin {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (sy, sx) = (y + ky - r, x + kx - r);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weight[((o * cin + i) * k + ky as usize) * k + kx as usize]
                                    * input[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_convolution() {
        let (cin, cout, h, w, k) = (2, 3, 5, 4, 3);
        let input: Vec<f64> = (0..cin * h * w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let weight: Vec<f64> = (0..cout * cin * k * k).map(|i| ((i * 13 % 7) as f64) * 0.1 - 0.3).collect();
        let mut out = vec![0.0; cout * h * w];
        conv_forward(&input, cin, h, w, &weight, cout, k, &mut out);
        let expect = naive(&input, cin, h, w, &weight, cout, k);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn span_clips_to_valid_range() {
        assert_eq!(span(5, -1), (1, 5));
        assert_eq!(span(5, 1), (0, 4));
        assert_eq!(span(5, 0), (0, 5));
        assert_eq!(span(1, 1), (0, 0));
    }
}
