//! Plain slice kernels shared by the forward and backward passes.

/// `out[r×c] = a[r×k] · b[k×c]`
pub fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * c..(p + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `acc[r×k] += g[r×c] · b[k×c]ᵀ`
pub fn matmul_grad_lhs(acc: &mut [f64], g: &[f64], b: &[f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let g_row = &g[i * c..(i + 1) * c];
        let acc_row = &mut acc[i * k..(i + 1) * k];
        for (p, slot) in acc_row.iter_mut().enumerate() {
            let b_row = &b[p * c..(p + 1) * c];
            *slot += dot(g_row, b_row);
        }
    }
}

/// `acc[k×c] += a[r×k]ᵀ · g[r×c]`
pub fn matmul_grad_rhs(acc: &mut [f64], a: &[f64], g: &[f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let g_row = &g[i * c..(i + 1) * c];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            axpy(&mut acc[p * c..(p + 1) * c], av, g_row);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Geometry of a batched, zero-padded "same" 1-D cross-correlation.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeometry {
    pub batch: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: usize,
    pub length: usize,
}

impl ConvGeometry {
    /// Output positions `t` for which `t + tap - pad` stays inside the signal.
    #[inline]
    fn valid_range(&self, tap: usize) -> (usize, usize) {
        let pad = self.kernel / 2;
        let lo = pad.saturating_sub(tap).min(self.length);
        let hi = (self.length + pad).saturating_sub(tap).min(self.length);
        (lo, hi.max(lo))
    }
}

/// `out[b, co, t] = Σ_ci Σ_k w[ci, co, k] · s[b, ci, t + k - pad]`
pub fn conv1d(signal: &[f64], weights: &[f64], g: ConvGeometry) -> Vec<f64> {
    let ConvGeometry { batch, channels_in, channels_out, kernel, length } = g;
    let pad = kernel / 2;
    let mut out = vec![0.0; batch * channels_out * length];
    for b in 0..batch {
        for ci in 0..channels_in {
            let s = &signal[(b * channels_in + ci) * length..][..length];
            for co in 0..channels_out {
                let o = &mut out[(b * channels_out + co) * length..][..length];
                for tap in 0..kernel {
                    let w = weights[(ci * channels_out + co) * kernel + tap];
                    if w == 0.0 {
                        continue;
                    }
                    let (lo, hi) = g.valid_range(tap);
                    if lo >= hi {
                        continue;
                    }
                    let src = &s[lo + tap - pad..hi + tap - pad];
                    axpy(&mut o[lo..hi], w, src);
                }
            }
        }
    }
    out
}

/// Accumulates the signal and weight gradients of [`conv1d`].
pub fn conv1d_backward(
    signal: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    g: ConvGeometry,
    grad_signal: Option<&mut [f64]>,
    grad_weights: Option<&mut [f64]>,
) {
    let ConvGeometry { batch, channels_in, channels_out, kernel, length } = g;
    let pad = kernel / 2;
    if let Some(gs) = grad_signal {
        for b in 0..batch {
            for ci in 0..channels_in {
                let dst = &mut gs[(b * channels_in + ci) * length..][..length];
                for co in 0..channels_out {
                    let go = &grad_out[(b * channels_out + co) * length..][..length];
                    for tap in 0..kernel {
                        let w = weights[(ci * channels_out + co) * kernel + tap];
                        if w == 0.0 {
                            continue;
                        }
                        let (lo, hi) = g.valid_range(tap);
                        if lo >= hi {
                            continue;
                        }
                        axpy(&mut dst[lo + tap - pad..hi + tap - pad], w, &go[lo..hi]);
                    }
                }
            }
        }
    }
    if let Some(gw) = grad_weights {
        for b in 0..batch {
            for ci in 0..channels_in {
                let s = &signal[(b * channels_in + ci) * length..][..length];
                for co in 0..channels_out {
                    let go = &grad_out[(b * channels_out + co) * length..][..length];
                    for tap in 0..kernel {
                        let (lo, hi) = g.valid_range(tap);
                        if lo >= hi {
                            continue;
                        }
                        gw[(ci * channels_out + co) * kernel + tap] +=
                            dot(&s[lo + tap - pad..hi + tap - pad], &go[lo..hi]);
                    }
                }
            }
        }
    }
}

/// Splits a shape around `axis` into (outer, extent, inner) strides.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax(values: &[f64], outer: usize, n: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let max = (0..n).map(|j| values[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..n {
                let e = (values[idx(j)] - max).exp();
                out[idx(j)] = e;
                total += e;
            }
            for j in 0..n {
                out[idx(j)] /= total;
            }
        }
    }
    out
}
