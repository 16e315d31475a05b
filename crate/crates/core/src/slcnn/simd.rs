//! Vector kernels behind the convolution and dense loops.
//!
//! On x86-64 with AVX2 and FMA the f32 kernels use 8-lane fused
//! multiply-add; elsewhere they fall back to plain loops. The choice is made
//! once per process, so results are reproducible on a given machine.

#[cfg(target_arch = "x86_64")]
use std::sync::OnceLock;

#[cfg(target_arch = "x86_64")]
fn has_avx2_fma() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"))
}

/// y += a·x
#[inline]
pub fn axpy_f32(a: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2_fma() {
        // SAFETY: the required CPU features were detected at runtime.
        unsafe { return axpy_avx2(a, x, y) }
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Σ x·y
#[inline]
pub fn dot_f32(x: &[f32], y: &[f32]) -> f32 {
    debug_assert_eq!(x.len(), y.len());
    #[cfg(target_arch = "x86_64")]
    if has_avx2_fma() {
        // SAFETY: the required CPU features were detected at runtime.
        unsafe { return dot_avx2(x, y) }
    }
    let mut acc = [0.0f32; 8];
    let chunks = x.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += x[c * 8 + l] * y[c * 8 + l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for i in chunks * 8..x.len() {
        s += x[i] * y[i];
    }
    s
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn axpy_avx2(a: f32, x: &[f32], y: &mut [f32]) {
    use std::arch::x86_64::*;
    let n = x.len().min(y.len());
    let va = _mm256_set1_ps(a);
    let xp = x.as_ptr();
    let yp = y.as_mut_ptr();
    let mut i = 0;
    while i + 8 <= n {
        let vy = _mm256_loadu_ps(yp.add(i));
        let vx = _mm256_loadu_ps(xp.add(i));
        _mm256_storeu_ps(yp.add(i), _mm256_fmadd_ps(va, vx, vy));
        i += 8;
    }
    while i < n {
        *yp.add(i) = a.mul_add(*xp.add(i), *yp.add(i));
        i += 1;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn dot_avx2(x: &[f32], y: &[f32]) -> f32 {
    use std::arch::x86_64::*;
    let n = x.len().min(y.len());
    let xp = x.as_ptr();
    let yp = y.as_ptr();
    let mut acc0 = _mm256_setzero_ps();
    let mut acc1 = _mm256_setzero_ps();
    let mut i = 0;
    while i + 16 <= n {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(xp.add(i)), _mm256_loadu_ps(yp.add(i)), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(xp.add(i + 8)), _mm256_loadu_ps(yp.add(i + 8)), acc1);
        i += 16;
    }
    if i + 8 <= n {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(xp.add(i)), _mm256_loadu_ps(yp.add(i)), acc0);
        i += 8;
    }
    let acc = _mm256_add_ps(acc0, acc1);
    let mut lanes = [0.0f32; 8];
    _mm256_storeu_ps(lanes.as_mut_ptr(), acc);
    let mut s = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
    while i < n {
        s = (*xp.add(i)).mul_add(*yp.add(i), s);
        i += 1;
    }
    s
}

/// Same-padded 1-D convolution over a pre-padded input.
///
/// `xp` holds `cin` rows of `lp = len + k − 1` samples, `w` is
/// `[cout][cin][k]`; writes `out[o][l] = bias[o] + Σ_c Σ_t w[o][c][t] · xp[c][l + t]`.
pub fn conv_f32(xp: &[f32], cin: usize, w: &[f32], cout: usize, k: usize, bias: &[f32], len: usize, out: &mut [f32]) {
    let lp = len + k - 1;
    assert!(xp.len() >= cin * lp && w.len() >= cout * cin * k && bias.len() >= cout && out.len() >= cout * len);
    #[cfg(target_arch = "x86_64")]
    if has_avx2_fma() {
        // SAFETY: features detected at runtime; the assert above bounds every access.
        unsafe { return conv_avx2(xp, cin, w, cout, k, bias, len, out) }
    }
    conv_scalar(xp, cin, w, cout, k, bias, len, out, 0..cout, 0);
}

/// Weight gradient of [`conv_f32`]: `gw[o][c][t] += Σ_l d[o][l] · xp[c][l + t]`.
pub fn conv_wgrad_f32(d: &[f32], cout: usize, xp: &[f32], cin: usize, k: usize, len: usize, gw: &mut [f32]) {
    let lp = len + k - 1;
    assert!(d.len() >= cout * len && xp.len() >= cin * lp && gw.len() >= cout * cin * k);
    #[cfg(target_arch = "x86_64")]
    if has_avx2_fma() {
        // SAFETY: features detected at runtime; the assert above bounds every access.
        unsafe { return wgrad_avx2(d, cout, xp, cin, k, len, gw) }
    }
    for o in 0..cout {
        for c in 0..cin {
            for t in 0..k {
                let x = &xp[c * lp + t..c * lp + t + len];
                gw[(o * cin + c) * k + t] += dot_f32(&d[o * len..(o + 1) * len], x);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_scalar(
    xp: &[f32],
    cin: usize,
    w: &[f32],
    _cout: usize,
    k: usize,
    bias: &[f32],
    len: usize,
    out: &mut [f32],
    outs: std::ops::Range<usize>,
    from: usize,
) {
    let lp = len + k - 1;
    for o in outs {
        for l in from..len {
            let mut s = bias[o];
            for c in 0..cin {
                let wr = &w[(o * cin + c) * k..(o * cin + c + 1) * k];
                let xr = &xp[c * lp + l..c * lp + l + k];
                for t in 0..k {
                    s += wr[t] * xr[t];
                }
            }
            out[o * len + l] = s;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[allow(clippy::too_many_arguments)]
#[target_feature(enable = "avx2,fma")]
unsafe fn conv_avx2(xp: &[f32], cin: usize, w: &[f32], cout: usize, k: usize, bias: &[f32], len: usize, out: &mut [f32]) {
    let lp = len + k - 1;
    let (x, wp, op) = (xp.as_ptr(), w.as_ptr(), out.as_mut_ptr());
    let full = len / 8 * 8;
    let mut o = 0;
    while o < cout {
        let pair = o + 1 < cout;
        let mut j = 0;
        while j + 32 <= full {
            if pair {
                conv_block::<4, true>(x, cin, lp, wp, k, bias, len, op, o, j);
            } else {
                conv_block::<4, false>(x, cin, lp, wp, k, bias, len, op, o, j);
            }
            j += 32;
        }
        while j < full {
            if pair {
                conv_block::<1, true>(x, cin, lp, wp, k, bias, len, op, o, j);
            } else {
                conv_block::<1, false>(x, cin, lp, wp, k, bias, len, op, o, j);
            }
            j += 8;
        }
        o += if pair { 2 } else { 1 };
    }
    if full < len {
        conv_scalar(xp, cin, w, cout, k, bias, len, out, 0..cout, full);
    }
}

/// `B` vectors of 8 outputs for channel `o` (and `o + 1` when `PAIR`).
#[cfg(target_arch = "x86_64")]
#[allow(clippy::too_many_arguments)]
#[inline]
#[target_feature(enable = "avx2,fma")]
unsafe fn conv_block<const B: usize, const PAIR: bool>(
    x: *const f32,
    cin: usize,
    lp: usize,
    w: *const f32,
    k: usize,
    bias: &[f32],
    len: usize,
    out: *mut f32,
    o: usize,
    j: usize,
) {
    use std::arch::x86_64::*;
    let o1 = if PAIR { o + 1 } else { o };
    let mut a0 = [_mm256_set1_ps(bias[o]); B];
    let mut a1 = [_mm256_set1_ps(bias[o1]); B];
    for c in 0..cin {
        let xr = x.add(c * lp + j);
        let w0 = w.add((o * cin + c) * k);
        let w1 = w.add((o1 * cin + c) * k);
        for t in 0..k {
            let v0 = _mm256_broadcast_ss(&*w0.add(t));
            let v1 = _mm256_broadcast_ss(&*w1.add(t));
            for b in 0..B {
                let xv = _mm256_loadu_ps(xr.add(t + 8 * b));
                a0[b] = _mm256_fmadd_ps(v0, xv, a0[b]);
                if PAIR {
                    a1[b] = _mm256_fmadd_ps(v1, xv, a1[b]);
                }
            }
        }
    }
    for b in 0..B {
        _mm256_storeu_ps(out.add(o * len + j + 8 * b), a0[b]);
        if PAIR {
            _mm256_storeu_ps(out.add(o1 * len + j + 8 * b), a1[b]);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn wgrad_avx2(d: &[f32], cout: usize, xp: &[f32], cin: usize, k: usize, len: usize, gw: &mut [f32]) {
    let lp = len + k - 1;
    let full = len / 8 * 8;
    for o in 0..cout {
        let dr = d.as_ptr().add(o * len);
        for c in 0..cin {
            let xr = xp.as_ptr().add(c * lp);
            let g = gw.as_mut_ptr().add((o * cin + c) * k);
            let mut t = 0;
            while t + 8 <= k {
                wgrad_taps::<8>(dr, xr, full, len, t, g);
                t += 8;
            }
            while t + 4 <= k {
                wgrad_taps::<4>(dr, xr, full, len, t, g);
                t += 4;
            }
            while t < k {
                wgrad_taps::<1>(dr, xr, full, len, t, g);
                t += 1;
            }
        }
    }
}

/// Accumulates taps `t0..t0 + G` of one (o, c) weight row.
#[cfg(target_arch = "x86_64")]
#[inline]
#[target_feature(enable = "avx2,fma")]
unsafe fn wgrad_taps<const G: usize>(d: *const f32, x: *const f32, full: usize, len: usize, t0: usize, g: *mut f32) {
    use std::arch::x86_64::*;
    let mut acc = [_mm256_setzero_ps(); G];
    let mut l = 0;
    while l < full {
        let dv = _mm256_loadu_ps(d.add(l));
        for i in 0..G {
            acc[i] = _mm256_fmadd_ps(dv, _mm256_loadu_ps(x.add(l + t0 + i)), acc[i]);
        }
        l += 8;
    }
    for i in 0..G {
        let mut lanes = [0.0f32; 8];
        _mm256_storeu_ps(lanes.as_mut_ptr(), acc[i]);
        let mut s = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
        for l in full..len {
            s = (*d.add(l)).mul_add(*x.add(l + t0 + i), s);
        }
        *g.add(t0 + i) += s;
    }
}
