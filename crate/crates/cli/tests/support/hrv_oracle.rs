//! Brute-force HRV reference, written from the feature definitions without
//! sharing code with the library. `None` marks a value the definitions leave
//! undefined (the library reports 0 with a quality flag there).

use std::f64::consts::PI;

fn mean(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in x {
        s += v;
    }
    s / x.len() as f64
}

fn sum_sq_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    let mut s = 0.0;
    for v in x {
        s += (v - m) * (v - m);
    }
    s
}

fn diffs(x: &[f64]) -> Vec<f64> {
    (1..x.len()).map(|i| x[i] - x[i - 1]).collect()
}

/// Selection sort, then linear interpolation at p/100·(n − 1).
fn percentile(x: &[f64], p: f64) -> f64 {
    let mut s = x.to_vec();
    for i in 0..s.len() {
        let mut k = i;
        for j in i + 1..s.len() {
            if s[j] < s[k] {
                k = j;
            }
        }
        s.swap(i, k);
    }
    let pos = p / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 {
        s[lo]
    } else {
        s[lo] + frac * (s[lo + 1] - s[lo])
    }
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    // normal equations of y = a + b·x
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sx += a;
        sy += b;
        sxx += a * a;
        sxy += a * b;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub const BIN_MS: f64 = 1000.0 / 128.0;

pub fn time_domain(x: &[f64]) -> Vec<Option<f64>> {
    let n = x.len();
    let d = diffs(x);
    let mean_nn = mean(x);
    let sdnn = (sum_sq_dev(x) / (n - 1) as f64).sqrt();
    let rmssd = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
    let sdsd = (sum_sq_dev(&d) / (d.len() - 1) as f64).sqrt();
    let median = percentile(x, 50.0);
    let dev: Vec<f64> = x.iter().map(|v| (v - median).abs()).collect();
    let mad = 1.4826 * percentile(&dev, 50.0);
    let pnn = |t: f64| 100.0 * d.iter().filter(|v| v.abs() > t).count() as f64 / d.len() as f64;
    let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // histogram by testing every value against every bin's bounds
    let nbins = ((max - min) / BIN_MS).floor() as usize + 1;
    let mut hist = vec![0usize; nbins];
    for &v in x {
        let mut placed = false;
        for (b, h) in hist.iter_mut().enumerate() {
            let pos = (v - min) / BIN_MS;
            if pos >= b as f64 && pos < (b + 1) as f64 {
                *h += 1;
                placed = true;
                break;
            }
        }
        if !placed {
            hist[nbins - 1] += 1;
        }
    }
    let tallest = *hist.iter().max().unwrap();
    let peak = hist.iter().position(|&c| c == tallest).unwrap() as i64;

    // TINN: every admissible (N, M) pair, triangle built explicitly
    let y = tallest as f64;
    let mut best_err = f64::INFINITY;
    let mut best_width = 0i64;
    for nn in -1..peak {
        for mm in peak + 1..=nbins as i64 {
            let tri = |i: i64| -> f64 {
                if i <= nn || i >= mm {
                    0.0
                } else if i <= peak {
                    y * (i - nn) as f64 / (peak - nn) as f64
                } else {
                    y * (mm - i) as f64 / (mm - peak) as f64
                }
            };
            let mut err = 0.0;
            for (i, &c) in hist.iter().enumerate() {
                let e = c as f64 - tri(i as i64);
                err += e * e;
            }
            if err < best_err {
                best_err = err;
                best_width = mm - nn;
            }
        }
    }

    vec![
        Some(mean_nn),
        Some(sdnn),
        Some(rmssd),
        Some(sdsd),
        Some(sdnn / mean_nn),
        Some(rmssd / mean_nn),
        Some(median),
        Some(mad),
        Some(mad / median),
        Some(percentile(x, 75.0) - percentile(x, 25.0)),
        Some(percentile(x, 20.0)),
        Some(percentile(x, 80.0)),
        Some(pnn(50.0)),
        Some(pnn(20.0)),
        Some(min),
        Some(max),
        Some(n as f64 / y),
        Some(best_width as f64 * BIN_MS),
    ]
}

/// Linear interpolation of the intervals on their cumulative time axis,
/// sampled every 0.25 s from the first beat time.
fn resample_4hz(x: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    let mut acc = 0.0;
    for (i, v) in x.iter().enumerate() {
        acc += v / 1000.0;
        t[i] = acc;
    }
    let n = ((t[t.len() - 1] - t[0]) * 4.0).floor() as usize + 1;
    (0..n)
        .map(|i| {
            let ti = t[0] + i as f64 / 4.0;
            // last knot at or before ti
            let mut k = 0;
            for (j, &tj) in t.iter().enumerate() {
                if tj <= ti {
                    k = j;
                }
            }
            if k == t.len() - 1 {
                return x[k];
            }
            x[k] + (ti - t[k]) / (t[k + 1] - t[k]) * (x[k + 1] - x[k])
        })
        .collect()
}

/// Welch one-sided density with a direct DFT per segment.
fn welch_dft(x: &[f64], fs: f64, seg: usize) -> Vec<f64> {
    let hop = seg - seg / 2;
    let w: Vec<f64> = (0..seg).map(|i| (PI * i as f64 / seg as f64).sin().powi(2)).collect();
    let wss: f64 = w.iter().map(|v| v * v).sum();
    let bins = seg / 2 + 1;
    let mut psd = vec![0.0; bins];
    let mut count = 0;
    let mut start = 0;
    while start + seg <= x.len() {
        let s = &x[start..start + seg];
        let m = mean(s);
        for (k, p) in psd.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..seg {
                let a = 2.0 * PI * ((k * i) % seg) as f64 / seg as f64;
                re += (s[i] - m) * w[i] * a.cos();
                im -= (s[i] - m) * w[i] * a.sin();
            }
            let one_sided = if k == 0 || 2 * k == seg { 1.0 } else { 2.0 };
            *p += one_sided * (re * re + im * im) / (fs * wss);
        }
        count += 1;
        start += hop;
    }
    psd.iter().map(|p| p / count as f64).collect()
}

/// `None` for every entry when the series spans less than 60 s.
pub fn frequency_domain(x: &[f64]) -> Option<Vec<Option<f64>>> {
    if x.iter().sum::<f64>() / 1000.0 < 60.0 {
        return None;
    }
    let r = resample_4hz(x);
    let m = mean(&r);
    let c: Vec<f64> = r.iter().map(|v| v - m).collect();
    let seg = c.len().min(256);
    let psd = welch_dft(&c, 4.0, seg);
    let df = 4.0 / seg as f64;
    let band = |lo: f64, hi: f64| -> f64 {
        let mut p = 0.0;
        for (k, v) in psd.iter().enumerate() {
            let f = k as f64 * 4.0 / seg as f64;
            if f >= lo && f < hi {
                p += v * df;
            }
        }
        p
    };
    let (lf, hf, vhf) = (band(0.04, 0.15), band(0.15, 0.4), band(0.4, 0.5));
    let defined = |v: f64| (v > 0.0).then_some(v);
    Some(vec![
        Some(lf),
        Some(hf),
        Some(vhf),
        defined(hf).map(|h| lf / h),
        defined(lf + hf).map(|t| lf / t),
        defined(lf + hf).map(|t| hf / t),
        defined(hf).map(f64::ln),
    ])
}

fn cheb(x: &[f64], i: usize, j: usize, m: usize) -> f64 {
    let mut d: f64 = 0.0;
    for k in 0..m {
        d = d.max((x[i + k] - x[j + k]).abs());
    }
    d
}

fn apen(x: &[f64], m: usize, r: f64) -> f64 {
    let phi = |mm: usize| -> f64 {
        let k = x.len() - mm + 1;
        let mut s = 0.0;
        for i in 0..k {
            let mut c = 0;
            for j in 0..k {
                if cheb(x, i, j, mm) <= r {
                    c += 1;
                }
            }
            s += (c as f64 / k as f64).ln();
        }
        s / k as f64
    };
    phi(m) - phi(m + 1)
}

fn sampen(x: &[f64], m: usize, r: f64) -> Option<f64> {
    let k = x.len() - m;
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for i in 0..k {
        for j in 0..k {
            if i < j {
                if cheb(x, i, j, m) <= r {
                    b += 1.0;
                }
                if cheb(x, i, j, m + 1) <= r {
                    a += 1.0;
                }
            }
        }
    }
    (a > 0.0 && b > 0.0).then(|| (b / a).ln())
}

fn fuzzyen(x: &[f64], m: usize, r: f64) -> Option<f64> {
    let k = x.len() - m;
    let phi = |mm: usize| -> f64 {
        let t: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mu = mean(&x[i..i + mm]);
                x[i..i + mm].iter().map(|v| v - mu).collect()
            })
            .collect();
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    let d = t[i].iter().zip(&t[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    s += (-(d * d) / (r * r)).exp();
                }
            }
        }
        s / (k * (k - 1)) as f64
    };
    let (a, b) = (phi(m), phi(m + 1));
    (a > 0.0 && b > 0.0).then(|| (a / b).ln())
}

fn shannon(x: &[f64]) -> Option<f64> {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return None;
    }
    let w = (hi - lo) / 10.0;
    let mut h = 0.0;
    for b in 0..10 {
        let c = x
            .iter()
            .filter(|&&v| {
                let idx = (((v - lo) / w).floor() as usize).min(9);
                idx == b
            })
            .count();
        if c > 0 {
            let p = c as f64 / x.len() as f64;
            h -= p * p.log2();
        }
    }
    Some(h)
}

/// LZ76 by exhaustive search: each phrase is extended while it still occurs
/// in the text before its last symbol.
fn lz76(s: &[u8]) -> usize {
    let n = s.len();
    let occurs = |start: usize, len: usize| -> bool {
        // candidate copies begin strictly before `start`
        (0..start).any(|j| (0..len).all(|k| s[j + k] == s[start + k]))
    };
    let mut i = 0;
    let mut c = 0;
    while i < n {
        let mut l = 1;
        while i + l <= n && occurs(i, l) {
            l += 1;
        }
        c += 1;
        i += l;
    }
    c
}

fn dfa(x: &[f64]) -> Option<f64> {
    if x.len() < 32 {
        return None;
    }
    let m = mean(x);
    let mut y = Vec::new();
    let mut acc = 0.0;
    for v in x {
        acc += v - m;
        y.push(acc);
    }
    let mut ln = Vec::new();
    let mut lf = Vec::new();
    for n in 4..=16usize {
        let boxes = y.len() / n;
        let mut ss = 0.0;
        for b in 0..boxes {
            let seg = &y[b * n..(b + 1) * n];
            let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let k = slope(&t, seg);
            let a = mean(seg) - k * mean(&t);
            for (ti, s) in t.iter().zip(seg) {
                ss += (s - a - k * ti).powi(2);
            }
        }
        let f = (ss / (boxes * n) as f64).sqrt();
        if f <= 0.0 {
            return None;
        }
        ln.push((n as f64).ln());
        lf.push(f.ln());
    }
    Some(slope(&ln, &lf))
}

fn higuchi(x: &[f64]) -> Option<f64> {
    let n = x.len();
    let kmax = 10.min(n / 2);
    if kmax < 2 {
        return None;
    }
    let mut lk = Vec::new();
    let mut ll = Vec::new();
    for k in 1..=kmax {
        let mut total = 0.0;
        for m in 0..k {
            let steps = (n - 1 - m) / k;
            let mut len = 0.0;
            for i in 1..=steps {
                len += (x[m + i * k] - x[m + (i - 1) * k]).abs();
            }
            total += len * (n - 1) as f64 / (steps * k * k) as f64;
        }
        let l = total / k as f64;
        if l <= 0.0 {
            return None;
        }
        lk.push(-(k as f64).ln());
        ll.push(l.ln());
    }
    Some(slope(&lk, &ll))
}

fn katz(x: &[f64]) -> Option<f64> {
    let steps: Vec<f64> = diffs(x).iter().map(|v| v.abs()).collect();
    let l: f64 = steps.iter().sum();
    let a = l / steps.len() as f64;
    let d = x.iter().map(|v| (v - x[0]).abs()).fold(0.0, f64::max);
    if l <= 0.0 || d <= 0.0 {
        return None;
    }
    let n = l / a;
    Some(n.log10() / (n.log10() + (d / l).log10()))
}

pub fn nonlinear(x: &[f64]) -> Vec<Option<f64>> {
    let n = x.len();
    let d = diffs(x);
    let p = d.len() as f64;
    let rmssd = (d.iter().map(|v| v * v).sum::<f64>() / p).sqrt();
    let sd1 = rmssd / 2f64.sqrt();
    let var_pop = sum_sq_dev(x) / n as f64;
    let sd2 = (2.0 * var_pop - sd1 * sd1).max(0.0).sqrt();
    let nz = |v: f64| (v > 0.0).then_some(v);
    let mut out = vec![
        Some(sd1),
        Some(sd2),
        nz(sd2).map(|s| sd1 / s),
        Some(PI * sd1 * sd2),
        nz(sd1).map(|s| sd2 / s),
        (sd1 > 0.0 && sd2 > 0.0).then(|| (16.0 * sd1 * sd2).log10()),
        nz(sd1).map(|s| sd2 * sd2 / s),
    ];

    // fragmentation
    let sg: Vec<i32> = d.iter().map(|v| if *v > 0.0 { 1 } else if *v < 0.0 { -1 } else { 0 }).collect();
    let infl = (1..sg.len()).filter(|&i| sg[i] * sg[i - 1] == -1).count();
    let mut runs: Vec<usize> = Vec::new();
    let mut prev = 0;
    for &s in &sg {
        if s != 0 && s == prev {
            *runs.last_mut().unwrap() += 1;
        } else if s != 0 {
            runs.push(1);
        }
        prev = s;
    }
    let total: usize = runs.iter().sum();
    let mut alt = Vec::new();
    for i in 0..sg.len() {
        if i > 0 && sg[i] * sg[i - 1] == -1 {
            *alt.last_mut().unwrap() += 1;
        } else {
            alt.push(1usize);
        }
    }
    out.push(Some(infl as f64 / n as f64));
    out.push((!runs.is_empty()).then(|| runs.len() as f64 / total as f64));
    out.push((!runs.is_empty()).then(|| runs.iter().filter(|&&l| l < 3).sum::<usize>() as f64 / total as f64));
    out.push(Some(alt.iter().filter(|&&l| l >= 4).sum::<usize>() as f64 / sg.len() as f64));

    // asymmetry
    let xs = &x[..n - 1];
    let ys = &x[1..];
    let (cx, cy) = (mean(xs), mean(ys));
    let s2 = 2f64.sqrt();
    let mut dec = [0.0f64; 5];
    let mut acc = [0.0f64; 5];
    let mut online = 0.0;
    let (mut n_dec, mut n_acc) = (0usize, 0usize);
    for i in 0..xs.len() {
        let (a, b) = (xs[i], ys[i]);
        let l1 = (b - a).abs() / s2;
        let l2 = (a - cx + b - cy).abs() / s2;
        let th = (PI / 4.0 - (b / a).atan()).abs();
        let v = [l1, th, 0.5 * th * (a * a + b * b), l1 * l1, l2 * l2];
        if b > a {
            n_dec += 1;
            for k in 0..5 {
                dec[k] += v[k];
            }
        } else if b < a {
            n_acc += 1;
            for k in 0..5 {
                acc[k] += v[k];
            }
        } else {
            online += l2 * l2;
        }
    }
    let pct = |a: f64, b: f64| (a + b > 0.0).then(|| 100.0 * a / (a + b));
    let frac = |a: f64, b: f64| (a + b > 0.0).then(|| a / (a + b));
    let sd1d = dec[3] / p;
    let sd1a = acc[3] / p;
    let sd2d = (dec[4] + online / 2.0) / p;
    let sd2a = (acc[4] + online / 2.0) / p;
    let sdnnd = (sd1d + sd2d) / 2.0;
    let sdnna = (sd1a + sd2a) / 2.0;
    out.extend([
        pct(dec[0], acc[0]),
        pct(dec[1], acc[1]),
        pct(dec[2], acc[2]),
        pct(n_acc as f64, n_dec as f64),
        frac(sd1d, sd1a),
        frac(sd1a, sd1d),
        Some(sd1d.sqrt()),
        Some(sd1a.sqrt()),
        frac(sd2d, sd2a),
        frac(sd2a, sd2d),
        Some(sd2d.sqrt()),
        Some(sd2a.sqrt()),
        frac(sdnnd, sdnna),
        frac(sdnna, sdnnd),
        Some(sdnnd.sqrt()),
        Some(sdnna.sqrt()),
    ]);

    out.push(dfa(x));
    let r = 0.2 * (sum_sq_dev(x) / (n - 1) as f64).sqrt();
    let finite = |v: Option<f64>| v.filter(|v| v.is_finite());
    out.push(if r > 0.0 { finite(Some(apen(x, 2, r))) } else { None });
    out.push(if r > 0.0 { sampen(x, 2, r) } else { None });
    out.push(shannon(x));
    out.push(if r > 0.0 { fuzzyen(x, 2, r) } else { None });
    let med = percentile(x, 50.0);
    let bits: Vec<u8> = x.iter().map(|&v| (v > med) as u8).collect();
    out.push(Some(lz76(&bits) as f64 * (n as f64).log2() / n as f64));
    out.push(higuchi(x));
    out.push(katz(x));
    out
}
