//! FFT-based convolution helpers shared by the room simulator, the filter
//! pipelines and the metrics.
//!
//! All heavy signal filtering in this crate goes through these functions so
//! that long convolutions cost `O(T log T)` instead of `O(T · taps)`:
//!
//! - [`fft_convolve`] — full linear convolution of two real signals.
//! - [`apply_mimo_fir`] — multichannel FIR matrix applied to a multichannel
//!   signal, sharing the forward transforms across output channels.
//!
//! Planners are cached per thread, keyed by FFT size, so repeated calls with
//! the same lengths reuse their plans.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

thread_local! {
    static REAL_PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
    static COMPLEX_PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Plan (or fetch the cached) real-to-complex forward FFT of length `n`.
pub fn plan_r2c(n: usize) -> Arc<dyn RealToComplex<f64>> {
    REAL_PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

/// Plan (or fetch the cached) complex-to-real inverse FFT of length `n`.
pub fn plan_c2r(n: usize) -> Arc<dyn ComplexToReal<f64>> {
    REAL_PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Plan (or fetch the cached) complex forward FFT of length `n`.
pub fn plan_c2c_forward(n: usize) -> Arc<dyn Fft<f64>> {
    COMPLEX_PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

/// Plan (or fetch the cached) complex inverse FFT of length `n`.
///
/// The inverse is unnormalized (caller divides by `n`).
pub fn plan_c2c_inverse(n: usize) -> Arc<dyn Fft<f64>> {
    COMPLEX_PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Smallest length `>= n` whose prime factors are all in {2, 3, 5}.
///
/// Such lengths keep the mixed-radix FFT fast.
pub fn next_fast_len(n: usize) -> usize {
    if n <= 1 {
        return 1;
    }
    let mut best = n;
    loop {
        let mut m = best;
        for p in [2usize, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return best;
        }
        best += 1;
    }
}

/// Forward real FFT of `x` zero-padded to length `n`.
pub fn rfft_padded(x: &[f64], n: usize) -> Vec<Complex64> {
    let plan = plan_r2c(n);
    let mut buf = vec![0.0; n];
    buf[..x.len()].copy_from_slice(x);
    let mut spec = plan.make_output_vec();
    plan.process(&mut buf, &mut spec)
        .expect("forward real FFT cannot fail on matching lengths");
    spec
}

/// Inverse real FFT producing `n` samples, normalized by `1/n`.
pub fn irfft(spec: &[Complex64], n: usize) -> Vec<f64> {
    let plan = plan_c2r(n);
    let mut spec_buf = spec.to_vec();
    // Zero the (numerically tiny) imaginary parts the inverse plan rejects.
    spec_buf[0].im = 0.0;
    if n % 2 == 0 {
        let last = spec_buf.len() - 1;
        spec_buf[last].im = 0.0;
    }
    let mut out = plan.make_output_vec();
    plan.process(&mut spec_buf, &mut out)
        .expect("inverse real FFT cannot fail on matching lengths");
    let scale = 1.0 / n as f64;
    for v in &mut out {
        *v *= scale;
    }
    out
}

/// Full linear convolution of two real signals (length `x + h - 1`).
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    let n = next_fast_len(out_len);
    let xs = rfft_padded(x, n);
    let hs = rfft_padded(h, n);
    let prod: Vec<Complex64> = xs.iter().zip(&hs).map(|(a, b)| a * b).collect();
    let mut y = irfft(&prod, n);
    y.truncate(out_len);
    y
}

/// Cross-correlation lag (position of `b` relative to `a`) with the largest
/// correlation, searched over `-max_lag ..= max_lag`.
///
/// Positive lag means `b` is delayed with respect to `a`.
pub fn best_alignment_lag(a: &[f64], b: &[f64], max_lag: usize) -> i64 {
    // corr[lag] = sum_n a[n] * b[n + lag]  computed as convolution of
    // b with time-reversed a.
    let rev_a: Vec<f64> = a.iter().rev().copied().collect();
    let corr = fft_convolve(b, &rev_a);
    // corr index i corresponds to lag = i - (len(a) - 1).
    let center = a.len() as i64 - 1;
    let lo = (center - max_lag as i64).max(0) as usize;
    let hi = ((center + max_lag as i64) as usize).min(corr.len() - 1);
    let mut best_idx = lo;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &c) in corr.iter().enumerate().take(hi + 1).skip(lo) {
        if c > best_val {
            best_val = c;
            best_idx = i;
        }
    }
    best_idx as i64 - center
}

/// Apply a multichannel FIR matrix to a multichannel signal.
///
/// `taps` has shape `[out_channels × in_channels × filter_len]`, `x` has shape
/// `[in_channels × T]`. Output channel `o` is `Σ_i taps[o][i] * x[i]`
/// (linear convolution), truncated or zero-padded to `out_len` samples.
///
/// The forward FFT of each input channel is computed once and shared across
/// all output channels.
pub fn apply_mimo_fir(taps: ArrayView3<f64>, x: ArrayView2<f64>, out_len: usize) -> Array2<f64> {
    let (n_out, n_in, flen) = taps.dim();
    let (n_ch, t) = x.dim();
    assert_eq!(n_in, n_ch, "filter input channels must match signal channels");
    if t == 0 || flen == 0 {
        return Array2::zeros((n_out, out_len));
    }
    let full_len = t + flen - 1;
    let n = next_fast_len(full_len);

    let in_spectra: Vec<Vec<Complex64>> = (0..n_in)
        .map(|i| {
            let row = x.row(i);
            rfft_padded(row.as_slice().expect("signal rows must be contiguous"), n)
        })
        .collect();

    let mut out = Array2::zeros((n_out, out_len));
    let n_bins = n / 2 + 1;
    for o in 0..n_out {
        let mut acc = vec![Complex64::new(0.0, 0.0); n_bins];
        for i in 0..n_in {
            let h = taps.slice(ndarray::s![o, i, ..]);
            let h_slice = h.as_slice().expect("tap rows must be contiguous");
            if h_slice.iter().all(|&v| v == 0.0) {
                continue;
            }
            let hs = rfft_padded(h_slice, n);
            for ((a, xs), hs) in acc.iter_mut().zip(&in_spectra[i]).zip(&hs) {
                *a += xs * hs;
            }
        }
        let y = irfft(&acc, n);
        let copy_len = out_len.min(full_len);
        out.row_mut(o).as_slice_mut().unwrap()[..copy_len].copy_from_slice(&y[..copy_len]);
    }
    out
}

/// Convolve one signal against a bank of single-channel filters, truncating
/// each result to `out_len`; shares the signal's forward FFT.
pub fn convolve_bank(x: &[f64], filters: &[&[f64]], out_len: usize) -> Vec<Vec<f64>> {
    if filters.is_empty() {
        return Vec::new();
    }
    let max_f = filters.iter().map(|f| f.len()).max().unwrap_or(0);
    if x.is_empty() || max_f == 0 {
        return filters.iter().map(|_| vec![0.0; out_len]).collect();
    }
    let n = next_fast_len(x.len() + max_f - 1);
    let xs = rfft_padded(x, n);
    filters
        .iter()
        .map(|h| {
            let hs = rfft_padded(h, n);
            let prod: Vec<Complex64> = xs.iter().zip(&hs).map(|(a, b)| a * b).collect();
            let mut y = irfft(&prod, n);
            y.truncate(out_len);
            y.resize(out_len, 0.0);
            y
        })
        .collect()
}

/// Direct (time-domain) convolution; kept as an independent reference for
/// validating the FFT path in tests.
pub fn direct_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (j, &hj) in h.iter().enumerate() {
            y[i + j] += xi * hj;
        }
    }
    y
}

/// Helper building an `Array3` MIMO filter from nested slices (tests, docs).
pub fn mimo_from_rows(rows: &[Vec<Vec<f64>>]) -> Array3<f64> {
    let n_out = rows.len();
    let n_in = rows[0].len();
    let flen = rows[0][0].len();
    let mut taps = Array3::zeros((n_out, n_in, flen));
    for (o, row) in rows.iter().enumerate() {
        for (i, f) in row.iter().enumerate() {
            assert_eq!(f.len(), flen, "all filters must share one length");
            for (k, &v) in f.iter().enumerate() {
                taps[(o, i, k)] = v;
            }
        }
    }
    taps
}

// ---------------------------------------------------------------------------
