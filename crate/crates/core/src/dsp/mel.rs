use crate::error::{Error, Result};

/// HTK mel scale: `2595·log10(1 + f/700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * libm::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0)
}

/// Triangular filters on the FFT bins `0..=nfft/2`, row-major
/// `[n_filters, nfft/2 + 1]`.
///
/// Filter edges are `n_filters + 2` points equally spaced on the mel scale
/// from 0 Hz to Nyquist; filter `m` rises from edge `m` to a peak of 1 at
/// edge `m + 1` and falls back to 0 at edge `m + 2`.
pub fn mel_filterbank(n_filters: usize, nfft: usize, sample_rate: f64) -> Result<Vec<f64>> {
    if n_filters < 2 {
        return Err(Error::Config(format!("need at least 2 mel filters, got {n_filters}")));
    }
    if nfft < 2 || !(sample_rate > 0.0) {
        return Err(Error::Config(format!(
            "invalid FFT size {nfft} or sample rate {sample_rate}"
        )));
    }
    let bins = nfft / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_filters + 1) as f64))
        .collect();
    let bin_hz = sample_rate / nfft as f64;

    let mut fb = vec![0.0; n_filters * bins];
    for m in 0..n_filters {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut fb[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (mid - lo);
            let falling = (hi - f) / (hi - mid);
            *w = rising.min(falling).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::Config(format!(
                "FFT size {nfft} too small: mel filter {m} ({lo:.1}-{hi:.1} Hz) covers no bin"
            )));
        }
    }
    Ok(fb)
}

/// Centre frequency of each filter in Hz.
pub fn filter_centers(n_filters: usize, sample_rate: f64) -> Vec<f64> {
    let top = hz_to_mel(sample_rate / 2.0);
    (1..=n_filters)
        .map(|i| mel_to_hz(top * i as f64 / (n_filters + 1) as f64))
        .collect()
}
