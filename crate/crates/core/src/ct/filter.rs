use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::Sinogram;
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    RamLak,
    Hann,
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ramlak" => Ok(Window::RamLak),
            "hann" => Ok(Window::Hann),
            other => Err(Error::Config(format!("unknown filter window `{other}`"))),
        }
    }
}

/// How the ramp is discretised on the DFT grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    /// `|ω_k|` sampled at the bin centres; the DC bin is exactly zero.
    Sampled,
    /// DFT of the band-limited spatial ramp `h[0] = 1/(4τ²)`,
    /// `h[j odd] = −1/(π²j²τ²)`, `h[j even] = 0`, times `τ`. Agrees with
    /// `|ω_k|` away from DC but keeps the DC bin's share of the ramp, which
    /// removes the offset of uniform regions.
    Spatial,
}

/// Frequency response on an `n`-point DFT grid with sample pitch `tau`;
/// bin `k` sits at `ω_k = k/(nτ)` for `k ≤ n/2`, mirrored above.
pub fn ramp_response(n: usize, tau: f64, window: Window, kernel: Kernel) -> Vec<f64> {
    let nyquist = 1.0 / (2.0 * tau);
    let freq = |k: usize| k.min(n - k) as f64 / (n as f64 * tau);
    let base: Vec<f64> = match kernel {
        Kernel::Sampled => (0..n).map(freq).collect(),
        Kernel::Spatial => {
            let pi2 = std::f64::consts::PI * std::f64::consts::PI;
            let mut buf: Vec<Complex<f64>> = (0..n)
                .map(|j| {
                    let j = j.min(n - j);
                    let h = if j == 0 {
                        1.0 / (4.0 * tau)
                    } else if j % 2 == 1 {
                        -1.0 / (pi2 * (j * j) as f64 * tau)
                    } else {
                        0.0
                    };
                    Complex::new(h, 0.0)
                })
                .collect();
            FftPlanner::new().plan_fft_forward(n).process(&mut buf);
            buf.iter().map(|c| c.re).collect()
        }
    };
    base.into_iter()
        .enumerate()
        .map(|(k, h)| match window {
            Window::RamLak => h,
            Window::Hann => h * 0.5 * (1.0 + (std::f64::consts::PI * freq(k) / nyquist).cos()),
        })
        .collect()
}

/// Per-row ramp filter. The padded variant embeds each row in a zero-padded
/// buffer of length `next_pow2(2n)` so the product in frequency space is a
/// linear (not circular) convolution. The operator is real symmetric.
pub struct RampFilter {
    n: usize,
    response: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl RampFilter {
    pub fn new(n: usize, tau: f64, window: Window, kernel: Kernel) -> Result<Self> {
        Self::with_len(n, (2 * n).next_power_of_two(), tau, window, kernel)
    }

    /// Unpadded filter of period `n`: a circular convolution.
    pub fn circular(n: usize, tau: f64, window: Window, kernel: Kernel) -> Result<Self> {
        Self::with_len(n, n, tau, window, kernel)
    }

    fn with_len(n: usize, n_fft: usize, tau: f64, window: Window, kernel: Kernel) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("ramp filter needs rows of length ≥ 2, got {n}")));
        }
        if !(tau > 0.0) {
            return Err(Error::Config(format!("sample pitch must be positive, got {tau}")));
        }
        let mut planner = FftPlanner::new();
        Ok(RampFilter {
            n,
            response: ramp_response(n_fft, tau, window, kernel),
            fwd: planner.plan_fft_forward(n_fft),
            inv: planner.plan_fft_inverse(n_fft),
        })
    }

    pub fn row_len(&self) -> usize {
        self.n
    }

    pub fn fft_len(&self) -> usize {
        self.response.len()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        debug_assert_eq!(row.len(), self.n);
        let m = self.response.len();
        let mut buf = vec![Complex::new(0.0, 0.0); m];
        for (b, &x) in buf.iter_mut().zip(row.iter()) {
            b.re = x;
        }
        self.fwd.process(&mut buf);
        for (b, &h) in buf.iter_mut().zip(&self.response) {
            *b *= h;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / m as f64;
        for (x, b) in row.iter_mut().zip(&buf) {
            *x = b.re * scale;
        }
    }

    /// Filters every consecutive row of length `n` in `data` in place.
    pub fn apply_rows(&self, data: &mut [f64]) {
        assert_eq!(data.len() % self.n, 0, "data is not a whole number of rows");
        par::for_each_chunk_mut(data, self.n, |_, row| self.apply_row(row));
    }
}

/// Multiplies each zero-padded detector row of `sino` by `|ω|` (pitch `tau`
/// in mm) in frequency space.
pub fn ramp_filter(sino: &Sinogram, tau: f64, window: Window) -> Result<Sinogram> {
    let mut out = sino.clone();
    RampFilter::new(sino.shape[2], tau, window, Kernel::Sampled)?.apply_rows(&mut out.data);
    Ok(out)
}
