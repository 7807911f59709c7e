//! Random input samplers. Every sampler is a pure function of its RNG.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const GP_JITTER: f64 = 1e-8;

/// Draw from `GP(mean, K)` with `K` given explicitly, via Cholesky of
/// `K + jitter·I`.
pub fn gp_draw(cov: &DMatrix<f64>, mean: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = cov.nrows();
    let mut k = cov.clone();
    for i in 0..n {
        k[(i, i)] += GP_JITTER;
    }
    let chol = k
        .cholesky()
        .ok_or_else(|| Error::DegenerateInput("GP covariance is not positive definite after jitter".into()))?;
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = chol.l() * z;
    Ok(s.iter().map(|v| v + mean).collect())
}

/// `exp(−d²/(2l²))` over a distance function.
pub fn se_covariance(n: usize, length: f64, dist: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let d = dist(i, j);
        (-d * d / (2.0 * length * length)).exp()
    })
}

/// Squared-exponential GP over scalar locations, e.g. `y` along a plate edge.
pub fn gp_se_line(t: &[f64], length: f64, mean: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let cov = se_covariance(t.len(), length, |i, j| t[i] - t[j]);
    gp_draw(&cov, mean, rng)
}

/// Squared-exponential GP over a closed curve parametrized by normalized arc
/// length `ξ ∈ [0, 1)`. Distances are chords of the unit-circumference circle,
/// so draws are periodic in `ξ`.
pub fn gp_se_closed(xi: &[f64], length: f64, mean: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let cov = se_covariance(xi.len(), length, |i, j| (PI * (xi[i] - xi[j])).sin().abs() / PI);
    gp_draw(&cov, mean, rng)
}

/// Anisotropic Matérn covariance parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matern {
    pub nu: f64,
    pub length: [f64; 2],
    pub variance: f64,
}

impl Default for Matern {
    fn default() -> Self {
        Self {
            nu: 3.0,
            length: [0.5, 0.5],
            variance: 0.01,
        }
    }
}

impl Matern {
    /// Unnormalized 2-D spectral density at integer wavenumbers of the unit
    /// torus: `(2ν + (2π k_x ℓ_x)² + (2π k_y ℓ_y)²)^{−(ν+1)}`.
    fn density(&self, kx: f64, ky: f64) -> f64 {
        let a = 2.0 * PI * kx * self.length[0];
        let b = 2.0 * PI * ky * self.length[1];
        (2.0 * self.nu + a * a + b * b).powf(-(self.nu + 1.0))
    }

    /// One draw on an `n × n` periodic grid of `[0, 1)²`, row-major with `x`
    /// as the slow index. The spectrum is scaled so the pointwise variance is
    /// exactly `variance`.
    pub fn sample_grid(&self, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let freq = |i: usize| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
        let mut dens = Array2::from_shape_fn((n, n), |(i, j)| self.density(freq(i), freq(j)));
        let total = dens.sum() / (n * n) as f64;
        dens.mapv_inplace(|s| s * self.variance / total);
        let mut buf: Vec<Complex<f64>> = (0..n * n)
            .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
            .collect();
        fft2(&mut buf, n, false);
        for (c, s) in buf.iter_mut().zip(dens.iter()) {
            *c *= s.sqrt();
        }
        fft2(&mut buf, n, true);
        let scale = 1.0 / (n * n) as f64;
        Array2::from_shape_fn((n, n), |(i, j)| buf[i * n + j].re * scale)
    }
}

/// In-place 2-D FFT of a row-major `n × n` buffer (unnormalized).
pub fn fft2(buf: &mut [Complex<f64>], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for row in buf.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = buf[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            buf[i * n + j] = col[i];
        }
    }
}

/// `w(x) = a₀ + Σ_{l ≤ L} a_l sin 2lπx + b_l cos 2lπx` with standard normal
/// coefficients, rescaled to `2w/max|w| + c`, `c ~ U(−1, 1)`.
pub fn fourier_ic(x: &[f64], terms: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut g = || rng.sample::<f64, _>(StandardNormal);
    let a0 = g();
    let coef: Vec<(f64, f64)> = (0..terms).map(|_| (g(), g())).collect();
    let c: f64 = rng.gen_range(-1.0..1.0);
    let w: Vec<f64> = x
        .iter()
        .map(|&x| {
            a0 + coef
                .iter()
                .enumerate()
                .map(|(l, (a, b))| {
                    let arg = 2.0 * (l + 1) as f64 * PI * x;
                    a * arg.sin() + b * arg.cos()
                })
                .sum::<f64>()
        })
        .collect();
    let m = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return vec![c; x.len()];
    }
    w.iter().map(|v| 2.0 * v / m + c).collect()
}
