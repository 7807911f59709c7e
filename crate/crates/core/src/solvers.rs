//! Fourier pseudo-spectral reference solvers on periodic domains.
//!
//! - Burgers: integrating-factor RK4, 2/3-rule dealiasing.
//! - Kuramoto–Sivashinsky: ETDRK4 with contour-integral coefficients.
//! - Allen–Cahn: first-order IMEX, `εΔ` implicit and `u − u³` explicit.
//!
//! Inputs and outputs are nodal values; the internal grid can be finer, in
//! which case states are resampled by zero-padding or truncating spectra.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
pub use crate::dataset::{load_external_reference, ExternalReference};
use crate::error::{Error, Result};
use crate::problems::samplers::fft2;

type C = Complex<f64>;

pub const BLOW_UP: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub method: String,
    pub dt_internal: f64,
    pub resolution: usize,
    pub transient_cut: f64,
}

/// Output states (`N × 1` node fields) at `times`.
#[derive(Clone, Debug)]
pub struct ReferenceTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Mat>,
    pub meta: SolverMeta,
}

struct Fft1 {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    n: usize,
}

impl Fft1 {
    fn new(n: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            fwd: p.plan_fft_forward(n),
            inv: p.plan_fft_inverse(n),
            n,
        }
    }

    fn forward(&self, u: &[f64]) -> Vec<C> {
        let mut b: Vec<C> = u.iter().map(|&x| C::new(x, 0.0)).collect();
        self.fwd.process(&mut b);
        b
    }

    /// Real part of the normalized inverse transform.
    fn inverse(&self, uh: &[C]) -> Vec<f64> {
        let mut b = uh.to_vec();
        self.inv.process(&mut b);
        let s = 1.0 / self.n as f64;
        b.iter().map(|c| c.re * s).collect()
    }
}

/// Signed integer wavenumber of FFT bin `i` on `n` points (Nyquist → 0 for
/// derivatives).
fn wavenumber(i: usize, n: usize) -> f64 {
    if i < n / 2 {
        i as f64
    } else if i == n / 2 && n % 2 == 0 {
        0.0
    } else {
        i as f64 - n as f64
    }
}

/// Map the spectrum of an `n`-point signal onto `m` points (scaled so nodal
/// values are preserved). The Nyquist bin is dropped.
fn resample_spectrum(uh: &[C], m: usize) -> Vec<C> {
    let n = uh.len();
    let mut out = vec![C::new(0.0, 0.0); m];
    let half = (n.min(m) - 1) / 2;
    let s = m as f64 / n as f64;
    out[0] = uh[0] * s;
    for k in 1..=half {
        out[k] = uh[k] * s;
        out[m - k] = uh[n - k] * s;
    }
    out
}

/// Band-limited resampling of a periodic signal to `m` points.
pub fn resample_periodic(u: &[f64], m: usize) -> Vec<f64> {
    if u.len() == m {
        return u.to_vec();
    }
    let uh = Fft1::new(u.len()).forward(u);
    Fft1::new(m).inverse(&resample_spectrum(&uh, m))
}

/// Band-limited resampling of an `n × n` periodic field to `m × m`.
pub fn resample_periodic_2d(u: &Array2<f64>, m: usize) -> Array2<f64> {
    let n = u.nrows();
    if n == m {
        return u.clone();
    }
    let mut b: Vec<C> = u.iter().map(|&x| C::new(x, 0.0)).collect();
    fft2(&mut b, n, false);
    let half = (n.min(m) - 1) / 2;
    let idx = |k: i64, size: usize| if k >= 0 { k as usize } else { (size as i64 + k) as usize };
    let mut out = vec![C::new(0.0, 0.0); m * m];
    let s = (m * m) as f64 / (n * n) as f64;
    for kx in -(half as i64)..=half as i64 {
        for ky in -(half as i64)..=half as i64 {
            out[idx(kx, m) * m + idx(ky, m)] = b[idx(kx, n) * n + idx(ky, n)] * s;
        }
    }
    fft2(&mut out, m, true);
    let inv = 1.0 / (m * m) as f64;
    Array2::from_shape_fn((m, m), |(i, j)| out[i * m + j].re * inv)
}

/// Restore the conjugate symmetry of a real signal's spectrum. Roundoff
/// otherwise seeds an imaginary part that linearly unstable modes amplify.
fn hermitian(uh: &mut [C]) {
    let m = uh.len();
    uh[0].im = 0.0;
    for i in 1..(m + 1) / 2 {
        let a = (uh[i] + uh[m - i].conj()) * 0.5;
        uh[i] = a;
        uh[m - i] = a.conj();
    }
    if m % 2 == 0 {
        uh[m / 2].im = 0.0;
    }
}

fn check_state(u: &[f64], t: f64) -> Result<()> {
    let max = u.iter().fold(
        0.0f64,
        |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY },
    );
    if max > BLOW_UP {
        return Err(Error::BlowUp { time: t, max_abs: max });
    }
    Ok(())
}

fn column(u: Vec<f64>) -> Mat {
    let n = u.len();
    Array2::from_shape_vec((n, 1), u).expect("length matches")
}

/// Options for [`solve_burgers_spectral`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BurgersSolver {
    /// Internal Fourier resolution.
    pub modes: usize,
    /// Internal steps per output step.
    pub substeps: usize,
    /// Periodic domain length.
    pub length: f64,
    pub nonlinear: bool,
}

impl Default for BurgersSolver {
    fn default() -> Self {
        Self {
            modes: 256,
            substeps: 10,
            length: 1.0,
            nonlinear: true,
        }
    }
}

impl BurgersSolver {
    pub fn solve(&self, u0: &[f64], nu: f64, dt_out: f64, n_steps: usize) -> Result<ReferenceTrajectory> {
        if nu <= 0.0 || dt_out <= 0.0 || self.substeps == 0 {
            return Err(Error::Config(
                "Burgers solver needs nu > 0, dt > 0 and substeps ≥ 1".into(),
            ));
        }
        let n_out = u0.len();
        let m = self.modes.max(n_out);
        let fft = Fft1::new(m);
        let out_fft = Fft1::new(n_out);
        let dt = dt_out / self.substeps as f64;
        let k: Vec<f64> = (0..m).map(|i| 2.0 * PI * wavenumber(i, m) / self.length).collect();
        let cutoff = m / 3;
        let keep: Vec<bool> = (0..m).map(|i| wavenumber(i, m).abs() <= cutoff as f64).collect();
        let e_half: Vec<f64> = k.iter().map(|&k| (-nu * k * k * dt / 2.0).exp()).collect();
        let e_full: Vec<f64> = e_half.iter().map(|e| e * e).collect();
        let nonlinear = |vh: &[C]| -> Vec<C> {
            if !self.nonlinear {
                return vec![C::new(0.0, 0.0); m];
            }
            let trunc: Vec<C> = vh
                .iter()
                .zip(&keep)
                .map(|(c, &kp)| if kp { *c } else { C::new(0.0, 0.0) })
                .collect();
            let u = fft.inverse(&trunc);
            let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
            let sqh = fft.forward(&sq);
            sqh.iter()
                .zip(&k)
                .zip(&keep)
                .map(|((s, &k), &kp)| {
                    if kp {
                        C::new(0.0, -0.5 * k) * s
                    } else {
                        C::new(0.0, 0.0)
                    }
                })
                .collect()
        };
        let mut uh = resample_spectrum(&out_fft.forward(u0), m);
        let mut times = vec![0.0];
        let mut states = vec![column(u0.to_vec())];
        for step in 1..=n_steps {
            for _ in 0..self.substeps {
                let a: Vec<C> = nonlinear(&uh).into_iter().map(|x| x * dt).collect();
                let t1: Vec<C> = (0..m).map(|i| (uh[i] + a[i] * 0.5) * e_half[i]).collect();
                let b: Vec<C> = nonlinear(&t1).into_iter().map(|x| x * dt).collect();
                let t2: Vec<C> = (0..m).map(|i| uh[i] * e_half[i] + b[i] * 0.5).collect();
                let c: Vec<C> = nonlinear(&t2).into_iter().map(|x| x * dt).collect();
                let t3: Vec<C> = (0..m).map(|i| uh[i] * e_full[i] + c[i] * e_half[i]).collect();
                let d: Vec<C> = nonlinear(&t3).into_iter().map(|x| x * dt).collect();
                for i in 0..m {
                    uh[i] = uh[i] * e_full[i] + (a[i] * e_full[i] + (b[i] + c[i]) * (2.0 * e_half[i]) + d[i]) / 6.0;
                }
                hermitian(&mut uh);
            }
            let t = step as f64 * dt_out;
            let u = out_fft.inverse(&resample_spectrum(&uh, n_out));
            check_state(&u, t)?;
            times.push(t);
            states.push(column(u));
        }
        Ok(ReferenceTrajectory {
            times,
            states,
            meta: SolverMeta {
                method: "fourier-if-rk4".into(),
                dt_internal: dt,
                resolution: m,
                transient_cut: 0.0,
            },
        })
    }
}

pub fn solve_burgers_spectral(u0: &[f64], nu: f64, dt_out: f64, n_steps: usize) -> Result<ReferenceTrajectory> {
    BurgersSolver::default().solve(u0, nu, dt_out, n_steps)
}

/// Options for [`solve_ks_spectral`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsSolver {
    pub modes: usize,
    pub substeps: usize,
    pub length: f64,
}

impl Default for KsSolver {
    fn default() -> Self {
        Self {
            modes: 192,
            substeps: 4,
            length: 22.0 * PI,
        }
    }
}

impl KsSolver {
    /// ETDRK4 for `u_t = −u u_x − u_xx − ν u_xxxx`. The first
    /// `transient_cut` time units are integrated but not recorded; output
    /// times start at `transient_cut`.
    pub fn solve(
        &self,
        u0: &[f64],
        nu: f64,
        dt_out: f64,
        n_steps: usize,
        transient_cut: f64,
    ) -> Result<ReferenceTrajectory> {
        if dt_out <= 0.0 || self.substeps == 0 || transient_cut < 0.0 {
            return Err(Error::Config(
                "KS solver needs dt > 0, substeps ≥ 1 and a non-negative transient".into(),
            ));
        }
        let n_out = u0.len();
        let m = self.modes.max(n_out);
        let fft = Fft1::new(m);
        let out_fft = Fft1::new(n_out);
        let h = dt_out / self.substeps as f64;
        let k: Vec<f64> = (0..m).map(|i| 2.0 * PI * wavenumber(i, m) / self.length).collect();
        let lin: Vec<f64> = k.iter().map(|&k| k * k - nu * k.powi(4)).collect();
        // Kassam–Trefethen coefficients by contour averaging.
        let contour = 32;
        let roots: Vec<C> = (1..=contour)
            .map(|j| (C::new(0.0, PI * (j as f64 - 0.5) / contour as f64)).exp())
            .collect();
        let mut e = vec![0.0; m];
        let mut e2 = vec![0.0; m];
        let mut q = vec![0.0; m];
        let mut f1 = vec![0.0; m];
        let mut f2 = vec![0.0; m];
        let mut f3 = vec![0.0; m];
        for i in 0..m {
            let l = h * lin[i];
            e[i] = l.exp();
            e2[i] = (l / 2.0).exp();
            let (mut sq, mut s1, mut s2, mut s3) =
                (C::new(0.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0));
            for r in &roots {
                let z = C::new(l, 0.0) + r;
                let ez = z.exp();
                sq += ((z / 2.0).exp() - 1.0) / z;
                s1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z.powi(3);
                s2 += (2.0 + z + ez * (-2.0 + z)) / z.powi(3);
                s3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z.powi(3);
            }
            let c = contour as f64;
            q[i] = h * (sq / c).re;
            f1[i] = h * (s1 / c).re;
            f2[i] = h * (s2 / c).re;
            f3[i] = h * (s3 / c).re;
        }
        let nonlinear = |vh: &[C]| -> Vec<C> {
            let u = fft.inverse(vh);
            let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
            fft.forward(&sq)
                .iter()
                .zip(&k)
                .map(|(s, &k)| C::new(0.0, -0.5 * k) * s)
                .collect()
        };
        let mut vh = resample_spectrum(&out_fft.forward(u0), m);
        let step = |vh: &mut Vec<C>| {
            let nv = nonlinear(vh);
            let a: Vec<C> = (0..m).map(|i| vh[i] * e2[i] + nv[i] * q[i]).collect();
            let na = nonlinear(&a);
            let b: Vec<C> = (0..m).map(|i| vh[i] * e2[i] + na[i] * q[i]).collect();
            let nb = nonlinear(&b);
            let c: Vec<C> = (0..m).map(|i| a[i] * e2[i] + (nb[i] * 2.0 - nv[i]) * q[i]).collect();
            let nc = nonlinear(&c);
            for i in 0..m {
                vh[i] = vh[i] * e[i] + nv[i] * f1[i] + (na[i] + nb[i]) * (2.0 * f2[i]) + nc[i] * f3[i];
            }
            hermitian(vh);
        };
        let cut_steps = (transient_cut / h).round() as usize;
        for s in 0..cut_steps {
            step(&mut vh);
            if s % 400 == 0 {
                check_state(&fft.inverse(&vh), s as f64 * h)?;
            }
        }
        let t0 = cut_steps as f64 * h;
        let mut times = vec![t0];
        let first = out_fft.inverse(&resample_spectrum(&vh, n_out));
        check_state(&first, t0)?;
        let mut states = vec![column(first)];
        for s in 1..=n_steps {
            for _ in 0..self.substeps {
                step(&mut vh);
            }
            let t = t0 + s as f64 * dt_out;
            let u = out_fft.inverse(&resample_spectrum(&vh, n_out));
            check_state(&u, t)?;
            times.push(t);
            states.push(column(u));
        }
        Ok(ReferenceTrajectory {
            times,
            states,
            meta: SolverMeta {
                method: "fourier-etdrk4".into(),
                dt_internal: h,
                resolution: m,
                transient_cut,
            },
        })
    }
}

pub fn solve_ks_spectral(
    u0: &[f64],
    nu: f64,
    dt_out: f64,
    n_steps: usize,
    transient_cut: f64,
) -> Result<ReferenceTrajectory> {
    KsSolver::default().solve(u0, nu, dt_out, n_steps, transient_cut)
}

/// Options for [`solve_allen_cahn_galerkin`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllenCahnSolver {
    /// Internal grid is `modes × modes`.
    pub modes: usize,
    pub substeps: usize,
}

impl Default for AllenCahnSolver {
    fn default() -> Self {
        Self {
            modes: 64,
            substeps: 20,
        }
    }
}

fn torus_wavenumbers(m: usize) -> Vec<f64> {
    (0..m).map(|i| 2.0 * PI * wavenumber(i, m)).collect()
}

impl AllenCahnSolver {
    /// `u0` is an `n × n` field on `[0, 1)²` (x the row index); output states
    /// are flattened row-major to `n² × 1`.
    pub fn solve(&self, u0: &Array2<f64>, eps: f64, dt_out: f64, n_steps: usize) -> Result<ReferenceTrajectory> {
        if eps <= 0.0 || dt_out <= 0.0 || self.substeps == 0 || u0.nrows() != u0.ncols() {
            return Err(Error::Config(
                "Allen–Cahn solver needs eps > 0, dt > 0 and a square grid".into(),
            ));
        }
        let n = u0.nrows();
        let m = self.modes.max(n);
        let dt = dt_out / self.substeps as f64;
        let k = torus_wavenumbers(m);
        let denom: Vec<f64> = (0..m * m)
            .map(|p| 1.0 + dt * eps * (k[p / m].powi(2) + k[p % m].powi(2)))
            .collect();
        let mut u = resample_periodic_2d(u0, m);
        let flat = |a: &Array2<f64>| column(a.iter().copied().collect());
        let mut times = vec![0.0];
        let mut states = vec![flat(u0)];
        let mut buf = vec![C::new(0.0, 0.0); m * m];
        for s in 1..=n_steps {
            for _ in 0..self.substeps {
                for (b, &x) in buf.iter_mut().zip(u.iter()) {
                    *b = C::new(x + dt * (x - x * x * x), 0.0);
                }
                fft2(&mut buf, m, false);
                for (b, d) in buf.iter_mut().zip(&denom) {
                    *b /= *d;
                }
                fft2(&mut buf, m, true);
                let inv = 1.0 / (m * m) as f64;
                for (x, b) in u.iter_mut().zip(&buf) {
                    *x = b.re * inv;
                }
            }
            let t = s as f64 * dt_out;
            let out = resample_periodic_2d(&u, n);
            check_state(out.as_slice().expect("standard layout"), t)?;
            times.push(t);
            states.push(flat(&out));
        }
        Ok(ReferenceTrajectory {
            times,
            states,
            meta: SolverMeta {
                method: "fourier-imex-euler".into(),
                dt_internal: dt,
                resolution: m,
                transient_cut: 0.0,
            },
        })
    }
}

pub fn solve_allen_cahn_galerkin(
    u0: &Array2<f64>,
    eps: f64,
    dt_out: f64,
    n_steps: usize,
) -> Result<ReferenceTrajectory> {
    AllenCahnSolver::default().solve(u0, eps, dt_out, n_steps)
}

/// Discrete Allen–Cahn energy `mean[(ε/2)|∇u|² + (u² − 1)²/4]` of an
/// `n × n` periodic field, gradients computed spectrally.
pub fn allen_cahn_energy(u: &Array2<f64>, eps: f64) -> f64 {
    let n = u.nrows();
    let k = torus_wavenumbers(n);
    let mut b: Vec<C> = u.iter().map(|&x| C::new(x, 0.0)).collect();
    fft2(&mut b, n, false);
    // Parseval: mean |∇u|² = Σ |k|² |û|² / n⁴
    let grad2: f64 = (0..n * n)
        .map(|p| (k[p / n].powi(2) + k[p % n].powi(2)) * b[p].norm_sqr())
        .sum::<f64>()
        / (n * n * n * n) as f64;
    let pot = u.iter().map(|x| (x * x - 1.0).powi(2) / 4.0).sum::<f64>() / (n * n) as f64;
    0.5 * eps * grad2 + pot
}
