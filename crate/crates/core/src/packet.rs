//! Continuum evaluation of Weierstrass packets at frequencies far beyond any grid.
//!
//! `L_k f_N(x) = Σ_j (r_j/2^j) e^{2πi2^j x} env_{k,j}(x)` with the smooth envelope
//! `env_{k,j} = (β_k e^{-2πi2^j·}) * ψ`, computed once per (k, j) by FFT on a short
//! periodic window and interpolated. The level-N term of `E_N f_N` reduces exactly to
//! `2^{N(1−1/p)} ‖B‖_p (Σ_μ |c_μ − c_{μ−1}|^p)^{1/p}` with B the primitive of β.
//! Integrals over x and sums over cell boundaries use stratified random sampling.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dyadic::pow2;
use crate::error::{invalid, Result};
use crate::fft::fft_1d;
use crate::generators::{zeta_range, RademacherSigns};
use crate::kernels::{Bump1, KernelBank};
use crate::profiles::{gauss_legendre, integrate, Plateau, PSI};

/// `b̂` on a uniform frequency table, interpolated.
#[derive(Clone, Debug)]
struct HatTable {
    step: f64,
    values: Vec<f64>,
}

impl HatTable {
    fn new(b: Bump1) -> Self {
        let period = 32.0;
        let n = 1usize << 20;
        let dt = period / n as f64;
        let mut arr = vec![Complex64::new(0.0, 0.0); n];
        let reach = ((b.r / dt).ceil() as usize + 1).min(n / 2 - 1);
        for i in 0..=reach {
            let v = dt * b.eval(i as f64 * dt);
            arr[i] = Complex64::new(v, 0.0);
            if i > 0 {
                arr[n - i] = Complex64::new(v, 0.0);
            }
        }
        fft_1d(&mut arr, false);
        let values = arr[..n / 2].iter().map(|z| z.re).collect();
        Self { step: 1.0 / period, values }
    }

    fn eval(&self, w: f64) -> f64 {
        let u = w.abs() / self.step;
        let i = u.floor() as isize;
        let n = self.values.len() as isize;
        if i + 4 >= n {
            return 0.0;
        }
        lagrange(u - i as f64, |o| {
            let k = i + o;
            self.values[k.unsigned_abs()]
        })
    }
}

/// Six-point Lagrange interpolation at offset `t ∈ [0,1)` from node 0, nodes −2..=3.
fn lagrange<T, F>(t: f64, at: F) -> T
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    F: Fn(isize) -> T,
{
    const NODES: [f64; 6] = [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
    let mut acc: Option<T> = None;
    for (a, &xa) in NODES.iter().enumerate() {
        let mut w = 1.0;
        for (b, &xb) in NODES.iter().enumerate() {
            if a != b {
                w *= (t - xb) / (xa - xb);
            }
        }
        let term = at(xa as isize) * w;
        acc = Some(match acc {
            None => term,
            Some(s) => s + term,
        });
    }
    acc.unwrap()
}

/// Window and resolution of the envelope grid.
const ENV_X0: f64 = -1.5;
const ENV_PERIOD: f64 = 4.0;
const ENV_POINTS: usize = 1 << 14;

#[derive(Clone, Debug)]
pub struct PacketEvaluator {
    pub bank: KernelBank,
    pub psi: Plateau,
    /// Stratified samples for the x integrals.
    pub x_samples: usize,
    /// Largest number of cell boundaries visited exactly; beyond it boundaries are sampled.
    pub boundary_samples: usize,
    pub seed: u64,
    hat: HatTable,
    hat0: HatTable,
    psi_hat: Vec<Complex64>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct PacketLevels {
    pub n: u32,
    pub k_top: u32,
    /// Sample abscissae (stratified over `[-1/2, 3/2)`).
    pub x: Vec<f64>,
    /// `|L_k f_N(x_i)|`, level-major.
    pub levels: Vec<Vec<f64>>,
    /// Integration weight per sample.
    pub weight: f64,
}

impl PacketLevels {
    /// Discrete F^s_{p,q} quasi-norm over levels `0..=k_top` (`p < ∞`).
    pub fn tl(&self, s: f64, p: f64, q: f64) -> Result<f64> {
        if !(p > 0.0 && p.is_finite() && q > 0.0) {
            return Err(invalid("continuum norm needs 0 < p < ∞ and q > 0"));
        }
        let w: Vec<f64> = (0..self.levels.len()).map(|k| pow2(k as i32).powf(s)).collect();
        let top =
            self.levels.iter().zip(&w).map(|(l, c)| c * l.iter().cloned().fold(0.0, f64::max)).fold(0.0, f64::max);
        if top == 0.0 {
            return Ok(0.0);
        }
        let sum: f64 = (0..self.x.len())
            .into_par_iter()
            .map(|i| {
                let agg = if q.is_infinite() {
                    self.levels.iter().zip(&w).map(|(l, c)| c * l[i] / top).fold(0.0, f64::max)
                } else {
                    self.levels.iter().zip(&w).map(|(l, c)| (c * l[i] / top).powf(q)).sum::<f64>().powf(1.0 / q)
                };
                agg.powf(p)
            })
            .sum();
        Ok(top * (sum * self.weight).powf(1.0 / p))
    }
}

impl PacketEvaluator {
    pub fn new(bank: KernelBank, seed: u64) -> Result<Self> {
        if bank.d() != 1 {
            return Err(invalid("the packet evaluator is one-dimensional"));
        }
        let psi = PSI;
        let dx = ENV_PERIOD / ENV_POINTS as f64;
        let mut psi_hat: Vec<Complex64> =
            (0..ENV_POINTS).map(|m| Complex64::new(psi.eval(ENV_X0 + m as f64 * dx), 0.0)).collect();
        fft_1d(&mut psi_hat, false);
        Ok(Self {
            hat: HatTable::new(bank.bump),
            hat0: HatTable::new(bank.bump0),
            bank,
            psi,
            x_samples: 1 << 16,
            boundary_samples: 1 << 16,
            seed,
            psi_hat,
        })
    }

    /// Continuous `β̂_k(ξ)` (`β̂₀` at k = 0).
    pub fn beta_k_hat(&self, k: u32, xi: f64) -> f64 {
        if k == 0 {
            self.hat0.eval(xi)
        } else {
            let w = xi * pow2(-(k as i32));
            KernelBank::fd_symbol(w).powi(self.bank.lap_power as i32) * self.hat.eval(w)
        }
    }

    /// Envelope `env_{k,j}` on the window grid.
    fn envelope(&self, k: u32, j: u32) -> Vec<Complex64> {
        let n = ENV_POINTS;
        let w = pow2(j as i32);
        let mut v: Vec<Complex64> = self
            .psi_hat
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let f = if i < n / 2 { i as f64 } else { i as f64 - n as f64 } / ENV_PERIOD;
                if z.norm() < 1e-30 {
                    Complex64::new(0.0, 0.0)
                } else {
                    z * self.beta_k_hat(k, f + w)
                }
            })
            .collect();
        fft_1d(&mut v, true);
        v
    }

    fn env_at(env: &[Complex64], x: f64) -> Complex64 {
        let dx = ENV_PERIOD / ENV_POINTS as f64;
        let u = (x - ENV_X0) / dx;
        let i = u.floor() as isize;
        let n = ENV_POINTS as isize;
        lagrange(u - i as f64, |o| env[(i + o).rem_euclid(n) as usize])
    }

    /// `|L_k f_N|` at stratified samples for `k = 0..=k_top`.
    pub fn levels(&self, n: u32, signs: &RademacherSigns, k_top: u32) -> PacketLevels {
        let js: Vec<u32> = zeta_range(n).collect();
        let coef: Vec<f64> = js.iter().map(|&j| signs.sign(j) * pow2(-(j as i32))).collect();
        let m = self.x_samples;
        let width = 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (n as u64) << 40);
        let x: Vec<f64> = (0..m).map(|i| -0.5 + (i as f64 + rng.gen::<f64>()) * width / m as f64).collect();
        let phases: Vec<Vec<Complex64>> = js
            .iter()
            .map(|&j| {
                let w = pow2(j as i32);
                x.iter().map(|&t| Complex64::from_polar(1.0, 2.0 * PI * (w * t).rem_euclid(1.0))).collect()
            })
            .collect();
        let levels = (0..=k_top)
            .map(|k| {
                let envs: Vec<Vec<Complex64>> = js.iter().map(|&j| self.envelope(k, j)).collect();
                (0..m)
                    .into_par_iter()
                    .map(|i| {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (a, env) in envs.iter().enumerate() {
                            acc += coef[a] * phases[a][i] * Self::env_at(env, x[i]);
                        }
                        acc.norm()
                    })
                    .collect()
            })
            .collect();
        PacketLevels { n, k_top, x, levels, weight: width / m as f64 }
    }

    /// Per-draw `Σ_μ |c_μ − c_{μ−1}|^p` over level-N cell boundaries, `c_μ` the
    /// cell averages of `f_N` with the given signs.
    fn jump_sums(&self, n: u32, draws: &[RademacherSigns], p: f64) -> Vec<f64> {
        let js: Vec<u32> = zeta_range(n).collect();
        let coefs: Vec<Vec<f64>> =
            draws.iter().map(|s| js.iter().map(|&j| s.sign(j) * pow2(-(j as i32))).collect()).collect();
        let cells = 1u64 << n;
        let lo = (cells as f64 * self.psi.lo0).floor() as u64;
        let hi = ((cells as f64 * self.psi.hi0).ceil() as u64).min(cells);
        let total = hi - lo + 1;
        let strata = (self.boundary_samples as u64).min(total);
        let stride = total as f64 / strata as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed ^ (n as u64) << 48);
        let mus: Vec<u64> = (0..strata)
            .map(|i| {
                if strata == total {
                    lo + i
                } else {
                    let a = (i as f64 * stride) as u64;
                    let b = (((i + 1) as f64 * stride) as u64).max(a + 1);
                    lo + rng.gen_range(a..b)
                }
            })
            .collect();
        let (gx, gw) = gauss_legendre(8);
        let h = pow2(-(n as i32));
        let psi = self.psi;
        let per_mu: Vec<Vec<f64>> = mus
            .par_iter()
            .map(|&mu| {
                let d: Vec<Complex64> = js
                    .iter()
                    .map(|&j| {
                        // c_μ − c_{μ−1} = ∫_0^1 F(u+h) − F(u) dt, u = (μ−1+t)h
                        let period = 1u64 << (n - j);
                        let base = ((mu + period - 1) % period) as f64 / period as f64;
                        let step = 1.0 / period as f64;
                        let rot = Complex64::from_polar(1.0, 2.0 * PI * step) - 1.0;
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (xi, wi) in gx.iter().zip(&gw) {
                            let t = 0.5 * (xi + 1.0);
                            let u = (mu as f64 - 1.0 + t) * h;
                            let (p0, p1) = (psi.eval(u), psi.eval(u + h));
                            if p0 == 0.0 && p1 == 0.0 {
                                continue;
                            }
                            let e = Complex64::from_polar(1.0, 2.0 * PI * (base + t * step));
                            acc += 0.5 * wi * e * (rot * p1 + (p1 - p0));
                        }
                        acc
                    })
                    .collect();
                coefs
                    .iter()
                    .map(|c| {
                        let z: Complex64 = c.iter().zip(&d).map(|(a, b)| a * b).sum();
                        z.norm().powf(p)
                    })
                    .collect()
            })
            .collect();
        let weight = total as f64 / strata as f64;
        (0..draws.len()).map(|k| weight * per_mu.iter().map(|v| v[k]).sum::<f64>()).collect()
    }

    /// `∫|B|^p` for the primitive B of β.
    pub fn primitive_lp(&self, p: f64) -> f64 {
        let r = self.bank.beta_radius();
        integrate(|t| self.bank.beta_primitive(t).abs().powf(p), -r, r, 128, 8)
    }

    /// `‖2^N β_N * E_N f_N‖_p` for each draw.
    pub fn level_n_functional(&self, n: u32, draws: &[RademacherSigns], p: f64) -> Vec<f64> {
        let sums = self.jump_sums(n, draws, p);
        let bp = self.primitive_lp(p);
        sums.iter().map(|s| (pow2(n as i32).powf(p - 1.0) * bp * s).powf(1.0 / p)).collect()
    }
}

/// Number of levels above the top packet frequency kept by [`PacketEvaluator`] norms.
pub const LEVEL_SLACK: u32 = 10;

/// Top level for the norm of `f_N`.
pub fn packet_k_top(n: u32) -> u32 {
    n / 2 + LEVEL_SLACK
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{level_n_functional, weierstrass_packet};
    use crate::grid::GridSpec;
    use crate::kernels::build_kernel_bank;
    use crate::norms::{tl_norm, SmoothnessParams};

    #[test]
    fn hat_table_matches_quadrature() {
        let bank = build_kernel_bank(5, GridSpec::new(1, 8, 1).unwrap()).unwrap();
        let ev = PacketEvaluator::new(bank.clone(), 1).unwrap();
        for w in [0.0, 0.3, 1.7, 5.2, 11.9] {
            let a = bank.bump.hat(w);
            assert!((ev.hat.eval(w) - a).abs() < 1e-10, "{w}");
            assert!(
                (ev.beta_k_hat(2, 4.0 * w) - bank.beta_hat(&[w])).abs() < 1e-9 * bank.beta_hat(&[w]).abs().max(1.0)
            );
        }
    }

    #[test]
    fn matches_grid_at_small_n() {
        let spec = GridSpec::new(1, 14, 2).unwrap();
        let bank = build_kernel_bank(5, spec).unwrap();
        let ev = PacketEvaluator::new(bank.clone(), 3).unwrap();
        let signs = RademacherSigns::new(9);
        let n = 8;
        let f = weierstrass_packet(n, &signs, spec).unwrap();
        let grid_num = level_n_functional(&f, n, 0.8, &bank).unwrap();
        let cont_num = ev.level_n_functional(n, &[signs], 0.8)[0];
        assert!((grid_num / cont_num - 1.0).abs() < 2e-2, "{grid_num} vs {cont_num}");

        let k = 10;
        let lv = ev.levels(n, &signs, k);
        for q in [2.0, 4.0, f64::INFINITY] {
            let prm = SmoothnessParams::new(1.0, 0.8, q, 1, k).unwrap();
            let g = tl_norm(&f, &prm, &bank).unwrap().value;
            let c = lv.tl(1.0, 0.8, q).unwrap();
            assert!((g / c - 1.0).abs() < 2e-2, "q = {q}: {g} vs {c}");
        }
    }
}
