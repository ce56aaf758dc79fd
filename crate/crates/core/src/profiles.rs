//! Smooth compactly supported profiles: the `exp(-1/(1-t²))` bump, smooth steps,
//! plateau functions and the odd profile used by the fractal families.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// `exp(-1/(1-t²))` on (-1,1), zero elsewhere.
pub fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

pub fn bump_deriv(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        let u = 1.0 - t * t;
        bump(t) * (-2.0 * t / (u * u))
    }
}

/// `∫_{-1}^{1} bump`.
pub fn bump_integral() -> f64 {
    static V: OnceLock<f64> = OnceLock::new();
    *V.get_or_init(|| integrate(bump, -1.0, 1.0, 64, 16))
}

fn sigma(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

fn sigma_deriv(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        sigma(t) / (t * t)
    }
}

/// C^∞ step: 0 for t ≤ 0, 1 for t ≥ 1.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = sigma(t);
        a / (a + sigma(1.0 - t))
    }
}

pub fn smooth_step_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        let (a, b) = (sigma(t), sigma(1.0 - t));
        (sigma_deriv(t) * b + a * sigma_deriv(1.0 - t)) / ((a + b) * (a + b))
    }
}

/// Smooth function equal to 1 on `[lo, hi]` and supported in `(lo0, hi0)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Plateau {
    pub lo0: f64,
    pub lo: f64,
    pub hi: f64,
    pub hi0: f64,
}

impl Plateau {
    pub const fn new(lo0: f64, lo: f64, hi: f64, hi0: f64) -> Self {
        Self { lo0, lo, hi, hi0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        smooth_step((x - self.lo0) / (self.lo - self.lo0)) * smooth_step((self.hi0 - x) / (self.hi0 - self.hi))
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let (wl, wr) = (self.lo - self.lo0, self.hi0 - self.hi);
        let (tl, tr) = ((x - self.lo0) / wl, (self.hi0 - x) / wr);
        smooth_step_deriv(tl) / wl * smooth_step(tr) - smooth_step(tl) * smooth_step_deriv(tr) / wr
    }
}

/// ψ of the Weierstrass packets: support (1/16, 15/16), plateau [1/4, 3/4].
pub const PSI: Plateau = Plateau::new(1.0 / 16.0, 0.25, 0.75, 15.0 / 16.0);
/// η of the density-failure function: support (1/16, 15/16), plateau [1/8, 7/8].
pub const ETA_DENSITY: Plateau = Plateau::new(1.0 / 16.0, 0.125, 0.875, 15.0 / 16.0);
/// χ of the tensor extensions: support (1/32, 31/32), plateau [1/8, 7/8].
pub const CHI: Plateau = Plateau::new(1.0 / 32.0, 0.125, 0.875, 31.0 / 32.0);

/// Odd profile in C^∞_c(-1/2, 1/2), flat at 0, with `∫_0^{1/2} η = 1`:
/// `η(t) = c·(bump(4t-1) - bump(-4t-1))`, `c = 4 / ∫bump`.
pub fn odd_eta(t: f64) -> f64 {
    let c = 4.0 / bump_integral();
    c * (bump(4.0 * t - 1.0) - bump(-4.0 * t - 1.0))
}

pub fn odd_eta_sup() -> f64 {
    4.0 / bump_integral() * bump(0.0)
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Composite Gauss–Legendre quadrature with `panels` panels of `order` nodes.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let hw = (b - a) / panels as f64 / 2.0;
    let mut acc = 0.0;
    for p in 0..panels {
        let mid = a + (2 * p + 1) as f64 * hw;
        for (xi, wi) in x.iter().zip(&w) {
            acc += wi * f(mid + hw * xi);
        }
    }
    acc * hw
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_exact_for_polynomials() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn bump_integral_value() {
        // reference value of ∫ exp(-1/(1-t²)) dt over (-1,1)
        assert!((bump_integral() - 0.443_993_816_168_079_4).abs() < 1e-12);
    }

    #[test]
    fn plateau_shape() {
        assert_eq!(PSI.eval(0.5), 1.0);
        assert_eq!(PSI.eval(0.25), 1.0);
        assert_eq!(PSI.eval(0.0), 0.0);
        assert_eq!(PSI.eval(15.0 / 16.0), 0.0);
        let h = 1e-6;
        for &x in &[0.1, 0.2, 0.8, 0.9] {
            let fd = (PSI.eval(x + h) - PSI.eval(x - h)) / (2.0 * h);
            assert!((fd - PSI.deriv(x)).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn odd_eta_normalized() {
        let half = integrate(odd_eta, 0.0, 0.5, 64, 16);
        assert!((half - 1.0).abs() < 1e-12);
        for &t in &[0.1, 0.2, 0.37] {
            assert_eq!(odd_eta(-t), -odd_eta(t));
        }
        assert_eq!(odd_eta(0.5), 0.0);
        assert!((odd_eta(0.25) - odd_eta_sup()).abs() < 1e-15);
    }
}
