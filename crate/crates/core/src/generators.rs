//! Explicit test functions: randomized Weierstrass packets and their tensor
//! extensions, the density-failure function, the odd fractal families and the
//! translated-bump packets 𝒴_{κ,σ}.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dyadic::pow2;
use crate::error::{invalid, Error, Result};
use crate::fft::fft_nd;
use crate::grid::{GridField, GridSpec};
use crate::haar::dyadic_average;
use crate::kernels::{for_each_bin, local_mean, KernelBank};
use crate::profiles::{integrate, odd_eta, odd_eta_sup, Plateau, CHI, ETA_DENSITY, PSI};

/// Rademacher signs `r_j`, one independent ChaCha stream per index j.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RademacherSigns {
    pub seed: u64,
}

impl RademacherSigns {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn sign(&self, j: u32) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(j as u64);
        if rng.next_u32() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Frequency indices `ℨ_N = {j : N/4 ≤ j ≤ N/2}`.
pub fn zeta_range(n: u32) -> RangeInclusive<u32> {
    n.div_ceil(4)..=n / 2
}

/// `Σ_{j∈ℨ_N} (r_j/2^j) e^{2πi2^j x} ψ(x)` at a point.
pub fn weierstrass_value(n: u32, signs: &RademacherSigns, psi: &Plateau, x: f64) -> Complex64 {
    let w = psi.eval(x);
    if w == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    zeta_range(n)
        .map(|j| {
            let f = pow2(j as i32);
            let ph = 2.0 * PI * (f * x).rem_euclid(1.0);
            Complex64::from_polar(signs.sign(j) / f * w, ph)
        })
        .sum()
}

/// The randomized packet `f_N(·, t)` on a one-dimensional grid.
pub fn weierstrass_packet(n: u32, signs: &RademacherSigns, spec: GridSpec) -> Result<GridField> {
    weierstrass_packet_with(n, signs, spec, &PSI)
}

/// As [`weierstrass_packet`] with a custom plateau ψ.
pub fn weierstrass_packet_with(n: u32, signs: &RademacherSigns, spec: GridSpec, psi: &Plateau) -> Result<GridField> {
    spec.validate()?;
    if spec.d != 1 {
        return Err(invalid("Weierstrass packets are one-dimensional"));
    }
    if n / 2 + 3 > spec.j {
        return Err(Error::ResolutionTooCoarse(format!(
            "packet frequency 2^{} needs J >= {}, got {}",
            n / 2,
            n / 2 + 3,
            spec.j
        )));
    }
    let psi = *psi;
    Ok(GridField::from_fn_complex(spec, move |x| weierstrass_value(n, signs, &psi, x[0])))
}

/// `‖2^N β_N * E_N f‖_p`, the level-N term of the F¹ quasi-norm of `E_N f`.
pub fn level_n_functional(f: &GridField, n: u32, p: f64, bank: &KernelBank) -> Result<f64> {
    let e = dyadic_average(f, n)?;
    let l = local_mean(&e, n, bank)?;
    Ok(pow2(n as i32) * l.lp_norm(p))
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct CounterexampleReport {
    pub n: u32,
    pub q: f64,
    pub p: f64,
    /// Seed of the kept draw.
    pub seed: u64,
    /// Lower-bound functional of `f_N` for the kept draw.
    pub value: f64,
    /// Functional for every draw, in draw order.
    pub draws: Vec<f64>,
}

/// Seed of draw `i` for a base seed.
pub fn draw_seed(base: u64, i: u32) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(1 << 32 | i as u64);
    rng.next_u64()
}

/// Best of `n_draws` sign patterns for the level-N functional; returns
/// `g_N = N^{-1/q} f_N` for the kept draw.
pub fn counterexample_gn(
    n: u32,
    q: f64,
    p: f64,
    n_draws: u32,
    seed: u64,
    bank: &KernelBank,
) -> Result<(GridField, CounterexampleReport)> {
    let spec = bank.spec;
    if n_draws == 0 {
        return Err(invalid("n_draws must be at least 1"));
    }
    let mut draws = Vec::with_capacity(n_draws as usize);
    let mut best: Option<(f64, u64, GridField)> = None;
    for i in 0..n_draws {
        let s = draw_seed(seed, i);
        let f = weierstrass_packet(n, &RademacherSigns::new(s), spec)?;
        let v = level_n_functional(&f, n, p, bank)?;
        draws.push(v);
        if best.as_ref().map_or(true, |b| v > b.0) {
            best = Some((v, s, f));
        }
    }
    let (value, s, f) = best.unwrap();
    let g = f.scaled((n as f64).powf(-1.0 / q));
    Ok((g, CounterexampleReport { n, q, p, seed: s, value, draws }))
}

/// `G(x₁, x′) = g(x₁) χ(x′)`, χ the [1/8, 7/8] plateau.
pub fn tensor_gn(g: &GridField, spec2: GridSpec) -> Result<GridField> {
    tensor_with(g, spec2, |t| CHI.eval(t))
}

fn tensor_with<F: Fn(f64) -> f64 + Sync>(g: &GridField, spec2: GridSpec, chi: F) -> Result<GridField> {
    spec2.validate()?;
    if g.spec.d != 1 || spec2.d < 2 {
        return Err(invalid("tensor extension maps a 1D field to d >= 2"));
    }
    if g.spec.j != spec2.j || g.spec.b != spec2.b {
        return Err(invalid("both grids need the same J and B"));
    }
    let n = spec2.n_axis();
    let d = spec2.d;
    let chi_tab: Vec<f64> = (0..n).map(|i| chi(spec2.coord(i))).collect();
    let mut idx = vec![0usize; d];
    let values = (0..spec2.len())
        .map(|flat| {
            spec2.multi_index(flat, &mut idx);
            let c: f64 = idx[1..].iter().map(|&i| chi_tab[i]).product();
            g.values[idx[0]] * c
        })
        .collect();
    let mut out = GridField { spec: spec2, values, real: g.real, margin: None };
    out.refresh_margin();
    Ok(out)
}

/// `f(x) = x₁ η(x)`, η the tensor plateau equal to 1 on (1/8, 7/8)^d.
pub fn density_failure_f(spec: GridSpec) -> Result<GridField> {
    spec.validate()?;
    Ok(GridField::from_fn(spec, |x| x[0] * x.iter().map(|&t| ETA_DENSITY.eval(t)).product::<f64>()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FractalKind {
    F1Gj,
    F1Gsum,
    F2Gj,
    F2Gsum,
}

impl std::str::FromStr for FractalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F1_gj" | "f1_gj" => Ok(Self::F1Gj),
            "F1_gsum" | "f1_gsum" => Ok(Self::F1Gsum),
            "F2_Gj" | "f2_gj" => Ok(Self::F2Gj),
            "F2_Gsum" | "f2_gsum" => Ok(Self::F2Gsum),
            _ => Err(invalid(format!("unknown fractal family {s:?}"))),
        }
    }
}

/// `∫_0^1 χ` for the plateau χ, so that `χ / CHI_MASS` has unit mass.
pub fn chi_mass() -> f64 {
    integrate(|t| CHI.eval(t), CHI.lo0, CHI.hi0, 64, 16)
}

/// `2^j η(2^j t)` with η odd, supported in (-1/2, 1/2), `∫_0^{1/2} η = 1`.
fn g1(j: u32, t: f64) -> f64 {
    let s = pow2(j as i32);
    s * odd_eta(s * t)
}

/// Members of ℱ₁ (`g_j`, `Σ_{j=1}^N g_j`) and ℱ₂ (`g_j(x₁)χ(x′)` with `∫χ = 1`).
pub fn fractal_family(kind: FractalKind, j_or_n: u32, spec: GridSpec) -> Result<GridField> {
    spec.validate()?;
    let top = match kind {
        FractalKind::F1Gj | FractalKind::F2Gj => j_or_n,
        FractalKind::F1Gsum | FractalKind::F2Gsum => {
            if j_or_n == 0 {
                return Err(invalid("fractal sums start at j = 1"));
            }
            j_or_n
        }
    };
    if top + 3 > spec.j {
        return Err(Error::ResolutionTooCoarse(format!("level {top} needs J >= {}", top + 3)));
    }
    let levels: Vec<u32> = match kind {
        FractalKind::F1Gj | FractalKind::F2Gj => vec![j_or_n],
        _ => (1..=j_or_n).collect(),
    };
    let cm = chi_mass();
    let field = match kind {
        FractalKind::F1Gj | FractalKind::F1Gsum => GridField::from_fn(spec, move |x| {
            levels.iter().map(|&j| x.iter().map(|&t| g1(j, t)).product::<f64>()).sum()
        }),
        FractalKind::F2Gj | FractalKind::F2Gsum => GridField::from_fn(spec, move |x| {
            let chi: f64 = x[1..].iter().map(|&t| CHI.eval(t) / cm).product();
            if chi == 0.0 {
                return 0.0;
            }
            chi * levels.iter().map(|&j| g1(j, x[0])).sum::<f64>()
        }),
    };
    Ok(field)
}

/// Centre offsets (per axis) and bump width of the translates in 𝒴_{κ,σ}.
#[derive(Clone, Debug, PartialEq)]
pub struct UncLayout {
    pub b: i64,
    /// Translates per axis, `max(1, 2^{b−N−2})`.
    pub count: u64,
    /// Spacing `2^{N+2−b}`.
    pub spacing: f64,
    /// Support width `2^{σ−b−N}` of one bump.
    pub width: f64,
}

pub fn unc_layout(kappa: u32, sigma: u32, n: u32) -> UncLayout {
    let b = kappa as i64 * n as i64;
    let e = b - n as i64 - 2;
    let count = if e <= 0 { 1 } else { 1u64 << e };
    UncLayout { b, count, spacing: pow2((n as i64 + 2 - b) as i32), width: pow2((sigma as i64 - b - n as i64) as i32) }
}

/// `𝒴_{κ,σ} = Σ_ν 2^{−σd} Π_i η(2^{b+N−σ}(x_i − 2^{N+2−b}ν_i))`, `b = κN`.
pub fn unc_packet(kappa: u32, sigma: u32, n: u32, spec: GridSpec) -> Result<GridField> {
    spec.validate()?;
    let lay = unc_layout(kappa, sigma, n);
    let scale_exp = lay.b + n as i64 - sigma as i64;
    if scale_exp > spec.j as i64 - 2 {
        return Err(Error::ResolutionTooCoarse(format!("bump scale 2^{scale_exp} needs J >= {}", scale_exp + 2)));
    }
    let d = spec.d;
    let amp = pow2(-(sigma as i32) * d as i32);
    let scale = pow2(scale_exp as i32);
    let count = lay.count as i64;
    let spacing = lay.spacing;
    Ok(GridField::from_fn(spec, move |x| {
        let mut prod = amp;
        for &t in x {
            // nearest translate along this axis; the others vanish when the bumps are disjoint
            let nu = (t / spacing).round().clamp(0.0, (count - 1) as f64);
            let mut s = 0.0;
            for dn in -1..=1i64 {
                let v = nu as i64 + dn;
                if (0..count).contains(&v) {
                    s += odd_eta(scale * (t - spacing * v as f64));
                }
            }
            prod *= s;
            if prod == 0.0 {
                return 0.0;
            }
        }
        prod
    }))
}

/// `sup|𝒴_{κ,σ}| = 2^{−σd} (sup|η|)^d`.
pub fn unc_packet_sup(sigma: u32, d: usize) -> f64 {
    pow2(-(sigma as i32) * d as i32) * odd_eta_sup().powi(d as i32)
}

/// Period of the trigonometric polynomial behind [`random_probe`].
pub const PROBE_PERIOD: f64 = 2.0;

/// Random real trigonometric polynomial of period 2 with frequencies `|ξ| ≤ band` and
/// unit coefficient ℓ² norm,
/// windowed by the tensor plateau χ so that it is supported in (0, 1)^d. Each
/// coefficient is keyed by its frequency, so the function does not depend on the grid.
pub fn random_probe(spec: GridSpec, band: f64, seed: u64) -> Result<GridField> {
    spec.validate()?;
    let n = spec.len() as f64;
    let off = -(spec.b as f64) + 0.5 * spec.h();
    let mut hat = vec![Complex64::new(0.0, 0.0); spec.len()];
    let step = (spec.b as f64 * 2.0 / PROBE_PERIOD) as usize;
    let na = spec.n_axis();
    for_each_bin(spec, &mut hat, |r, idx| {
        if r > band || idx.iter().any(|&i| i % step != 0) {
            return Complex64::new(0.0, 0.0);
        }
        let mut key = 0u64;
        let mut phase = 0.0;
        for &i in idx {
            let k = if i < na / 2 { i as i64 } else { i as i64 - na as i64 };
            let m = k / step as i64;
            key = (key << 16) | ((m + (1 << 15)) as u64 & 0xffff);
            phase += spec.freq(i) * off;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(key);
        let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        c * Complex64::from_polar(n, 2.0 * PI * phase)
    });
    let rms = hat.iter().map(|z| (z.norm() / n).powi(2)).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    fft_nd(&mut hat, spec.n_axis(), spec.d, true);
    let d = spec.d;
    let mut x = vec![0.0; d];
    let values = hat
        .iter()
        .enumerate()
        .map(|(i, z)| {
            spec.point(i, &mut x);
            let w: f64 = x.iter().map(|&t| CHI.eval(t)).product();
            Complex64::new(z.re / rms * w, 0.0)
        })
        .collect();
    let mut f = GridField { spec, values, real: true, margin: None };
    f.refresh_margin();
    Ok(f)
}
