//! Measurement harness: region classification, operator-norm lower bounds over
//! probe families, growth fits, parameter scans, exact-identity checks and the
//! non-convergence series.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dyadic::in_u_set_inflated;
use crate::error::{invalid, Error, Result};
use crate::generators::{
    counterexample_gn, density_failure_f, draw_seed, fractal_family, random_probe, FractalKind, RademacherSigns,
};
use crate::grid::{GridField, GridSpec};
use crate::haar::{
    build_canonical_enumeration, dyadic_average, haar_coeff, haar_field, partial_sum, projection_pe, t_mask, upsilon,
    Enumeration, HaarIndex, MaskA, UnitBox,
};
use crate::kernels::{build_kernel_bank, local_mean, KernelBank};
use crate::norms::{LocalMeans, SmoothnessParams};
use crate::packet::{packet_k_top, PacketEvaluator};

const EQ_TOL: f64 = 1e-12;

fn eq(a: f64, b: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= EQ_TOL * a.abs().max(b.abs()).max(1.0)
}

fn lt(a: f64, b: f64) -> bool {
    a < b && !eq(a, b)
}

fn le(a: f64, b: f64) -> bool {
    a < b || eq(a, b)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub enum Growth {
    Bounded,
    /// `N^{e}`.
    Poly(f64),
    /// `2^{rN}`.
    Exp(f64),
    Undefined,
}

impl Growth {
    /// Predicted exponent and the model it refers to.
    pub fn target(&self) -> Option<(FitModel, f64)> {
        match *self {
            Growth::Bounded => Some((FitModel::Power, 0.0)),
            Growth::Poly(e) => Some((FitModel::Power, e)),
            Growth::Exp(r) => Some((FitModel::Exponential, r)),
            Growth::Undefined => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Growth::Bounded => "bounded".into(),
            Growth::Poly(e) => format!("poly({e})"),
            Growth::Exp(r) => format!("exp({r})"),
            Growth::Undefined => "undefined".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct RegionVerdict {
    pub in_a: bool,
    pub en_uniform: bool,
    pub schauder: bool,
    pub unconditional: bool,
    pub predicted_growth: Growth,
}

/// Membership in 𝔄, the range where each single E_N is bounded.
pub fn in_region_a(s: f64, p: f64, _q: f64, d: usize) -> bool {
    let d = d as f64;
    let ip = 1.0 / p;
    let lower = (d * ip - d).max(ip - 1.0);
    (lt(lower, s) && lt(s, ip)) || (eq(s, d * ip - d) && le(p, 1.0)) || (eq(s, 0.0) && p.is_infinite())
}

/// Uniform boundedness of E_N, conditions (i)–(v).
pub fn en_uniform(s: f64, p: f64, q: f64, d: usize) -> bool {
    let d = d as f64;
    let ip = 1.0 / p;
    let pc = d / (d + 1.0);
    let c1 = lt(1.0, p) && lt(ip - 1.0, s) && lt(s, ip);
    let c2 = le(pc, p) && lt(p, 1.0) && eq(s, 1.0) && le(q, 2.0);
    let c3 = lt(pc, p) && le(p, 1.0) && lt(d * (ip - 1.0), s) && lt(s, 1.0);
    let c4 = lt(pc, p) && le(p, 1.0) && eq(s, d * (ip - 1.0));
    let c5 = p.is_infinite() && eq(s, 0.0);
    c1 || c2 || c3 || c4 || c5
}

/// Schauder basis property of every strongly admissible enumeration, (i)–(iii).
pub fn schauder(s: f64, p: f64, q: f64, d: usize) -> bool {
    if p.is_infinite() || q.is_infinite() {
        return false;
    }
    let d = d as f64;
    let ip = 1.0 / p;
    let pc = d / (d + 1.0);
    let c1 = lt(1.0, p) && lt(ip - 1.0, s) && lt(s, ip);
    let c2 = lt(pc, p) && le(p, 1.0) && lt(d * ip - d, s) && lt(s, 1.0);
    let c3 = lt(pc, p) && le(p, 1.0) && eq(s, d * ip - d);
    c1 || c2 || c3
}

/// Unconditionality: the open pentagon together with the q-restriction.
pub fn unconditional(s: f64, p: f64, q: f64, d: usize) -> bool {
    if p.is_infinite() || q.is_infinite() {
        return false;
    }
    let d = d as f64;
    let (ip, iq) = (1.0 / p, 1.0 / q);
    let pent = lt(d / (d + 1.0), p) && lt((d * (ip - 1.0)).max(ip - 1.0), s) && lt(s, ip.min(1.0));
    let qr = lt((d * (iq - 1.0)).max(iq - 1.0), s) && lt(s, iq);
    pent && qr
}

pub fn classify(s: f64, p: f64, q: f64, d: usize) -> RegionVerdict {
    let in_a = in_region_a(s, p, q, d);
    let predicted_growth = if !in_a {
        Growth::Undefined
    } else if lt(1.0, s) && lt(s, 1.0 / p) {
        Growth::Exp(s - 1.0)
    } else if eq(s, 1.0) && lt(2.0, q) {
        Growth::Poly(0.5 - 1.0 / q)
    } else {
        Growth::Bounded
    };
    RegionVerdict {
        in_a,
        en_uniform: en_uniform(s, p, q, d),
        schauder: schauder(s, p, q, d),
        unconditional: unconditional(s, p, q, d),
        predicted_growth,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FitModel {
    /// `log₂ v` against `log₂ N`.
    Power,
    /// `log₂ v` against `N`.
    Exponential,
}

impl std::str::FromStr for FitModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(Self::Power),
            "exp" | "exponential" => Ok(Self::Exponential),
            _ => Err(invalid(format!("unknown fit model {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct RateFit {
    pub samples: Vec<(f64, f64)>,
    pub model: FitModel,
    pub exponent: f64,
    pub r2: f64,
    /// All values equal: exponent 0 and r² = 1 by convention.
    pub degenerate: bool,
}

/// Least-squares growth exponent of `(N, value)` samples.
pub fn rate_fit(samples: &[(f64, f64)], model: FitModel) -> Result<RateFit> {
    if samples.len() < 3 || samples.iter().any(|&(n, v)| !(v > 0.0) || !v.is_finite() || !n.is_finite()) {
        return Err(Error::FitTooShort(samples.iter().filter(|s| s.1 > 0.0).count()));
    }
    let first = samples[0].1;
    if samples.iter().all(|s| s.1 == first) {
        return Ok(RateFit { samples: samples.to_vec(), model, exponent: 0.0, r2: 1.0, degenerate: true });
    }
    let xs: Vec<f64> = samples
        .iter()
        .map(|&(n, _)| match model {
            FitModel::Power => n.log2(),
            FitModel::Exponential => n,
        })
        .collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.log2()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("fit needs at least two distinct N"));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (slope * sxy / syy).clamp(0.0, 1.0) };
    Ok(RateFit { samples: samples.to_vec(), model, exponent: slope, r2, degenerate: false })
}

/// Test-function families fed to [`op_norm_lower`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ProbeSpec {
    DensityFailure,
    Fractal {
        kind: FractalKind,
        j: u32,
    },
    RandomBandLimited {
        band: f64,
        seed: u64,
    },
    /// Best-of-draws Weierstrass packet at the current N (d = 1).
    Counterexample {
        q: f64,
        n_draws: u32,
        seed: u64,
    },
    /// Random values on the level-`level` cells of `[0,1)^d`.
    CellConstant {
        level: u32,
        seed: u64,
    },
    /// `x ↦ f(2^{N−c} x)` for the base probe f taken at index c.
    Scaled {
        base: Box<ProbeSpec>,
        c: u32,
    },
    /// `Σ_ℓ (−1)^ℓ C(r, ℓ) f(x + ℓe₁)`: the base probe with r vanishing moments.
    Difference {
        base: Box<ProbeSpec>,
        order: u32,
    },
    /// The base probe times a constant.
    Amplified {
        base: Box<ProbeSpec>,
        factor: f64,
    },
}

impl ProbeSpec {
    pub fn id(&self) -> String {
        match self {
            ProbeSpec::DensityFailure => "density_failure".into(),
            ProbeSpec::Fractal { kind, j } => format!("fractal_{kind:?}_{j}"),
            ProbeSpec::RandomBandLimited { band, seed } => format!("bandlimited_{band}_{seed}"),
            ProbeSpec::Counterexample { q, n_draws, seed } => {
                format!("packet_q{q}_{n_draws}_{seed}")
            }
            ProbeSpec::CellConstant { level, seed } => format!("cells_{level}_{seed}"),
            ProbeSpec::Scaled { base, c } => format!("scaled{c}_{}", base.id()),
            ProbeSpec::Difference { base, order } => format!("diff{order}_{}", base.id()),
            ProbeSpec::Amplified { base, factor } => format!("amp{factor}_{}", base.id()),
        }
    }

    /// Whether the probe changes with N.
    pub fn depends_on_n(&self) -> bool {
        match self {
            ProbeSpec::Counterexample { .. } | ProbeSpec::Scaled { .. } => true,
            ProbeSpec::Difference { base, .. } | ProbeSpec::Amplified { base, .. } => base.depends_on_n(),
            _ => false,
        }
    }

    pub fn build(&self, n: u32, bank: &KernelBank) -> Result<GridField> {
        let spec = bank.spec;
        match self {
            ProbeSpec::Scaled { base, c } => {
                if base.depends_on_n() {
                    return Err(invalid("only fixed probes can be rescaled"));
                }
                let m = n.checked_sub(*c).ok_or_else(|| invalid(format!("scaled probe needs N >= {c}")))?;
                if m >= spec.j {
                    return Err(Error::ResolutionTooCoarse(format!("dilation 2^{m} exceeds J = {}", spec.j)));
                }
                let coarse = GridSpec { d: spec.d, j: spec.j - m, b: spec.b << m };
                coarse.validate()?;
                let g = base.build(*c, &KernelBank { spec: coarse, ..bank.clone() })?;
                GridField::from_values(spec, g.values, g.real)
            }
            ProbeSpec::Difference { base, order } => {
                let f = base.build(n, bank)?;
                if (*order as u64) * 2 >= 2 * spec.b as u64 {
                    return Err(invalid(format!("difference of order {order} does not fit the box")));
                }
                let unit = 1usize << spec.j;
                let n_axis = spec.n_axis();
                let stride = n_axis.pow(spec.d as u32 - 1);
                let weights: Vec<f64> = (0..=*order)
                    .scan(1.0, |c, l| {
                        let w = if l % 2 == 0 { *c } else { -*c };
                        *c = *c * (*order - l) as f64 / (l + 1) as f64;
                        Some(w)
                    })
                    .collect();
                let vals = (0..spec.len())
                    .map(|i| {
                        let i0 = i / stride;
                        weights
                            .iter()
                            .enumerate()
                            .map(|(l, w)| f.values[((i0 + l * unit) % n_axis) * stride + i % stride] * *w)
                            .sum()
                    })
                    .collect();
                GridField::from_values(spec, vals, f.real)
            }
            ProbeSpec::Amplified { base, factor } => {
                let mut f = base.build(n, bank)?.scaled(*factor);
                f.margin = f.support_margin();
                Ok(f)
            }
            ProbeSpec::DensityFailure => density_failure_f(spec),
            ProbeSpec::Fractal { kind, j } => fractal_family(*kind, *j, spec),
            ProbeSpec::RandomBandLimited { band, seed } => random_probe(spec, *band, *seed),
            ProbeSpec::Counterexample { q, n_draws, seed } => {
                Ok(counterexample_gn(n, *q, 0.8, *n_draws, *seed, bank)?.0)
            }
            ProbeSpec::CellConstant { level, seed } => cell_constant(spec, *level, *seed),
        }
    }
}

/// Random cell-constant field on the level-`level` cubes of `[0,1)^d`.
pub fn cell_constant(spec: GridSpec, level: u32, seed: u64) -> Result<GridField> {
    if level > spec.j {
        return Err(Error::LevelTooFine { k: level, j: spec.j });
    }
    let m = 1usize << level;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..m.pow(spec.d as u32)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let d = spec.d;
    Ok(GridField::from_fn(spec, move |x| {
        let mut flat = 0usize;
        for &t in x {
            if !(0.0..1.0).contains(&t) {
                return 0.0;
            }
            flat = flat * m + (t * m as f64).floor() as usize;
        }
        let _ = d;
        vals[flat]
    }))
}

/// Fixed probes: density failure, band-limited fields and fractal sums.
pub fn fixed_battery(d: usize, seed: u64) -> Vec<ProbeSpec> {
    vec![
        ProbeSpec::DensityFailure,
        ProbeSpec::RandomBandLimited { band: 4.0, seed },
        ProbeSpec::RandomBandLimited { band: 8.0, seed: seed + 1 },
        ProbeSpec::RandomBandLimited { band: 16.0, seed: seed + 2 },
        ProbeSpec::Fractal { kind: if d == 1 { FractalKind::F1Gsum } else { FractalKind::F2Gsum }, j: 3 },
        ProbeSpec::Fractal { kind: FractalKind::F1Gj, j: 2 },
    ]
}

/// Vanishing moments given to the battery probes.
pub const BATTERY_ORDER: u32 = 3;

/// Index at which the scale-adapted battery anchors its base probes.
pub const BATTERY_ANCHOR: u32 = 0;

/// Mean-zero probes dilated along with N, so that every N sees the same geometry
/// relative to the level-N cells.
pub fn standard_battery(d: usize, seed: u64) -> Vec<ProbeSpec> {
    let bases = vec![
        ProbeSpec::DensityFailure,
        ProbeSpec::RandomBandLimited { band: 1.0, seed },
        ProbeSpec::RandomBandLimited { band: 2.0, seed: seed + 1 },
        ProbeSpec::RandomBandLimited { band: 4.0, seed: seed + 2 },
        ProbeSpec::Fractal { kind: if d == 1 { FractalKind::F1Gsum } else { FractalKind::F2Gsum }, j: 3 },
        ProbeSpec::Fractal { kind: FractalKind::F1Gj, j: 2 },
    ];
    let mut v: Vec<ProbeSpec> = bases
        .into_iter()
        .map(|b| ProbeSpec::Scaled {
            base: Box::new(ProbeSpec::Difference { base: Box::new(b), order: BATTERY_ORDER }),
            c: BATTERY_ANCHOR,
        })
        .collect();
    // fixed points of E_N: ratio exactly 1
    v.push(ProbeSpec::Scaled { base: Box::new(ProbeSpec::CellConstant { level: 2, seed }), c: 2 });
    v
}

/// Operators measured by [`op_norm_lower`]; each is indexed by N.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum OperatorSpec {
    Identity,
    /// `E_N`.
    En,
    /// `T_N[·, 𝔞]` with a uniform mask.
    Tn {
        a: f64,
    },
    /// Partial sum of the canonical enumeration halfway through level N.
    Sr,
    /// Projection onto a random half of the Haar indices of level `< N` (plus scaling functions).
    Pe {
        seed: u64,
    },
}

/// Preferred number of levels kept above N in the truncated norms.
pub const K_SLACK: u32 = 4;

/// Common slack Δ for a series, so that every N is measured with `K = N + Δ`:
/// `Δ = min(K_SLACK, cap − max N)`.
pub fn series_slack(n_list: &[u32], cap: u32) -> Result<u32> {
    let top = n_list.iter().copied().max().ok_or_else(|| invalid("empty N list"))?;
    if top > cap {
        return Err(Error::ResolutionTooCoarse(format!("N = {top} exceeds the level cap {cap}")));
    }
    Ok(K_SLACK.min(cap - top))
}

fn probe_box() -> UnitBox {
    UnitBox { lo: -1, hi: 2 }
}

pub fn apply_operator(op: &OperatorSpec, f: &GridField, n: u32) -> Result<GridField> {
    match op {
        OperatorSpec::Identity => Ok(f.clone()),
        OperatorSpec::En => dyadic_average(f, n),
        OperatorSpec::Tn { a } => t_mask(f, n, &MaskA::uniform(*a)),
        OperatorSpec::Sr => {
            let e = build_canonical_enumeration(f.spec.d, n, probe_box())?;
            let m = n as usize;
            let r = (e.markers[m] + e.markers[m + 1]) / 2;
            partial_sum(f, &e, r.max(1))
        }
        OperatorSpec::Pe { seed } => {
            let e = build_canonical_enumeration(f.spec.d, n.saturating_sub(1), probe_box())?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed ^ n as u64);
            let set: BTreeSet<HaarIndex> =
                e.items.iter().filter(|it| n > 0 && (it.is_scaling() || rng.gen_bool(0.5))).cloned().collect();
            projection_pe(f, &set)
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct OpNormSample {
    pub n: u32,
    pub k: u32,
    /// Best ratio over the probes.
    pub ratio: f64,
    pub probe: String,
    /// Every probe's ratio.
    pub ratios: Vec<(String, f64)>,
}

/// `max_probe ‖op f‖ / ‖f‖` in F^s_{p,q} for each N, truncated at `K = N + Δ` with
/// Δ from [`series_slack`] and `prm.k` as the cap.
pub fn op_norm_lower(
    op: &OperatorSpec,
    probes: &[ProbeSpec],
    prm: &SmoothnessParams,
    n_list: &[u32],
    bank: &KernelBank,
) -> Result<Vec<OpNormSample>> {
    if probes.is_empty() {
        return Err(invalid("probe family is empty"));
    }
    if prm.k > bank.max_level() {
        return Err(Error::ResolutionTooCoarse(format!(
            "K = {} exceeds the finest kernel level {}",
            prm.k,
            bank.max_level()
        )));
    }
    let slack = series_slack(n_list, prm.k)?;
    let k_cap = n_list.iter().map(|&n| n + slack).max().unwrap_or(0);
    let mut fixed: BTreeMap<usize, (GridField, LocalMeans)> = BTreeMap::new();
    for (i, pr) in probes.iter().enumerate() {
        if !pr.depends_on_n() {
            let f = pr.build(0, bank)?;
            let lm = LocalMeans::compute(&f, k_cap, bank)?;
            fixed.insert(i, (f, lm));
        }
    }
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let k = n + slack;
        let p_n = SmoothnessParams { k, ..*prm };
        let mut ratios = Vec::with_capacity(probes.len());
        for (i, pr) in probes.iter().enumerate() {
            let (den, g) = match fixed.get(&i) {
                Some((f, lm)) => (lm.tl(&p_n)?.value, apply_operator(op, f, n)?),
                None => {
                    let f = pr.build(n, bank)?;
                    let den = LocalMeans::compute(&f, k, bank)?.tl(&p_n)?.value;
                    (den, apply_operator(op, &f, n)?)
                }
            };
            let num = LocalMeans::compute(&g, k, bank)?.tl(&p_n)?.value;
            let r = if den > 0.0 { num / den } else { 0.0 };
            ratios.push((pr.id(), r));
        }
        let (probe, ratio) =
            ratios.iter().cloned().fold((String::new(), f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        out.push(OpNormSample { n, k, ratio, probe, ratios });
    }
    Ok(out)
}

/// One row of the continuum packet series.
#[derive(Clone, Debug, serde::Serialize)]
pub struct PacketRow {
    pub n: u32,
    pub seed: u64,
    /// Level-N functional of `E_N f_N` for the kept draw.
    pub numerator: f64,
    /// `‖f_N‖_{F^1_{p,q}}` per requested q.
    pub norms: Vec<f64>,
    /// `numerator / norm` per q.
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct PacketGrowth {
    pub p: f64,
    pub qs: Vec<f64>,
    pub rows: Vec<PacketRow>,
    /// Power fit of the numerator.
    pub numerator_fit: RateFit,
    /// Power fit of the ratio per q.
    pub ratio_fits: Vec<RateFit>,
}

/// Lower bounds for `‖E_N‖_{F^1_{p,q}}` from Weierstrass packets, evaluated in the
/// continuum (d = 1), keeping the best of `n_draws` sign patterns per N.
pub fn packet_growth(
    ev: &PacketEvaluator,
    n_list: &[u32],
    qs: &[f64],
    p: f64,
    n_draws: u32,
    seed: u64,
) -> Result<PacketGrowth> {
    if n_draws == 0 {
        return Err(invalid("n_draws must be at least 1"));
    }
    let mut rows = Vec::new();
    for &n in n_list {
        let seeds: Vec<u64> = (0..n_draws).map(|i| draw_seed(seed, i)).collect();
        let draws: Vec<RademacherSigns> = seeds.iter().map(|&s| RademacherSigns::new(s)).collect();
        let vals = ev.level_n_functional(n, &draws, p);
        let (bi, &numerator) =
            vals.iter().enumerate().fold((0, &f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let lv = ev.levels(n, &draws[bi], packet_k_top(n));
        let norms: Vec<f64> = qs.iter().map(|&q| lv.tl(1.0, p, q)).collect::<Result<_>>()?;
        let ratios = norms.iter().map(|d| numerator / d).collect();
        rows.push(PacketRow { n, seed: seeds[bi], numerator, norms, ratios });
    }
    let numerator_fit = rate_fit(&rows.iter().map(|r| (r.n as f64, r.numerator)).collect::<Vec<_>>(), FitModel::Power)?;
    let ratio_fits = (0..qs.len())
        .map(|i| rate_fit(&rows.iter().map(|r| (r.n as f64, r.ratios[i])).collect::<Vec<_>>(), FitModel::Power))
        .collect::<Result<_>>()?;
    Ok(PacketGrowth { p, qs: qs.to_vec(), rows, numerator_fit, ratio_fits })
}

/// Default N values for the continuum packet series.
pub fn packet_n_list() -> Vec<u32> {
    (8..=40).step_by(4).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Tolerances {
    pub power: f64,
    pub exponential: f64,
    pub r2: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { power: 0.15, exponential: 0.1, r2: 0.9 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum ScanMethod {
    /// Grid operators over the probe battery.
    Grid,
    /// Continuum Weierstrass packets (d = 1, s = 1).
    Packets,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ScanRow {
    pub s: f64,
    pub p: f64,
    pub q: f64,
    pub verdict: RegionVerdict,
    pub method: ScanMethod,
    pub fit: Option<RateFit>,
    pub agree: Option<bool>,
    pub error: Option<String>,
}

impl ScanRow {
    pub fn csv_header() -> &'static str {
        "s,p,q,in_A,en_uniform,schauder,unconditional,predicted,method,model,exponent,r2,agree,error"
    }

    pub fn to_csv(&self) -> String {
        let v = &self.verdict;
        let (model, exp, r2) = match &self.fit {
            Some(f) => (format!("{:?}", f.model), format!("{:.6}", f.exponent), format!("{:.6}", f.r2)),
            None => (String::new(), String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{},{:?},{},{},{},{},{}",
            self.s,
            self.p,
            self.q,
            v.in_a,
            v.en_uniform,
            v.schauder,
            v.unconditional,
            v.predicted_growth.label(),
            self.method,
            model,
            exp,
            r2,
            self.agree.map_or(String::new(), |a| a.to_string()),
            self.error.clone().unwrap_or_default().replace(',', ";")
        )
    }
}

pub fn scan_csv(rows: &[ScanRow], manifest_hash: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(h) = manifest_hash {
        let _ = writeln!(s, "# manifest = {h}");
    }
    let _ = writeln!(s, "{}", ScanRow::csv_header());
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv());
    }
    s
}

#[derive(Clone, Debug)]
pub struct ScanSetup {
    pub spec: GridSpec,
    pub n_list: Vec<u32>,
    pub packet_n_list: Vec<u32>,
    pub probes: Vec<ProbeSpec>,
    pub n_draws: u32,
    pub seed: u64,
    pub tol: Tolerances,
}

/// Smallest admissible moment order for a tuple.
pub fn moment_order(s: f64, p: f64, q: f64, d: usize) -> Result<u32> {
    Ok(SmoothnessParams::new(s, p, q, d, 0)?.m)
}

pub fn agree(fit: &RateFit, growth: Growth, tol: &Tolerances) -> Option<bool> {
    let (model, target) = growth.target()?;
    let t = match model {
        FitModel::Power => tol.power,
        FitModel::Exponential => tol.exponential,
    };
    let close = (fit.exponent - target).abs() <= t;
    // a flat series has no trend for r² to measure
    let r2_ok = target == 0.0 || fit.r2 >= tol.r2;
    Some(close && r2_ok)
}

fn scan_tuple(
    s: f64,
    p: f64,
    q: f64,
    setup: &ScanSetup,
    banks: &mut BTreeMap<u32, KernelBank>,
) -> Result<(ScanMethod, RateFit)> {
    let d = setup.spec.d;
    let m = moment_order(s, p, q, d)?;
    if !banks.contains_key(&m) {
        banks.insert(m, build_kernel_bank(m, setup.spec)?);
    }
    let bank = &banks[&m];
    if d == 1 && eq(s, 1.0) {
        let ev = PacketEvaluator::new(bank.clone(), setup.seed)?;
        let g = packet_growth(&ev, &setup.packet_n_list, &[q], p, setup.n_draws, setup.seed)?;
        return Ok((ScanMethod::Packets, g.ratio_fits[0].clone()));
    }
    let model = if s > 1.0 { FitModel::Exponential } else { FitModel::Power };
    let prm = SmoothnessParams::new(s, p, q, d, bank.max_level())?;
    let res = op_norm_lower(&OperatorSpec::En, &setup.probes, &prm, &setup.n_list, bank)?;
    let samples: Vec<(f64, f64)> = res.iter().map(|r| (r.n as f64, r.ratio)).collect();
    Ok((ScanMethod::Grid, rate_fit(&samples, model)?))
}

/// Classify each tuple, measure the growth of `‖E_N‖`, and compare.
pub fn region_scan(tuples: &[(f64, f64, f64)], setup: &ScanSetup) -> Vec<ScanRow> {
    let mut banks = BTreeMap::new();
    tuples
        .iter()
        .map(|&(s, p, q)| {
            let verdict = classify(s, p, q, setup.spec.d);
            match scan_tuple(s, p, q, setup, &mut banks) {
                Ok((method, fit)) => {
                    let a = agree(&fit, verdict.predicted_growth, &setup.tol);
                    ScanRow { s, p, q, verdict, method, fit: Some(fit), agree: a, error: None }
                }
                Err(e) => ScanRow {
                    s,
                    p,
                    q,
                    verdict,
                    method: ScanMethod::Grid,
                    fit: None,
                    agree: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct CheckResult {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct IdentityReport {
    pub checks: Vec<CheckResult>,
}

impl IdentityReport {
    fn push(&mut self, name: &str, residual: f64, tolerance: f64) {
        self.checks.push(CheckResult { name: name.into(), residual, tolerance, pass: residual <= tolerance });
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }

    pub fn to_csv(&self, manifest_hash: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = manifest_hash {
            let _ = writeln!(s, "# manifest = {h}");
        }
        s.push_str("check,residual,tolerance,pass\n");
        for c in &self.checks {
            let _ = writeln!(s, "{},{:e},{:e},{}", c.name, c.residual, c.tolerance, c.pass);
        }
        s
    }
}

/// Deliberate corruption used to confirm that the suite detects failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Move one entry of the reconstructed localization mask by ±1/2.
    PerturbMask,
}

/// Masks for the localization identity: `S_R g = E_N g + Σ_κ T_{N+κ}[g, 𝔞^κ]` where N is
/// the coarsest level with an index missing from the first R items, and 𝔞^κ marks
/// the level-(N+κ) indices among them.
pub fn localization_masks(e: &Enumeration, r: usize) -> Result<(u32, Vec<MaskA>)> {
    if r == 0 || r > e.len() {
        return Err(invalid(format!("R = {r} outside 1..={}", e.len())));
    }
    let prefix = &e.items[..r];
    if e.items[r..].iter().any(|it| it.is_scaling()) {
        return Err(invalid("R precedes some scaling function"));
    }
    let n =
        e.items[r..].iter().map(|it| it.k).min().unwrap_or_else(|| prefix.iter().map(|it| it.k + 1).max().unwrap_or(0));
    let top = prefix.iter().filter(|it| !it.is_scaling()).map(|it| it.k).max().unwrap_or(0);
    let mut masks = Vec::new();
    for lvl in n..=top.max(n) {
        let mut m = MaskA::zero();
        for it in prefix.iter().filter(|it| !it.is_scaling() && it.k == lvl) {
            m.set(it.nu.clone(), it.eps.clone(), 1.0);
        }
        masks.push(m);
    }
    Ok((n, masks))
}

fn rel_diff(a: &GridField, b: &GridField, scale: f64) -> f64 {
    a.max_diff(b) / scale.max(f64::MIN_POSITIVE)
}

/// Exact identities of the Haar machinery, each reported with its residual.
pub fn identity_suite(spec: GridSpec, bank: &KernelBank, seed: u64, fault: Option<Fault>) -> Result<IdentityReport> {
    if bank.spec != spec {
        return Err(invalid("kernel bank lives on a different grid"));
    }
    let d = spec.d;
    let mut rep = IdentityReport::default();

    // biorthogonality on a small canonical family
    let small = build_canonical_enumeration(d, 2, UnitBox { lo: 0, hi: 1 })?;
    let fields: Vec<GridField> = small.items.iter().map(|h| haar_field(h, spec)).collect::<Result<_>>()?;
    let mut bi: f64 = 0.0;
    for (m, fm) in fields.iter().enumerate() {
        for (n, hn) in small.items.iter().enumerate() {
            let c = haar_coeff(fm, hn)?;
            let want = if m == n { 1.0 } else { 0.0 };
            bi = bi.max((c - want).norm());
        }
    }
    rep.push("biorthogonality", bi, 1e-12);

    let probes: Vec<GridField> = (0..3).map(|i| random_probe(spec, 8.0, seed + i)).collect::<Result<_>>()?;
    let top_n = (spec.j - LEVEL_MARGIN).min(6);
    let (mut idem, mut nest, mut mart): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for f in &probes {
        let sc = f.max_abs();
        let avgs: Vec<GridField> = (0..=top_n + 1).map(|n| dyadic_average(f, n)).collect::<Result<_>>()?;
        for n in 0..=top_n {
            idem = idem.max(rel_diff(&dyadic_average(&avgs[n as usize], n)?, &avgs[n as usize], sc));
            for m in 0..=top_n {
                let em = dyadic_average(&avgs[m as usize], n)?;
                nest = nest.max(rel_diff(&em, &avgs[n.min(m) as usize], sc));
            }
            let t = t_mask(f, n, &MaskA::uniform(1.0))?;
            let diff = avgs[n as usize + 1].sub(&avgs[n as usize]);
            mart = mart.max(rel_diff(&t, &diff, sc));
        }
    }
    rep.push("en_idempotence", idem, 1e-12);
    rep.push("en_nesting", nest, 1e-12);
    rep.push("martingale", mart, 1e-12);

    // localization identity on g ς_ν for the canonical enumeration
    let k_max = top_n;
    let e = build_canonical_enumeration(d, k_max, probe_box())?;
    let sigma = bank.sigma_field(&vec![0; d]);
    let mut loc: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x10c);
    for i in 0..10 {
        let g = random_probe(spec, 6.0, seed + 100 + i)?;
        let gs = GridField::from_values(spec, g.values.iter().zip(&sigma.values).map(|(a, b)| a * b).collect(), true)?;
        let sc = gs.max_abs();
        let mut rs: Vec<usize> = Vec::new();
        for _ in 0..5 {
            let m = rng.gen_range(1..=k_max as usize);
            let off: i64 = rng.gen_range(-2..=2);
            let r = (e.markers[m] as i64 + off).clamp(e.markers[0] as i64, e.len() as i64) as usize;
            rs.push(r);
        }
        for r in rs {
            let lhs = partial_sum(&gs, &e, r)?;
            let (n, mut masks) = localization_masks(&e, r)?;
            if fault == Some(Fault::PerturbMask) {
                let nu = vec![1i64 << n.saturating_sub(1); d];
                let eps = upsilon(d).pop().unwrap();
                let a = masks[0].get(&nu, &eps);
                masks[0].set(nu, eps, 0.5 - a);
            }
            let mut rhs = dyadic_average(&gs, n)?;
            for (kappa, m) in masks.iter().enumerate() {
                let t = t_mask(&gs, n + kappa as u32, m)?;
                rhs = rhs.add(&t);
            }
            loc = loc.max(rel_diff(&lhs, &rhs, sc));
        }
    }
    rep.push("localization", loc, 1e-10);

    // support property of L_k E_N outside the inflated 𝒰_{N,k}
    let f = &probes[0];
    let mut sup: f64 = 0.0;
    let h = spec.h();
    let mut x = vec![0.0; d];
    for n in 2..=4u32 {
        let en = dyadic_average(f, n)?;
        for k in n + 1..=n + 3 {
            if k > bank.max_level() {
                continue;
            }
            let l = local_mean(&en, k, bank)?;
            let sc = l.max_abs();
            let mut worst: f64 = 0.0;
            for (i, v) in l.values.iter().enumerate() {
                spec.point(i, &mut x);
                if !in_u_set_inflated(n as i32, k as i32, &x, h) {
                    worst = worst.max(v.norm());
                }
            }
            sup = sup.max(worst / sc.max(f64::MIN_POSITIVE));
        }
    }
    rep.push("support", sup, 1e-10);

    // partition of unity
    let b = spec.b as i64;
    let (lo, hi) = (-b, b);
    let mut acc = vec![Complex64::new(0.0, 0.0); spec.len()];
    let cubes: BTreeSet<Vec<i64>> = level_indices(d, 0, UnitBox { lo, hi }).into_iter().map(|h| h.nu).collect();
    for nu in cubes {
        let sf = bank.sigma_field(&nu);
        acc.par_iter_mut().zip(&sf.values).for_each(|(a, v)| *a += v);
    }
    let mut part: f64 = 0.0;
    let inner = (lo as f64 + 0.1, hi as f64 - 0.1);
    for (i, v) in acc.iter().enumerate() {
        spec.point(i, &mut x);
        if x.iter().all(|&t| t >= inner.0 && t <= inner.1) {
            part = part.max((v - 1.0).norm());
        }
    }
    rep.push("partition", part, 1e-10);
    Ok(rep)
}

/// Levels kept free between the finest Haar level used by the suite and the grid.
const LEVEL_MARGIN: u32 = 2;

#[derive(Clone, Debug, serde::Serialize)]
pub struct NonconvergenceReport {
    pub values: Vec<(u32, f64)>,
    /// Exponential-model fit (slope of `log₂` value per unit N).
    pub fit: Option<RateFit>,
    pub floor: f64,
}

/// `‖E_N f − f‖_{F^s_{p,q}}` over N, truncated as in [`op_norm_lower`].
pub fn nonconvergence_probe(
    prm: &SmoothnessParams,
    f: &GridField,
    bank: &KernelBank,
    n_list: &[u32],
) -> Result<NonconvergenceReport> {
    let slack = series_slack(n_list, prm.k)?;
    let mut values = Vec::new();
    for &n in n_list {
        let k = n + slack;
        let diff = dyadic_average(f, n)?.sub(f);
        let mut diff = diff;
        diff.margin = f.margin;
        let v = LocalMeans::compute(&diff, k, bank)?.tl(&SmoothnessParams { k, ..*prm })?.value;
        values.push((n, v));
    }
    let floor = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let samples: Vec<(f64, f64)> = values.iter().map(|&(n, v)| (n as f64, v)).collect();
    let fit = rate_fit(&samples, FitModel::Exponential).ok();
    Ok(NonconvergenceReport { values, fit, floor })
}

/// Haar indices of `upsilon(d)` at a level over a box, used by the CLI.
pub fn level_indices(d: usize, k: u32, bx: UnitBox) -> Vec<HaarIndex> {
    let s = 1i64 << k;
    let w = ((bx.hi - bx.lo) * s) as usize;
    let mut out = Vec::new();
    for t in 0..w.pow(d as u32) {
        let mut nu = vec![0i64; d];
        let mut r = t;
        for a in (0..d).rev() {
            nu[a] = bx.lo * s + (r % w) as i64;
            r /= w;
        }
        for eps in upsilon(d) {
            out.push(HaarIndex { eps, k, nu: nu.clone() });
        }
    }
    out
}

/// `sup|L_k ψ_j|` for the modulated plateau `ψ_j(x) = e^{2πi2^j x} ψ(x)`, `k = j + t` for
/// each offset t, with the fitted decay exponent (minus the slope of `log₂` against t).
#[derive(Clone, Debug, serde::Serialize)]
pub struct CrossLevelDecay {
    pub j: u32,
    pub profile: Vec<(i32, f64)>,
    pub exponent: f64,
    pub r2: f64,
}

/// Relative magnitude below which spectrum bins of the probe are treated as round-off.
pub const SPECTRAL_FLOOR: f64 = 1e-13;

pub fn cross_level_decay(bank: &KernelBank, j: u32, offsets: &[i32]) -> Result<CrossLevelDecay> {
    let spec = bank.spec;
    let w = (j as f64).exp2();
    let f = GridField::from_fn_complex(spec, |x| {
        let amp: f64 = x.iter().map(|&t| crate::profiles::PSI.eval(t)).product();
        Complex64::from_polar(amp, 2.0 * std::f64::consts::PI * w * x[0])
    });
    let mut sp = crate::kernels::Spectrum::new(&f);
    // bins at round-off level would be amplified by the peak of β̂_k
    let top = sp.hat.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for z in sp.hat.iter_mut() {
        if z.norm() < SPECTRAL_FLOOR * top {
            *z = Complex64::new(0.0, 0.0);
        }
    }
    let mut profile = Vec::with_capacity(offsets.len());
    for &t in offsets {
        let k = j as i64 + t as i64;
        if k < 0 || k > bank.max_level() as i64 {
            return Err(Error::LevelTooFine { k: k.max(0) as u32, j: spec.j });
        }
        let v = sp.local_mean(k as u32, bank)?;
        profile.push((t, v.iter().map(|z| z.norm()).fold(0.0, f64::max)));
    }
    let samples: Vec<(f64, f64)> = profile.iter().map(|&(t, v)| (t as f64, v)).collect();
    let fit = rate_fit(&samples, FitModel::Exponential)?;
    Ok(CrossLevelDecay { j, profile, exponent: -fit.exponent, r2: fit.r2 })
}
