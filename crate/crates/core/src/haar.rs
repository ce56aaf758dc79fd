//! The Haar system on the grid: evaluation, dual coefficients, dyadic averages,
//! masked level operators, enumerations and their partial sums.
//!
//! A Haar function of level `k ≤ J − 1` is constant on level-J cells, so every
//! coefficient below is an exact signed sum of cell averages.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dyadic::{pow2, DyadicCube};
use crate::error::{invalid, Error, Result};
use crate::grid::{GridField, GridSpec};

/// Default upper end of the locality search in [`check_admissible`].
pub const DEFAULT_B_MAX: u32 = 8;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HaarIndex {
    /// One bit per axis; all-zero only for the level-0 scaling functions.
    pub eps: Vec<u8>,
    pub k: u32,
    pub nu: Vec<i64>,
}

impl HaarIndex {
    pub fn new(eps: Vec<u8>, k: u32, nu: Vec<i64>) -> Result<Self> {
        if eps.len() != nu.len() || eps.is_empty() {
            return Err(invalid("eps and nu must have the same nonzero length"));
        }
        if eps.iter().any(|&e| e > 1) {
            return Err(invalid("eps entries must be 0 or 1"));
        }
        if k >= 1 && eps.iter().all(|&e| e == 0) {
            return Err(invalid("eps = 0 is only allowed at level 0"));
        }
        Ok(Self { eps, k, nu })
    }

    pub fn scaling(nu: Vec<i64>) -> Self {
        Self { eps: vec![0; nu.len()], k: 0, nu }
    }

    pub fn d(&self) -> usize {
        self.nu.len()
    }

    pub fn is_scaling(&self) -> bool {
        self.eps.iter().all(|&e| e == 0)
    }

    pub fn support(&self) -> DyadicCube {
        DyadicCube::new(self.k as i32, self.nu.clone())
    }

    /// Index of the unit cube containing the support.
    pub fn unit_cube(&self) -> Vec<i64> {
        self.nu.iter().map(|&m| m >> self.k).collect()
    }

    fn eps_bits(&self) -> String {
        self.eps.iter().map(|e| if *e == 1 { '1' } else { '0' }).collect()
    }

    /// Sign of the function on the child cube with bit pattern `c` (bit a = upper half).
    fn child_sign(&self, c: usize) -> f64 {
        child_sign(&self.eps, c)
    }
}

fn child_sign(eps: &[u8], c: usize) -> f64 {
    let d = eps.len();
    let mut s = 1.0;
    for (a, &e) in eps.iter().enumerate() {
        if e == 1 && (c >> (d - 1 - a)) & 1 == 1 {
            s = -s;
        }
    }
    s
}

impl fmt::Display for HaarIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.k)?;
        for v in &self.nu {
            write!(f, " {v}")?;
        }
        write!(f, " {}", self.eps_bits())
    }
}

/// All ε ∈ {0,1}^d ∖ {0}, lexicographic.
pub fn upsilon(d: usize) -> Vec<Vec<u8>> {
    (1..1usize << d).map(|bits| (0..d).map(|a| ((bits >> (d - 1 - a)) & 1) as u8).collect()).collect()
}

fn h1d(eps: u8, t: f64) -> f64 {
    if !(0.0..1.0).contains(&t) {
        0.0
    } else if eps == 0 || t < 0.5 {
        1.0
    } else {
        -1.0
    }
}

pub fn haar_eval(idx: &HaarIndex, x: &[f64]) -> f64 {
    let s = pow2(idx.k as i32);
    idx.eps.iter().zip(&idx.nu).zip(x).map(|((&e, &v), &t)| h1d(e, s * t - v as f64)).product()
}

pub fn haar_field(idx: &HaarIndex, spec: GridSpec) -> Result<GridField> {
    check_level(idx.k, spec)?;
    Ok(GridField::from_fn(spec, |x| haar_eval(idx, x)))
}

fn check_level(k: u32, spec: GridSpec) -> Result<()> {
    if k >= spec.j {
        return Err(Error::LevelTooFine { k, j: spec.j });
    }
    Ok(())
}

/// Row-major array of cube means at one dyadic level.
#[derive(Clone, Debug)]
pub struct LevelMeans {
    pub level: u32,
    /// Cubes per axis, `2B·2^level`.
    pub m: usize,
    pub d: usize,
    offset: i64,
    pub values: Vec<Complex64>,
}

impl LevelMeans {
    pub fn position(&self, nu: &[i64]) -> usize {
        let m = self.m as i64;
        nu.iter().fold(0usize, |acc, &v| acc * self.m + (v + self.offset).rem_euclid(m) as usize)
    }

    pub fn get(&self, nu: &[i64]) -> Complex64 {
        self.values[self.position(nu)]
    }

    /// Cube index of flat position `p`.
    pub fn cube_index(&self, mut p: usize) -> Vec<i64> {
        let mut out = vec![0i64; self.d];
        for a in (0..self.d).rev() {
            out[a] = (p % self.m) as i64 - self.offset;
            p /= self.m;
        }
        out
    }

    /// Lowest and one-past-highest cube index per axis.
    pub fn range(&self) -> (i64, i64) {
        (-self.offset, self.m as i64 - self.offset)
    }
}

/// Pairwise sum of `len` (a power of two) strided samples; exact on constant blocks.
fn pairwise(src: &[Complex64], base: usize, stride: usize, len: usize) -> Complex64 {
    if len <= 8 {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut buf = [Complex64::new(0.0, 0.0); 8];
        for (t, b) in buf.iter_mut().enumerate().take(len) {
            *b = src[base + t * stride];
        }
        let mut w = len;
        while w > 1 {
            w /= 2;
            for t in 0..w {
                buf[t] = buf[2 * t] + buf[2 * t + 1];
            }
        }
        acc += buf[0];
        return acc;
    }
    let h = len / 2;
    pairwise(src, base, stride, h) + pairwise(src, base + h * stride, stride, h)
}

/// Block means of `values` (shape `n^d`) over blocks of `r^d` samples.
fn block_means(values: &[Complex64], n: usize, d: usize, r: usize) -> Vec<Complex64> {
    let mut data = values.to_vec();
    let mut dims = vec![n; d];
    for a in 0..d {
        let inner: usize = dims[a + 1..].iter().product();
        let outer: usize = dims[..a].iter().product();
        let len = dims[a];
        let nl = len / r;
        let scale = 1.0 / r as f64;
        let src = &data;
        let out: Vec<Complex64> = (0..outer * nl * inner)
            .into_par_iter()
            .map(|o| {
                let i_in = o % inner;
                let rest = o / inner;
                let i_new = rest % nl;
                let i_out = rest / nl;
                let base = (i_out * len + i_new * r) * inner + i_in;
                pairwise(src, base, inner, r) * scale
            })
            .collect();
        data = out;
        dims[a] = nl;
    }
    data
}

/// Means of `f` over every level-`level` dyadic cube of the box.
pub fn level_means(f: &GridField, level: u32) -> Result<LevelMeans> {
    let spec = f.spec;
    if level > spec.j {
        return Err(Error::LevelTooFine { k: level, j: spec.j });
    }
    let r = 1usize << (spec.j - level);
    let n = spec.n_axis();
    Ok(LevelMeans {
        level,
        m: n / r,
        d: spec.d,
        offset: (spec.b as i64) << level,
        values: block_means(&f.values, n, spec.d, r),
    })
}

/// Piecewise-constant field from level means.
fn expand(means: &[Complex64], level: u32, spec: GridSpec) -> Vec<Complex64> {
    let shift = spec.j - level;
    let m = spec.n_axis() >> shift;
    let d = spec.d;
    (0..spec.len())
        .into_par_iter()
        .map_init(
            || vec![0usize; d],
            |idx, i| {
                spec.multi_index(i, idx);
                let c = idx.iter().fold(0usize, |acc, &t| acc * m + (t >> shift));
                means[c]
            },
        )
        .collect()
}

fn like(f: &GridField, values: Vec<Complex64>) -> GridField {
    let mut g = GridField { spec: f.spec, values, real: f.real, margin: None };
    if f.margin.is_some() {
        g.refresh_margin();
    }
    g
}

/// Dual coefficient `2^{kd}⟨f, h⟩`.
pub fn haar_coeff(f: &GridField, idx: &HaarIndex) -> Result<Complex64> {
    let spec = f.spec;
    check_level(idx.k, spec)?;
    if idx.d() != spec.d {
        return Err(invalid("index dimension differs from the grid"));
    }
    let per = 1usize << (spec.j - idx.k - 1);
    let n = spec.n_axis() as i64;
    let d = spec.d;
    let starts: Vec<i64> = (0..d).map(|a| idx.nu[a] * 2 * per as i64 + ((spec.b as i64) << spec.j)).collect();
    let side = 2 * per;
    let total = side.pow(d as u32);
    let mut acc = Complex64::new(0.0, 0.0);
    for t in 0..total {
        let mut rest = t;
        let mut flat = 0usize;
        let mut sign = 1.0;
        let mut local = vec![0usize; d];
        for a in (0..d).rev() {
            local[a] = rest % side;
            rest /= side;
        }
        for a in 0..d {
            let pos = (starts[a] + local[a] as i64).rem_euclid(n) as usize;
            flat = flat * n as usize + pos;
            if idx.eps[a] == 1 && local[a] >= per {
                sign = -sign;
            }
        }
        acc += f.values[flat] * sign;
    }
    Ok(acc / total as f64)
}

/// `E_N f`.
pub fn dyadic_average(f: &GridField, n: u32) -> Result<GridField> {
    let lm = level_means(f, n)?;
    Ok(like(f, expand(&lm.values, n, f.spec)))
}

/// `f − E_N f`.
pub fn dyadic_average_complement(f: &GridField, n: u32) -> Result<GridField> {
    let e = dyadic_average(f, n)?;
    let vals = f.values.iter().zip(&e.values).map(|(a, b)| a - b).collect();
    Ok(like(f, vals))
}

/// Coefficients 𝔞 of a masked level operator, keyed by (ν, ε).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaskA {
    pub entries: BTreeMap<(Vec<i64>, Vec<u8>), f64>,
    /// Value for absent keys.
    pub default: f64,
}

impl MaskA {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn uniform(a: f64) -> Self {
        Self { entries: BTreeMap::new(), default: a }
    }

    pub fn set(&mut self, nu: Vec<i64>, eps: Vec<u8>, a: f64) {
        self.entries.insert((nu, eps), a);
    }

    pub fn get(&self, nu: &[i64], eps: &[u8]) -> f64 {
        // BTreeMap lookups need owned keys; this avoids allocating when empty
        if self.entries.is_empty() {
            return self.default;
        }
        *self.entries.get(&(nu.to_vec(), eps.to_vec())).unwrap_or(&self.default)
    }

    pub fn validate(&self) -> Result<()> {
        for &v in self.entries.values().chain(std::iter::once(&self.default)) {
            if !(v.abs() <= 1.0) {
                return Err(Error::MaskOutOfRange { value: v });
            }
        }
        Ok(())
    }
}

/// `T_N[f, 𝔞] = Σ_{ε,ν} 𝔞_{ν,ε} 2^{Nd}⟨f,h^ε_{N,ν}⟩ h^ε_{N,ν}`.
pub fn t_mask(f: &GridField, n: u32, a: &MaskA) -> Result<GridField> {
    a.validate()?;
    let spec = f.spec;
    if n + 1 > spec.j {
        return Err(Error::LevelTooFine { k: n, j: spec.j });
    }
    let fine = level_means(f, n + 1)?;
    let coarse_m = fine.m / 2;
    let d = spec.d;
    let ups = upsilon(d);
    let nc = 1usize << d;
    let mut out = vec![Complex64::new(0.0, 0.0); fine.values.len()];
    let coarse = LevelMeans { level: n, m: coarse_m, d, offset: fine.offset / 2, values: Vec::new() };
    for p in 0..coarse_m.pow(d as u32) {
        let nu = coarse.cube_index(p);
        let children: Vec<usize> = (0..nc)
            .map(|c| {
                let ch: Vec<i64> = (0..d).map(|ax| 2 * nu[ax] + ((c >> (d - 1 - ax)) & 1) as i64).collect();
                fine.position(&ch)
            })
            .collect();
        for eps in &ups {
            let w = a.get(&nu, eps);
            if w == 0.0 {
                continue;
            }
            let mut u = Complex64::new(0.0, 0.0);
            for (c, &pos) in children.iter().enumerate() {
                u += fine.values[pos] * child_sign(eps, c);
            }
            u /= nc as f64;
            for (c, &pos) in children.iter().enumerate() {
                out[pos] += u * (w * child_sign(eps, c));
            }
        }
    }
    Ok(like(f, expand(&out, n + 1, spec)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavor {
    Admissible,
    StronglyAdmissible,
    Arbitrary,
}

impl Flavor {
    fn as_str(&self) -> &'static str {
        match self {
            Flavor::Admissible => "admissible",
            Flavor::StronglyAdmissible => "strongly-admissible",
            Flavor::Arbitrary => "arbitrary",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "admissible" => Ok(Flavor::Admissible),
            "strongly-admissible" => Ok(Flavor::StronglyAdmissible),
            "arbitrary" => Ok(Flavor::Arbitrary),
            _ => Err(Error::Parse(format!("unknown flavor `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Enumeration {
    pub d: usize,
    pub items: Vec<HaarIndex>,
    /// Locality certificate, `None` when unverified.
    pub b: Option<u32>,
    pub flavor: Flavor,
    /// Positions R(m) (1-based counts) with `S_{R(m)} = E_m` on the box.
    pub markers: Vec<usize>,
}

impl Enumeration {
    /// An unverified enumeration; items must be distinct.
    pub fn new(d: usize, items: Vec<HaarIndex>) -> Result<Self> {
        let mut seen = HashSet::new();
        for it in &items {
            if it.d() != d {
                return Err(invalid("item dimension differs from the enumeration"));
            }
            if !seen.insert(it) {
                return Err(invalid(format!("duplicate item {it}")));
            }
        }
        Ok(Self { d, items, b: None, flavor: Flavor::Arbitrary, markers: Vec::new() })
    }

    /// Certify with [`check_admissible`] and record the flavor and b.
    pub fn certify(mut self, strong: bool, b_max: u32) -> Result<Self> {
        match check_admissible(&self, strong, b_max) {
            Admissibility::Passes { b } => {
                self.b = Some(b);
                self.flavor = if strong { Flavor::StronglyAdmissible } else { Flavor::Admissible };
                Ok(self)
            }
            Admissibility::Fails { witness, .. } => Err(invalid(format!(
                "enumeration is not admissible: u_{} precedes u_{} in cube {:?}",
                witness.fine, witness.coarse, witness.cube
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# d = {}\n", self.d));
        match self.b {
            Some(b) => s.push_str(&format!("# b = {b}\n")),
            None => s.push_str("# b = unverified\n"),
        }
        s.push_str(&format!("# flavor = {}\n", self.flavor.as_str()));
        let mk: Vec<String> = self.markers.iter().map(|m| m.to_string()).collect();
        s.push_str(&format!("# markers = {}\n", mk.join(" ")));
        for it in &self.items {
            s.push_str(&format!("{it}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header = BTreeMap::new();
        let mut items = Vec::new();
        let mut d = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Parse(format!("line {}: malformed index `{line}`", ln + 1));
            if toks.len() < 3 {
                return Err(bad());
            }
            let dim = toks.len() - 2;
            if *d.get_or_insert(dim) != dim {
                return Err(bad());
            }
            let k: u32 = toks[0].parse().map_err(|_| bad())?;
            let nu = toks[1..=dim].iter().map(|t| t.parse::<i64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
            let bits = toks[dim + 1];
            if bits.len() != dim {
                return Err(bad());
            }
            let eps = bits
                .chars()
                .map(|c| match c {
                    '0' => Ok(0u8),
                    '1' => Ok(1u8),
                    _ => Err(bad()),
                })
                .collect::<Result<Vec<_>>>()?;
            items.push(HaarIndex::new(eps, k, nu).map_err(|_| bad())?);
        }
        let d = match (d, header.get("d")) {
            (Some(d), _) => d,
            (None, Some(v)) => v.parse().map_err(|_| Error::Parse("bad d".into()))?,
            (None, None) => return Err(Error::Parse("empty enumeration without d".into())),
        };
        let mut e = Enumeration::new(d, items)?;
        e.b = match header.get("b").map(|s| s.as_str()) {
            None | Some("unverified") => None,
            Some(v) => Some(v.parse().map_err(|_| Error::Parse(format!("bad b `{v}`")))?),
        };
        if let Some(f) = header.get("flavor") {
            e.flavor = Flavor::parse(f)?;
        }
        if let Some(m) = header.get("markers") {
            e.markers = m
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad marker `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
        }
        if e.flavor != Flavor::Arbitrary {
            let strong = e.flavor == Flavor::StronglyAdmissible;
            let b = e.b.ok_or_else(|| Error::Parse("admissible flavor needs b".into()))?;
            if let Admissibility::Fails { .. } = check_admissible(&e, strong, b) {
                return Err(Error::Parse(format!("stored b = {b} does not certify the order")));
            }
        }
        Ok(e)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// A violating pair: the coarse item at position `coarse` comes after the fine
/// item at position `fine` (1-based), both supported in the cube around `cube`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    pub coarse: usize,
    pub fine: usize,
    pub cube: Vec<i64>,
    pub level_gap: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Admissibility {
    Passes {
        b: u32,
    },
    /// `least_b` is the smallest b that would pass (above `b_max`).
    Fails {
        least_b: u32,
        witness: Witness,
    },
}

/// Least locality parameter b ∈ [1, b_max] for which the enumeration is
/// (strongly) admissible, checked over every unit cube met by the items.
pub fn check_admissible(e: &Enumeration, strong: bool, b_max: u32) -> Admissibility {
    let d = e.d;
    // per cube: (max level seen so far, its position)
    let mut state: HashMap<Vec<i64>, (u32, usize)> = HashMap::new();
    let mut worst: Option<Witness> = None;
    let reach: i64 = if strong { 2 } else { 0 };
    let span = (2 * reach + 1) as usize;
    for (pos, it) in e.items.iter().enumerate() {
        let home = it.unit_cube();
        for t in 0..span.pow(d as u32) {
            let mut rest = t;
            let mut cube = home.clone();
            for a in (0..d).rev() {
                cube[a] += (rest % span) as i64 - reach;
                rest /= span;
            }
            let entry = state.entry(cube).or_insert((it.k, pos));
            if entry.0 > it.k {
                let gap = entry.0 - it.k;
                if worst.as_ref().is_none_or(|w| gap > w.level_gap) {
                    let mut c = home.clone();
                    let mut rest = t;
                    for a in (0..d).rev() {
                        c[a] += (rest % span) as i64 - reach;
                        rest /= span;
                    }
                    worst = Some(Witness { coarse: pos + 1, fine: entry.1 + 1, cube: c, level_gap: gap });
                }
            } else if it.k > entry.0 {
                *entry = (it.k, pos);
            }
        }
    }
    let least = worst.as_ref().map_or(1, |w| (w.level_gap + 1).max(1));
    match worst {
        Some(w) if least > b_max => Admissibility::Fails { least_b: least, witness: w },
        _ => Admissibility::Passes { b: least },
    }
}

/// Integer box `[lo, hi)^d` of unit cubes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnitBox {
    pub lo: i64,
    pub hi: i64,
}

fn lex_indices(d: usize, lo: i64, hi: i64) -> Vec<Vec<i64>> {
    let w = (hi - lo) as usize;
    (0..w.pow(d as u32))
        .map(|mut t| {
            let mut v = vec![0i64; d];
            for a in (0..d).rev() {
                v[a] = lo + (t % w) as i64;
                t /= w;
            }
            v
        })
        .collect()
}

/// Scaling functions over the box, then wavelet levels `0..=k_max`, each level in
/// lexicographic (ν, ε) order. Markers `R(m)` for `m = 0..=k_max + 1`.
pub fn build_canonical_enumeration(d: usize, k_max: u32, bx: UnitBox) -> Result<Enumeration> {
    if bx.hi <= bx.lo {
        return Err(invalid("empty box"));
    }
    let mut items: Vec<HaarIndex> = lex_indices(d, bx.lo, bx.hi).into_iter().map(HaarIndex::scaling).collect();
    let mut markers = vec![items.len()];
    let ups = upsilon(d);
    for k in 0..=k_max {
        let s = 1i64 << k;
        for nu in lex_indices(d, bx.lo * s, bx.hi * s) {
            for eps in &ups {
                items.push(HaarIndex { eps: eps.clone(), k, nu: nu.clone() });
            }
        }
        markers.push(items.len());
    }
    let mut e = Enumeration::new(d, items)?.certify(true, DEFAULT_B_MAX)?;
    e.markers = markers;
    Ok(e)
}

/// `Σ_{h ∈ items} u*_h(f) h`, exact on the grid.
pub fn synthesize<'a, I>(f: &GridField, items: I) -> Result<GridField>
where
    I: IntoIterator<Item = &'a HaarIndex>,
{
    let spec = f.spec;
    let d = spec.d;
    let nc = 1usize << d;
    let mut means: BTreeMap<u32, LevelMeans> = BTreeMap::new();
    let mut acc: BTreeMap<u32, Vec<Complex64>> = BTreeMap::new();
    let half = spec.b as i64;
    for it in items {
        check_level(it.k, spec)?;
        if it.d() != d {
            return Err(invalid("index dimension differs from the grid"));
        }
        let lo = -(half << it.k);
        let hi = half << it.k;
        if it.nu.iter().any(|&v| v < lo || v >= hi) {
            return Err(invalid(format!("item {it} lies outside the grid box")));
        }
        let lv = it.k + 1;
        if !means.contains_key(&lv) {
            means.insert(lv, level_means(f, lv)?);
        }
        let lm = &means[&lv];
        let out = acc.entry(lv).or_insert_with(|| vec![Complex64::new(0.0, 0.0); lm.values.len()]);
        let pos: Vec<usize> = (0..nc)
            .map(|c| {
                let ch: Vec<i64> = (0..d).map(|a| 2 * it.nu[a] + ((c >> (d - 1 - a)) & 1) as i64).collect();
                lm.position(&ch)
            })
            .collect();
        let mut u = Complex64::new(0.0, 0.0);
        for (c, &p) in pos.iter().enumerate() {
            u += lm.values[p] * it.child_sign(c);
        }
        u /= nc as f64;
        for (c, &p) in pos.iter().enumerate() {
            out[p] += u * it.child_sign(c);
        }
    }
    let mut total = vec![Complex64::new(0.0, 0.0); spec.len()];
    for (lv, vals) in acc {
        let e = expand(&vals, lv, spec);
        total.par_iter_mut().zip(e).for_each(|(t, v)| *t += v);
    }
    Ok(like(f, total))
}

/// `S_R f = Σ_{n ≤ R} u*_n(f) u_n`.
pub fn partial_sum(f: &GridField, e: &Enumeration, r: usize) -> Result<GridField> {
    if r == 0 || r > e.len() {
        return Err(invalid(format!("R = {r} outside 1..={}", e.len())));
    }
    synthesize(f, &e.items[..r])
}

/// `P_E f = Σ_{h ∈ E} ⟨f, h*⟩ h`.
pub fn projection_pe(f: &GridField, set: &BTreeSet<HaarIndex>) -> Result<GridField> {
    synthesize(f, set.iter())
}

/// Haar frequencies `{2^k : some h ∈ E at level k}`.
pub fn haar_frequencies(set: &BTreeSet<HaarIndex>) -> BTreeSet<u64> {
    set.iter().map(|h| 1u64 << h.k).collect()
}
