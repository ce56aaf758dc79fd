//! Periodic dyadic sample grids over `[-B, B)^d` and the fields living on them.
//!
//! Sample `i` along an axis stands for the cell `[-B + i h, -B + (i+1) h)` with
//! `h = 2^{-J}`; point evaluations use the cell midpoint. Dyadic cubes of level
//! `N <= J` are exact unions of cells, so cell sums integrate cell-constant data exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dyadic::{pow2, DyadicCube};
use crate::error::{invalid, Error, Result};

/// Largest number of samples a grid may hold.
pub const MAX_SAMPLES: usize = 1 << 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub j: u32,
    pub b: u32,
}

impl GridSpec {
    pub fn new(d: usize, j: u32, b: u32) -> Result<Self> {
        let s = Self { d, j, b };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > 4 {
            return Err(invalid(format!("dimension {} outside 1..=4", self.d)));
        }
        if self.b == 0 || !self.b.is_power_of_two() {
            return Err(invalid(format!("box half-width {} is not a power of two", self.b)));
        }
        if self.j < 4 || self.j > 26 {
            return Err(invalid(format!("resolution exponent {} outside 4..=26", self.j)));
        }
        let n = self.n_axis() as u128;
        if n.pow(self.d as u32) > MAX_SAMPLES as u128 {
            return Err(invalid(format!("grid of {}^{} samples exceeds the limit of {MAX_SAMPLES}", n, self.d)));
        }
        Ok(())
    }

    pub fn n_axis(&self) -> usize {
        (self.b as usize) << (self.j + 1)
    }

    pub fn len(&self) -> usize {
        self.n_axis().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        pow2(-(self.j as i32))
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.d as i32)
    }

    /// Midpoint of sample `i` along an axis.
    pub fn coord(&self, i: usize) -> f64 {
        -(self.b as f64) + (i as f64 + 0.5) * self.h()
    }

    /// Sample index whose cell contains `x` (periodic).
    pub fn cell_of(&self, x: f64) -> usize {
        let n = self.n_axis() as i64;
        let i = ((x + self.b as f64) / self.h()).floor() as i64;
        i.rem_euclid(n) as usize
    }

    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        let n = self.n_axis();
        for a in (0..self.d).rev() {
            out[a] = flat % n;
            flat /= n;
        }
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let n = self.n_axis();
        idx.iter().fold(0, |acc, &i| acc * n + i)
    }

    pub fn point(&self, flat: usize, out: &mut [f64]) {
        let n = self.n_axis();
        let mut f = flat;
        for a in (0..self.d).rev() {
            out[a] = self.coord(f % n);
            f /= n;
        }
    }

    /// Signed frequency (cycles per unit length) of DFT bin `i` along an axis.
    pub fn freq(&self, i: usize) -> f64 {
        let n = self.n_axis();
        let k = if i < n / 2 { i as i64 } else { i as i64 - n as i64 };
        k as f64 / (2.0 * self.b as f64)
    }

    /// Range of sample indices along one axis covered by the cube (periodic wrap applied
    /// to the start index).
    pub fn cube_cells(&self, cube: &DyadicCube, axis: usize) -> Result<(usize, usize)> {
        if cube.level > self.j as i32 {
            return Err(Error::LevelTooFine { k: cube.level.max(0) as u32, j: self.j });
        }
        if cube.level < 0 {
            return Err(invalid("cube level below 0"));
        }
        let per = 1usize << (self.j as i32 - cube.level);
        let n = self.n_axis() as i64;
        let start = (cube.index[axis] * per as i64 + ((self.b as i64) << self.j)).rem_euclid(n);
        Ok((start as usize, per))
    }
}

#[derive(Clone, Debug)]
pub struct GridField {
    pub spec: GridSpec,
    pub values: Vec<Complex64>,
    /// Whether the field is known to be real-valued.
    pub real: bool,
    /// Distance from the support to the box boundary for compactly supported
    /// fields; `None` marks a periodic field with no support claim.
    pub margin: Option<f64>,
}

impl GridField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, values: vec![Complex64::new(0.0, 0.0); spec.len()], real: true, margin: Some(spec.b as f64) }
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        Self { spec, values: vec![Complex64::new(c, 0.0); spec.len()], real: true, margin: None }
    }

    pub fn from_values(spec: GridSpec, values: Vec<Complex64>, real: bool) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(invalid(format!("expected {} samples, got {}", spec.len(), values.len())));
        }
        let mut f = Self { spec, values, real, margin: None };
        f.margin = f.support_margin();
        Ok(f)
    }

    /// Sample a real function at cell midpoints.
    pub fn from_fn<F>(spec: GridSpec, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let d = spec.d;
        let values = (0..spec.len())
            .into_par_iter()
            .map_init(
                || vec![0.0; d],
                |x, i| {
                    spec.point(i, x);
                    Complex64::new(f(x), 0.0)
                },
            )
            .collect();
        let mut g = Self { spec, values, real: true, margin: None };
        g.margin = g.support_margin();
        g
    }

    /// Sample a complex function at cell midpoints.
    pub fn from_fn_complex<F>(spec: GridSpec, f: F) -> Self
    where
        F: Fn(&[f64]) -> Complex64 + Sync,
    {
        let d = spec.d;
        let values = (0..spec.len())
            .into_par_iter()
            .map_init(
                || vec![0.0; d],
                |x, i| {
                    spec.point(i, x);
                    f(x)
                },
            )
            .collect();
        let mut g = Self { spec, values, real: false, margin: None };
        g.margin = g.support_margin();
        g
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.par_iter().map(|v| v.norm()).reduce(|| 0.0, f64::max)
    }

    /// Measured margin, or `None` when the support touches the box boundary.
    pub fn support_margin(&self) -> Option<f64> {
        let m = self.measured_margin();
        (m > 0.0).then_some(m)
    }

    /// Recompute the margin after the values changed.
    pub fn refresh_margin(&mut self) {
        self.margin = self.support_margin();
    }

    /// Distance from the non-negligible samples (|v| > 1e-14 max) to the box boundary.
    pub fn measured_margin(&self) -> f64 {
        let peak = self.max_abs();
        if peak == 0.0 {
            return self.spec.b as f64;
        }
        let thr = 1e-14 * peak;
        let n = self.spec.n_axis();
        let h = self.spec.h();
        let d = self.spec.d;
        let cells = (0..self.len())
            .into_par_iter()
            .filter(|&i| self.values[i].norm() > thr)
            .map_init(
                || vec![0usize; d],
                |idx, i| {
                    self.spec.multi_index(i, idx);
                    idx.iter().map(|&c| c.min(n - 1 - c)).min().unwrap()
                },
            )
            .reduce(|| usize::MAX, usize::min);
        cells as f64 * h
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut g = self.clone();
        g.values.par_iter_mut().for_each(|v| *v *= c);
        g
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.spec, other.spec);
        let values = self.values.par_iter().zip(other.values.par_iter()).map(|(a, b)| a + b).collect();
        Self { spec: self.spec, values, real: self.real && other.real, margin: min_margin(self.margin, other.margin) }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.spec, other.spec);
        let values = self.values.par_iter().zip(other.values.par_iter()).map(|(a, b)| a - b).collect();
        Self { spec: self.spec, values, real: self.real && other.real, margin: min_margin(self.margin, other.margin) }
    }

    pub fn mul_fn<F>(&self, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let w = GridField::from_fn(self.spec, f);
        let values = self.values.par_iter().zip(w.values.par_iter()).map(|(a, b)| a * b.re).collect();
        let mut g = Self { spec: self.spec, values, real: self.real, margin: None };
        g.margin = g.support_margin();
        g
    }

    /// Sup-norm distance to another field.
    pub fn max_diff(&self, other: &Self) -> f64 {
        self.values.par_iter().zip(other.values.par_iter()).map(|(a, b)| (a - b).norm()).reduce(|| 0.0, f64::max)
    }

    /// Riemann sum of the field over the whole box.
    pub fn integral(&self) -> Complex64 {
        ordered_sum(&self.values) * self.spec.cell_volume()
    }

    /// Riemann sum over a dyadic cube (exact for cell-constant data).
    pub fn integral_over(&self, cube: &DyadicCube) -> Result<Complex64> {
        let spec = self.spec;
        let ranges: Vec<(usize, usize)> = (0..spec.d).map(|a| spec.cube_cells(cube, a)).collect::<Result<_>>()?;
        let n = spec.n_axis();
        let count: usize = ranges.iter().map(|r| r.1).product();
        let mut idx = vec![0usize; spec.d];
        let mut acc = Complex64::new(0.0, 0.0);
        for c in 0..count {
            let mut rem = c;
            for a in (0..spec.d).rev() {
                let (start, per) = ranges[a];
                idx[a] = (start + rem % per) % n;
                rem /= per;
            }
            acc += self.values[spec.flat_index(&idx)];
        }
        Ok(acc * spec.cell_volume())
    }

    /// `(Σ |v|^p h^d)^{1/p}`, or the maximum for p = ∞.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm(&self.values, p, self.spec.cell_volume())
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Write `<base>.bin` (little-endian f64, row-major, complex interleaved) and `<base>.hdr`.
    pub fn write_binary(&self, base: &Path, manifest_hash: Option<&str>) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.len() * if self.real { 8 } else { 16 });
        for v in &self.values {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            if !self.real {
                bytes.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        fs::write(base.with_extension("bin"), bytes)?;
        let mut hdr = String::new();
        hdr.push_str("format = haarlab-gridfield-1\n");
        hdr.push_str(&format!("d = {}\nJ = {}\nB = {}\n", self.spec.d, self.spec.j, self.spec.b));
        hdr.push_str(&format!("complex = {}\n", !self.real));
        if let Some(m) = self.margin {
            hdr.push_str(&format!("margin = {m}\n"));
        }
        if let Some(h) = manifest_hash {
            hdr.push_str(&format!("manifest = {h}\n"));
        }
        fs::write(base.with_extension("hdr"), hdr)?;
        Ok(())
    }

    pub fn read_binary(base: &Path) -> Result<Self> {
        let hdr = fs::read_to_string(base.with_extension("hdr"))?;
        let kv = crate::config::parse_kv(&hdr)?;
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| Error::Parse(format!("header misses key `{k}`")));
        let parse_u =
            |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| Error::Parse(format!("bad value for `{k}`"))) };
        let spec = GridSpec::new(parse_u("d")? as usize, parse_u("J")? as u32, parse_u("B")? as u32)?;
        let complex = get("complex")? == "true";
        let bytes = fs::read(base.with_extension("bin"))?;
        let width = if complex { 16 } else { 8 };
        if bytes.len() != spec.len() * width {
            return Err(Error::Parse(format!(
                "binary holds {} bytes, header implies {}",
                bytes.len(),
                spec.len() * width
            )));
        }
        let rd = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let values = (0..spec.len())
            .map(|i| if complex { Complex64::new(rd(16 * i), rd(16 * i + 8)) } else { Complex64::new(rd(8 * i), 0.0) })
            .collect();
        let mut f = Self { spec, values, real: !complex, margin: None };
        f.margin = match kv.get("margin") {
            Some(m) => Some(m.parse().map_err(|_| Error::Parse("bad margin".into()))?),
            None => None,
        };
        Ok(f)
    }

    /// CSV export for d = 1: columns `x,re,im`.
    pub fn write_csv(&self, path: &Path, manifest_hash: Option<&str>) -> Result<()> {
        if self.spec.d != 1 {
            return Err(invalid("CSV export is only defined for d = 1"));
        }
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        if let Some(h) = manifest_hash {
            writeln!(out, "# manifest = {h}")?;
        }
        writeln!(out, "x,re,im")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{:e},{:e}", self.spec.coord(i), v.re, v.im)?;
        }
        Ok(())
    }
}

fn min_margin(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        _ => None,
    }
}

/// Deterministic sum: fixed-size chunks reduced in index order.
pub fn ordered_sum(v: &[Complex64]) -> Complex64 {
    const CHUNK: usize = 1 << 14;
    let partial: Vec<Complex64> = v.par_chunks(CHUNK).map(|c| c.iter().sum()).collect();
    partial.iter().sum()
}

/// Deterministic real sum with the same chunking.
pub fn ordered_sum_real(v: &[f64]) -> f64 {
    const CHUNK: usize = 1 << 14;
    let partial: Vec<f64> = v.par_chunks(CHUNK).map(|c| c.iter().sum()).collect();
    partial.iter().sum()
}

pub fn lp_norm(v: &[Complex64], p: f64, weight: f64) -> f64 {
    const CHUNK: usize = 1 << 14;
    if p.is_infinite() {
        return v.par_iter().map(|z| z.norm()).reduce(|| 0.0, f64::max);
    }
    let partial: Vec<f64> = v.par_chunks(CHUNK).map(|c| c.iter().map(|z| z.norm().powf(p)).sum()).collect();
    (partial.iter().sum::<f64>() * weight).powf(1.0 / p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_basics() {
        let s = GridSpec::new(1, 10, 2).unwrap();
        assert_eq!(s.n_axis(), 4096);
        assert_eq!(s.coord(0), -2.0 + 0.5 / 1024.0);
        assert_eq!(s.cell_of(0.0), 2048);
        assert!(GridSpec::new(1, 10, 3).is_err());
        assert!(GridSpec::new(0, 10, 2).is_err());
    }

    #[test]
    fn integral_over_cube_exact() {
        let s = GridSpec::new(2, 6, 1).unwrap();
        let f = GridField::constant(s, 3.0);
        let c = DyadicCube::new(2, vec![1, -2]);
        let v = f.integral_over(&c).unwrap();
        assert!((v.re - 3.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn margin_of_unit_bump() {
        let s = GridSpec::new(1, 8, 2).unwrap();
        let f = GridField::from_fn(s, |x| if (0.0..1.0).contains(&x[0]) { 1.0 } else { 0.0 });
        assert_eq!(f.measured_margin(), 1.0);
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = GridSpec::new(2, 4, 1).unwrap();
        let f = GridField::from_fn_complex(s, |x| Complex64::new(x[0], x[1] * x[0]));
        let base = dir.path().join("f");
        f.write_binary(&base, Some("abc")).unwrap();
        let g = GridField::read_binary(&base).unwrap();
        assert_eq!(g.values, f.values);
        assert_eq!(g.spec, f.spec);
        assert!(!g.real);
    }
}
