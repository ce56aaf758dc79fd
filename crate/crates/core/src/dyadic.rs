//! Dyadic cubes `2^{-N}(ν + [0,1)^d)` and the combinatorics built on them.

use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicCube {
    pub level: i32,
    pub index: Vec<i64>,
}

/// `2^e` as an exact f64 for moderate exponents.
pub(crate) fn pow2(e: i32) -> f64 {
    f64::powi(2.0, e)
}

impl DyadicCube {
    pub fn new(level: i32, index: Vec<i64>) -> Self {
        assert!(!index.is_empty(), "cube needs dimension >= 1");
        Self { level, index }
    }

    /// The unit cube `ν + [0,1)^d`.
    pub fn unit(index: Vec<i64>) -> Self {
        Self::new(0, index)
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    pub fn side(&self) -> f64 {
        pow2(-self.level)
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.index[axis] as f64 * self.side()
    }

    pub fn upper(&self, axis: usize) -> f64 {
        (self.index[axis] + 1) as f64 * self.side()
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| (self.index[a] as f64 + 0.5) * self.side()).collect()
    }

    /// Half-open membership test.
    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|a| self.lower(a) <= x[a] && x[a] < self.upper(a))
    }

    /// The `2^d` children in lexicographic index order (first axis slowest).
    pub fn children(&self) -> Vec<DyadicCube> {
        assert!(self.level >= 0, "children need level >= 0");
        let d = self.dim();
        (0..1usize << d)
            .map(|bits| {
                let index = (0..d).map(|a| 2 * self.index[a] + ((bits >> (d - 1 - a)) & 1) as i64).collect();
                DyadicCube::new(self.level + 1, index)
            })
            .collect()
    }

    pub fn parent(&self) -> DyadicCube {
        DyadicCube::new(self.level - 1, self.index.iter().map(|&v| v.div_euclid(2)).collect())
    }

    /// ω(I): the child whose closure contains the center of the parent of I.
    ///
    /// The parent spans `[2⌊ν/2⌋, 2⌊ν/2⌋+2)` in level-N units, so its center
    /// sits on the right face of I when ν is even and on the left face when ν is odd.
    pub fn omega_child(&self) -> DyadicCube {
        assert!(self.level >= 0, "omega_child needs level >= 0");
        let index = self.index.iter().map(|&v| if v.rem_euclid(2) == 0 { 2 * v + 1 } else { 2 * v }).collect();
        DyadicCube::new(self.level + 1, index)
    }

    /// Same-level cubes whose closure meets the closure of I (3^d of them, I included).
    pub fn neighbor_cubes(&self) -> Vec<DyadicCube> {
        assert!(self.level >= 0, "neighbor_cubes needs level >= 0");
        let d = self.dim();
        let total = 3usize.pow(d as u32);
        (0..total)
            .map(|mut c| {
                let mut index = vec![0i64; d];
                for a in (0..d).rev() {
                    index[a] = self.index[a] + (c % 3) as i64 - 1;
                    c /= 3;
                }
                DyadicCube::new(self.level, index)
            })
            .collect()
    }

    /// 𝒟_ℓ[∂I]: level-ℓ cubes whose closure meets ∂I.
    pub fn boundary_shell(&self, ell: i32) -> Vec<DyadicCube> {
        assert!(ell > self.level, "boundary_shell needs ell > level");
        let d = self.dim();
        let scale = 1i64 << (ell - self.level);
        let lo: Vec<i64> = self.index.iter().map(|&v| v * scale).collect();
        let hi: Vec<i64> = self.index.iter().map(|&v| (v + 1) * scale).collect();
        // closure(J) = [m, m+1] meets closure(I) = [lo, hi] iff lo-1 <= m <= hi on every
        // axis; it avoids ∂I only when it sits inside the open cube (lo < m, m+1 < hi).
        let width = (scale + 2) as usize;
        let total = width.pow(d as u32);
        let mut out = Vec::new();
        for mut c in 0..total {
            let mut m = vec![0i64; d];
            for a in (0..d).rev() {
                m[a] = lo[a] - 1 + (c % width) as i64;
                c /= width;
            }
            let interior = (0..d).all(|a| lo[a] < m[a] && m[a] + 1 < hi[a]);
            if !interior {
                out.push(DyadicCube::new(ell, m));
            }
        }
        out
    }

    /// ∞-distance from x to the boundary of I.
    pub fn dist_inf_to_boundary(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let inside = (0..d).all(|a| self.lower(a) <= x[a] && x[a] <= self.upper(a));
        if inside {
            (0..d).map(|a| (x[a] - self.lower(a)).min(self.upper(a) - x[a])).fold(f64::INFINITY, f64::min)
        } else {
            (0..d).map(|a| (self.lower(a) - x[a]).max(x[a] - self.upper(a)).max(0.0)).fold(0.0, f64::max)
        }
    }

    /// Whether the open interiors of two cubes (of any levels) intersect.
    pub fn interiors_intersect(&self, other: &DyadicCube) -> bool {
        assert_eq!(self.dim(), other.dim());
        let top = self.level.max(other.level);
        let s1 = 1i64 << (top - self.level);
        let s2 = 1i64 << (top - other.level);
        (0..self.dim()).all(|a| {
            let (lo1, hi1) = (self.index[a] * s1, (self.index[a] + 1) * s1);
            let (lo2, hi2) = (other.index[a] * s2, (other.index[a] + 1) * s2);
            lo1 < hi2 && lo2 < hi1
        })
    }
}

impl fmt::Display for DyadicCube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "2^-{}(", self.level)?;
        for (a, v) in self.index.iter().enumerate() {
            if a > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Distance from t to the lattice `2^{-N}ℤ`.
pub fn dist_to_lattice(t: f64, n: i32) -> f64 {
    let step = pow2(-n);
    let r = t.rem_euclid(step);
    r.min(step - r)
}

/// Membership of x in 𝒰_{N,k}: some coordinate lies within `2^{-k-1}` of `2^{-N}ℤ`.
pub fn in_u_set(n: i32, k: i32, x: &[f64]) -> bool {
    let r = pow2(-k - 1);
    x.iter().any(|&t| dist_to_lattice(t, n) <= r)
}

/// Same test with the radius enlarged by `slack`.
pub fn in_u_set_inflated(n: i32, k: i32, x: &[f64], slack: f64) -> bool {
    let r = pow2(-k - 1) + slack;
    x.iter().any(|&t| dist_to_lattice(t, n) <= r)
}
