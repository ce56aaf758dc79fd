//! Multidimensional FFTs over row-major periodic grids.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

type Plan = Arc<dyn Fft<f64>>;

fn plan(n: usize, inverse: bool) -> Plan {
    static CACHE: OnceLock<Mutex<(FftPlanner<f64>, HashMap<(usize, bool), Plan>)>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().unwrap();
    let (planner, map) = &mut *guard;
    map.entry((n, inverse))
        .or_insert_with(|| if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) })
        .clone()
}

#[derive(Clone, Copy)]
struct SendPtr(*mut Complex64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

/// In-place transform over all `d` axes of an `n^d` row-major array.
/// The inverse transform includes the `1/n^d` normalization.
pub fn fft_nd(data: &mut [Complex64], n: usize, d: usize, inverse: bool) {
    assert_eq!(data.len(), n.pow(d as u32));
    let p = plan(n, inverse);
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        if stride == 1 {
            data.par_chunks_mut(n).for_each_init(
                || vec![Complex64::new(0.0, 0.0); p.get_inplace_scratch_len()],
                |scratch, lane| p.process_with_scratch(lane, scratch),
            );
            continue;
        }
        let outer = data.len() / (n * stride);
        let ptr = SendPtr(data.as_mut_ptr());
        // lanes (o, r): elements o*n*stride + t*stride + r, grouped in blocks of r
        const BLOCK: usize = 16;
        let blocks_per_outer = stride.div_ceil(BLOCK);
        (0..outer * blocks_per_outer).into_par_iter().for_each_init(
            || (vec![Complex64::new(0.0, 0.0); n * BLOCK], vec![Complex64::new(0.0, 0.0); p.get_inplace_scratch_len()]),
            |(buf, scratch), task| {
                let ptr = ptr;
                let o = task / blocks_per_outer;
                let r0 = (task % blocks_per_outer) * BLOCK;
                let width = BLOCK.min(stride - r0);
                let base = o * n * stride + r0;
                // SAFETY: each task touches the disjoint lane set {(o, r0..r0+width)}.
                unsafe {
                    for t in 0..n {
                        let row = ptr.0.add(base + t * stride);
                        for w in 0..width {
                            buf[w * n + t] = *row.add(w);
                        }
                    }
                }
                for w in 0..width {
                    p.process_with_scratch(&mut buf[w * n..(w + 1) * n], scratch);
                }
                unsafe {
                    for t in 0..n {
                        let row = ptr.0.add(base + t * stride);
                        for w in 0..width {
                            *row.add(w) = buf[w * n + t];
                        }
                    }
                }
            },
        );
    }
    if inverse {
        let s = 1.0 / data.len() as f64;
        data.par_iter_mut().for_each(|v| *v *= s);
    }
}

/// 1D transform of a single vector.
pub fn fft_1d(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    fft_nd(data, n, 1, inverse);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft_2d(x: &[Complex64], n: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for k0 in 0..n {
            for k1 in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..n {
                    for b in 0..n {
                        let ph = -2.0 * std::f64::consts::PI * ((k0 * a + k1 * b) as f64) / n as f64;
                        acc += x[a * n + b] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[k0 * n + k1] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_naive_2d() {
        let n = 32;
        let x: Vec<Complex64> =
            (0..n * n).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        let mut y = x.clone();
        fft_nd(&mut y, n, 2, false);
        let z = naive_dft_2d(&x, n);
        for (a, b) in y.iter().zip(&z) {
            assert!((a - b).norm() < 1e-9);
        }
        fft_nd(&mut y, n, 2, true);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_3d() {
        let n = 8;
        let x: Vec<Complex64> = (0..n * n * n).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let mut y = x.clone();
        fft_nd(&mut y, n, 3, false);
        fft_nd(&mut y, n, 3, true);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
