//! Uniform rectangular lattices in one to three dimensions.
//!
//! Node `i` along axis `k` sits at `origin[k] + i * step[k]`. Linear indices
//! are row-major with axis 0 slowest. A periodic lattice wraps with period
//! `shape[k] * step[k]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub dim: usize,
    pub origin: [f64; MAX_DIM],
    pub step: [f64; MAX_DIM],
    pub shape: [usize; MAX_DIM],
    pub periodic: bool,
}

impl Lattice {
    pub fn new(origin: &[f64], step: &[f64], shape: &[usize], periodic: bool) -> Result<Self> {
        let dim = shape.len();
        if dim == 0 || dim > MAX_DIM || origin.len() != dim || step.len() != dim {
            return Err(Error::domain(format!(
                "lattice needs 1..=3 axes with matching origin/step/shape (got {}, {}, {})",
                origin.len(),
                step.len(),
                shape.len()
            )));
        }
        let mut l = Lattice {
            dim,
            origin: [0.0; MAX_DIM],
            step: [1.0; MAX_DIM],
            shape: [1; MAX_DIM],
            periodic,
        };
        for k in 0..dim {
            if !(step[k] > 0.0) || !step[k].is_finite() {
                return Err(Error::domain(format!("lattice step {} must be positive", step[k])));
            }
            if shape[k] == 0 {
                return Err(Error::domain("lattice axis with zero nodes"));
            }
            l.origin[k] = origin[k];
            l.step[k] = step[k];
            l.shape[k] = shape[k];
        }
        Ok(l)
    }

    /// Isotropic periodic lattice with `n` nodes per axis starting at the origin.
    pub fn torus(dim: usize, n: usize, h: f64) -> Result<Self> {
        Lattice::new(&vec![0.0; dim], &vec![h; dim], &vec![n; dim], true)
    }

    /// Centered box `[c - n h, c + n h]^d` with `2n + 1` nodes per axis.
    pub fn centered_box(center: &[f64], half_nodes: usize, h: f64) -> Result<Self> {
        let dim = center.len();
        let origin: Vec<f64> = center.iter().map(|c| c - half_nodes as f64 * h).collect();
        Lattice::new(&origin, &vec![h; dim], &vec![2 * half_nodes + 1; dim], false)
    }

    pub fn len(&self) -> usize {
        self.shape[..self.dim].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> [usize; MAX_DIM] {
        let mut s = [0usize; MAX_DIM];
        let mut acc = 1;
        for k in (0..self.dim).rev() {
            s[k] = acc;
            acc *= self.shape[k];
        }
        s
    }

    pub fn period(&self, k: usize) -> f64 {
        self.shape[k] as f64 * self.step[k]
    }

    pub fn index(&self, c: &[usize]) -> usize {
        let mut idx = 0;
        for k in 0..self.dim {
            idx = idx * self.shape[k] + c[k];
        }
        idx
    }

    pub fn coords(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut c = [0usize; MAX_DIM];
        for k in (0..self.dim).rev() {
            c[k] = idx % self.shape[k];
            idx /= self.shape[k];
        }
        c
    }

    pub fn point(&self, idx: usize) -> [f64; MAX_DIM] {
        let c = self.coords(idx);
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.dim {
            x[k] = self.origin[k] + c[k] as f64 * self.step[k];
        }
        x
    }

    /// Neighbor along `axis` in direction `dir` (±1); `None` off a non-periodic edge.
    #[inline]
    pub fn neighbor(&self, idx: usize, c: &[usize; MAX_DIM], axis: usize, dir: isize) -> Option<usize> {
        let n = self.shape[axis];
        let s = self.strides()[axis];
        let i = c[axis];
        if dir > 0 {
            if i + 1 < n {
                Some(idx + s)
            } else if self.periodic {
                Some(idx + s - n * s)
            } else {
                None
            }
        } else if i > 0 {
            Some(idx - s)
        } else if self.periodic {
            Some(idx + (n - 1) * s)
        } else {
            None
        }
    }

    pub fn is_boundary(&self, c: &[usize; MAX_DIM]) -> bool {
        !self.periodic && (0..self.dim).any(|k| c[k] == 0 || c[k] + 1 == self.shape[k])
    }

    /// Cell containing `x` and the fractional position inside it.
    /// Periodic lattices wrap; boxes return `None` outside `[origin, origin + (n-1) step]`.
    pub fn locate(&self, x: &[f64]) -> Option<([usize; MAX_DIM], [f64; MAX_DIM])> {
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for k in 0..self.dim {
            let s = (x[k] - self.origin[k]) / self.step[k];
            let n = self.shape[k];
            if self.periodic {
                let nf = n as f64;
                let mut w = s.rem_euclid(nf);
                if w >= nf {
                    w = 0.0;
                }
                let i = (w.floor() as usize).min(n - 1);
                base[k] = i;
                frac[k] = w - i as f64;
            } else {
                let top = (n - 1) as f64;
                let tol = 1e-9;
                if !(s >= -tol && s <= top + tol) {
                    return None;
                }
                let s = s.clamp(0.0, top);
                if n == 1 {
                    base[k] = 0;
                    frac[k] = 0.0;
                    continue;
                }
                let i = (s.floor() as usize).min(n - 2);
                base[k] = i;
                frac[k] = s - i as f64;
            }
        }
        Some((base, frac))
    }

    /// Multilinear interpolation of a field with `ncomp` interleaved components.
    pub fn interpolate_into(&self, values: &[f64], ncomp: usize, x: &[f64], out: &mut [f64]) -> bool {
        let Some((base, frac)) = self.locate(x) else {
            return false;
        };
        for o in out.iter_mut().take(ncomp) {
            *o = 0.0;
        }
        let strides = self.strides();
        let corners = 1usize << self.dim;
        for corner in 0..corners {
            let mut w = 1.0;
            let mut idx = 0usize;
            for k in 0..self.dim {
                let bit = (corner >> k) & 1;
                let mut i = base[k] + bit;
                if bit == 1 {
                    if i >= self.shape[k] {
                        if self.periodic {
                            i -= self.shape[k];
                        } else {
                            i = self.shape[k] - 1;
                        }
                    }
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
                idx += i * strides[k];
            }
            if w == 0.0 {
                continue;
            }
            let off = idx * ncomp;
            for c in 0..ncomp {
                out[c] += w * values[off + c];
            }
        }
        true
    }

    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Option<f64> {
        let mut out = [0.0];
        if self.interpolate_into(values, 1, x, &mut out) {
            Some(out[0])
        } else {
            None
        }
    }

    /// Indices of all nodes with `|x_node - center| <= radius` (Euclidean).
    /// Periodic lattices count each wrapped node once; boxes fail when the
    /// ball leaves the lattice.
    pub fn ball_nodes(&self, center: &[f64], radius: f64) -> Result<Vec<usize>> {
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for k in 0..self.dim {
            let s = (center[k] - self.origin[k]) / self.step[k];
            let r = radius / self.step[k];
            lo[k] = (s - r - 1e-9).ceil() as i64;
            hi[k] = (s + r + 1e-9).floor() as i64;
            let top = (self.shape[k] - 1) as f64;
            if !self.periodic && (s - r < -1e-9 || s + r > top + 1e-9) {
                return Err(Error::domain(format!(
                    "ball of radius {radius} around {:?} leaves the grid",
                    &center[..self.dim]
                )));
            }
            if self.periodic && (hi[k] - lo[k] + 1) as usize > self.shape[k] {
                return Err(Error::domain(format!(
                    "ball of radius {radius} wraps around the torus"
                )));
            }
        }
        let mut out = Vec::new();
        let mut c = [0i64; MAX_DIM];
        let dim = self.dim;
        fn rec(
            l: &Lattice,
            k: usize,
            dim: usize,
            c: &mut [i64; MAX_DIM],
            lo: &[i64; MAX_DIM],
            hi: &[i64; MAX_DIM],
            center: &[f64],
            r2: f64,
            out: &mut Vec<usize>,
        ) {
            if k == dim {
                let mut d2 = 0.0;
                let mut idx = 0usize;
                for a in 0..dim {
                    let x = l.origin[a] + c[a] as f64 * l.step[a];
                    d2 += (x - center[a]) * (x - center[a]);
                    let n = l.shape[a] as i64;
                    let i = c[a].rem_euclid(n) as usize;
                    idx = idx * l.shape[a] + i;
                }
                if d2 <= r2 {
                    out.push(idx);
                }
                return;
            }
            for i in lo[k]..=hi[k] {
                c[k] = i;
                rec(l, k + 1, dim, c, lo, hi, center, r2, out);
            }
        }
        let r2 = radius * radius * (1.0 + 1e-12) + 1e-24;
        rec(self, 0, dim, &mut c, &lo, &hi, center, r2, &mut out);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let l = Lattice::new(&[0.0, 1.0, -1.0], &[0.5, 0.25, 1.0], &[3, 4, 5], false).unwrap();
        for idx in 0..l.len() {
            assert_eq!(l.index(&l.coords(idx)), idx);
        }
    }

    #[test]
    fn interpolation_reproduces_affine_fields() {
        let l = Lattice::new(&[-1.0, 0.0], &[0.5, 0.25], &[5, 9], false).unwrap();
        let f: Vec<f64> = (0..l.len())
            .map(|i| {
                let x = l.point(i);
                2.0 * x[0] - 3.0 * x[1] + 0.5
            })
            .collect();
        let v = l.interpolate(&f, &[0.3, 1.1]).unwrap();
        assert!((v - (0.6 - 3.3 + 0.5)).abs() < 1e-12);
        assert!(l.interpolate(&f, &[1.5, 0.0]).is_none());
    }

    #[test]
    fn periodic_interpolation_wraps() {
        let l = Lattice::torus(1, 4, 0.5).unwrap();
        let f = vec![0.0, 1.0, 2.0, 3.0];
        assert!((l.interpolate(&f, &[1.75]).unwrap() - 1.5).abs() < 1e-12);
        assert!((l.interpolate(&f, &[-0.25]).unwrap() - 1.5).abs() < 1e-12);
        assert!((l.interpolate(&f, &[2.25]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ball_counts() {
        let l = Lattice::centered_box(&[0.0, 0.0], 10, 0.1).unwrap();
        let b = l.ball_nodes(&[0.0, 0.0], 0.1).unwrap();
        assert_eq!(b.len(), 5);
        assert!(l.ball_nodes(&[0.95, 0.0], 0.1).is_err());
    }
}
