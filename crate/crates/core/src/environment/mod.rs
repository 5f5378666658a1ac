//! Random stationary coefficient fields on a periodic torus and the two
//! Hamiltonian families built from them:
//!
//! * power model `H(p, y) = a(y) |p|^q - V(y)`
//! * quadratic-drift model `H(p, y) = p·A(y)p + b(y)·p - V(y)`
//!
//! with `A = σᵀσ / 2` in both cases.

mod bounds;
mod io;
pub(crate) mod sample;

pub use bounds::{compute_kmu, local_bounds, local_bounds_at, weak_coercivity_diagnostic, LocalBounds, WeakCoercivityReport};
pub use io::{export_coefficients, import_coefficients, parse_env_spec};
pub use sample::{bump_profile, sample_environment};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Constant,
    ShotNoise,
    SmoothedCheckerboard,
    SpectralField,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HamiltonianKind {
    Power,
    QuadraticDrift,
}

/// Amplitudes and shapes of the random fields. Fluctuating fields are
/// driven by a stationary field `f(y)` in `[-1, 1]`:
/// `a = a_mean (1 + a_amp f)`, `V = v_base + v_amp (1 + f) / 2`,
/// `σ = (1 + sigma_amp f) S0`, `b_k = drift_k + drift_amp f_k`.
/// For the shot-noise model `V = v_base + Σ_i W(y - z_i)` with
/// `W(x) = bump_amplitude (1 - |x|²/bump_radius²)³` inside the bump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub a_mean: f64,
    pub a_amp: f64,
    pub v_base: f64,
    pub v_amp: f64,
    /// `S0 = sigma_scale * I` unless `sigma_matrix` is given.
    pub sigma_scale: f64,
    pub sigma_matrix: Option<Vec<Vec<f64>>>,
    pub sigma_amp: f64,
    pub drift: Vec<f64>,
    pub drift_amp: f64,
    /// Cell size of the checkerboard and length scale of the spectral field.
    pub correlation_length: f64,
    pub spectral_modes: usize,
    pub bump_radius: f64,
    pub bump_amplitude: f64,
    /// Expected number of bumps per unit volume.
    pub intensity: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            a_mean: 1.0,
            a_amp: 0.0,
            v_base: 0.0,
            v_amp: 0.0,
            sigma_scale: 0.0,
            sigma_matrix: None,
            sigma_amp: 0.0,
            drift: Vec::new(),
            drift_amp: 0.0,
            correlation_length: 1.0,
            spectral_modes: 48,
            bump_radius: 1.0,
            bump_amplitude: 0.0,
            intensity: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub dimension: usize,
    pub model: ModelKind,
    /// Torus period `L`.
    pub period: f64,
    /// Grid spacing `h`; `L / h` must be an integer.
    pub spacing: f64,
    pub hamiltonian: HamiltonianKind,
    pub q: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default)]
    pub params: ModelParams,
    #[serde(default)]
    pub seed: u64,
}

impl EnvSpec {
    /// Constant power-model environment `H = a|p|^q - V` without diffusion.
    pub fn constant_power(dim: usize, q: f64, a: f64, v: f64) -> Self {
        EnvSpec {
            dimension: dim,
            model: ModelKind::Constant,
            period: 4.0,
            spacing: 0.25,
            hamiltonian: HamiltonianKind::Power,
            q,
            lambda1: a.max(1.0),
            lambda2: 0.0,
            params: ModelParams {
                a_mean: a,
                v_base: v,
                ..ModelParams::default()
            },
            seed: 0,
        }
    }

    pub fn nodes_per_axis(&self) -> Result<usize> {
        let r = self.period / self.spacing;
        let n = r.round();
        if !(self.spacing > 0.0) || !(self.period > 0.0) || n < 1.0 || (r - n).abs() > 1e-9 * r.max(1.0) {
            return Err(Error::config(
                "spacing",
                format!("period/spacing = {r} is not a positive integer"),
            ));
        }
        Ok(n as usize)
    }

    /// Base diffusion factor `S0` as a `d × d` row-major matrix.
    pub fn sigma_base(&self) -> Result<[[f64; MAX_DIM]; MAX_DIM]> {
        let d = self.dimension;
        let mut s = [[0.0; MAX_DIM]; MAX_DIM];
        match &self.params.sigma_matrix {
            Some(m) => {
                if m.len() != d || m.iter().any(|r| r.len() != d) {
                    return Err(Error::config("params.sigma_matrix", format!("must be {d}x{d}")));
                }
                for i in 0..d {
                    for j in 0..d {
                        s[i][j] = m[i][j];
                    }
                }
            }
            None => {
                for (i, row) in s.iter_mut().enumerate().take(d) {
                    row[i] = self.params.sigma_scale;
                }
            }
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if !(1..=3).contains(&d) {
            return Err(Error::config("dimension", "must be 1, 2 or 3"));
        }
        self.nodes_per_axis()?;
        let p = &self.params;
        if !(self.q >= 1.0) || !self.q.is_finite() {
            return Err(Error::config("q", "exponent must be > 1 (q = 1 only without diffusion)"));
        }
        if self.hamiltonian == HamiltonianKind::QuadraticDrift && self.q != 2.0 {
            return Err(Error::config("q", "the quadratic-drift model has q = 2"));
        }
        if !(self.lambda1 >= 1.0) {
            return Err(Error::config("lambda1", "must be >= 1"));
        }
        if !(self.lambda2 >= 0.0) {
            return Err(Error::config("lambda2", "must be >= 0"));
        }
        let nonneg = [
            ("params.a_amp", p.a_amp),
            ("params.v_base", p.v_base),
            ("params.v_amp", p.v_amp),
            ("params.sigma_scale", p.sigma_scale),
            ("params.sigma_amp", p.sigma_amp),
            ("params.drift_amp", p.drift_amp),
            ("params.bump_amplitude", p.bump_amplitude),
            ("params.intensity", p.intensity),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(k, format!("must be a finite nonnegative number, got {v}")));
            }
        }
        if !(p.a_mean > 0.0) {
            return Err(Error::config("params.a_mean", "must be positive"));
        }
        if p.a_amp >= 1.0 {
            return Err(Error::config("params.a_amp", "must be < 1 to keep a > 0"));
        }
        if p.sigma_amp >= 1.0 {
            return Err(Error::config("params.sigma_amp", "must be < 1"));
        }
        if !p.drift.is_empty() && p.drift.len() != d {
            return Err(Error::config("params.drift", format!("must have {d} components")));
        }
        if !(p.correlation_length > 0.0) {
            return Err(Error::config("params.correlation_length", "must be positive"));
        }
        match self.model {
            ModelKind::SmoothedCheckerboard => {
                let r = self.period / p.correlation_length;
                if (r - r.round()).abs() > 1e-9 * r.max(1.0) || r.round() < 1.0 {
                    return Err(Error::config(
                        "params.correlation_length",
                        "period must be an integer multiple of the checkerboard cell",
                    ));
                }
            }
            ModelKind::ShotNoise => {
                if p.bump_amplitude > 0.0 && !(p.bump_radius > 0.0 && p.bump_radius < self.period / 2.0) {
                    return Err(Error::config("params.bump_radius", "must lie in (0, period/2)"));
                }
            }
            ModelKind::SpectralField => {
                if p.spectral_modes == 0 {
                    return Err(Error::config("params.spectral_modes", "must be positive"));
                }
            }
            ModelKind::Constant => {}
        }
        let s0 = self.sigma_base()?;
        let sigma_zero = (0..d).all(|i| (0..d).all(|j| s0[i][j] == 0.0));
        if self.q == 1.0 && !sigma_zero {
            return Err(Error::config("q", "q = 1 is only supported when sigma vanishes"));
        }
        Ok(())
    }
}

/// Coefficients interpolated at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalCoeffs {
    pub a: f64,
    pub v: f64,
    pub b: [f64; MAX_DIM],
    pub sigma: [[f64; MAX_DIM]; MAX_DIM],
    pub amat: [[f64; MAX_DIM]; MAX_DIM],
}

/// Global extremes of a coefficient set; `lambda_*` are eigenvalues of `A`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extremes {
    pub a_min: f64,
    pub a_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub drift_max: f64,
}

/// The Hamiltonian family together with its exponent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HamiltonianModel {
    pub kind: HamiltonianKind,
    pub q: f64,
    pub dim: usize,
}

impl HamiltonianModel {
    #[inline]
    pub fn eval(&self, c: &LocalCoeffs, p: &[f64]) -> f64 {
        let d = self.dim;
        match self.kind {
            HamiltonianKind::Power => {
                let n2: f64 = p[..d].iter().map(|x| x * x).sum();
                let np = if self.q == 2.0 { n2 } else { n2.sqrt().powf(self.q) };
                c.a * np - c.v
            }
            HamiltonianKind::QuadraticDrift => {
                let mut s = -c.v;
                for i in 0..d {
                    let mut ap = 0.0;
                    for j in 0..d {
                        ap += c.amat[i][j] * p[j];
                    }
                    s += p[i] * ap + c.b[i] * p[i];
                }
                s
            }
        }
    }

    /// Gradient `D_p H`.
    #[inline]
    pub fn grad(&self, c: &LocalCoeffs, p: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match self.kind {
            HamiltonianKind::Power => {
                let n: f64 = p[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
                if n == 0.0 {
                    out[..d].iter_mut().for_each(|o| *o = 0.0);
                    return;
                }
                let f = c.a * self.q * n.powf(self.q - 2.0);
                for i in 0..d {
                    out[i] = f * p[i];
                }
            }
            HamiltonianKind::QuadraticDrift => {
                for i in 0..d {
                    let mut ap = 0.0;
                    for j in 0..d {
                        ap += c.amat[i][j] * p[j];
                    }
                    out[i] = 2.0 * ap + c.b[i];
                }
            }
        }
    }

    /// Bound on `|∂H/∂p_k|` over `|p| <= p_max`.
    pub fn axis_speed_bound(&self, c: &LocalCoeffs, p_max: f64, k: usize) -> f64 {
        match self.kind {
            HamiltonianKind::Power => {
                if self.q == 1.0 {
                    c.a
                } else {
                    c.a * self.q * p_max.powf(self.q - 1.0)
                }
            }
            HamiltonianKind::QuadraticDrift => {
                let row: f64 = (0..self.dim).map(|j| c.amat[k][j] * c.amat[k][j]).sum::<f64>().sqrt();
                2.0 * row * p_max + c.b[k].abs()
            }
        }
    }
}

/// A sampled environment on the torus. Node `i` of `lattice` carries the
/// coefficients at physical position `lattice.point(i) - offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSet {
    pub spec: EnvSpec,
    pub seed: u64,
    pub lattice: Lattice,
    pub a: Vec<f64>,
    pub v: Vec<f64>,
    /// `d` components per node.
    pub b: Vec<f64>,
    /// `d × d` row-major per node.
    pub sigma: Vec<f64>,
    /// `A = σᵀσ / 2`, `d × d` row-major per node.
    pub amat: Vec<f64>,
    pub offset: [f64; MAX_DIM],
    /// Realized bump centers of the shot-noise model (physical coordinates).
    pub bump_centers: Vec<[f64; MAX_DIM]>,
}

impl CoefficientSet {
    pub fn dim(&self) -> usize {
        self.spec.dimension
    }

    pub fn period(&self) -> f64 {
        self.spec.period
    }

    pub fn spacing(&self) -> f64 {
        self.spec.spacing
    }

    pub fn model(&self) -> HamiltonianModel {
        HamiltonianModel {
            kind: self.spec.hamiltonian,
            q: self.spec.q,
            dim: self.spec.dimension,
        }
    }

    pub fn sigma_vanishes(&self) -> bool {
        self.sigma.iter().all(|s| *s == 0.0)
    }

    pub fn drift_vanishes(&self) -> bool {
        self.b.iter().all(|s| *s == 0.0)
    }

    /// Coefficients at the physical point `y` (wrapped, multilinear).
    pub fn at(&self, y: &[f64]) -> LocalCoeffs {
        let d = self.dim();
        let mut x = [0.0; MAX_DIM];
        for k in 0..d {
            x[k] = y[k] + self.offset[k];
        }
        let mut c = LocalCoeffs::default();
        let mut buf = [0.0; 1];
        self.lattice.interpolate_into(&self.a, 1, &x, &mut buf);
        c.a = buf[0];
        self.lattice.interpolate_into(&self.v, 1, &x, &mut buf);
        c.v = buf[0];
        let mut bb = [0.0; MAX_DIM];
        self.lattice.interpolate_into(&self.b, d, &x, &mut bb);
        c.b = bb;
        let mut s = [0.0; MAX_DIM * MAX_DIM];
        self.lattice.interpolate_into(&self.sigma, d * d, &x, &mut s);
        for i in 0..d {
            for j in 0..d {
                c.sigma[i][j] = s[i * d + j];
            }
        }
        c.amat = half_gram(&c.sigma, d);
        c
    }

    /// Coefficients stored at node `i` (no interpolation).
    pub fn node(&self, i: usize) -> LocalCoeffs {
        let d = self.dim();
        let mut c = LocalCoeffs {
            a: self.a[i],
            v: self.v[i],
            ..LocalCoeffs::default()
        };
        for k in 0..d {
            c.b[k] = self.b[i * d + k];
        }
        for r in 0..d {
            for s in 0..d {
                c.sigma[r][s] = self.sigma[i * d * d + r * d + s];
                c.amat[r][s] = self.amat[i * d * d + r * d + s];
            }
        }
        c
    }

    /// Physical position of node `i`.
    pub fn node_position(&self, i: usize) -> [f64; MAX_DIM] {
        let mut x = self.lattice.point(i);
        for k in 0..self.dim() {
            x[k] -= self.offset[k];
        }
        x
    }

    /// Global extremes of the coefficient fields over all nodes.
    pub fn extremes(&self) -> Extremes {
        let d = self.dim();
        let mut e = Extremes {
            a_min: f64::INFINITY,
            a_max: f64::NEG_INFINITY,
            v_min: f64::INFINITY,
            v_max: f64::NEG_INFINITY,
            lambda_min: f64::INFINITY,
            lambda_max: 0.0,
            drift_max: 0.0,
        };
        for i in 0..self.lattice.len() {
            e.a_min = e.a_min.min(self.a[i]);
            e.a_max = e.a_max.max(self.a[i]);
            e.v_min = e.v_min.min(self.v[i]);
            e.v_max = e.v_max.max(self.v[i]);
            let m = &self.amat[i * d * d..(i + 1) * d * d];
            e.lambda_min = e.lambda_min.min(sample::sym_eig_min(m, d));
            e.lambda_max = e.lambda_max.max(sample::sym_eig_max(m, d));
            let b = &self.b[i * d..(i + 1) * d];
            e.drift_max = e.drift_max.max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        e.lambda_min = e.lambda_min.max(0.0);
        e
    }

    /// Copy with the drift field negated.
    pub fn with_negated_drift(&self) -> CoefficientSet {
        let mut c = self.clone();
        c.b.iter_mut().for_each(|x| *x = -*x);
        c.spec.params.drift.iter_mut().for_each(|x| *x = -*x);
        c
    }
}

/// `A = σᵀσ / 2`.
pub fn half_gram(s: &[[f64; MAX_DIM]; MAX_DIM], d: usize) -> [[f64; MAX_DIM]; MAX_DIM] {
    let mut a = [[0.0; MAX_DIM]; MAX_DIM];
    for j in 0..d {
        for k in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += s[i][j] * s[i][k];
            }
            a[j][k] = 0.5 * acc;
        }
    }
    a
}

/// `H(p, y)` on interpolated coefficients.
pub fn evaluate_h(coeffs: &CoefficientSet, p: &[f64], y: &[f64]) -> f64 {
    let c = coeffs.at(y);
    coeffs.model().eval(&c, p)
}

/// Translation `τ_z`: the returned set satisfies `H'(p, y) = H(p, y + z)`.
pub fn shift(coeffs: &CoefficientSet, z: &[f64]) -> CoefficientSet {
    let d = coeffs.dim();
    let h = coeffs.spacing();
    let n = coeffs.lattice.shape[0] as i64;
    let mut rot = [0i64; MAX_DIM];
    let mut off = [0.0; MAX_DIM];
    for k in 0..d {
        let total = coeffs.offset[k] + z[k];
        let kk = (total / h).round();
        let mut r = total - kk * h;
        if r.abs() < 1e-12 * h {
            r = 0.0;
        }
        rot[k] = kk as i64;
        off[k] = r;
    }
    let mut out = coeffs.clone();
    out.offset = off;
    if rot[..d].iter().any(|r| *r != 0) {
        let l = &coeffs.lattice;
        let rotate = |src: &[f64], ncomp: usize, dst: &mut Vec<f64>| {
            for i in 0..l.len() {
                let c = l.coords(i);
                let mut s = [0usize; MAX_DIM];
                for k in 0..d {
                    s[k] = (c[k] as i64 + rot[k]).rem_euclid(n) as usize;
                }
                let j = l.index(&s);
                dst[i * ncomp..(i + 1) * ncomp].copy_from_slice(&src[j * ncomp..(j + 1) * ncomp]);
            }
        };
        rotate(&coeffs.a, 1, &mut out.a);
        rotate(&coeffs.v, 1, &mut out.v);
        rotate(&coeffs.b, d, &mut out.b);
        rotate(&coeffs.sigma, d * d, &mut out.sigma);
        rotate(&coeffs.amat, d * d, &mut out.amat);
    }
    let period = coeffs.period();
    for c in out.bump_centers.iter_mut() {
        for k in 0..d {
            c[k] = (c[k] - z[k]).rem_euclid(period);
        }
    }
    out
}
