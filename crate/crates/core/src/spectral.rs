//! Periodic grids and pseudo-spectral field arithmetic.
//!
//! Values are stored row-major with the last axis fastest. Fourier
//! coefficients are normalised as `f̂ = FFT(f)/N_pts`, so the zero mode is the
//! mean. Odd derivatives drop the Nyquist mode; even symbols (Laplacian,
//! Sobolev weights, Helmholtz) keep it.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vec3;

pub type Hat = Vec<Complex64>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

struct GridInner {
    dim: usize,
    n: usize,
    extent: f64,
    dealias: bool,
    npts: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    ks2: Vec<f64>,
    kd: Vec<Vec<f64>>,
    modes: Vec<[i64; 3]>,
    mask: Vec<bool>,
}

/// Periodic box `[0, L)^d` sampled at `n` points per axis.
#[derive(Clone)]
pub struct SpectralGrid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("dim", &self.dim())
            .field("n", &self.n())
            .field("extent", &self.extent())
            .field("dealias", &self.dealias())
            .finish()
    }
}

impl PartialEq for SpectralGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim() == other.dim()
            && self.n() == other.n()
            && self.extent() == other.extent()
            && self.dealias() == other.dealias()
    }
}

impl SpectralGrid {
    pub fn new(dim: usize, n: usize, extent: f64, dealias: bool) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::domain(format!("dimension must be 2 or 3 (got {dim})")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::domain(format!(
                "points per axis must be even and >= 8 (got {n})"
            )));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::domain("extent must be positive"));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let npts = n.pow(dim as u32);
        let scale = 2.0 * std::f64::consts::PI / extent;
        let half = (n / 2) as i64;
        let keep = ((n - 1) / 3) as i64;
        let mut ks2 = vec![0.0; npts];
        let mut kd = vec![vec![0.0; npts]; dim];
        let mut modes = vec![[0i64; 3]; npts];
        let mut mask = vec![true; npts];
        for p in 0..npts {
            let mut rem = p;
            let mut m = [0i64; 3];
            for axis in (0..dim).rev() {
                let j = (rem % n) as i64;
                rem /= n;
                m[axis] = if j < half { j } else { j - n as i64 };
            }
            let mut s = 0.0;
            for axis in 0..dim {
                let k = m[axis] as f64 * scale;
                s += k * k;
                kd[axis][p] = if m[axis] == -half { 0.0 } else { k };
                if m[axis].abs() > keep {
                    mask[p] = false;
                }
            }
            ks2[p] = s;
            modes[p] = m;
        }
        Ok(SpectralGrid {
            inner: Arc::new(GridInner {
                dim,
                n,
                extent,
                dealias,
                npts,
                fwd,
                inv,
                ks2,
                kd,
                modes,
                mask,
            }),
        })
    }

    /// `[0, 2π)^d` with dealiasing on.
    pub fn periodic(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, n, 2.0 * std::f64::consts::PI, true)
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }
    pub fn n(&self) -> usize {
        self.inner.n
    }
    pub fn extent(&self) -> f64 {
        self.inner.extent
    }
    pub fn dealias(&self) -> bool {
        self.inner.dealias
    }
    pub fn npts(&self) -> usize {
        self.inner.npts
    }
    pub fn dx(&self) -> f64 {
        self.inner.extent / self.inner.n as f64
    }
    /// `|Ω| = L^d`.
    pub fn volume(&self) -> f64 {
        self.inner.extent.powi(self.inner.dim as i32)
    }
    pub fn ks2(&self) -> &[f64] {
        &self.inner.ks2
    }
    /// First-derivative wavenumbers along `axis` (zero at Nyquist).
    pub fn kd(&self, axis: usize) -> &[f64] {
        &self.inner.kd[axis]
    }
    /// Integer mode indices of coefficient `p` (unused axes are zero).
    pub fn mode(&self, p: usize) -> [i64; 3] {
        self.inner.modes[p]
    }
    /// Whether coefficient `p` survives the 2/3-rule mask.
    pub fn kept(&self, p: usize) -> bool {
        self.inner.mask[p]
    }

    /// Physical coordinates of grid point `p` (unused axes are zero).
    pub fn coords(&self, p: usize) -> Vec3 {
        let n = self.n();
        let dx = self.dx();
        let mut x = [0.0; 3];
        let mut rem = p;
        for axis in (0..self.dim()).rev() {
            x[axis] = (rem % n) as f64 * dx;
            rem /= n;
        }
        x
    }

    pub fn same_as(&self, other: &SpectralGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Interface(format!(
                "grid mismatch: {self:?} vs {other:?}"
            )))
        }
    }

    fn transform(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n();
        let npts = self.npts();
        fft.process(buf);
        let mut tmp = vec![ZERO; 0];
        for axis in 0..self.dim() - 1 {
            let stride = n.pow((self.dim() - 1 - axis) as u32);
            let block = n * stride;
            tmp.resize(block, ZERO);
            for start in (0..npts).step_by(block) {
                for off in 0..stride {
                    for j in 0..n {
                        tmp[off * n + j] = buf[start + off + j * stride];
                    }
                }
                fft.process(&mut tmp);
                for off in 0..stride {
                    for j in 0..n {
                        buf[start + off + j * stride] = tmp[off * n + j];
                    }
                }
            }
        }
    }

    pub fn forward(&self, f: &[f64]) -> Hat {
        debug_assert_eq!(f.len(), self.npts());
        let mut buf: Hat = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.inner.fwd);
        let s = 1.0 / self.npts() as f64;
        for c in &mut buf {
            *c *= s;
        }
        buf
    }

    pub fn inverse(&self, h: &[Complex64]) -> Vec<f64> {
        debug_assert_eq!(h.len(), self.npts());
        let mut buf = h.to_vec();
        self.transform(&mut buf, &self.inner.inv);
        buf.into_iter().map(|c| c.re).collect()
    }

    pub fn deriv_hat(&self, h: &[Complex64], axis: usize) -> Hat {
        h.iter()
            .zip(self.kd(axis))
            .map(|(c, &k)| Complex64::new(-k * c.im, k * c.re))
            .collect()
    }

    pub fn lap_hat(&self, h: &[Complex64]) -> Hat {
        h.iter().zip(self.ks2()).map(|(c, &k2)| -k2 * c).collect()
    }

    /// `Σ_j i k_j v̂_j`.
    pub fn div_hat(&self, v: &[Hat]) -> Hat {
        let mut out = vec![ZERO; self.npts()];
        for (axis, comp) in v.iter().enumerate() {
            for ((o, c), &k) in out.iter_mut().zip(comp).zip(self.kd(axis)) {
                *o += Complex64::new(-k * c.im, k * c.re);
            }
        }
        out
    }

    /// Leray projection of a vector field in Fourier space.
    pub fn leray_hat(&self, v: &mut [Hat]) {
        let dim = self.dim();
        for p in 0..self.npts() {
            let mut kk = 0.0;
            let mut kv = ZERO;
            for (axis, comp) in v.iter().enumerate().take(dim) {
                let k = self.kd(axis)[p];
                kk += k * k;
                kv += k * comp[p];
            }
            if kk > 0.0 {
                for (axis, comp) in v.iter_mut().enumerate().take(dim) {
                    let k = self.kd(axis)[p];
                    comp[p] -= kv * (k / kk);
                }
            }
        }
    }

    /// Applies the 2/3-rule mask when dealiasing is enabled.
    pub fn dealias_hat(&self, h: &mut [Complex64]) {
        if !self.dealias() {
            return;
        }
        for (c, &keep) in h.iter_mut().zip(&self.inner.mask) {
            if !keep {
                *c = ZERO;
            }
        }
    }

    /// Real-space dealiasing round trip.
    pub fn dealias_values(&self, f: &[f64]) -> Vec<f64> {
        if !self.dealias() {
            return f.to_vec();
        }
        let mut h = self.forward(f);
        self.dealias_hat(&mut h);
        self.inverse(&h)
    }

    /// `Σ (1+|ξ|²)^k |f̂|²`, without the volume factor.
    pub fn weighted_power(&self, h: &[Complex64], k: u32) -> f64 {
        h.iter()
            .zip(self.ks2())
            .map(|(c, &k2)| (1.0 + k2).powi(k as i32) * c.norm_sqr())
            .sum()
    }

    /// Squared discrete `H^k` norm from coefficients.
    pub fn sobolev_sq_hat(&self, h: &[Complex64], k: u32) -> f64 {
        self.volume() * self.weighted_power(h, k)
    }

    /// Squared `H^k` seminorm-like quantity `|Ω|Σ(1+|ξ|²)^k|ξ|²|f̂|²`, i.e.
    /// `‖∇f‖²_{H^k}` in the multiplier convention.
    pub fn grad_sobolev_sq_hat(&self, h: &[Complex64], k: u32) -> f64 {
        self.volume()
            * h.iter()
                .zip(self.ks2())
                .map(|(c, &k2)| (1.0 + k2).powi(k as i32) * k2 * c.norm_sqr())
                .sum::<f64>()
    }

    /// Discrete `L²` inner product `|Ω| Σ Re(â conj(b̂))`.
    pub fn inner_hat(&self, a: &[Complex64], b: &[Complex64]) -> f64 {
        self.volume() * a.iter().zip(b).map(|(x, y)| (x * y.conj()).re).sum::<f64>()
    }

    /// Solves `(a − bΔ)x̂ = r̂` mode by mode.
    pub fn helmholtz_hat(&self, a: f64, b: f64, rhs: &[Complex64]) -> Result<Hat> {
        if !(a > 0.0) || !(b >= 0.0) {
            return Err(Error::domain(format!(
                "Helmholtz solve needs a > 0 and b >= 0 (got a={a}, b={b})"
            )));
        }
        Ok(rhs
            .iter()
            .zip(self.ks2())
            .map(|(c, &k2)| c / (a + b * k2))
            .collect())
    }
}

/// Seeded smooth real field: Gaussian coefficients on `|m|_∞ ≤ kmax`,
/// normalised to unit max-norm and scaled by `amplitude`.
pub fn random_smooth(grid: &SpectralGrid, seed: u64, kmax: usize, amplitude: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = vec![ZERO; grid.npts()];
    for (p, c) in h.iter_mut().enumerate() {
        let m = grid.mode(p);
        if m.iter().all(|v| v.unsigned_abs() as usize <= kmax) && m != [0, 0, 0] {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *c = Complex64::new(re, im);
        }
    }
    let mut v = grid.inverse(&h);
    let mx = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if mx > 0.0 {
        for x in &mut v {
            *x *= amplitude / mx;
        }
    }
    ScalarField {
        grid: grid.clone(),
        values: v,
    }
}

// ---------------------------------------------------------------------------
// Fields

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: SpectralGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &SpectralGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.npts() {
            return Err(Error::Interface(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.npts()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("field values must be finite"));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn zeros(grid: &SpectralGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &SpectralGrid, c: f64) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![c; grid.npts()],
        }
    }

    pub fn from_fn(grid: &SpectralGrid, f: impl Fn(Vec3) -> f64) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: (0..grid.npts()).map(|p| f(grid.coords(p))).collect(),
        }
    }

    pub fn from_hat(grid: &SpectralGrid, h: &[Complex64]) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: grid.inverse(h),
        }
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn hat(&self) -> Hat {
        self.grid.forward(&self.values)
    }

    pub fn derivative(&self, axis: usize) -> ScalarField {
        let h = self.grid.deriv_hat(&self.hat(), axis);
        Self::from_hat(&self.grid, &h)
    }

    pub fn gradient(&self) -> VectorField {
        let h = self.hat();
        VectorField {
            grid: self.grid.clone(),
            comps: (0..self.grid.dim())
                .map(|a| self.grid.inverse(&self.grid.deriv_hat(&h, a)))
                .collect(),
        }
    }

    pub fn laplacian(&self) -> ScalarField {
        Self::from_hat(&self.grid, &self.grid.lap_hat(&self.hat()))
    }

    pub fn helmholtz_solve(&self, a: f64, b: f64) -> Result<ScalarField> {
        let x = self.grid.helmholtz_hat(a, b, &self.hat())?;
        Ok(Self::from_hat(&self.grid, &x))
    }

    pub fn dealiased(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.grid.dealias_values(&self.values),
        }
    }

    /// Discrete `H^k` norm with multiplier `(1+|ξ|²)^{k/2}`.
    pub fn sobolev_norm(&self, k: i32) -> Result<f64> {
        if k < 0 {
            return Err(Error::domain(format!("Sobolev order must be >= 0 (got {k})")));
        }
        Ok(self.grid.sobolev_sq_hat(&self.hat(), k as u32).sqrt())
    }

    pub fn l2_norm(&self) -> f64 {
        self.grid.sobolev_sq_hat(&self.hat(), 0).sqrt()
    }

    pub fn inner(&self, other: &ScalarField) -> f64 {
        self.grid.inner_hat(&self.hat(), &other.hat())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Rectangle-rule quadrature, exact for trigonometric polynomials.
    pub fn integral(&self) -> f64 {
        self.mean() * self.grid.volume()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a - b)
    }
    pub fn scale(&self, s: f64) -> ScalarField {
        self.map(|v| v * s)
    }
    pub fn shift(&self, c: f64) -> ScalarField {
        self.map(|v| v + c)
    }
    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: SpectralGrid,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: &SpectralGrid, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != grid.dim() {
            return Err(Error::Interface(format!(
                "vector field has {} components on a {}-d grid",
                comps.len(),
                grid.dim()
            )));
        }
        for c in &comps {
            ScalarField::new(grid, c.clone())?;
        }
        Ok(VectorField {
            grid: grid.clone(),
            comps,
        })
    }

    pub fn zeros(grid: &SpectralGrid) -> Self {
        VectorField {
            grid: grid.clone(),
            comps: vec![vec![0.0; grid.npts()]; grid.dim()],
        }
    }

    pub fn from_fn(grid: &SpectralGrid, f: impl Fn(Vec3) -> Vec3) -> Self {
        let mut comps = vec![vec![0.0; grid.npts()]; grid.dim()];
        for p in 0..grid.npts() {
            let v = f(grid.coords(p));
            for (a, c) in comps.iter_mut().enumerate() {
                c[p] = v[a];
            }
        }
        VectorField {
            grid: grid.clone(),
            comps,
        }
    }

    pub fn from_scalars(comps: Vec<ScalarField>) -> Result<Self> {
        let grid = comps
            .first()
            .ok_or_else(|| Error::Interface("empty component list".into()))?
            .grid
            .clone();
        VectorField::new(&grid, comps.into_iter().map(|c| c.values).collect())
    }

    pub fn from_hats(grid: &SpectralGrid, hats: &[Hat]) -> Self {
        VectorField {
            grid: grid.clone(),
            comps: hats.iter().map(|h| grid.inverse(h)).collect(),
        }
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }
    pub fn comps(&self) -> &[Vec<f64>] {
        &self.comps
    }
    pub fn comps_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.comps
    }
    pub fn component(&self, axis: usize) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.comps[axis].clone(),
        }
    }
    /// Point value padded to three components.
    pub fn at(&self, p: usize) -> Vec3 {
        let mut v = [0.0; 3];
        for (a, c) in self.comps.iter().enumerate() {
            v[a] = c[p];
        }
        v
    }

    pub fn hats(&self) -> Vec<Hat> {
        self.comps.iter().map(|c| self.grid.forward(c)).collect()
    }

    pub fn divergence(&self) -> ScalarField {
        ScalarField::from_hat(&self.grid, &self.grid.div_hat(&self.hats()))
    }

    pub fn laplacian(&self) -> VectorField {
        let hats: Vec<Hat> = self.hats().iter().map(|h| self.grid.lap_hat(h)).collect();
        Self::from_hats(&self.grid, &hats)
    }

    pub fn leray_project(&self) -> VectorField {
        let mut hats = self.hats();
        self.grid.leray_hat(&mut hats);
        Self::from_hats(&self.grid, &hats)
    }

    pub fn helmholtz_solve(&self, a: f64, b: f64) -> Result<VectorField> {
        let hats = self
            .hats()
            .iter()
            .map(|h| self.grid.helmholtz_hat(a, b, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_hats(&self.grid, &hats))
    }

    /// `Σ_j ‖v_j‖²_{H^k}`, then square-rooted.
    pub fn sobolev_norm(&self, k: i32) -> Result<f64> {
        if k < 0 {
            return Err(Error::domain(format!("Sobolev order must be >= 0 (got {k})")));
        }
        Ok(self
            .hats()
            .iter()
            .map(|h| self.grid.sobolev_sq_hat(h, k as u32))
            .sum::<f64>()
            .sqrt())
    }

    pub fn l2_norm(&self) -> f64 {
        self.sobolev_norm(0).unwrap_or(0.0)
    }

    pub fn inner(&self, other: &VectorField) -> f64 {
        self.hats()
            .iter()
            .zip(other.hats().iter())
            .map(|(a, b)| self.grid.inner_hat(a, b))
            .sum()
    }

    /// Pointwise maximum of the Euclidean length.
    pub fn max_abs(&self) -> f64 {
        (0..self.grid.npts())
            .map(|p| self.comps.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> Vec<f64> {
        self.comps
            .iter()
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    fn zip(&self, other: &VectorField, f: impl Fn(f64, f64) -> f64) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        }
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        self.zip(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &VectorField) -> VectorField {
        self.zip(other, |a, b| a - b)
    }
    pub fn scale(&self, s: f64) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            comps: self
                .comps
                .iter()
                .map(|c| c.iter().map(|v| v * s).collect())
                .collect(),
        }
    }
    /// Multiplies every component by a scalar field.
    pub fn mul_scalar(&self, s: &ScalarField) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            comps: self
                .comps
                .iter()
                .map(|c| c.iter().zip(s.values()).map(|(a, b)| a * b).collect())
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Snapshots

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotFormat {
    /// `RHSF`, u32 version, u32 dim, u32 n, f64 extent, u32 ncomp, then
    /// `ncomp·n^dim` f64 values, component-major; all little-endian.
    #[default]
    Binary,
    /// `# dim=…,points_per_axis=…,extent=…,components=…` then one row per
    /// grid point.
    Csv,
}

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"RHSF";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub dim: usize,
    pub points_per_axis: usize,
    pub extent: f64,
    pub components: Vec<Vec<f64>>,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Interface(format!("snapshot I/O: {e}"))
}

pub fn write_snapshot(
    path: &Path,
    grid: &SpectralGrid,
    components: &[&[f64]],
    format: SnapshotFormat,
) -> Result<()> {
    for c in components {
        if c.len() != grid.npts() {
            return Err(Error::Interface("snapshot component length mismatch".into()));
        }
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    match format {
        SnapshotFormat::Binary => {
            w.write_all(SNAPSHOT_MAGIC).map_err(io_err)?;
            for v in [SNAPSHOT_VERSION, grid.dim() as u32, grid.n() as u32] {
                w.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
            w.write_all(&grid.extent().to_le_bytes()).map_err(io_err)?;
            w.write_all(&(components.len() as u32).to_le_bytes())
                .map_err(io_err)?;
            for c in components {
                for v in c.iter() {
                    w.write_all(&v.to_le_bytes()).map_err(io_err)?;
                }
            }
        }
        SnapshotFormat::Csv => {
            writeln!(
                w,
                "# dim={},points_per_axis={},extent={:e},components={}",
                grid.dim(),
                grid.n(),
                grid.extent(),
                components.len()
            )
            .map_err(io_err)?;
            for p in 0..grid.npts() {
                let row: Vec<String> = components.iter().map(|c| format!("{:e}", c[p])).collect();
                writeln!(w, "{}", row.join(",")).map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_snapshot(path: &Path, format: SnapshotFormat) -> Result<Snapshot> {
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    match format {
        SnapshotFormat::Binary => {
            let mut bytes = Vec::new();
            r.read_to_end(&mut bytes).map_err(io_err)?;
            if bytes.len() < 28 || &bytes[0..4] != SNAPSHOT_MAGIC {
                return Err(Error::Interface("not a snapshot file".into()));
            }
            let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
            if u32_at(4) != SNAPSHOT_VERSION {
                return Err(Error::Interface("unsupported snapshot version".into()));
            }
            let dim = u32_at(8) as usize;
            let n = u32_at(12) as usize;
            let extent = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
            let ncomp = u32_at(24) as usize;
            let npts = n.pow(dim as u32);
            if bytes.len() != 28 + 8 * npts * ncomp {
                return Err(Error::Interface("truncated snapshot".into()));
            }
            let vals: Vec<f64> = bytes[28..]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Snapshot {
                dim,
                points_per_axis: n,
                extent,
                components: vals.chunks(npts.max(1)).map(|c| c.to_vec()).collect(),
            })
        }
        SnapshotFormat::Csv => {
            let mut lines = r.lines();
            let header = lines
                .next()
                .ok_or_else(|| Error::Interface("empty snapshot".into()))?
                .map_err(io_err)?;
            let mut dim = 0;
            let mut n = 0;
            let mut extent = 0.0;
            let mut ncomp = 0;
            for kv in header.trim_start_matches('#').trim().split(',') {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Interface(format!("bad header entry {kv}")))?;
                let bad = |_| Error::Interface(format!("bad header value {kv}"));
                match k {
                    "dim" => dim = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                    "points_per_axis" => {
                        n = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                    }
                    "extent" => {
                        extent = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
                    }
                    "components" => {
                        ncomp = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                    }
                    _ => {}
                }
            }
            let mut components = vec![Vec::new(); ncomp];
            for line in lines {
                let line = line.map_err(io_err)?;
                for (c, tok) in components.iter_mut().zip(line.split(',')) {
                    c.push(
                        tok.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Interface(format!("bad value: {e}")))?,
                    );
                }
            }
            Ok(Snapshot {
                dim,
                points_per_axis: n,
                extent,
                components,
            })
        }
    }
}
