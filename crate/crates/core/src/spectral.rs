//! Periodic Fourier grid on `[0, 2π)`, the Airy group `S(t) = e^{-t∂³}` and
//! the dealiased quadratic nonlinearity `∂x(u₁u₂)`.
//!
//! Convention: `û(n) = (2π)⁻¹∫u(x)e^{-inx}dx`, `u(x) = Σ û(n)e^{inx}`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Retained modes `|n| ≤ n_max` on the torus of period 2π.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    n_max: usize,
}

impl TorusGrid {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::param("n_max", "must be at least 1"));
        }
        Ok(Self { n_max })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Number of stored coefficients, `2 n_max + 1`.
    pub fn modes(&self) -> usize {
        2 * self.n_max + 1
    }

    /// Physical sample count used for products: a power of two ≥ 3 n_max + 2,
    /// which is above the 3/2-rule bound for `2 n_max + 1` modes.
    pub fn physical_len(&self) -> usize {
        (3 * self.n_max + 2).next_power_of_two()
    }

    /// Storage index of wavenumber `n`.
    #[inline]
    pub fn index(&self, n: i64) -> usize {
        (n + self.n_max as i64) as usize
    }

    #[inline]
    pub fn wavenumber(&self, index: usize) -> i64 {
        index as i64 - self.n_max as i64
    }

    pub fn wavenumbers(&self) -> impl Iterator<Item = i64> {
        let m = self.n_max as i64;
        -m..=m
    }

    pub fn contains(&self, n: i64) -> bool {
        n.unsigned_abs() as usize <= self.n_max
    }

    pub(crate) fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "n_max {} vs {}",
                self.n_max, other.n_max
            )));
        }
        Ok(())
    }
}

/// `⟨x⟩ = 1 + |x|`.
#[inline]
pub fn japanese(x: f64) -> f64 {
    1.0 + x.abs()
}

/// Dispersion relation `n³` in floating point (exact for |n| < 2^17).
#[inline]
pub fn cube(n: i64) -> f64 {
    let n = n as f64;
    n * n * n
}

/// `e^{iθ}`.
#[inline]
pub(crate) fn cis(theta: f64) -> Complex64 {
    let (s, c) = theta.sin_cos();
    Complex64::new(c, s)
}

/// Spatial field stored as dense Fourier coefficients over `|n| ≤ n_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            coeffs: vec![ZERO; grid.modes()],
        }
    }

    /// Coefficients for `n = -n_max..=n_max`.
    pub fn from_coeffs(grid: TorusGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.modes() {
            return Err(Error::GridMismatch(format!(
                "expected {} coefficients, got {}",
                grid.modes(),
                coeffs.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    /// Real field from its coefficients at `n = 0..=n_max`; negative modes are
    /// the conjugates and the imaginary part of `û(0)` is discarded.
    pub fn from_nonnegative(grid: TorusGrid, half: &[Complex64]) -> Result<Self> {
        if half.len() != grid.n_max() + 1 {
            return Err(Error::GridMismatch(format!(
                "expected {} coefficients, got {}",
                grid.n_max() + 1,
                half.len()
            )));
        }
        let mut field = Self::zeros(grid);
        field.coeffs[grid.index(0)] = Complex64::new(half[0].re, 0.0);
        for (n, c) in half.iter().enumerate().skip(1) {
            field.set_real_pair(n as i64, *c);
        }
        Ok(field)
    }

    /// Builds a real field from `n ↦ û(n)` evaluated at `n ≥ 0`.
    pub fn from_fn(grid: TorusGrid, f: impl FnMut(i64) -> Complex64) -> Self {
        let half: Vec<Complex64> = (0..=grid.n_max() as i64).map(f).collect();
        Self::from_nonnegative(grid, &half).expect("length matches grid")
    }

    /// `cos(k x)` scaled by `amplitude`.
    pub fn cosine(grid: TorusGrid, k: usize, amplitude: f64) -> Self {
        let mut field = Self::zeros(grid);
        if k == 0 {
            field.coeffs[grid.index(0)] = Complex64::new(amplitude, 0.0);
        } else if k <= grid.n_max() {
            field.set_real_pair(k as i64, Complex64::new(amplitude / 2.0, 0.0));
        }
        field
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// `û(n)`, zero outside the retained range.
    pub fn coeff(&self, n: i64) -> Complex64 {
        if self.grid.contains(n) {
            self.coeffs[self.grid.index(n)]
        } else {
            ZERO
        }
    }

    pub fn set_coeff(&mut self, n: i64, value: Complex64) {
        let i = self.grid.index(n);
        self.coeffs[i] = value;
    }

    /// Sets `û(n) = c` and `û(-n) = c̄` for `n ≥ 1`.
    pub fn set_real_pair(&mut self, n: i64, c: Complex64) {
        let (i, j) = (self.grid.index(n), self.grid.index(-n));
        self.coeffs[i] = c;
        self.coeffs[j] = c.conj();
    }

    /// True when `û(0) = 0` exactly.
    pub fn is_mean_zero(&self) -> bool {
        self.coeff(0) == ZERO
    }

    /// Exact Hermitian symmetry check.
    pub fn is_hermitian(&self) -> bool {
        let m = self.grid.n_max() as i64;
        self.coeff(0).im == 0.0 && (1..=m).all(|n| self.coeff(-n) == self.coeff(n).conj())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().map(|z| z * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// `P_{≤N}`: keeps `|n| ≤ cut`, same grid.
    pub fn truncated(&self, cut: usize) -> Self {
        let mut out = self.clone();
        for n in self.grid.wavenumbers() {
            if n.unsigned_abs() as usize > cut {
                out.set_coeff(n, ZERO);
            }
        }
        out
    }

    /// Same function on another grid (zero-extended or truncated).
    pub fn regridded(&self, grid: TorusGrid) -> Self {
        let mut out = Self::zeros(grid);
        for n in grid.wavenumbers() {
            out.set_coeff(n, self.coeff(n));
        }
        out
    }

    /// Values at `x_j = 2πj / len`, `len ≥ 2 n_max + 1`.
    pub fn to_physical(&self, len: usize) -> Result<Vec<Complex64>> {
        if len < self.grid.modes() {
            return Err(Error::param("len", "fewer samples than modes"));
        }
        let mut buf = vec![ZERO; len];
        for n in self.grid.wavenumbers() {
            buf[n.rem_euclid(len as i64) as usize] = self.coeff(n);
        }
        FftPlanner::new().plan_fft_inverse(len).process(&mut buf);
        Ok(buf)
    }

    /// Coefficients of samples at `x_j = 2πj / len`, truncated to `grid`.
    pub fn from_physical(grid: TorusGrid, samples: &[Complex64]) -> Result<Self> {
        let len = samples.len();
        if len < grid.modes() {
            return Err(Error::param("samples", "fewer samples than modes"));
        }
        let mut buf = samples.to_vec();
        FftPlanner::new().plan_fft_forward(len).process(&mut buf);
        let mut field = Self::zeros(grid);
        for n in grid.wavenumbers() {
            field.set_coeff(n, buf[n.rem_euclid(len as i64) as usize] / len as f64);
        }
        Ok(field)
    }

    pub fn to_json(&self) -> FieldJson {
        FieldJson {
            n_max: self.grid.n_max(),
            coeffs: (0..=self.grid.n_max() as i64)
                .map(|n| {
                    let c = self.coeff(n);
                    [c.re, c.im]
                })
                .collect(),
        }
    }

    pub fn from_json(json: &FieldJson) -> Result<Self> {
        let grid = TorusGrid::new(json.n_max)?;
        let half: Vec<Complex64> = json
            .coeffs
            .iter()
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        Self::from_nonnegative(grid, &half)
    }
}

/// Serialized real field: `coeffs[n] = [Re û(n), Im û(n)]` for `n = 0..=n_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldJson {
    pub n_max: usize,
    pub coeffs: Vec<[f64; 2]>,
}

/// `S(t)u`: multiplies `û(n)` by `e^{in³t}`.
pub fn apply_airy_semigroup(u: &SpectralField, t: f64) -> SpectralField {
    let mut out = u.clone();
    let grid = u.grid();
    out.coeffs[grid.index(0)] = u.coeff(0);
    for n in 1..=grid.n_max() as i64 {
        let phase = cis(cube(n) * t);
        out.set_coeff(n, u.coeff(n) * phase);
        out.set_coeff(-n, u.coeff(-n) * phase.conj());
    }
    out
}

/// `P_{n≠0} u`.
pub fn project_mean_zero(u: &SpectralField) -> SpectralField {
    let mut out = u.clone();
    out.set_coeff(0, ZERO);
    out
}

/// Reusable FFT plans for `∂x(u₁u₂)` on one grid.
#[derive(Clone)]
pub struct ProductPlan {
    grid: TorusGrid,
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ProductPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProductPlan")
            .field("grid", &self.grid)
            .field("len", &self.len)
            .finish()
    }
}

/// Scratch buffers for [`ProductPlan`]; one per thread.
#[derive(Debug, Default)]
pub struct ProductScratch {
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    fft: Vec<Complex64>,
}

impl ProductPlan {
    pub fn new(grid: TorusGrid) -> Self {
        let len = grid.physical_len();
        let mut planner = FftPlanner::new();
        Self {
            grid,
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn scratch(&self) -> ProductScratch {
        ProductScratch {
            a: vec![ZERO; self.len],
            b: vec![ZERO; self.len],
            fft: vec![
                ZERO;
                self.forward
                    .get_inplace_scratch_len()
                    .max(self.inverse.get_inplace_scratch_len())
            ],
        }
    }

    fn load(&self, coeffs: &[Complex64], buf: &mut [Complex64]) {
        buf.fill(ZERO);
        let m = self.grid.n_max() as i64;
        for (i, c) in coeffs.iter().enumerate() {
            let n = i as i64 - m;
            buf[n.rem_euclid(self.len as i64) as usize] = *c;
        }
    }

    /// Writes the coefficients of `∂x(ab)` (both given as dense coefficient
    /// slices over `|n| ≤ n_max`) into `out`. Products of Hermitian inputs are
    /// returned exactly Hermitian.
    pub fn derivative_of_product(
        &self,
        a: &[Complex64],
        b: &[Complex64],
        out: &mut [Complex64],
        scratch: &mut ProductScratch,
    ) {
        let modes = self.grid.modes();
        debug_assert!(a.len() == modes && b.len() == modes && out.len() == modes);
        if scratch.a.len() != self.len {
            *scratch = self.scratch();
        }
        let same = std::ptr::eq(a.as_ptr(), b.as_ptr());
        self.load(a, &mut scratch.a);
        self.inverse
            .process_with_scratch(&mut scratch.a, &mut scratch.fft);
        if same {
            for z in scratch.a.iter_mut() {
                *z = *z * *z;
            }
        } else {
            self.load(b, &mut scratch.b);
            self.inverse
                .process_with_scratch(&mut scratch.b, &mut scratch.fft);
            for (x, y) in scratch.a.iter_mut().zip(&scratch.b) {
                *x *= *y;
            }
        }
        self.forward
            .process_with_scratch(&mut scratch.a, &mut scratch.fft);
        let scale = 1.0 / self.len as f64;
        let m = self.grid.n_max() as i64;
        let hermitian = is_hermitian_slice(a, m) && (same || is_hermitian_slice(b, m));
        let at = |n: i64| scratch.a[n.rem_euclid(self.len as i64) as usize] * scale;
        out[m as usize] = ZERO;
        for n in 1..=m {
            let up = at(n) * Complex64::new(0.0, n as f64);
            out[(m + n) as usize] = up;
            out[(m - n) as usize] = if hermitian {
                up.conj()
            } else {
                at(-n) * Complex64::new(0.0, -n as f64)
            };
        }
    }
}

fn is_hermitian_slice(c: &[Complex64], m: i64) -> bool {
    let mid = m as usize;
    c[mid].im == 0.0 && (1..=mid).all(|k| c[mid - k] == c[mid + k].conj())
}

/// `∂x(u₁u₂)` with the product formed on a zero-padded grid (alias free).
pub fn nonlinearity(u1: &SpectralField, u2: &SpectralField) -> Result<SpectralField> {
    u1.grid.check_same(&u2.grid)?;
    let plan = ProductPlan::new(u1.grid);
    let mut scratch = plan.scratch();
    let mut out = SpectralField::zeros(u1.grid);
    plan.derivative_of_product(&u1.coeffs, &u2.coeffs, &mut out.coeffs, &mut scratch);
    Ok(out)
}

/// Field sampled at `t_k = t_lo + k·dt`, `k = 0..n_times`, stored time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    grid: TorusGrid,
    t_lo: f64,
    dt: f64,
    n_times: usize,
    values: Vec<Complex64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: TorusGrid, t_lo: f64, dt: f64, n_times: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", "must be positive and finite"));
        }
        if n_times == 0 {
            return Err(Error::param("n_times", "must be at least 1"));
        }
        Ok(Self {
            grid,
            t_lo,
            dt,
            n_times,
            values: vec![ZERO; grid.modes() * n_times],
        })
    }

    /// Builds the field from `(n, t) ↦ û(n, t)`.
    pub fn from_fn(
        grid: TorusGrid,
        t_lo: f64,
        dt: f64,
        n_times: usize,
        mut f: impl FnMut(i64, f64) -> Complex64,
    ) -> Result<Self> {
        let mut out = Self::zeros(grid, t_lo, dt, n_times)?;
        for k in 0..n_times {
            let t = out.time(k);
            for n in grid.wavenumbers() {
                out.set(n, k, f(n, t));
            }
        }
        Ok(out)
    }

    /// `S(t)u₀` sampled on the grid.
    pub fn free_evolution(u0: &SpectralField, t_lo: f64, dt: f64, n_times: usize) -> Result<Self> {
        let mut out = Self::zeros(u0.grid(), t_lo, dt, n_times)?;
        for k in 0..n_times {
            let s = apply_airy_semigroup(u0, out.time(k));
            out.slice_mut(k).copy_from_slice(s.coeffs());
        }
        Ok(out)
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn t_lo(&self) -> f64 {
        self.t_lo
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// Length of the periodic window `n_times · dt`.
    pub fn window_len(&self) -> f64 {
        self.n_times as f64 * self.dt
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t_lo + k as f64 * self.dt
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, n: i64, k: usize) -> Complex64 {
        if self.grid.contains(n) {
            self.values[k * self.grid.modes() + self.grid.index(n)]
        } else {
            ZERO
        }
    }

    #[inline]
    pub fn set(&mut self, n: i64, k: usize, value: Complex64) {
        let i = k * self.grid.modes() + self.grid.index(n);
        self.values[i] = value;
    }

    pub fn slice(&self, k: usize) -> &[Complex64] {
        let m = self.grid.modes();
        &self.values[k * m..(k + 1) * m]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [Complex64] {
        let m = self.grid.modes();
        &mut self.values[k * m..(k + 1) * m]
    }

    /// Spatial field at time index `k`.
    pub fn snapshot(&self, k: usize) -> SpectralField {
        SpectralField {
            grid: self.grid,
            coeffs: self.slice(k).to_vec(),
        }
    }

    pub fn mode_series(&self, n: i64) -> Vec<Complex64> {
        (0..self.n_times).map(|k| self.get(n, k)).collect()
    }

    pub(crate) fn check_same(&self, other: &Self) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        if self.n_times != other.n_times
            || (self.dt - other.dt).abs() > 1e-12 * self.dt
            || (self.t_lo - other.t_lo).abs() > 1e-12 * self.dt
        {
            return Err(Error::GridMismatch(format!(
                "time grids ({}, {}, {}) vs ({}, {}, {})",
                self.t_lo, self.dt, self.n_times, other.t_lo, other.dt, other.n_times
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|z| *z *= c);
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = self.clone();
        out.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += b);
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = self.clone();
        out.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a -= b);
        Ok(out)
    }

    /// Multiplies each time slice by `w(t_k)`.
    pub fn time_weighted(&self, w: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for k in 0..self.n_times {
            let c = w(self.time(k));
            out.slice_mut(k).iter_mut().for_each(|z| *z *= c);
        }
        out
    }

    /// First `n_times` samples.
    pub fn prefix(&self, n_times: usize) -> Result<Self> {
        if n_times == 0 || n_times > self.n_times {
            return Err(Error::param("n_times", "prefix longer than field"));
        }
        Ok(Self {
            grid: self.grid,
            t_lo: self.t_lo,
            dt: self.dt,
            n_times,
            values: self.values[..n_times * self.grid.modes()].to_vec(),
        })
    }

    /// Appends zero samples so the window holds `n_times` samples.
    pub fn zero_extended(&self, n_times: usize) -> Self {
        let mut out = self.clone();
        if n_times > self.n_times {
            out.values.resize(n_times * self.grid.modes(), ZERO);
            out.n_times = n_times;
        }
        out
    }

    /// Keeps `|n| ≤ cut`.
    pub fn truncated(&self, cut: usize) -> Self {
        let mut out = self.clone();
        let modes = self.grid.modes();
        let m = self.grid.n_max() as i64;
        for (i, z) in out.values.iter_mut().enumerate() {
            let n = (i % modes) as i64 - m;
            if n.unsigned_abs() as usize > cut {
                *z = ZERO;
            }
        }
        out
    }

    /// Same samples on another spatial grid (zero-extended or truncated).
    pub fn regridded(&self, grid: TorusGrid) -> Self {
        let mut out = Self::zeros(grid, self.t_lo, self.dt, self.n_times).expect("valid time grid");
        for k in 0..self.n_times {
            for n in grid.wavenumbers() {
                out.set(n, k, self.get(n, k));
            }
        }
        out
    }

    pub fn is_hermitian(&self) -> bool {
        (0..self.n_times).all(|k| is_hermitian_slice(self.slice(k), self.grid.n_max() as i64))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Discrete time-frequency transform in the frame moving with the Airy
    /// group: `data[n][m] = Δt Σ_k e^{-in³t_k} û(n,t_k) e^{-iλ_m t_k}` with
    /// `λ_m = (m - K/2)Δτ`, `Δτ = 2π/(KΔt)`; the full frequency is `τ = n³ + λ_m`.
    pub fn tau_view(&self) -> TauView {
        let k_len = self.n_times;
        let fft = FftPlanner::new().plan_fft_forward(k_len);
        let dtau = 2.0 * PI / (k_len as f64 * self.dt);
        let half = (k_len / 2) as i64;
        let modes = self.grid.modes();
        let mut data = vec![ZERO; modes * k_len];
        // mode-major copy in time blocks; the field itself is time-major
        const BLOCK: usize = 64;
        for k0 in (0..k_len).step_by(BLOCK) {
            let k1 = (k0 + BLOCK).min(k_len);
            for i in 0..modes {
                let row = &mut data[i * k_len..(i + 1) * k_len];
                for (k, x) in row.iter_mut().enumerate().take(k1).skip(k0) {
                    *x = self.values[k * modes + i];
                }
            }
        }
        data.par_chunks_mut(k_len)
            .enumerate()
            .for_each(|(idx, row)| {
                let w = cube(self.grid.wavenumber(idx));
                // e^{-in³t_k} by rotation, resynchronised every block
                let step = cis(-w * self.dt);
                let mut z = ZERO;
                for (k, v) in row.iter_mut().enumerate() {
                    if k % BLOCK == 0 {
                        z = cis(-w * self.time(k));
                    }
                    *v *= z;
                    z *= step;
                }
                fft.process(row);
                row.rotate_right(half as usize);
                for (m, v) in row.iter_mut().enumerate() {
                    *v *= self.dt;
                    if self.t_lo != 0.0 {
                        *v *= cis(-((m as i64 - half) as f64 * dtau) * self.t_lo);
                    }
                }
            });
        TauView {
            grid: self.grid,
            t_lo: self.t_lo,
            dt: self.dt,
            len: k_len,
            dtau,
            data,
        }
    }

    /// Inverse of [`SpaceTimeField::tau_view`].
    pub fn from_tau_view(view: &TauView) -> Self {
        let k_len = view.len;
        let fft = FftPlanner::new().plan_fft_inverse(k_len);
        let half = (k_len / 2) as i64;
        let mut out = Self::zeros(view.grid, view.t_lo, view.dt, k_len).expect("valid view");
        let mut buf = vec![ZERO; k_len];
        for (idx, n) in view.grid.wavenumbers().enumerate() {
            let row = view.row(idx);
            for (m, v) in row.iter().enumerate() {
                let c = m as i64 - half;
                let lambda = c as f64 * view.dtau;
                buf[c.rem_euclid(k_len as i64) as usize] = v * cis(lambda * view.t_lo) / view.dt;
            }
            fft.process(&mut buf);
            let w = cube(n);
            for (k, b) in buf.iter().enumerate() {
                let t = out.time(k);
                out.set(n, k, b / k_len as f64 * cis(w * t));
            }
        }
        out
    }

    pub fn to_json(&self) -> TrajectoryJson {
        TrajectoryJson {
            n_max: self.grid.n_max(),
            t_lo: self.t_lo,
            dt: self.dt,
            n_times: self.n_times,
            values: (0..self.n_times)
                .map(|k| {
                    (0..=self.grid.n_max() as i64)
                        .map(|n| {
                            let c = self.get(n, k);
                            [c.re, c.im]
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn from_json(json: &TrajectoryJson) -> Result<Self> {
        let grid = TorusGrid::new(json.n_max)?;
        if json.values.len() != json.n_times {
            return Err(Error::GridMismatch(
                "values length differs from n_times".into(),
            ));
        }
        let mut out = Self::zeros(grid, json.t_lo, json.dt, json.n_times)?;
        for (k, row) in json.values.iter().enumerate() {
            let half: Vec<Complex64> = row.iter().map(|c| Complex64::new(c[0], c[1])).collect();
            let f = SpectralField::from_nonnegative(grid, &half)?;
            out.slice_mut(k).copy_from_slice(f.coeffs());
        }
        Ok(out)
    }

    /// CSV rows `t,n,re,im` for `n = 0..=n_max`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,n,re,im")?;
        for k in 0..self.n_times {
            for n in 0..=self.grid.n_max() as i64 {
                let c = self.get(n, k);
                writeln!(w, "{},{},{},{}", self.time(k), n, c.re, c.im)?;
            }
        }
        Ok(())
    }
}

/// Serialized real space-time field; `values[k][n]` for `n = 0..=n_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryJson {
    pub n_max: usize,
    pub t_lo: f64,
    pub dt: f64,
    pub n_times: usize,
    pub values: Vec<Vec<[f64; 2]>>,
}

/// Time-frequency coefficients of a [`SpaceTimeField`]; rows indexed by mode,
/// columns by `λ_m = (m - len/2)·dtau`, the distance `τ - n³`.
#[derive(Clone, Debug, PartialEq)]
pub struct TauView {
    grid: TorusGrid,
    t_lo: f64,
    dt: f64,
    len: usize,
    dtau: f64,
    data: Vec<Complex64>,
}

impl TauView {
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dtau(&self) -> f64 {
        self.dtau
    }

    /// `λ_m`.
    pub fn lambda(&self, m: usize) -> f64 {
        (m as i64 - (self.len / 2) as i64) as f64 * self.dtau
    }

    /// Column index with `λ_m = 0`.
    pub fn center(&self) -> usize {
        self.len / 2
    }

    pub fn row(&self, mode_index: usize) -> &[Complex64] {
        &self.data[mode_index * self.len..(mode_index + 1) * self.len]
    }

    pub fn row_mut(&mut self, mode_index: usize) -> &mut [Complex64] {
        &mut self.data[mode_index * self.len..(mode_index + 1) * self.len]
    }

    /// Coefficient at wavenumber `n`, column `m`.
    pub fn get(&self, n: i64, m: usize) -> Complex64 {
        self.data[self.grid.index(n) * self.len + m]
    }

    pub fn set(&mut self, n: i64, m: usize, value: Complex64) {
        let i = self.grid.index(n) * self.len + m;
        self.data[i] = value;
    }

    /// Zero view with the time metadata of `field`.
    pub fn zeros_like(field: &SpaceTimeField) -> Self {
        Self {
            grid: field.grid,
            t_lo: field.t_lo,
            dt: field.dt,
            len: field.n_times,
            dtau: 2.0 * PI / (field.n_times as f64 * field.dt),
            data: vec![ZERO; field.grid.modes() * field.n_times],
        }
    }
}
