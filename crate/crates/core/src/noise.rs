//! Brownian families, spatial white noise, diagonal covariance operators and
//! the gauge change of variables (Galilean shift, mean removal, random phase).

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Domain};
use crate::spectral::{cis, project_mean_zero, SpaceTimeField, SpectralField, TorusGrid, ZERO};

/// Uniform time grid `t_k = k·dt`, `k = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        if steps == 0 {
            return Err(Error::param("steps", "need at least one step"));
        }
        Ok(Self { dt, steps })
    }

    /// Grid covering `[0, horizon]` with step `dt` (horizon rounded to whole steps).
    pub fn covering(horizon: f64, dt: f64) -> Result<Self> {
        let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
        Self::new(dt, steps)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub(crate) fn check_same(&self, other: &TimeGrid) -> Result<()> {
        if self.steps != other.steps || (self.dt - other.dt).abs() > 1e-12 * self.dt {
            return Err(Error::GridMismatch(format!(
                "time grids (dt {}, {} steps) vs (dt {}, {} steps)",
                self.dt, self.steps, other.dt, other.steps
            )));
        }
        Ok(())
    }
}

/// Independent Brownian motions `β_n`, `0 ≤ n ≤ n_max`, stored as increments.
/// `β₀` is real with unit variance rate; `β_n`, `n ≥ 1`, is complex with
/// variance rate 2 split evenly between real and imaginary parts.
/// `β_{-n} = conj(β_n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianFamily {
    n_max: usize,
    grid: TimeGrid,
    seed: u64,
    /// `[n][j]`, increment over `[t_j, t_{j+1}]`.
    increments: Vec<Complex64>,
}

/// Samples the family; mode `n` uses its own substream, so the paths of a
/// mode do not depend on `n_max`.
pub fn sample_brownian_family(n_max: usize, grid: TimeGrid, seed: u64) -> BrownianFamily {
    let steps = grid.steps;
    let sd = grid.dt.sqrt();
    let mut increments = vec![ZERO; (n_max + 1) * steps];
    increments
        .par_chunks_mut(steps)
        .enumerate()
        .for_each(|(n, row)| {
            let mut rng = substream(seed, Domain::Brownian, n as u64);
            for z in row.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                if n == 0 {
                    *z = Complex64::new(re * sd, 0.0);
                } else {
                    let im: f64 = rng.sample(StandardNormal);
                    *z = Complex64::new(re * sd, im * sd);
                }
            }
        });
    BrownianFamily {
        n_max,
        grid,
        seed,
        increments,
    }
}

impl BrownianFamily {
    /// Family from explicit increments `[n][j]` for `n = 0..=n_max`.
    pub fn from_increments(
        n_max: usize,
        grid: TimeGrid,
        seed: u64,
        increments: Vec<Complex64>,
    ) -> Result<Self> {
        if increments.len() != (n_max + 1) * grid.steps {
            return Err(Error::GridMismatch(
                "increment table has the wrong size".into(),
            ));
        }
        if increments[..grid.steps].iter().any(|z| z.im != 0.0) {
            return Err(Error::param("increments", "mode 0 must be real"));
        }
        Ok(Self {
            n_max,
            grid,
            seed,
            increments,
        })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `Δβ_n(t_j)` for any `|n| ≤ n_max`.
    #[inline]
    pub fn increment(&self, n: i64, j: usize) -> Complex64 {
        let m = n.unsigned_abs() as usize;
        let z = self.increments[m * self.grid.steps + j];
        if n < 0 {
            z.conj()
        } else {
            z
        }
    }

    pub fn increments_of(&self, n: usize) -> &[Complex64] {
        &self.increments[n * self.grid.steps..(n + 1) * self.grid.steps]
    }

    /// `β_n(t_k)`, `k = 0..=steps`.
    pub fn path(&self, n: i64) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.grid.steps + 1);
        let mut acc = ZERO;
        out.push(acc);
        for j in 0..self.grid.steps {
            acc += self.increment(n, j);
            out.push(acc);
        }
        out
    }

    /// Real path `β₀(t_k)`.
    pub fn beta0(&self) -> Vec<f64> {
        self.path(0).into_iter().map(|z| z.re).collect()
    }

    /// Same paths sampled every `factor` steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.grid.steps.is_multiple_of(factor) {
            return Err(Error::param("factor", "must divide the step count"));
        }
        let steps = self.grid.steps / factor;
        let mut increments = Vec::with_capacity((self.n_max + 1) * steps);
        for n in 0..=self.n_max {
            let row = self.increments_of(n);
            increments.extend(row.chunks(factor).map(|c| c.iter().sum::<Complex64>()));
        }
        Ok(Self {
            n_max: self.n_max,
            grid: TimeGrid::new(self.grid.dt * factor as f64, steps)?,
            seed: self.seed,
            increments,
        })
    }

    /// Paths on `[0, steps·dt]`.
    pub fn prefix(&self, steps: usize) -> Result<Self> {
        if steps == 0 || steps > self.grid.steps {
            return Err(Error::param("steps", "prefix longer than family"));
        }
        let mut increments = Vec::with_capacity((self.n_max + 1) * steps);
        for n in 0..=self.n_max {
            increments.extend_from_slice(&self.increments_of(n)[..steps]);
        }
        Ok(Self {
            n_max: self.n_max,
            grid: TimeGrid::new(self.grid.dt, steps)?,
            seed: self.seed,
            increments,
        })
    }

    /// Increments multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.increments.iter_mut().for_each(|z| *z *= c);
        out
    }

    /// Modes `0..=n_max` only.
    pub fn with_modes(&self, n_max: usize) -> Result<Self> {
        if n_max > self.n_max {
            return Err(Error::param("n_max", "family has fewer modes"));
        }
        let mut out = self.clone();
        out.n_max = n_max;
        out.increments.truncate((n_max + 1) * self.grid.steps);
        Ok(out)
    }

    /// CSV rows `t,n,re,im` of the paths for `n = 0..=n_max`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,n,re,im")?;
        let paths: Vec<Vec<Complex64>> = (0..=self.n_max as i64).map(|n| self.path(n)).collect();
        for k in 0..=self.grid.steps {
            for (n, p) in paths.iter().enumerate() {
                writeln!(w, "{},{},{},{}", self.grid.time(k), n, p[k].re, p[k].im)?;
            }
        }
        Ok(())
    }
}

/// Spatial white noise on `|n| ≤ n_max`: `ŵ(0)` real standard normal, `ŵ(n)`
/// complex Gaussian with `E|ŵ(n)|² = 1`, Hermitian.
pub fn sample_spatial_white_noise(grid: TorusGrid, seed: u64) -> SpectralField {
    let half: Vec<Complex64> = (0..=grid.n_max())
        .map(|n| {
            let mut rng = substream(seed, Domain::WhiteNoise, n as u64);
            let re: f64 = rng.sample(StandardNormal);
            if n == 0 {
                Complex64::new(re, 0.0)
            } else {
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im) / 2f64.sqrt()
            }
        })
        .collect();
    SpectralField::from_nonnegative(grid, &half).expect("length matches grid")
}

/// Kind of a diagonal covariance operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiKind {
    /// `φ_n = 1` for `n ≠ 0`.
    IdentityOffMean,
    /// `φ_n(t) = e^{in c(t)}`, `c(t) = ∫₀ᵗ β₀/√(2π)`.
    PhiOfBeta0,
    /// Inner operator restricted to `0 < |n| ≤ n`.
    Truncated { n: usize, inner: Box<PhiKind> },
}

impl PhiKind {
    pub fn truncated(self, n: usize) -> Self {
        PhiKind::Truncated {
            n,
            inner: Box::new(self),
        }
    }

    /// The zero operator, as a truncation at level 0.
    pub fn zero() -> Self {
        PhiKind::IdentityOffMean.truncated(0)
    }
}

/// Diagonal multipliers `φ_n(t_k)` on a time grid; `φ₀ ≡ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceOp {
    kind: PhiKind,
    grid: TimeGrid,
    cut: Option<usize>,
    /// Phase path: `φ_n(t_k) = e^{in·shift_k}`.
    shift: Option<Arc<Vec<f64>>>,
}

/// `c(t_k) = ∫₀^{t_k} β₀/√(2π)` by the trapezoid rule.
pub fn beta0_primitive(family: &BrownianFamily) -> Vec<f64> {
    let b = family.beta0();
    let dt = family.grid().dt;
    let scale = 1.0 / (2.0 * PI).sqrt();
    let mut c = Vec::with_capacity(b.len());
    let mut acc = 0.0;
    c.push(acc);
    for w in b.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]) * scale;
        c.push(acc);
    }
    c
}

/// `φ_n(t) = e^{in c(t)}` with `c` the trapezoid primitive of `β₀/√(2π)`.
pub fn build_phi_of_beta0(family: &BrownianFamily) -> CovarianceOp {
    CovarianceOp {
        kind: PhiKind::PhiOfBeta0,
        grid: family.grid(),
        cut: None,
        shift: Some(Arc::new(beta0_primitive(family))),
    }
}

impl CovarianceOp {
    pub fn identity_off_mean(grid: TimeGrid) -> Self {
        Self {
            kind: PhiKind::IdentityOffMean,
            grid,
            cut: None,
            shift: None,
        }
    }

    /// Operator of the given kind driven by `family`'s `β₀`.
    pub fn build(kind: &PhiKind, family: &BrownianFamily) -> Self {
        match kind {
            PhiKind::IdentityOffMean => Self::identity_off_mean(family.grid()),
            PhiKind::PhiOfBeta0 => build_phi_of_beta0(family),
            PhiKind::Truncated { n, inner } => Self::build(inner, family).truncated(*n),
        }
    }

    /// `φ^N`: agrees with `self` for `0 < |n| ≤ N`, zero beyond.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            kind: self.kind.clone().truncated(n),
            grid: self.grid,
            cut: Some(self.cut.map_or(n, |c| c.min(n))),
            shift: self.shift.clone(),
        }
    }

    pub fn kind(&self) -> &PhiKind {
        &self.kind
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Largest retained `|n|`, if truncated.
    pub fn cut(&self) -> Option<usize> {
        self.cut
    }

    /// Phase path `shift_k`, when the operator is a random phase.
    pub fn shift(&self) -> Option<&[f64]> {
        self.shift.as_deref().map(|v| v.as_slice())
    }

    /// `φ_n(t_k)`.
    #[inline]
    pub fn value(&self, n: i64, k: usize) -> Complex64 {
        if n == 0 || self.cut.is_some_and(|c| n.unsigned_abs() as usize > c) {
            return ZERO;
        }
        match &self.shift {
            None => Complex64::new(1.0, 0.0),
            Some(s) => cis(n as f64 * s[k]),
        }
    }
}

/// Data needed to map reduced trajectories back to the original variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeRecord {
    pub alpha0: f64,
    pub dt: f64,
    /// `c(t_k) + α₀ t_k`.
    pub shift: Vec<f64>,
    /// `β₀(t_k)`.
    pub beta0: Vec<f64>,
}

impl GaugeRecord {
    /// Record with zero mean and `β₀ ≡ 0`.
    pub fn identity(grid: TimeGrid) -> Self {
        Self {
            alpha0: 0.0,
            dt: grid.dt,
            shift: vec![0.0; grid.steps + 1],
            beta0: vec![0.0; grid.steps + 1],
        }
    }

    fn check(&self, v: &SpaceTimeField) -> Result<()> {
        if v.t_lo().abs() > 1e-12
            || (v.dt() - self.dt).abs() > 1e-12 * self.dt
            || v.n_times() > self.shift.len()
        {
            return Err(Error::GridMismatch(format!(
                "record covers {} samples of dt {}, field has {} samples of dt {} from {}",
                self.shift.len(),
                self.dt,
                v.n_times(),
                v.dt(),
                v.t_lo()
            )));
        }
        Ok(())
    }
}

/// Reduces data for the white-noise equation to the mean-zero equation with
/// unimodular covariance: `v₀ = P_{n≠0}u₀`, and `φ_n(t) = e^{in(c(t) + α₀t)}`
/// where `α₀ = û₀(0)`. The Galilean shift rotates each noise mode by
/// `e^{inα₀t}`; with `α₀ = 0` this is exactly `φ_n = e^{in c(t)}`.
pub fn gauge_reduce(
    u0: &SpectralField,
    family: &BrownianFamily,
) -> (SpectralField, CovarianceOp, GaugeRecord) {
    let alpha0 = u0.coeff(0).re;
    let grid = family.grid();
    let beta0 = family.beta0();
    let shift: Vec<f64> = beta0_primitive(family)
        .into_iter()
        .enumerate()
        .map(|(k, c)| c + alpha0 * grid.time(k))
        .collect();
    let phi = CovarianceOp {
        kind: PhiKind::PhiOfBeta0,
        grid,
        cut: None,
        shift: Some(Arc::new(shift.clone())),
    };
    let record = GaugeRecord {
        alpha0,
        dt: grid.dt,
        shift,
        beta0,
    };
    (project_mean_zero(u0), phi, record)
}

/// `û(n,t) = e^{-in·shift(t)} v̂(n,t)` for `n ≠ 0`, `û(0,t) = α₀ + β₀(t)/√(2π)`.
pub fn gauge_restore(v: &SpaceTimeField, record: &GaugeRecord) -> Result<SpaceTimeField> {
    record.check(v)?;
    let mut out = v.clone();
    let m = v.grid().n_max() as i64;
    for k in 0..v.n_times() {
        let phase = record.shift[k];
        for n in 1..=m {
            let w = cis(-(n as f64) * phase);
            out.set(n, k, v.get(n, k) * w);
            out.set(-n, k, v.get(-n, k) * w.conj());
        }
        let mean = record.alpha0 + record.beta0[k] / (2.0 * PI).sqrt();
        out.set(0, k, Complex64::new(mean, 0.0));
    }
    Ok(out)
}

/// Inverse of [`gauge_restore`]: `v̂(n,t) = e^{in·shift(t)} û(n,t)`, `v̂(0) = 0`.
pub fn gauge_apply(u: &SpaceTimeField, record: &GaugeRecord) -> Result<SpaceTimeField> {
    record.check(u)?;
    let mut out = u.clone();
    let m = u.grid().n_max() as i64;
    for k in 0..u.n_times() {
        let phase = record.shift[k];
        for n in 1..=m {
            let w = cis(n as f64 * phase);
            out.set(n, k, u.get(n, k) * w);
            out.set(-n, k, u.get(-n, k) * w.conj());
        }
        out.set(0, k, ZERO);
    }
    Ok(out)
}
