//! Mild solutions of the mean-zero equation by Picard iteration on
//! `Γu = S(t)u₀ - ½N(u,u) + Φ`, with `N(u₁,u₂)(t) = ∫₀ᵗ S(t-t')∂x(u₁u₂)(t')dt'`
//! evaluated by the trapezoid rule in the frame moving with `S(t)`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convolution::in_stochastic_regime;
use crate::cutoff::eta;
use crate::error::{Error, Result};
use crate::noise::{BrownianFamily, CovarianceOp};
use crate::norms::{besov_norm, restricted_norm, xsbpq_norm, Exponent, NormSpec};
use crate::spectral::{
    apply_airy_semigroup, cis, cube, japanese, ProductPlan, SpaceTimeField, SpectralField,
    TorusGrid, ZERO,
};

/// Default `δ`; the metric is `X^{-α, α}_{p,2}` with `α = 1/2 - δ`.
pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_P: f64 = 2.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub n_max: usize,
    pub dt: f64,
    /// Starting window `T`.
    pub window: f64,
    /// Sweep cap `K`.
    pub max_sweeps: usize,
    /// Absolute tolerance on successive iterates in the metric.
    pub tolerance: f64,
    /// Fixed-point metric; its restriction is set to the window in use.
    pub metric: NormSpec,
    #[serde(default)]
    pub levels: Vec<usize>,
    #[serde(default = "default_true")]
    pub regime_check: bool,
    /// Time step used for `‖ηΦ‖` in the radius of [`adaptive_window`].
    #[serde(default = "default_radius_dt")]
    pub radius_dt: f64,
}

fn default_true() -> bool {
    true
}

fn default_radius_dt() -> f64 {
    1.0 / 256.0
}

/// Windows shorter than this many steps are a failure.
pub const MIN_WINDOW_STEPS: usize = 8;

impl SolveConfig {
    pub fn new(n_max: usize, dt: f64, window: f64) -> Self {
        let alpha = 0.5 - DEFAULT_DELTA;
        Self {
            n_max,
            dt,
            window,
            max_sweeps: 60,
            tolerance: 1e-10,
            metric: NormSpec::xsbpq(-alpha, alpha, DEFAULT_P, Exponent::Finite(2.0)),
            levels: Vec::new(),
            regime_check: true,
            radius_dt: default_radius_dt(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.metric.b.unwrap_or(0.5 - DEFAULT_DELTA)
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.n_max)
    }

    pub fn steps_for(&self, window: f64) -> usize {
        (window / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps < 2 {
            return Err(Error::param("max_sweeps", "need at least 2"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::param("tolerance", "must be positive"));
        }
        if !(self.dt > 0.0) || !(self.window > 0.0) {
            return Err(Error::param("dt/window", "must be positive"));
        }
        self.metric.validate()?;
        let b = self
            .metric
            .b
            .ok_or_else(|| Error::param("metric.b", "fixed-point metric needs b"))?;
        if b >= 0.5 {
            return Err(Error::param(
                "metric.b",
                "sharp time restriction needs b < 1/2",
            ));
        }
        if self.regime_check
            && !(in_stochastic_regime(self.metric.s, b, self.metric.p)
                && self.metric.q == Exponent::Finite(2.0))
        {
            return Err(Error::param(
                "metric",
                format!(
                    "(s, b, p, q) = ({}, {}, {}, {}) is outside s = -1/2+δ, b = 1/2-δ, (p-2)/(4p) <= δ < (p-2)/(2p), q = 2",
                    self.metric.s, b, self.metric.p, self.metric.q
                ),
            ));
        }
        if self.levels.iter().any(|&n| n > self.n_max) {
            return Err(Error::param(
                "levels",
                "truncation levels must not exceed n_max",
            ));
        }
        Ok(())
    }

    fn metric_on(&self, window: f64) -> NormSpec {
        self.metric.restricted(window)
    }
}

/// Last Picard iterate with its history.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub u: SpaceTimeField,
    pub residuals: Vec<f64>,
    pub window: f64,
    pub converged: bool,
    pub halved_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub window: f64,
    pub converged: bool,
    pub halved_count: usize,
    pub sweeps: usize,
    pub residuals: Vec<f64>,
}

impl Trajectory {
    pub fn summary(&self) -> TrajectorySummary {
        TrajectorySummary {
            window: self.window,
            converged: self.converged,
            halved_count: self.halved_count,
            sweeps: self.residuals.len(),
            residuals: self.residuals.clone(),
        }
    }
}

fn check_start(u: &SpaceTimeField) -> Result<()> {
    if u.t_lo().abs() > 1e-12 {
        return Err(Error::GridMismatch(
            "Duhamel integrals start at t = 0".into(),
        ));
    }
    Ok(())
}

/// `∫₀^{t_k} S(t_k - t')F(t')dt'` by the trapezoid rule on `e^{-in³t'}F(t')`.
pub fn duhamel_integral(f: &SpaceTimeField) -> Result<SpaceTimeField> {
    check_start(f)?;
    let grid = f.grid();
    let (dt, kt) = (f.dt(), f.n_times());
    let modes = grid.modes();
    let w: Vec<f64> = (0..modes).map(|i| cube(grid.wavenumber(i))).collect();
    let step: Vec<Complex64> = w.iter().map(|&w| cis(-w * dt)).collect();
    // z = e^{-in³t_k}, advanced by rotation and resynchronised every 64 steps
    let mut z = vec![Complex64::new(1.0, 0.0); modes];
    let mut acc = vec![ZERO; modes];
    let mut prev: Vec<Complex64> = f.slice(0).to_vec();
    let mut out = SpaceTimeField::zeros(grid, 0.0, dt, kt)?;
    for k in 1..kt {
        let resync = k % 64 == 0;
        let (src, dst) = (f.slice(k), out.slice_mut(k));
        for i in 0..modes {
            z[i] = if resync {
                cis(-w[i] * f.time(k))
            } else {
                z[i] * step[i]
            };
            let cur = src[i] * z[i];
            acc[i] += (prev[i] + cur) * (0.5 * dt);
            prev[i] = cur;
            dst[i] = acc[i] * z[i].conj();
        }
    }
    Ok(out)
}

/// `∂x(u₁u₂)` at every time sample.
pub fn pointwise_nonlinearity(u1: &SpaceTimeField, u2: &SpaceTimeField) -> Result<SpaceTimeField> {
    u1.check_same(u2)?;
    let grid = u1.grid();
    let plan = ProductPlan::new(grid);
    let modes = grid.modes();
    let mut out = u1.clone();
    let same = std::ptr::eq(u1, u2);
    out.values_mut()
        .par_chunks_mut(modes)
        .enumerate()
        .for_each_init(
            || plan.scratch(),
            |scratch, (k, slot)| {
                let a = u1.slice(k);
                let b = if same { a } else { u2.slice(k) };
                plan.derivative_of_product(a, b, slot, scratch);
            },
        );
    Ok(out)
}

/// `N(u₁, u₂)`.
pub fn duhamel_nonlinear(u1: &SpaceTimeField, u2: &SpaceTimeField) -> Result<SpaceTimeField> {
    duhamel_integral(&pointwise_nonlinearity(u1, u2)?)
}

/// `Γu = S(t)u₀ - ½N(u,u) + Φ` on the time grid of `u`; `forcing` (Φ) may be
/// longer than `u` and is read on the same samples.
pub fn duhamel_apply(
    u: &SpaceTimeField,
    u0: &SpectralField,
    forcing: Option<&SpaceTimeField>,
) -> Result<SpaceTimeField> {
    check_start(u)?;
    u.grid().check_same(&u0.grid())?;
    let n = duhamel_nonlinear(u, u)?;
    let mut out = SpaceTimeField::free_evolution(u0, 0.0, u.dt(), u.n_times())?;
    for (o, v) in out.values_mut().iter_mut().zip(n.values()) {
        *o -= v * 0.5;
    }
    if let Some(f) = forcing {
        let f = forcing_on(f, u)?;
        for (o, v) in out.values_mut().iter_mut().zip(f.values()) {
            *o += v;
        }
    }
    Ok(out)
}

fn forcing_on(f: &SpaceTimeField, like: &SpaceTimeField) -> Result<SpaceTimeField> {
    f.grid().check_same(&like.grid())?;
    if f.t_lo().abs() > 1e-12
        || (f.dt() - like.dt()).abs() > 1e-12 * like.dt()
        || f.n_times() < like.n_times()
    {
        return Err(Error::GridMismatch(format!(
            "forcing (dt {}, {} samples) does not cover the solution grid (dt {}, {} samples)",
            f.dt(),
            f.n_times(),
            like.dt(),
            like.n_times()
        )));
    }
    f.prefix(like.n_times())
}

/// Picard sweeps on a fixed window.
pub fn picard_at_window(
    u0: &SpectralField,
    forcing: Option<&SpaceTimeField>,
    cfg: &SolveConfig,
    window: f64,
) -> Result<Trajectory> {
    let grid = cfg.grid()?;
    grid.check_same(&u0.grid())?;
    let steps = cfg.steps_for(window);
    let spec = cfg.metric_on(window);
    let mut u = SpaceTimeField::zeros(grid, 0.0, cfg.dt, steps + 1)?;
    let mut residuals = Vec::new();
    for _ in 0..cfg.max_sweeps {
        let next = duhamel_apply(&u, u0, forcing)?;
        let r = restricted_norm(&next.sub(&u)?, &spec)?.value;
        residuals.push(r);
        u = next;
        if r <= cfg.tolerance {
            return Ok(Trajectory {
                u,
                residuals,
                window,
                converged: true,
                halved_count: 0,
            });
        }
        let first = residuals[0].max(cfg.tolerance);
        if !r.is_finite() || r > 1e8 * first {
            break;
        }
    }
    Ok(Trajectory {
        u,
        residuals,
        window,
        converged: false,
        halved_count: 0,
    })
}

/// Iterates `u ← Γu` from `u = 0`, halving the window whenever `K` sweeps do
/// not bring successive iterates within tolerance.
pub fn picard_solve(
    u0: &SpectralField,
    forcing: Option<&SpaceTimeField>,
    cfg: &SolveConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut window = cfg.window;
    let mut halved = 0;
    loop {
        if cfg.steps_for(window) < MIN_WINDOW_STEPS {
            return Err(Error::WindowUnderflow {
                window,
                minimum: MIN_WINDOW_STEPS as f64 * cfg.dt,
            });
        }
        let mut t = picard_at_window(u0, forcing, cfg, window)?;
        if t.converged {
            t.halved_count = halved;
            return Ok(t);
        }
        let next = window / 2.0;
        if cfg.steps_for(next) < MIN_WINDOW_STEPS {
            return Err(Error::NoContraction {
                sweeps: t.residuals.len(),
                window,
                residual: *t.residuals.last().unwrap_or(&f64::NAN),
            });
        }
        window = next;
        halved += 1;
    }
}

/// Accepted window and the contraction factors measured on the way down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowChoice {
    pub window: f64,
    pub radius: f64,
    /// `(T, κ(T))` for every window tried.
    pub factors: Vec<(f64, f64)>,
}

/// `R = 2(‖u₀‖_{ĥb^{-α}_{p,∞}} + ‖ηΦ‖_{X^{-α,α}_{p,2}}) + 1`; `ηΦ` is read
/// from `forcing` every `radius_dt` (samples past its end count as zero).
pub fn contraction_radius(
    u0: &SpectralField,
    forcing: Option<&SpaceTimeField>,
    cfg: &SolveConfig,
) -> Result<f64> {
    let alpha = cfg.alpha();
    let p = cfg.metric.p;
    let data = besov_norm(u0, &NormSpec::besov(-alpha, p, Exponent::Infinite))?;
    let noise = match forcing {
        None => 0.0,
        Some(f) => {
            let stride = ((cfg.radius_dt / f.dt()).floor() as usize).max(1);
            let horizon = ((2.0 / (f.dt() * stride as f64)).round() as usize + 1)
                .min((f.n_times() - 1) / stride + 1);
            let mut coarse = SpaceTimeField::zeros(f.grid(), 0.0, f.dt() * stride as f64, horizon)?;
            for k in 0..horizon {
                coarse.slice_mut(k).copy_from_slice(f.slice(k * stride));
            }
            // η on [0, 2] inside a window four times its length
            let weighted = coarse.time_weighted(eta);
            let n_times = ((8.0 / coarse.dt()).ceil() as usize).max(weighted.n_times());
            xsbpq_norm(
                &weighted.zero_extended(n_times),
                &NormSpec::xsbpq(-alpha, alpha, p, Exponent::Finite(2.0)),
            )?
        }
    };
    Ok(2.0 * (data + noise) + 1.0)
}

/// Halves `T` from 1 until the one-sweep contraction factor
/// `κ(T) = R·‖N(ℓ̂, ℓ̂)‖_T` is at most 1/2, where `ℓ = S(t)u₀ + Φ` on `[0,T]`
/// and `ℓ̂ = ℓ/‖ℓ‖_T`.
pub fn adaptive_window(
    u0: &SpectralField,
    forcing: Option<&SpaceTimeField>,
    cfg: &SolveConfig,
) -> Result<WindowChoice> {
    cfg.validate()?;
    let radius = contraction_radius(u0, forcing, cfg)?;
    let mut window = 1.0;
    let mut factors = Vec::new();
    loop {
        let steps = cfg.steps_for(window);
        if steps < MIN_WINDOW_STEPS {
            return Err(Error::WindowUnderflow {
                window,
                minimum: MIN_WINDOW_STEPS as f64 * cfg.dt,
            });
        }
        let spec = cfg.metric_on(window);
        let mut ell = SpaceTimeField::free_evolution(u0, 0.0, cfg.dt, steps + 1)?;
        if let Some(f) = forcing {
            ell = ell.add(&forcing_on(f, &ell)?)?;
        }
        let size = restricted_norm(&ell, &spec)?.value;
        let kappa = if size == 0.0 {
            0.0
        } else {
            let unit = ell.scaled(1.0 / size);
            radius * restricted_norm(&duhamel_nonlinear(&unit, &unit)?, &spec)?.value
        };
        factors.push((window, kappa));
        if kappa <= 0.5 {
            return Ok(WindowChoice {
                window,
                radius,
                factors,
            });
        }
        window /= 2.0;
    }
}

/// Solutions for each truncation level plus their pairwise distances.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncationStudy {
    pub levels: Vec<usize>,
    pub trajectories: Vec<Trajectory>,
    pub window: f64,
    /// `table[i][j] = ‖u^{N_i} - u^{N_j}‖_{X^{-α,α,T}_{p,2}}`.
    pub table: Vec<Vec<f64>>,
}

impl TruncationStudy {
    /// `d(N_i, N_{i+1})`.
    pub fn consecutive(&self) -> Vec<f64> {
        (0..self.levels.len().saturating_sub(1))
            .map(|i| self.table[i][i + 1])
            .collect()
    }
}

/// Solves with `u₀^N = P_{≤N}u₀` and `φ^N` for each level `N` on one common
/// window, driven by the same Brownian family.
pub fn solve_truncated_sequence(
    u0: &SpectralField,
    phi: &CovarianceOp,
    family: &BrownianFamily,
    cfg: &SolveConfig,
) -> Result<TruncationStudy> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let mut levels = cfg.levels.clone();
    if levels.is_empty() {
        levels.push(cfg.n_max);
    }
    let phi_full = crate::convolution::ito_convolution(phi, family, grid)?.field;
    let data: Vec<(SpectralField, SpaceTimeField)> = levels
        .iter()
        .map(|&n| (u0.truncated(n), phi_full.truncated(n)))
        .collect();
    let mut window = cfg.window;
    loop {
        if cfg.steps_for(window) < MIN_WINDOW_STEPS {
            return Err(Error::WindowUnderflow {
                window,
                minimum: MIN_WINDOW_STEPS as f64 * cfg.dt,
            });
        }
        let mut trajectories = Vec::with_capacity(levels.len());
        let mut ok = true;
        for (u0n, phin) in data.iter().rev() {
            let t = picard_at_window(u0n, Some(phin), cfg, window)?;
            if !t.converged {
                ok = false;
                break;
            }
            trajectories.push(t);
        }
        if ok {
            trajectories.reverse();
            let spec = cfg.metric_on(window);
            let count = levels.len();
            let mut table = vec![vec![0.0; count]; count];
            for i in 0..count {
                for j in i + 1..count {
                    let d =
                        restricted_norm(&trajectories[i].u.sub(&trajectories[j].u)?, &spec)?.value;
                    table[i][j] = d;
                    table[j][i] = d;
                }
            }
            let halved = ((cfg.window / window).log2().round()) as usize;
            for t in trajectories.iter_mut() {
                t.halved_count = halved;
            }
            return Ok(TruncationStudy {
                levels,
                trajectories,
                window,
                table,
            });
        }
        window /= 2.0;
    }
}

/// Splits `N(u,u)` by which modulation `σ₀ = ⟨τ-n³⟩`, `σ₁ = ⟨τ₁-n₁³⟩`,
/// `σ₂ = ⟨τ₂-n₂³⟩` is largest (ties to the smallest index). Needs `u` to start
/// at `t = 0`, be mean-zero, and span a window `L` with `3L/(2π)` an integer so
/// the resonance shift `3nn₁n₂` falls on the frequency grid.
pub fn second_iteration_decomposition(u: &SpaceTimeField) -> Result<[SpaceTimeField; 3]> {
    check_start(u)?;
    if (0..u.n_times()).any(|k| u.get(0, k) != ZERO) {
        return Err(Error::param("u", "must be mean-zero"));
    }
    let len = u.window_len();
    let r = 3.0 * len / (2.0 * std::f64::consts::PI);
    if (r - r.round()).abs() > 1e-9 * r.max(1.0) || r.round() < 1.0 {
        return Err(Error::param(
            "u",
            format!("window length {len} must make 3L/(2π) an integer, got {r}"),
        ));
    }
    let r = r.round() as i64;
    let view = u.tau_view();
    let grid = u.grid();
    let kt = view.len() as i64;
    let half = kt / 2;
    let m = grid.n_max() as i64;
    let scale = view.dtau() / (2.0 * std::f64::consts::PI);
    let mut pieces = [
        crate::spectral::TauView::zeros_like(u),
        crate::spectral::TauView::zeros_like(u),
        crate::spectral::TauView::zeros_like(u),
    ];
    let lam = |c: i64| japanese(c as f64 * view.dtau());
    for n in -m..=m {
        if n == 0 {
            continue;
        }
        let dn = Complex64::new(0.0, n as f64) * scale;
        for n1 in -m..=m {
            let n2 = n - n1;
            if n1 == 0 || n2 == 0 || n2.abs() > m {
                continue;
            }
            let shift = n * n1 * n2 * r;
            for m1 in 0..kt {
                let a = view.get(n1, m1 as usize);
                if a == ZERO {
                    continue;
                }
                let c1 = m1 - half;
                for m2 in 0..kt {
                    let b = view.get(n2, m2 as usize);
                    let c2 = m2 - half;
                    let c = c1 + c2 - shift;
                    let (s0, s1, s2) = (lam(c), lam(c1), lam(c2));
                    let j = if s0 >= s1 && s0 >= s2 {
                        0
                    } else if s1 >= s2 {
                        1
                    } else {
                        2
                    };
                    let slot = (c + half).rem_euclid(kt) as usize;
                    let cur = pieces[j].get(n, slot);
                    pieces[j].set(n, slot, cur + dn * a * b);
                }
            }
        }
    }
    let [p0, p1, p2] = pieces;
    Ok([
        duhamel_integral(&SpaceTimeField::from_tau_view(&p0))?,
        duhamel_integral(&SpaceTimeField::from_tau_view(&p1))?,
        duhamel_integral(&SpaceTimeField::from_tau_view(&p2))?,
    ])
}

/// Which of `σ₀, σ₁, σ₂` is largest, ties to the smallest index.
pub fn dominant_modulation(l0: f64, l1: f64, l2: f64) -> usize {
    let (s0, s1, s2) = (japanese(l0), japanese(l1), japanese(l2));
    if s0 >= s1 && s0 >= s2 {
        0
    } else if s1 >= s2 {
        1
    } else {
        2
    }
}

/// Deterministic KdV by fourth-order Runge–Kutta on `v = S(-t)u`; returns the
/// solution every `stride` steps, on the grid of `u0`.
pub fn reference_kdv(
    u0: &SpectralField,
    dt: f64,
    steps: usize,
    stride: usize,
) -> Result<SpaceTimeField> {
    if stride == 0 || !steps.is_multiple_of(stride) {
        return Err(Error::param("stride", "must divide steps"));
    }
    let grid = u0.grid();
    let plan = ProductPlan::new(grid);
    let mut scratch = plan.scratch();
    let modes = grid.modes();
    let w: Vec<f64> = grid.wavenumbers().map(cube).collect();
    let rhs = |t: f64,
               v: &[Complex64],
               out: &mut [Complex64],
               scratch: &mut crate::spectral::ProductScratch| {
        let u: Vec<Complex64> = v.iter().zip(&w).map(|(z, w)| z * cis(w * t)).collect();
        plan.derivative_of_product(&u, &u, out, scratch);
        for (o, w) in out.iter_mut().zip(&w) {
            *o *= cis(-w * t) * -0.5;
        }
    };
    let mut out = SpaceTimeField::zeros(grid, 0.0, dt * stride as f64, steps / stride + 1)?;
    let mut v = u0.coeffs().to_vec();
    out.slice_mut(0).copy_from_slice(&v);
    let (mut k1, mut k2, mut k3, mut k4) = (
        vec![ZERO; modes],
        vec![ZERO; modes],
        vec![ZERO; modes],
        vec![ZERO; modes],
    );
    let mut tmp = vec![ZERO; modes];
    for step in 0..steps {
        let t = step as f64 * dt;
        rhs(t, &v, &mut k1, &mut scratch);
        for i in 0..modes {
            tmp[i] = v[i] + k1[i] * (0.5 * dt);
        }
        rhs(t + 0.5 * dt, &tmp, &mut k2, &mut scratch);
        for i in 0..modes {
            tmp[i] = v[i] + k2[i] * (0.5 * dt);
        }
        rhs(t + 0.5 * dt, &tmp, &mut k3, &mut scratch);
        for i in 0..modes {
            tmp[i] = v[i] + k3[i] * dt;
        }
        rhs(t + dt, &tmp, &mut k4, &mut scratch);
        for i in 0..modes {
            v[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
        }
        if (step + 1) % stride == 0 {
            let tn = (step + 1) as f64 * dt;
            let u = apply_airy_semigroup(&SpectralField::from_coeffs(grid, v.clone())?, tn);
            out.slice_mut((step + 1) / stride)
                .copy_from_slice(u.coeffs());
        }
    }
    Ok(out)
}

/// `∫u² dx = 2π Σ|û(n)|²` at time index `k`.
pub fn energy(u: &SpaceTimeField, k: usize) -> f64 {
    2.0 * std::f64::consts::PI * u.slice(k).iter().map(|z| z.norm_sqr()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_brownian_family, TimeGrid};
    use crate::norms::sobolev_norm;
    use crate::spectral::nonlinearity;

    fn cfg(n_max: usize, dt: f64, window: f64) -> SolveConfig {
        SolveConfig::new(n_max, dt, window)
    }

    #[test]
    fn zero_data_converges_in_one_sweep() {
        let c = cfg(8, 0.01, 0.5);
        let u0 = SpectralField::zeros(c.grid().unwrap());
        let t = picard_solve(&u0, None, &c).unwrap();
        assert!(t.converged);
        assert_eq!(t.residuals.len(), 1);
        assert_eq!(t.u.max_abs(), 0.0);
        let zero = duhamel_apply(&t.u, &u0, None).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn first_iterate_matches_taylor_expansion() {
        // (Γ(Su₀)(Δt) - u₀)/Δt → -u₀u₀' - u₀''' with error O(Δt)
        let grid = TorusGrid::new(16).unwrap();
        let u0 = SpectralField::from_fn(grid, |n| {
            if n == 0 {
                ZERO
            } else {
                Complex64::new(1.0, 0.5) / (1.0 + (n * n) as f64)
            }
        });
        let nl = nonlinearity(&u0, &u0).unwrap();
        let target = SpectralField::from_fn(grid, |n| {
            let lin = Complex64::new(0.0, cube(n)) * u0.coeff(n);
            lin - nl.coeff(n) * 0.5
        });
        let err = |dt: f64| {
            let su = SpaceTimeField::free_evolution(&u0, 0.0, dt, 2).unwrap();
            let g = duhamel_apply(&su, &u0, None).unwrap();
            let diff = g
                .snapshot(1)
                .sub(&u0)
                .unwrap()
                .scaled(1.0 / dt)
                .sub(&target)
                .unwrap();
            sobolev_norm(&diff, -3.0)
        };
        let (e1, e2) = (err(1e-4), err(5e-5));
        assert!(e1 < 1e-2, "{e1}");
        assert!((e1 / e2 - 2.0).abs() < 0.2, "ratio {}", e1 / e2);
    }

    #[test]
    fn forcing_enters_linearly() {
        let grid = TorusGrid::new(6).unwrap();
        let fam = sample_brownian_family(6, TimeGrid::new(0.01, 20).unwrap(), 3);
        let phi = CovarianceOp::identity_off_mean(fam.grid());
        let f = crate::convolution::ito_convolution(&phi, &fam, grid)
            .unwrap()
            .field;
        let f2 = crate::convolution::ito_convolution(&phi, &fam.scaled(2.0), grid)
            .unwrap()
            .field;
        let u0 = SpectralField::cosine(grid, 1, 1.0);
        let u = SpaceTimeField::free_evolution(&u0, 0.0, 0.01, 21).unwrap();
        let det = duhamel_apply(&u, &u0, None).unwrap();
        let a = duhamel_apply(&u, &u0, Some(&f)).unwrap().sub(&det).unwrap();
        let b = duhamel_apply(&u, &u0, Some(&f2))
            .unwrap()
            .sub(&det)
            .unwrap();
        assert!(b.sub(&a.scaled(2.0)).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn duhamel_of_constant_forcing() {
        // ∫₀ᵗ e^{in³(t-t')} dt' = (e^{in³t} - 1)/(in³), trapezoid error ~ n⁶Δt²t/12
        let grid = TorusGrid::new(2).unwrap();
        let f = SpaceTimeField::from_fn(grid, 0.0, 1e-3, 1001, |n, _| {
            if n == 2 {
                Complex64::new(1.0, 0.0)
            } else {
                ZERO
            }
        })
        .unwrap();
        let d = duhamel_integral(&f).unwrap();
        let t = 1.0;
        let want = (cis(8.0 * t) - 1.0) / Complex64::new(0.0, 8.0);
        assert!((d.get(2, 1000) - want).norm() < 1e-5);
    }

    #[test]
    fn mean_zero_is_propagated() {
        let c = cfg(16, 0.005, 0.2);
        let grid = c.grid().unwrap();
        let u0 = SpectralField::cosine(grid, 1, 1.0)
            .add(&SpectralField::cosine(grid, 3, 0.3))
            .unwrap();
        let fam = sample_brownian_family(16, TimeGrid::new(0.005, 40).unwrap(), 5);
        let phi = crate::noise::build_phi_of_beta0(&fam);
        let f = crate::convolution::ito_convolution(&phi, &fam, grid)
            .unwrap()
            .field;
        let t = picard_solve(&u0, Some(&f), &c).unwrap();
        assert!(t.converged);
        assert!((0..t.u.n_times()).all(|k| t.u.get(0, k) == ZERO));
        assert!(t.u.is_hermitian());
    }

    #[test]
    fn decomposition_partitions_the_nonlinearity() {
        let grid = TorusGrid::new(5).unwrap();
        let u0 = SpectralField::from_fn(grid, |n| {
            if n == 0 {
                ZERO
            } else {
                Complex64::new(0.3, -0.2 * n as f64)
            }
        });
        let kt = 48;
        let len = 2.0 * std::f64::consts::PI;
        let u = SpaceTimeField::free_evolution(&u0, 0.0, len / kt as f64, kt)
            .unwrap()
            .time_weighted(|t| (1.0 + t).recip());
        let [a, b, c] = second_iteration_decomposition(&u).unwrap();
        let total = duhamel_nonlinear(&u, &u).unwrap();
        let sum = a.add(&b).unwrap().add(&c).unwrap();
        assert!(sum.sub(&total).unwrap().max_abs() <= 1e-12 * total.max_abs());
        for piece in [&a, &b, &c] {
            assert!((0..kt).all(|k| piece.get(0, k).norm() < 1e-15));
        }
        let bad = SpaceTimeField::free_evolution(&u0, 0.0, 0.1, 10).unwrap();
        assert!(second_iteration_decomposition(&bad).is_err());
    }

    #[test]
    fn gauge_reduction_matches_direct_solve() {
        // direct additive-noise solve with mean α₀ vs reduced solve mapped back
        let n_max = 4;
        let fine = sample_brownian_family(n_max, TimeGrid::new(1.0 / 2048.0, 256).unwrap(), 11);
        let grid = TorusGrid::new(n_max).unwrap();
        let mut u0 = SpectralField::cosine(grid, 1, 1.0);
        u0.set_coeff(0, Complex64::new(0.5, 0.0));
        let gap = |factor: usize| {
            let fam = fine.coarsen(factor).unwrap();
            let dt = fam.grid().dt;
            let mut c = cfg(n_max, dt, 0.125);
            c.regime_check = false;
            let direct_f = crate::convolution::additive_noise_convolution(&fam, grid).unwrap();
            let direct = picard_solve(&u0, Some(&direct_f), &c).unwrap();
            let (v0, phi, record) = crate::noise::gauge_reduce(&u0, &fam);
            let f = crate::convolution::ito_convolution(&phi, &fam, grid)
                .unwrap()
                .field;
            let v = picard_solve(&v0, Some(&f), &c).unwrap();
            assert_eq!(direct.window, v.window);
            let back = crate::noise::gauge_restore(&v.u, &record).unwrap();
            back.sub(&direct.u).unwrap().max_abs()
        };
        let (coarse, finer) = (gap(4), gap(1));
        assert!(finer < 2e-3, "{finer}");
        assert!(finer < coarse, "{coarse} -> {finer}");
    }

    #[test]
    fn modulation_tie_break() {
        assert_eq!(dominant_modulation(1.0, 1.0, 1.0), 0);
        assert_eq!(dominant_modulation(0.0, 2.0, 2.0), 1);
        assert_eq!(dominant_modulation(0.0, 1.0, -3.0), 2);
        assert_eq!(dominant_modulation(-5.0, 5.0, 1.0), 0);
    }

    #[test]
    fn adaptive_window_examples() {
        let c = cfg(16, 1.0 / 512.0, 1.0);
        let grid = c.grid().unwrap();
        let zero = SpectralField::zeros(grid);
        let w = adaptive_window(&zero, None, &c).unwrap();
        assert_eq!(w.window, 1.0);
        let u0 = SpectralField::from_fn(grid, |n| {
            if n == 0 {
                ZERO
            } else {
                Complex64::new(1.0 / (1 + n) as f64, 0.0)
            }
        });
        let mut prev = f64::INFINITY;
        for scale in [1.0, 2.0, 4.0] {
            let w = adaptive_window(&u0.scaled(scale), None, &c).unwrap();
            assert!(w.window <= prev);
            assert_eq!(w.window.log2().fract(), 0.0);
            prev = w.window;
        }
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(8, 0.01, 1.0);
        assert!(c.validate().is_ok());
        c.max_sweeps = 1;
        assert!(c.validate().is_err());
        let mut c = cfg(8, 0.01, 1.0);
        c.metric.s = -0.3;
        assert!(c.validate().is_err());
        c.regime_check = false;
        assert!(c.validate().is_ok());
        c.levels = vec![16];
        assert!(c.validate().is_err());
    }

    #[test]
    fn underflow_is_reported() {
        let mut c = cfg(8, 0.01, 0.05);
        c.max_sweeps = 2;
        c.tolerance = 1e-300;
        let u0 = SpectralField::cosine(c.grid().unwrap(), 1, 1.0);
        let err = picard_solve(&u0, None, &c).unwrap_err();
        assert!(
            matches!(
                err,
                Error::NoContraction { .. } | Error::WindowUnderflow { .. }
            ),
            "{err}"
        );
    }

    #[test]
    fn reference_integrator_conserves_energy() {
        let grid = TorusGrid::new(32).unwrap();
        let u0 = SpectralField::cosine(grid, 1, 1.0);
        let r = reference_kdv(&u0, 1e-4, 1000, 100).unwrap();
        let e0 = energy(&r, 0);
        for k in 0..r.n_times() {
            assert!((energy(&r, k) - e0).abs() < 1e-10 * e0);
        }
    }
}
