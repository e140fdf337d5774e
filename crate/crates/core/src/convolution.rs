//! Stochastic convolution `Φ(t) = ∫₀ᵗ S(t-t')φ(t')dW(t')` computed by a direct
//! Itô sum and by the factorization through the singular kernel
//! `(t'-r)^{-α}`, plus Monte Carlo norm statistics.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutoff::{eta, CUTOFF_NAME};
use crate::error::{Error, Result};
use crate::noise::{sample_brownian_family, BrownianFamily, CovarianceOp, PhiKind, TimeGrid};
use crate::norms::{besov_norm, restricted_norm, Exponent, NormSpec};
use crate::rng::derive_seed;
use crate::spectral::{cis, cube, SpaceTimeField, SpectralField, TorusGrid, ZERO};
use crate::stats::{fit_slope, mean_se};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ConvolutionMethod {
    Ito,
    Factorized { alpha: f64, m: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub phi: PhiKind,
    pub n_max: usize,
    pub dt: f64,
    pub steps: usize,
}

/// `Φ̂(n, t_k)` on `t_k = k·dt`, `k = 0..=steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionResult {
    pub field: SpaceTimeField,
    pub method: ConvolutionMethod,
    pub provenance: Provenance,
}

fn check_inputs(phi: &CovarianceOp, family: &BrownianFamily, grid: TorusGrid) -> Result<()> {
    phi.grid().check_same(&family.grid())?;
    if grid.n_max() > family.n_max() {
        return Err(Error::GridMismatch(format!(
            "grid needs {} modes, family has {}",
            grid.n_max(),
            family.n_max()
        )));
    }
    Ok(())
}

/// Assembles a field from per-mode series for `n = 1..=n_max`; negative modes
/// are conjugates and mode 0 comes from `zero_mode`.
fn assemble(
    grid: TorusGrid,
    tg: TimeGrid,
    rows: &[Vec<Complex64>],
    zero_mode: Option<&[f64]>,
) -> SpaceTimeField {
    let mut field = SpaceTimeField::zeros(grid, 0.0, tg.dt, tg.steps + 1).expect("valid grid");
    for k in 0..=tg.steps {
        if let Some(z) = zero_mode {
            field.set(0, k, Complex64::new(z[k], 0.0));
        }
        for (i, row) in rows.iter().enumerate() {
            let n = i as i64 + 1;
            field.set(n, k, row[k]);
            field.set(-n, k, row[k].conj());
        }
    }
    field
}

/// Left-point sum `(1/√2) Σ_{j<k} e^{in³(t_k - t_j)} φ_n(t_j) Δβ_n(t_j)` for `n ≥ 1`.
fn ito_rows(phi: &CovarianceOp, family: &BrownianFamily, n_max: usize) -> Vec<Vec<Complex64>> {
    let tg = family.grid();
    let norm = 1.0 / 2f64.sqrt();
    (1..=n_max as i64)
        .into_par_iter()
        .map(|n| {
            let w = cube(n);
            let mut row = Vec::with_capacity(tg.steps + 1);
            let mut acc = ZERO;
            row.push(ZERO);
            for j in 0..tg.steps {
                let f = phi.value(n, j);
                if f != ZERO {
                    acc += cis(-w * tg.time(j)) * f * family.increment(n, j) * norm;
                }
                row.push(acc * cis(w * tg.time(j + 1)));
            }
            row
        })
        .collect()
}

pub fn ito_convolution(
    phi: &CovarianceOp,
    family: &BrownianFamily,
    grid: TorusGrid,
) -> Result<ConvolutionResult> {
    check_inputs(phi, family, grid)?;
    let tg = family.grid();
    let rows = ito_rows(phi, family, grid.n_max());
    Ok(ConvolutionResult {
        field: assemble(grid, tg, &rows, None),
        method: ConvolutionMethod::Ito,
        provenance: Provenance {
            seed: family.seed(),
            phi: phi.kind().clone(),
            n_max: grid.n_max(),
            dt: tg.dt,
            steps: tg.steps,
        },
    })
}

/// Linear response to the full noise `W = β₀e₀ + Σ_{n≠0} β_n e_n/√2`:
/// modes `n ≠ 0` as with `φ = Id`, mean `β₀(t)/√(2π)`.
pub fn additive_noise_convolution(
    family: &BrownianFamily,
    grid: TorusGrid,
) -> Result<SpaceTimeField> {
    let phi = CovarianceOp::identity_off_mean(family.grid());
    check_inputs(&phi, family, grid)?;
    let rows = ito_rows(&phi, family, grid.n_max());
    let mean: Vec<f64> = family
        .beta0()
        .iter()
        .map(|b| b / (2.0 * PI).sqrt())
        .collect();
    Ok(assemble(grid, family.grid(), &rows, Some(&mean)))
}

/// Factorized evaluation of the same convolution:
/// `Φ = (sin πα/π) ∫₀ᵗ S(t-t')(t-t')^{α-1} Y(t') dt'` with
/// `Y(t') = ∫₀^{t'} S(t'-r)(t'-r)^{-α} φ(r) dW(r)`.
///
/// `Y` is taken at cell midpoints with the kernel integrated exactly over each
/// cell against a constant increment density (half a cell for the cell that
/// contains the midpoint); the outer kernel is integrated exactly per cell.
pub fn factorized_convolution(
    phi: &CovarianceOp,
    family: &BrownianFamily,
    grid: TorusGrid,
    alpha: f64,
    m: u32,
) -> Result<ConvolutionResult> {
    if m == 0 {
        return Err(Error::param("m", "must be at least 1"));
    }
    let lo = 1.0 / (2.0 * m as f64);
    if !(alpha > lo && alpha < 0.5) {
        return Err(Error::param(
            "alpha",
            format!("need {lo} < alpha < 1/2, got {alpha}"),
        ));
    }
    check_inputs(phi, family, grid)?;
    let tg = family.grid();
    let (dt, steps) = (tg.dt, tg.steps);
    let a1 = 1.0 - alpha;
    // inner weights per unit increment, indexed by cell distance d ≥ 1
    let inner: Vec<f64> = (0..steps)
        .map(|d| {
            if d == 0 {
                (0.5 * dt).powf(a1) / a1 / dt
            } else {
                let d = d as f64;
                (((d + 0.5) * dt).powf(a1) - ((d - 0.5) * dt).powf(a1)) / a1 / dt
            }
        })
        .collect();
    // outer weights ∫_{t_j}^{t_{j+1}} (t_k - t')^{α-1} dt', e = k - j ≥ 1
    let outer: Vec<f64> = (0..=steps)
        .map(|e| {
            if e == 0 {
                0.0
            } else {
                let e = e as f64;
                ((e * dt).powf(alpha) - ((e - 1.0) * dt).powf(alpha)) / alpha
            }
        })
        .collect();
    let c = (PI * alpha).sin() / PI;
    let norm = 1.0 / 2f64.sqrt();
    let rows: Vec<Vec<Complex64>> = (1..=grid.n_max() as i64)
        .into_par_iter()
        .map(|n| {
            let w = cube(n);
            let x: Vec<Complex64> = (0..steps)
                .map(|j| cis(-w * tg.time(j)) * phi.value(n, j) * family.increment(n, j) * norm)
                .collect();
            let z: Vec<Complex64> = (0..steps)
                .map(|j| (0..=j).map(|i| inner[j - i] * x[i]).sum())
                .collect();
            (0..=steps)
                .map(|k| {
                    let s: Complex64 = (0..k).map(|j| outer[k - j] * z[j]).sum();
                    s * c * cis(w * tg.time(k))
                })
                .collect()
        })
        .collect();
    Ok(ConvolutionResult {
        field: assemble(grid, tg, &rows, None),
        method: ConvolutionMethod::Factorized { alpha, m },
        provenance: Provenance {
            seed: family.seed(),
            phi: phi.kind().clone(),
            n_max: grid.n_max(),
            dt,
            steps,
        },
    })
}

/// Root-mean-square of `|a - b|` over all `(n, t_k)`.
pub fn rms_difference(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<f64> {
    let d = a.sub(b)?;
    let vals = d.values();
    Ok((vals.iter().map(|z| z.norm_sqr()).sum::<f64>() / vals.len() as f64).sqrt())
}

/// Whether `(s, b, p)` sits in `s = -1/2 + δ`, `b = 1/2 - δ`,
/// `(p-2)/(4p) ≤ δ < (p-2)/(2p)`. The lower end is closed so that the
/// default `(δ, p) = (0.05, 2.5)` counts as inside.
pub fn in_stochastic_regime(s: f64, b: f64, p: f64) -> bool {
    let delta = s + 0.5;
    let tol = 1e-12;
    (0.5 - b - delta).abs() < tol
        && delta >= (p - 2.0) / (4.0 * p) - tol
        && delta < (p - 2.0) / (2.0 * p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub phi: PhiKind,
    pub s: f64,
    pub b: f64,
    pub p: f64,
    pub q: Exponent,
    pub window: f64,
    pub samples: usize,
    pub seed: u64,
    pub n_max: usize,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: Vec<f64>,
    pub in_regime: bool,
    pub surrogate: bool,
    pub cutoff: String,
}

/// Monte Carlo mean of `‖ηΦ‖_{X^{s,b,T}_{p,q}}`; sample `i` uses the Brownian
/// seed `derive_seed(seed, i)`.
pub fn mc_expected_xsbpq(cfg: &McConfig) -> Result<McEstimate> {
    let spec = NormSpec::xsbpq(cfg.s, cfg.b, cfg.p, cfg.q).restricted(cfg.window);
    spec.validate()?;
    let grid = TorusGrid::new(cfg.n_max)?;
    let tg = TimeGrid::covering(cfg.window, cfg.dt)?;
    let results: Vec<Result<(f64, bool)>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let family = sample_brownian_family(cfg.n_max, tg, derive_seed(cfg.seed, i as u64));
            let phi = CovarianceOp::build(&cfg.phi, &family);
            let conv = ito_convolution(&phi, &family, grid)?;
            let r = restricted_norm(&conv.field.time_weighted(eta), &spec)?;
            Ok((r.value, r.surrogate))
        })
        .collect();
    let mut samples = Vec::with_capacity(cfg.samples);
    let mut surrogate = false;
    for r in results {
        let (v, s) = r?;
        samples.push(v);
        surrogate |= s;
    }
    let (mean, std_error) = mean_se(&samples);
    Ok(McEstimate {
        mean,
        std_error,
        samples,
        in_regime: in_stochastic_regime(cfg.s, cfg.b, cfg.p),
        surrogate,
        cutoff: CUTOFF_NAME.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuityConfig {
    pub phi: PhiKind,
    pub s: f64,
    pub p: f64,
    pub m: u32,
    pub samples: usize,
    pub seed: u64,
    pub n_max: usize,
    pub window: f64,
    /// Finest step; level `l` uses `dt_finest · 2^l`.
    pub dt_finest: f64,
    pub levels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityLevel {
    pub dt: f64,
    pub sup_moment: f64,
    pub sup_moment_se: f64,
    pub modulus: f64,
    pub modulus_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub levels: Vec<ContinuityLevel>,
    /// Fitted exponent of `E max_k ‖Φ(t_{k+1}) - Φ(t_k)‖` against `dt`.
    pub modulus_exponent: f64,
    pub regime_ok: bool,
}

/// `E sup_k ‖Φ(t_k)‖^{2m}_{ĥb^s_{p,∞}}` and `E max_k ‖Φ(t_{k+1}) - Φ(t_k)‖`
/// on nested time grids built from one fine path per sample.
pub fn continuity_study(cfg: &ContinuityConfig) -> Result<ContinuityReport> {
    if cfg.levels == 0 {
        return Err(Error::param("levels", "need at least one level"));
    }
    let grid = TorusGrid::new(cfg.n_max)?;
    let factor_max = 1usize << (cfg.levels - 1);
    let steps = ((cfg.window / cfg.dt_finest).round() as usize).max(factor_max);
    let steps = steps.div_ceil(factor_max) * factor_max;
    let tg = TimeGrid::new(cfg.dt_finest, steps)?;
    let spec = NormSpec::besov(cfg.s, cfg.p, Exponent::Infinite);
    let per_sample: Vec<Result<Vec<(f64, f64)>>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let fine = sample_brownian_family(cfg.n_max, tg, derive_seed(cfg.seed, i as u64));
            (0..cfg.levels)
                .map(|l| {
                    let fam = fine.coarsen(1 << l)?;
                    let phi = CovarianceOp::build(&cfg.phi, &fam);
                    let f = ito_convolution(&phi, &fam, grid)?.field;
                    let norms: Vec<f64> = (0..f.n_times())
                        .map(|k| besov_norm(&f.snapshot(k), &spec))
                        .collect::<Result<_>>()?;
                    let sup = norms
                        .iter()
                        .cloned()
                        .fold(0.0, f64::max)
                        .powi(2 * cfg.m as i32);
                    let mut modulus: f64 = 0.0;
                    for k in 0..f.n_times() - 1 {
                        let d = SpectralField::sub(&f.snapshot(k + 1), &f.snapshot(k))?;
                        modulus = modulus.max(besov_norm(&d, &spec)?);
                    }
                    Ok((sup, modulus))
                })
                .collect()
        })
        .collect();
    let per_sample: Vec<Vec<(f64, f64)>> = per_sample.into_iter().collect::<Result<_>>()?;
    let levels: Vec<ContinuityLevel> = (0..cfg.levels)
        .map(|l| {
            let sups: Vec<f64> = per_sample.iter().map(|v| v[l].0).collect();
            let mods: Vec<f64> = per_sample.iter().map(|v| v[l].1).collect();
            let (sup_moment, sup_moment_se) = mean_se(&sups);
            let (modulus, modulus_se) = mean_se(&mods);
            ContinuityLevel {
                dt: cfg.dt_finest * (1 << l) as f64,
                sup_moment,
                sup_moment_se,
                modulus,
                modulus_se,
            }
        })
        .collect();
    let modulus_exponent = if cfg.levels >= 2 && levels.iter().all(|l| l.modulus > 0.0) {
        let x: Vec<f64> = levels.iter().map(|l| l.dt.ln()).collect();
        let y: Vec<f64> = levels.iter().map(|l| l.modulus.ln()).collect();
        fit_slope(&x, &y)
    } else {
        0.0
    };
    Ok(ContinuityReport {
        levels,
        modulus_exponent,
        regime_ok: cfg.s * cfg.p < -1.0 && cfg.m >= 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::build_phi_of_beta0;
    use crate::stats::{correlation, skew_kurtosis};

    fn family(n_max: usize, dt: f64, steps: usize, seed: u64) -> BrownianFamily {
        sample_brownian_family(n_max, TimeGrid::new(dt, steps).unwrap(), seed)
    }

    #[test]
    fn zero_operator_gives_zero() {
        let fam = family(6, 0.01, 32, 1);
        let grid = TorusGrid::new(6).unwrap();
        let zero = CovarianceOp::build(&PhiKind::zero(), &fam);
        assert_eq!(
            ito_convolution(&zero, &fam, grid).unwrap().field.max_abs(),
            0.0
        );
        assert_eq!(
            factorized_convolution(&zero, &fam, grid, 0.3, 2)
                .unwrap()
                .field
                .max_abs(),
            0.0
        );
    }

    #[test]
    fn starts_at_zero_and_excludes_the_mean() {
        let fam = family(8, 0.01, 50, 2);
        let grid = TorusGrid::new(8).unwrap();
        let f = ito_convolution(&build_phi_of_beta0(&fam), &fam, grid)
            .unwrap()
            .field;
        assert!(f.slice(0).iter().all(|z| *z == ZERO));
        assert!((0..f.n_times()).all(|k| f.get(0, k) == ZERO));
        assert!(f.is_hermitian());
    }

    #[test]
    fn single_step_matches_formula() {
        let fam = family(3, 0.1, 2, 3);
        let grid = TorusGrid::new(3).unwrap();
        let phi = CovarianceOp::identity_off_mean(fam.grid());
        let f = ito_convolution(&phi, &fam, grid).unwrap().field;
        let n = 2i64;
        let want = (cis(8.0 * 0.2) * fam.increment(n, 0) + cis(8.0 * 0.1) * fam.increment(n, 1))
            / 2f64.sqrt();
        assert!((f.get(n, 2) - want).norm() < 1e-14);
    }

    #[test]
    fn negated_noise_cancels() {
        let fam = family(5, 0.01, 40, 4);
        let grid = TorusGrid::new(5).unwrap();
        let phi = CovarianceOp::identity_off_mean(fam.grid());
        let a = ito_convolution(&phi, &fam, grid).unwrap().field;
        let b = ito_convolution(&phi, &fam.scaled(-1.0), grid)
            .unwrap()
            .field;
        assert_eq!(a.add(&b).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let fam = family(4, 0.01, 16, 5);
        let other = family(4, 0.02, 16, 5);
        let grid = TorusGrid::new(4).unwrap();
        let phi = CovarianceOp::identity_off_mean(other.grid());
        assert!(matches!(
            ito_convolution(&phi, &fam, grid),
            Err(Error::GridMismatch(_))
        ));
        let phi = CovarianceOp::identity_off_mean(fam.grid());
        assert!(ito_convolution(&phi, &fam, TorusGrid::new(5).unwrap()).is_err());
        assert!(factorized_convolution(&phi, &fam, grid, 0.2, 2).is_err());
        assert!(factorized_convolution(&phi, &fam, grid, 0.5, 2).is_err());
        assert!(factorized_convolution(&phi, &fam, grid, 0.3, 2).is_ok());
    }

    #[test]
    fn increments_after_s_are_uncorrelated_with_the_past() {
        let grid = TorusGrid::new(3).unwrap();
        let (ks, kt) = (16usize, 32usize);
        let pairs: Vec<(Complex64, Complex64)> = (0..10_000u64)
            .into_par_iter()
            .map(|s| {
                let fam = family(3, 1.0 / 32.0, 32, s);
                let f = ito_convolution(&build_phi_of_beta0(&fam), &fam, grid)
                    .unwrap()
                    .field;
                let n = 3i64;
                let (ts, tt) = (f.time(ks), f.time(kt));
                (
                    f.get(n, ks),
                    f.get(n, kt) - cis(27.0 * (tt - ts)) * f.get(n, ks),
                )
            })
            .collect();
        let a: Vec<f64> = pairs.iter().map(|p| p.0.re).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1.re).collect();
        let r = correlation(&a, &b);
        // standard error of a null correlation is 1/sqrt(M)
        assert!(r.abs() <= 3.0 / (pairs.len() as f64).sqrt(), "corr {r}");
    }

    #[test]
    fn real_part_is_gaussian() {
        let grid = TorusGrid::new(4).unwrap();
        let xs: Vec<f64> = (0..10_000u64)
            .into_par_iter()
            .map(|s| {
                let fam = family(4, 1.0 / 16.0, 16, s);
                ito_convolution(&build_phi_of_beta0(&fam), &fam, grid)
                    .unwrap()
                    .field
                    .get(4, 16)
                    .re
            })
            .collect();
        let (sk, ku) = skew_kurtosis(&xs);
        assert!(sk.abs() < 0.1 && ku.abs() < 0.2, "skew {sk} kurt {ku}");
    }

    #[test]
    fn factorized_agrees_on_smooth_limit() {
        // identity covariance, low modes: both schemes approximate the same integral
        let grid = TorusGrid::new(2).unwrap();
        let fam = family(2, 1.0 / 512.0, 512, 6);
        let phi = CovarianceOp::identity_off_mean(fam.grid());
        let a = ito_convolution(&phi, &fam, grid).unwrap().field;
        let b = factorized_convolution(&phi, &fam, grid, 0.3, 2)
            .unwrap()
            .field;
        let scale =
            (a.values().iter().map(|z| z.norm_sqr()).sum::<f64>() / a.values().len() as f64).sqrt();
        assert!(rms_difference(&a, &b).unwrap() < 0.1 * scale);
        assert!(b.is_hermitian());
    }

    #[test]
    fn regime_flag() {
        assert!(in_stochastic_regime(-0.45, 0.45, 2.5));
        assert!(!in_stochastic_regime(-0.45, 0.4, 2.5));
        assert!(!in_stochastic_regime(-0.3, 0.3, 2.5));
        assert!(!in_stochastic_regime(-0.46, 0.46, 2.5));
    }

    #[test]
    fn zero_noise_statistics_vanish() {
        let cfg = McConfig {
            phi: PhiKind::zero(),
            s: -0.45,
            b: 0.45,
            p: 2.5,
            q: Exponent::Finite(2.0),
            window: 0.5,
            samples: 4,
            seed: 1,
            n_max: 8,
            dt: 1.0 / 32.0,
        };
        let est = mc_expected_xsbpq(&cfg).unwrap();
        assert_eq!(est.mean, 0.0);
        assert!(est.in_regime && !est.surrogate);
        let rep = continuity_study(&ContinuityConfig {
            phi: PhiKind::zero(),
            s: -0.45,
            p: 2.5,
            m: 2,
            samples: 3,
            seed: 1,
            n_max: 4,
            window: 0.25,
            dt_finest: 1.0 / 64.0,
            levels: 2,
        })
        .unwrap();
        assert!(rep
            .levels
            .iter()
            .all(|l| l.sup_moment == 0.0 && l.modulus == 0.0));
    }

    #[test]
    fn mc_is_reproducible_and_monotone_in_window() {
        let mk = |window| McConfig {
            phi: PhiKind::PhiOfBeta0,
            s: -0.45,
            b: 0.45,
            p: 2.5,
            q: Exponent::Finite(2.0),
            window,
            samples: 40,
            seed: 9,
            n_max: 16,
            dt: 1.0 / 64.0,
        };
        let a = mc_expected_xsbpq(&mk(0.5)).unwrap();
        assert_eq!(a, mc_expected_xsbpq(&mk(0.5)).unwrap());
        let b = mc_expected_xsbpq(&mk(1.0)).unwrap();
        assert!(a.mean <= b.mean);
    }
}
