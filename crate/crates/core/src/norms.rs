//! Dyadic Besov-type norms, Fourier–Lebesgue norms, Bourgain norms and their
//! time-restricted versions on discretized fields.

use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutoff::eta_scaled;
use crate::error::{Error, Result};
use crate::spectral::{japanese, SpaceTimeField, SpectralField, TauView};

/// Lebesgue exponent, possibly infinite. Serialized as a number or `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExponentRepr", into = "ExponentRepr")]
pub enum Exponent {
    Finite(f64),
    Infinite,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExponentRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<ExponentRepr> for Exponent {
    type Error = String;
    fn try_from(r: ExponentRepr) -> std::result::Result<Self, String> {
        match r {
            ExponentRepr::Number(x) => Ok(Exponent::Finite(x)),
            ExponentRepr::Text(s) if matches!(s.as_str(), "inf" | "infinity" | "Infinity") => {
                Ok(Exponent::Infinite)
            }
            ExponentRepr::Text(s) => Err(format!("expected a number or \"inf\", got {s:?}")),
        }
    }
}

impl From<Exponent> for ExponentRepr {
    fn from(e: Exponent) -> Self {
        match e {
            Exponent::Finite(x) => ExponentRepr::Number(x),
            Exponent::Infinite => ExponentRepr::Text("inf".into()),
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(x) => write!(f, "{x}"),
            Exponent::Infinite => f.write_str("inf"),
        }
    }
}

/// Parameters `(s, b, p, q, T)` selecting a norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSpec {
    pub s: f64,
    #[serde(default)]
    pub b: Option<f64>,
    pub p: f64,
    pub q: Exponent,
    #[serde(default)]
    pub restriction: Option<f64>,
}

impl NormSpec {
    pub fn besov(s: f64, p: f64, q: Exponent) -> Self {
        Self {
            s,
            b: None,
            p,
            q,
            restriction: None,
        }
    }

    /// `FL^{s,p}`; `p = 2` gives `H^s`.
    pub fn fourier_lebesgue(s: f64, p: f64) -> Self {
        Self {
            s,
            b: None,
            p,
            q: Exponent::Finite(p),
            restriction: None,
        }
    }

    pub fn xsb(s: f64, b: f64) -> Self {
        Self {
            s,
            b: Some(b),
            p: 2.0,
            q: Exponent::Finite(2.0),
            restriction: None,
        }
    }

    pub fn xsbpq(s: f64, b: f64, p: f64, q: Exponent) -> Self {
        Self {
            s,
            b: Some(b),
            p,
            q,
            restriction: None,
        }
    }

    pub fn restricted(mut self, window: f64) -> Self {
        self.restriction = Some(window);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::param(
                "p",
                format!("need 1 <= p < inf, got {}", self.p),
            ));
        }
        if let Exponent::Finite(q) = self.q {
            if !(q >= 1.0) || !q.is_finite() {
                return Err(Error::param("q", format!("need q >= 1, got {q}")));
            }
        }
        if !self.s.is_finite() || self.b.is_some_and(|b| !b.is_finite()) {
            return Err(Error::param("s/b", "must be finite"));
        }
        if let Some(t) = self.restriction {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::param("restriction", format!("need T > 0, got {t}")));
            }
        }
        Ok(())
    }
}

/// Pinned dyadic blocks in `|n|`: `B₀ = {|n| ≤ 1}`, `B_j = {2^{j-1} < |n| ≤ 2^j}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicPartition {
    n_max: usize,
    /// Inclusive ranges of `|n|`.
    blocks: Vec<(usize, usize)>,
}

pub const PARTITION_NAME: &str = "B0 = {|n| <= 1}, Bj = {2^(j-1) < |n| <= 2^j}, j >= 1";

impl DyadicPartition {
    pub fn new(n_max: usize) -> Self {
        let mut blocks = vec![(0, n_max.min(1))];
        let mut j = 1;
        while (1usize << (j - 1)) < n_max {
            let lo = (1usize << (j - 1)) + 1;
            let hi = (1usize << j).min(n_max);
            blocks.push((lo, hi));
            j += 1;
        }
        Self { n_max, blocks }
    }

    pub fn blocks(&self) -> &[(usize, usize)] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Block index of wavenumber `n`.
    pub fn block_of(n: i64) -> usize {
        let m = n.unsigned_abs();
        if m <= 1 {
            0
        } else {
            (u64::BITS - (m - 1).leading_zeros()) as usize
        }
    }

    /// Wavenumbers of block `j`, both signs.
    pub fn members(&self, j: usize) -> impl Iterator<Item = i64> + '_ {
        let (lo, hi) = self.blocks[j];
        (lo as i64..=hi as i64).flat_map(|m| if m == 0 { vec![0] } else { vec![-m, m] })
    }
}

/// Per-block `Σ_{B_j} ⟨n⟩^{sp} a(n)^p`.
fn block_sums(n_max: usize, s: f64, p: f64, amp: impl Fn(i64) -> f64) -> Vec<f64> {
    let part = DyadicPartition::new(n_max);
    (0..part.len())
        .map(|j| {
            part.members(j)
                .map(|n| japanese(n as f64).powf(s * p) * amp(n).powf(p))
                .sum()
        })
        .collect()
}

/// `ℓ^q_j (Σ_{B_j} ⟨n⟩^{sp} a(n)^p)^{1/p}`.
pub(crate) fn dyadic_norm(
    n_max: usize,
    s: f64,
    p: f64,
    q: Exponent,
    amp: impl Fn(i64) -> f64,
) -> f64 {
    let blocks = block_sums(n_max, s, p, amp)
        .into_iter()
        .map(|b| b.powf(1.0 / p));
    match q {
        Exponent::Infinite => blocks.fold(0.0, f64::max),
        Exponent::Finite(q) => blocks.map(|b| b.powf(q)).sum::<f64>().powf(1.0 / q),
    }
}

/// `(Σ_n ⟨n⟩^{sp} a(n)^p)^{1/p}`.
fn weighted_lp(n_max: usize, s: f64, p: f64, amp: impl Fn(i64) -> f64) -> f64 {
    let m = n_max as i64;
    (-m..=m)
        .map(|n| japanese(n as f64).powf(s * p) * amp(n).powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// `‖f‖_{ĥb^s_{p,q}}`.
pub fn besov_norm(u: &SpectralField, spec: &NormSpec) -> Result<f64> {
    spec.validate()?;
    if spec.b.is_some() {
        return Err(Error::param("b", "spatial norm takes no temporal exponent"));
    }
    Ok(dyadic_norm(u.grid().n_max(), spec.s, spec.p, spec.q, |n| {
        u.coeff(n).norm()
    }))
}

/// `‖f‖_{FL^{s,p}} = ‖⟨n⟩^s f̂‖_{ℓ^p}`; `H^s` for `p = 2`.
pub fn sobolev_fl_norms(u: &SpectralField, spec: &NormSpec) -> Result<f64> {
    spec.validate()?;
    if spec.b.is_some() {
        return Err(Error::param("b", "spatial norm takes no temporal exponent"));
    }
    Ok(weighted_lp(u.grid().n_max(), spec.s, spec.p, |n| {
        u.coeff(n).norm()
    }))
}

pub fn sobolev_norm(u: &SpectralField, s: f64) -> f64 {
    weighted_lp(u.grid().n_max(), s, 2.0, |n| u.coeff(n).norm())
}

/// `‖⟨λ⟩^b v(λ)‖_{L^q_λ}` with quadrature weight `Δλ`.
pub fn weighted_time_frequency_norm(
    row: &[Complex64],
    lambda: impl Fn(usize) -> f64,
    dl: f64,
    b: f64,
    q: Exponent,
) -> f64 {
    match q {
        Exponent::Infinite => row
            .iter()
            .enumerate()
            .map(|(m, v)| japanese(lambda(m)).powf(b) * v.norm())
            .fold(0.0, f64::max),
        Exponent::Finite(q) => {
            let sum: f64 = if q == 2.0 {
                row.iter()
                    .enumerate()
                    .map(|(m, v)| japanese(lambda(m)).powf(2.0 * b) * v.norm_sqr())
                    .sum()
            } else {
                row.iter()
                    .enumerate()
                    .map(|(m, v)| (japanese(lambda(m)).powf(b) * v.norm()).powf(q))
                    .sum()
            };
            (sum * dl).powf(1.0 / q)
        }
    }
}

/// Per-mode `‖⟨τ - n³⟩^b û(n, ·)‖_{L^q_τ}` from a tau view.
pub fn mode_profile(view: &TauView, b: f64, q: Exponent) -> Vec<f64> {
    // the λ grid is shared by every row, so the weights are tabulated once
    let weights: Vec<f64> = (0..view.len()).map(|m| view.lambda(m)).collect();
    let weights: Vec<f64> = match q {
        Exponent::Finite(2.0) => weights.iter().map(|&l| japanese(l).powf(2.0 * b)).collect(),
        _ => weights.iter().map(|&l| japanese(l).powf(b)).collect(),
    };
    let dl = view.dtau();
    (0..view.grid().modes())
        .into_par_iter()
        .map(|i| {
            let row = view.row(i);
            match q {
                Exponent::Infinite => row
                    .iter()
                    .zip(&weights)
                    .map(|(v, w)| w * v.norm())
                    .fold(0.0, f64::max),
                Exponent::Finite(2.0) => (row
                    .iter()
                    .zip(&weights)
                    .map(|(v, w)| w * v.norm_sqr())
                    .sum::<f64>()
                    * dl)
                    .sqrt(),
                Exponent::Finite(q) => (row
                    .iter()
                    .zip(&weights)
                    .map(|(v, w)| (w * v.norm()).powf(q))
                    .sum::<f64>()
                    * dl)
                    .powf(1.0 / q),
            }
        })
        .collect()
}

/// `‖u‖_{X^{s,b}}` from a precomputed tau view.
pub fn xsb_from_view(view: &TauView, s: f64, b: f64) -> f64 {
    let grid = view.grid();
    let prof = mode_profile(view, b, Exponent::Finite(2.0));
    weighted_lp(grid.n_max(), s, 2.0, |n| prof[grid.index(n)])
}

/// `‖u‖_{X^{s,b}_{p,q}}` from a precomputed tau view.
pub fn xsbpq_from_view(view: &TauView, s: f64, b: f64, p: f64, q: Exponent) -> f64 {
    let grid = view.grid();
    let prof = mode_profile(view, b, q);
    dyadic_norm(grid.n_max(), s, p, Exponent::Infinite, |n| {
        prof[grid.index(n)]
    })
}

fn temporal(spec: &NormSpec) -> Result<f64> {
    spec.validate()?;
    spec.b
        .ok_or_else(|| Error::param("b", "space-time norm needs b"))
}

/// `‖⟨n⟩^s⟨τ - n³⟩^b û(n, τ)‖_{L²_{n,τ}}`, treating the time window as one period.
pub fn xsb_norm(u: &SpaceTimeField, spec: &NormSpec) -> Result<f64> {
    let b = temporal(spec)?;
    Ok(xsb_from_view(&u.tau_view(), spec.s, b))
}

/// `sup_j ‖⟨n⟩^s⟨τ - n³⟩^b û‖_{L^p_{B_j} L^q_τ}`.
pub fn xsbpq_norm(u: &SpaceTimeField, spec: &NormSpec) -> Result<f64> {
    let b = temporal(spec)?;
    Ok(xsbpq_from_view(&u.tau_view(), spec.s, b, spec.p, spec.q))
}

/// Which space-time norm a restriction applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceTimeNorm {
    Xsb,
    Xsbpq,
}

/// Restricted norm value; `surrogate` marks the smooth-cutoff upper bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictedNorm {
    pub value: f64,
    pub surrogate: bool,
}

/// The cut-off field whose global norm stands in for the restricted norm:
/// `χ_{[0,T]}u` when `b < 1/2`, else `η_T u`. The window is zero-extended
/// to at least four times the cutoff support; samples outside the field's
/// window count as zero.
pub fn restriction_extension(u: &SpaceTimeField, window: f64, b: f64) -> (SpaceTimeField, bool) {
    let surrogate = b >= 0.5;
    let tol = 1e-9 * u.dt();
    let cut = if surrogate {
        u.time_weighted(|t| eta_scaled(t, window))
    } else {
        u.time_weighted(|t| {
            if t >= -tol && t <= window + tol {
                1.0
            } else {
                0.0
            }
        })
    };
    let modes = u.grid().modes();
    let live: Vec<usize> = (0..cut.n_times())
        .filter(|&k| {
            cut.values()[k * modes..(k + 1) * modes]
                .iter()
                .any(|z| z.norm_sqr() > 0.0)
        })
        .collect();
    let support = match (live.first(), live.last()) {
        (Some(&a), Some(&z)) => (z - a + 1) as f64 * u.dt(),
        _ => return (cut, surrogate),
    };
    let need = (4.0 * support / u.dt()).ceil() as usize;
    let n_times = cut.n_times();
    (cut.zero_extended(smooth_len(need.max(n_times))), surrogate)
}

/// Smallest `2^a 3^b 5^c >= n`, a length the FFT handles without Bluestein.
fn smooth_len(n: usize) -> usize {
    let mut best = n.next_power_of_two();
    let mut p5 = 1;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut m = p35;
            while m < n {
                m *= 2;
            }
            best = best.min(m);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

/// `‖u‖_{X^{s,b,T}_{p,q}}` via the surrogates of [`restriction_extension`].
pub fn restricted_norm(u: &SpaceTimeField, spec: &NormSpec) -> Result<RestrictedNorm> {
    restricted_norm_of(u, spec, SpaceTimeNorm::Xsbpq)
}

/// Restricted `X^{s,b}` or `X^{s,b}_{p,q}` norm.
pub fn restricted_norm_of(
    u: &SpaceTimeField,
    spec: &NormSpec,
    base: SpaceTimeNorm,
) -> Result<RestrictedNorm> {
    let b = temporal(spec)?;
    let window = spec
        .restriction
        .ok_or_else(|| Error::param("restriction", "restricted norm needs a window T"))?;
    let (ext, surrogate) = restriction_extension(u, window, b);
    let view = ext.tau_view();
    let value = match base {
        SpaceTimeNorm::Xsb => xsb_from_view(&view, spec.s, b),
        SpaceTimeNorm::Xsbpq => xsbpq_from_view(&view, spec.s, b, spec.p, spec.q),
    };
    Ok(RestrictedNorm { value, surrogate })
}

/// `‖⟨τ⟩^b f̂(τ)‖_{L^q_τ}` for a sampled function of time, window as one period.
pub fn fl_time_norm(samples: &[Complex64], dt: f64, b: f64, q: Exponent) -> f64 {
    use rustfft::FftPlanner;
    let len = samples.len();
    let mut buf = samples.to_vec();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let dtau = 2.0 * std::f64::consts::PI / (len as f64 * dt);
    let half = (len / 2) as i64;
    let row: Vec<Complex64> = (0..len)
        .map(|m| buf[(m as i64 - half).rem_euclid(len as i64) as usize] * dt)
        .collect();
    weighted_time_frequency_norm(&row, |m| (m as i64 - half) as f64 * dtau, dtau, b, q)
}

/// `C_ε` with `‖f‖_{FL^{s-ε,p}} ≤ C_ε ‖f‖_{ĥb^s_{p,∞}}` on `|n| ≤ n_max`:
/// `(Σ_j max_{B_j} ⟨n⟩^{-εp})^{1/p}`.
pub fn fl_besov_constant(eps: f64, p: f64, n_max: usize) -> f64 {
    DyadicPartition::new(n_max)
        .blocks()
        .iter()
        .map(|&(lo, _)| japanese(lo as f64).powf(-eps * p))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// Hölder constant with `‖f‖_{H^{σ}} ≤ C ‖f‖_{ĥb^{σ+gap}_{p,∞}}` on `|n| ≤ n_max`:
/// `C² = Σ_j ‖⟨n⟩^{-gap}‖²_{ℓ^{2p/(p-2)}(B_j)}`, for `p ≥ 2`. The same constant
/// bounds `X^{σ,b}` by `X^{σ+gap,b}_{p,2}`.
pub fn sobolev_besov_constant(gap: f64, p: f64, n_max: usize) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(Error::param("p", "Hölder step needs p >= 2"));
    }
    let part = DyadicPartition::new(n_max);
    let total: f64 = (0..part.len())
        .map(|j| {
            let weights = part.members(j).map(|n| japanese(n as f64).powf(-gap));
            if p == 2.0 {
                weights.fold(0.0, f64::max).powi(2)
            } else {
                let r = 2.0 * p / (p - 2.0);
                weights.map(|w| w.powf(r)).sum::<f64>().powf(2.0 / r)
            }
        })
        .sum();
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoff::eta;
    use crate::spectral::TorusGrid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const INF: Exponent = Exponent::Infinite;

    #[test]
    fn smooth_lengths() {
        assert_eq!(smooth_len(1), 1);
        assert_eq!(smooth_len(7), 8);
        assert_eq!(smooth_len(262_148), 262_440);
        for n in 1..2000 {
            let m = smooth_len(n);
            let mut r = m;
            for f in [2, 3, 5] {
                while r.is_multiple_of(f) {
                    r /= f;
                }
            }
            assert!(m >= n && r == 1);
        }
    }

    fn random_field(n_max: usize, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = TorusGrid::new(n_max).unwrap();
        let half: Vec<Complex64> = (0..=n_max)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        SpectralField::from_nonnegative(grid, &half).unwrap()
    }

    fn random_space_time(n_max: usize, n_times: usize, seed: u64) -> SpaceTimeField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = TorusGrid::new(n_max).unwrap();
        let mut f = SpaceTimeField::zeros(grid, 0.0, 0.05, n_times).unwrap();
        for z in f.values_mut() {
            *z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        f
    }

    #[test]
    fn partition_covers_each_mode_once() {
        for n_max in [1, 2, 3, 8, 9, 100, 512] {
            let part = DyadicPartition::new(n_max);
            let mut seen = vec![0; 2 * n_max + 1];
            for j in 0..part.len() {
                for n in part.members(j) {
                    assert_eq!(DyadicPartition::block_of(n), j);
                    seen[(n + n_max as i64) as usize] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "n_max {n_max}");
        }
    }

    #[test]
    fn besov_delta_and_flat_examples() {
        let grid = TorusGrid::new(8).unwrap();
        let mut delta = SpectralField::zeros(grid);
        delta.set_coeff(0, Complex64::new(1.0, 0.0));
        for (s, p) in [(0.0, 2.0), (-0.45, 2.5), (1.0, 1.0)] {
            assert_eq!(
                besov_norm(&delta, &NormSpec::besov(s, p, INF)).unwrap(),
                1.0
            );
            assert_eq!(
                sobolev_fl_norms(&delta, &NormSpec::fourier_lebesgue(s, p)).unwrap(),
                1.0
            );
        }
        let flat = SpectralField::from_fn(grid, |_| Complex64::new(1.0, 0.0));
        // blocks hold 3, 2, 4 and 8 modes; the last one wins
        let direct = [3.0f64, 2.0, 4.0, 8.0]
            .iter()
            .map(|c| c.sqrt())
            .fold(0.0, f64::max);
        let got = besov_norm(&flat, &NormSpec::besov(0.0, 2.0, INF)).unwrap();
        assert!((got - 8f64.sqrt()).abs() < 1e-14 && (got - direct).abs() < 1e-14);
        let fl = sobolev_fl_norms(&flat, &NormSpec::fourier_lebesgue(0.0, 2.0)).unwrap();
        assert!((fl - 17f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn besov_rejects_temporal_exponent() {
        let f = random_field(4, 1);
        assert!(besov_norm(&f, &NormSpec::xsb(0.0, 0.3)).is_err());
    }

    #[test]
    fn besov_is_monotone_in_p() {
        for seed in 0..100 {
            let f = random_field(64, seed);
            let a = besov_norm(&f, &NormSpec::besov(-0.3, 1.5, INF)).unwrap();
            let b = besov_norm(&f, &NormSpec::besov(-0.3, 3.0, INF)).unwrap();
            assert!(b <= a * (1.0 + 1e-12));
        }
    }

    #[test]
    fn fl_embeds_into_besov_with_computed_constant() {
        let (s, p, eps) = (-0.4, 2.5, 0.1);
        let c = fl_besov_constant(eps, p, 128);
        for seed in 0..100 {
            let f = random_field(128, seed + 1000);
            let lhs = sobolev_fl_norms(&f, &NormSpec::fourier_lebesgue(s - eps, p)).unwrap();
            let rhs = besov_norm(&f, &NormSpec::besov(s, p, INF)).unwrap();
            assert!(lhs <= c * rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn large_q_approaches_sup() {
        for seed in 0..20 {
            let f = random_field(256, seed + 2000);
            let a = besov_norm(&f, &NormSpec::besov(-0.45, 2.5, Exponent::Finite(64.0))).unwrap();
            let b = besov_norm(&f, &NormSpec::besov(-0.45, 2.5, INF)).unwrap();
            assert!(a >= b && a <= 1.05 * b);
        }
    }

    #[test]
    fn single_entry_space_time_field() {
        let grid = TorusGrid::new(2).unwrap();
        let probe = SpaceTimeField::zeros(grid, 0.0, 0.1, 32).unwrap();
        let mut view = TauView::zeros_like(&probe);
        // τ = 1 at n = 1 means λ = 0
        view.set(1, view.center(), Complex64::new(1.0, 0.0));
        let f = SpaceTimeField::from_tau_view(&view);
        for s in [-0.5, 0.0, 0.7] {
            for b in [0.0, 0.3, 0.5] {
                let want = 2f64.powf(s) * view.dtau().sqrt();
                let a = xsb_norm(&f, &NormSpec::xsb(s, b)).unwrap();
                let c = xsbpq_norm(&f, &NormSpec::xsbpq(s, b, 2.0, Exponent::Finite(2.0))).unwrap();
                assert!((a - want).abs() < 1e-12 * want);
                assert!((c - want).abs() < 1e-12 * want);
            }
        }
    }

    #[test]
    fn windowed_free_wave_concentrates_near_curve() {
        // η(t)S(t)u₀ on a window four times the cutoff support
        let grid = TorusGrid::new(4).unwrap();
        let mut u0 = SpectralField::zeros(grid);
        u0.set_real_pair(3, Complex64::new(1.0, 0.0));
        let dt = 1.0 / 64.0;
        let f = SpaceTimeField::free_evolution(&u0, -5.0, dt, 12 * 64)
            .unwrap()
            .time_weighted(eta);
        let view = f.tau_view();
        let row = view.row(grid.index(3));
        let total: f64 = row.iter().map(|z| z.norm_sqr()).sum();
        let near: f64 = row
            .iter()
            .enumerate()
            .filter(|(m, _)| view.lambda(*m).abs() <= 8.0)
            .map(|(_, z)| z.norm_sqr())
            .sum();
        assert!(near / total >= 0.9, "fraction {}", near / total);
    }

    #[test]
    fn xsbpq_below_xsb_and_embed1() {
        for seed in 0..100 {
            let f = random_space_time(16, 24, seed);
            for p in [2.0, 2.5, 4.0] {
                let x = xsb_norm(&f, &NormSpec::xsb(-0.3, 0.4)).unwrap();
                let y =
                    xsbpq_norm(&f, &NormSpec::xsbpq(-0.3, 0.4, p, Exponent::Finite(2.0))).unwrap();
                assert!(y <= x * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn embed2_and_embed3_hold_with_computed_constant() {
        let (p, delta) = (2.5, 0.05);
        let s = -0.5 + delta;
        let c = sobolev_besov_constant(2.0 * delta, p, 64).unwrap();
        for seed in 0..100 {
            let f = random_field(64, seed + 3000);
            let lhs = sobolev_norm(&f, -0.5 - delta);
            let rhs = besov_norm(&f, &NormSpec::besov(s, p, INF)).unwrap();
            assert!(lhs <= c * rhs * (1.0 + 1e-12));
            let g = random_space_time(64, 16, seed + 4000);
            let lhs = xsb_norm(&g, &NormSpec::xsb(-0.5 - delta, 0.45)).unwrap();
            let rhs = xsbpq_norm(&g, &NormSpec::xsbpq(s, 0.45, p, Exponent::Finite(2.0))).unwrap();
            assert!(lhs <= c * rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn restriction_is_identity_on_supported_fields() {
        let dt = 0.05;
        let mut f = random_space_time(6, 200, 7);
        for k in 26..200 {
            f.slice_mut(k)
                .iter_mut()
                .for_each(|z| *z = Complex64::new(0.0, 0.0));
        }
        let spec = NormSpec::xsbpq(-0.45, 0.45, 2.5, Exponent::Finite(2.0));
        let full = xsbpq_norm(&f, &spec).unwrap();
        let r = restricted_norm(&f, &spec.restricted(25.0 * dt)).unwrap();
        assert!(!r.surrogate);
        assert!((r.value - full).abs() <= 1e-12 * full);
        let whole = restricted_norm(&f, &spec.restricted(20.0)).unwrap();
        assert!((whole.value - full).abs() <= 1e-12 * full);
    }

    #[test]
    fn smooth_cutoff_is_flagged() {
        let f = random_space_time(3, 40, 8);
        let r = restricted_norm(
            &f,
            &NormSpec::xsbpq(0.0, 0.6, 2.0, Exponent::Finite(2.0)).restricted(0.5),
        )
        .unwrap();
        assert!(r.surrogate);
        assert!(restricted_norm(&f, &NormSpec::xsb(0.0, 0.3)).is_err());
    }

    #[test]
    fn fl_time_norm_of_constant_window() {
        let v = vec![Complex64::new(1.0, 0.0); 16];
        // all mass at τ = 0: value = (16 dt)·sqrt(Δτ)
        let dt = 0.125;
        let got = fl_time_norm(&v, dt, 0.4, Exponent::Finite(2.0));
        let dtau = 2.0 * std::f64::consts::PI / (16.0 * dt);
        assert!((got - 2.0 * dtau.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exponent_serde() {
        let spec: NormSpec =
            serde_json::from_str(r#"{"s":-0.45,"b":0.45,"p":2.5,"q":"inf","restriction":1.0}"#)
                .unwrap();
        assert_eq!(spec.q, Exponent::Infinite);
        let back: NormSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<NormSpec>(r#"{"s":0,"p":2,"q":"big"}"#).is_err());
        assert!(serde_json::from_str::<NormSpec>(r#"{"s":0,"p":2,"q":2,"extra":1}"#).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn homogeneity_and_triangle(seed in any::<u64>(), c in -3.0f64..3.0) {
            let (f, g) = (random_field(32, seed), random_field(32, seed ^ 0xff));
            let spec = NormSpec::besov(-0.45, 2.5, INF);
            let nf = besov_norm(&f, &spec).unwrap();
            prop_assert!((besov_norm(&f.scaled(c), &spec).unwrap() - c.abs() * nf).abs() <= 1e-10 * nf);
            let sum = besov_norm(&f.add(&g).unwrap(), &spec).unwrap();
            prop_assert!(sum <= nf + besov_norm(&g, &spec).unwrap() + 1e-10);
            let fl = NormSpec::fourier_lebesgue(0.3, 1.5);
            let sum = sobolev_fl_norms(&f.add(&g).unwrap(), &fl).unwrap();
            prop_assert!(sum <= sobolev_fl_norms(&f, &fl).unwrap() + sobolev_fl_norms(&g, &fl).unwrap() + 1e-10);

            let (u, v) = (random_space_time(6, 12, seed), random_space_time(6, 12, !seed));
            for spec in [NormSpec::xsb(-0.2, 0.4), NormSpec::xsbpq(-0.45, 0.45, 2.5, Exponent::Finite(2.0))] {
                let nu = xsbpq_norm(&u, &spec).unwrap();
                prop_assert!((xsbpq_norm(&u.scaled(c), &spec).unwrap() - c.abs() * nu).abs() <= 1e-10 * nu);
                let nx = xsb_norm(&u, &spec).unwrap();
                prop_assert!((xsb_norm(&u.scaled(c), &spec).unwrap() - c.abs() * nx).abs() <= 1e-10 * nx);
                let s = xsbpq_norm(&u.add(&v).unwrap(), &spec).unwrap();
                prop_assert!(s <= nu + xsbpq_norm(&v, &spec).unwrap() + 1e-10);
            }
        }
    }
}
