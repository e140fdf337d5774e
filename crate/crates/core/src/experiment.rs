//! Experiment files, runs and report comparison.
//!
//! A configuration is one TOML document listing experiment cells. A run
//! writes every cell's outputs under `<output_dir>/<config hash>/`, so the
//! layout depends only on the configuration. Wall-clock times appear only in
//! `manifest.json`; every other file is reproducible byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::convolution::{
    factorized_convolution, in_stochastic_regime, ito_convolution, mc_expected_xsbpq,
    rms_difference, McConfig,
};
use crate::error::{Error, Result};
use crate::estimates::{
    bilinear_ratio, linear_lemma_ratios, near_curve_sweep, r_alpha_bound, resonance_identity_sweep,
    stochastic_trilinear_check, strichartz_ratio, Conventions, EnsembleSpec, LinearLemmaConfig,
    RatioReport, TrilinearConfig, MAX_SWEEP_BOUND, NEAR_CURVE_WINDOW,
};
use crate::noise::{
    gauge_reduce, sample_brownian_family, sample_spatial_white_noise, CovarianceOp, PhiKind,
    TimeGrid,
};
use crate::norms::{besov_norm, restricted_norm, xsbpq_norm, Exponent, NormSpec};
use crate::rng::derive_seed;
use crate::solver::{
    adaptive_window, energy, picard_solve, reference_kdv, solve_truncated_sequence, SolveConfig,
};
use crate::spectral::{project_mean_zero, SpaceTimeField, SpectralField, TorusGrid};
use crate::stats::{mean_se, median};

// ------------------------------------------------------------------ schema

/// Top level of an experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Global seed; cell `i` without its own seed uses `derive_seed(seed, i)`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Reject norm parameters outside the well-posedness regime.
    #[serde(default = "default_true")]
    pub regime_check: bool,
    #[serde(default, rename = "experiment")]
    pub experiments: Vec<Experiment>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("skdv-runs")
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Simulate(SimulateSpec),
    SampleNoise(SampleNoiseSpec),
    StochasticConvolution(ConvolutionSpec),
    Norm(NormExperiment),
    VerifyEstimates(VerifySpec),
    ConvergenceStudy(ConvergenceSpec),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Simulate(_) => "simulate",
            Experiment::SampleNoise(_) => "sample-noise",
            Experiment::StochasticConvolution(_) => "stochastic-convolution",
            Experiment::Norm(_) => "norm",
            Experiment::VerifyEstimates(_) => "verify-estimates",
            Experiment::ConvergenceStudy(_) => "convergence-study",
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Experiment::Simulate(s) => s.seed,
            Experiment::SampleNoise(s) => s.seed,
            Experiment::StochasticConvolution(s) => s.seed,
            Experiment::Norm(s) => s.seed,
            Experiment::VerifyEstimates(_) => None,
            Experiment::ConvergenceStudy(s) => s.seed,
        }
    }

    fn set_seed(&mut self, seed: u64) {
        match self {
            Experiment::Simulate(s) => s.seed = Some(seed),
            Experiment::SampleNoise(s) => s.seed = Some(seed),
            Experiment::StochasticConvolution(s) => s.seed = Some(seed),
            Experiment::Norm(s) => s.seed = Some(seed),
            Experiment::VerifyEstimates(_) => {}
            Experiment::ConvergenceStudy(s) => s.seed = Some(seed),
        }
    }
}

/// Initial data on the torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialData {
    Zero,
    /// `amplitude · cos(mode · x)`.
    Cosine {
        #[serde(default = "one_usize")]
        mode: usize,
        #[serde(default = "one_f64")]
        amplitude: f64,
    },
    /// A spatial white-noise sample, mean removed.
    WhiteNoise,
}

fn one_usize() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

impl InitialData {
    fn build(&self, grid: TorusGrid, seed: u64) -> SpectralField {
        match *self {
            InitialData::Zero => SpectralField::zeros(grid),
            InitialData::Cosine { mode, amplitude } => SpectralField::cosine(grid, mode, amplitude),
            InitialData::WhiteNoise => {
                project_mean_zero(&sample_spatial_white_noise(grid, derive_seed(seed, 1)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub n_max: usize,
    pub dt: f64,
    pub window: f64,
    pub initial: InitialData,
    /// Drive with space-time white noise (solved in the gauge-reduced variable).
    #[serde(default)]
    pub noise: bool,
    /// Replace `window` by the measured-contraction window.
    #[serde(default)]
    pub adaptive: bool,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub max_sweeps: Option<usize>,
    /// Compare with the RK4 reference at `dt / refine` and `2·n_max`.
    #[serde(default)]
    pub reference_refine: Option<usize>,
    #[serde(default)]
    pub write_trajectory: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleNoiseSpec {
    pub n_max: usize,
    pub samples: usize,
    /// Spatial norms evaluated on every white-noise sample.
    pub norms: Vec<NormSpec>,
    /// Also sample Brownian families on `[0, horizon]` and report variance rates.
    #[serde(default)]
    pub brownian: Option<BrownianSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrownianSpec {
    pub dt: f64,
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvolutionSpec {
    pub phi: PhiKind,
    pub n_max: usize,
    pub dt: f64,
    pub window: f64,
    pub samples: usize,
    pub s: f64,
    pub b: f64,
    pub p: f64,
    pub q: Exponent,
    /// Modes of the `E|Φ̂(n,t)|²` table.
    #[serde(default)]
    pub modes: Vec<i64>,
    /// Cross-check against the factorized method with `(α, m)`.
    #[serde(default)]
    pub factorized: Option<(f64, u32)>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormExperiment {
    pub n_max: usize,
    pub field: InitialData,
    /// Spatial specs (no `b`) apply to the field; space-time specs apply to
    /// its free evolution sampled every `dt` on `[0, window]`.
    pub norms: Vec<NormSpec>,
    #[serde(default = "default_norm_dt")]
    pub dt: f64,
    #[serde(default = "one_f64")]
    pub window: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_norm_dt() -> f64 {
    1.0 / 256.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub estimates: Vec<EstimateSelector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimateSelector {
    Resonance {
        bound: i64,
    },
    Strichartz {
        ensemble: EnsembleSpec,
    },
    Bilinear {
        s: f64,
        delta: f64,
        ensemble: EnsembleSpec,
    },
    RAlpha {
        alpha: f64,
        p: f64,
        ensemble: EnsembleSpec,
    },
    NearCurve {
        n_max: i64,
        #[serde(default = "one_f64")]
        c: f64,
        #[serde(default = "default_near_window")]
        window: f64,
    },
    LinearLemmas {
        config: LinearLemmaConfig,
    },
    Trilinear {
        config: TrilinearConfig,
    },
}

fn default_near_window() -> f64 {
    NEAR_CURVE_WINDOW
}

impl EstimateSelector {
    fn name(&self) -> &'static str {
        match self {
            EstimateSelector::Resonance { .. } => "resonance",
            EstimateSelector::Strichartz { .. } => "strichartz",
            EstimateSelector::Bilinear { .. } => "bilinear",
            EstimateSelector::RAlpha { .. } => "r-alpha",
            EstimateSelector::NearCurve { .. } => "near-curve",
            EstimateSelector::LinearLemmas { .. } => "linear-lemmas",
            EstimateSelector::Trilinear { .. } => "trilinear",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    pub n_max: usize,
    pub dt: f64,
    pub levels: Vec<usize>,
    /// Noise/data seeds are `derive_seed(seed, r)` for `r < runs`.
    pub runs: usize,
    /// Fixed window; `None` uses the measured-contraction window of each run.
    #[serde(default)]
    pub window: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

// --------------------------------------------------------------- loading

impl ExperimentConfig {
    /// Parses and validates; errors name the offending field path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
            path: "<document>".into(),
            reason: e.to_string(),
        })?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            reason: e.into_inner().message().trim().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Explicit per-cell seeds; this is what gets echoed and hashed.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        for (i, e) in out.experiments.iter_mut().enumerate() {
            if e.seed().is_none() {
                e.set_seed(derive_seed(self.seed, i as u64));
            }
        }
        out
    }

    /// SHA-256 of the resolved configuration, output directory excluded.
    pub fn hash(&self) -> String {
        let mut r = self.resolved();
        r.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&r).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.hash()[..16])
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.experiments.iter().enumerate() {
            validate_experiment(e, self.regime_check).map_err(|err| match err {
                Error::InvalidParameter { name, reason } => Error::Config {
                    path: format!("experiment[{i}].{name}"),
                    reason,
                },
                other => Error::Config {
                    path: format!("experiment[{i}]"),
                    reason: other.to_string(),
                },
            })?;
        }
        Ok(())
    }
}

fn positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {x}")))
    }
}

fn nonzero(name: &'static str, n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::param(name, "must be at least 1"))
    } else {
        Ok(())
    }
}

fn validate_experiment(e: &Experiment, regime_check: bool) -> Result<()> {
    match e {
        Experiment::Simulate(s) => {
            nonzero("n_max", s.n_max)?;
            positive("dt", s.dt)?;
            positive("window", s.window)?;
            if let Some(t) = s.tolerance {
                positive("tolerance", t)?;
            }
            if let Some(r) = s.reference_refine {
                nonzero("reference_refine", r)?;
            }
            simulate_config(s, regime_check).validate()
        }
        Experiment::SampleNoise(s) => {
            nonzero("n_max", s.n_max)?;
            nonzero("samples", s.samples)?;
            for spec in &s.norms {
                spec.validate()?;
                if spec.b.is_some() {
                    return Err(Error::param(
                        "norms",
                        "white-noise samples take spatial norms only",
                    ));
                }
            }
            if let Some(b) = &s.brownian {
                positive("brownian.dt", b.dt)?;
                positive("brownian.horizon", b.horizon)?;
            }
            Ok(())
        }
        Experiment::StochasticConvolution(s) => {
            nonzero("n_max", s.n_max)?;
            nonzero("samples", s.samples)?;
            positive("dt", s.dt)?;
            positive("window", s.window)?;
            NormSpec::xsbpq(s.s, s.b, s.p, s.q).validate()?;
            if regime_check && !in_stochastic_regime(s.s, s.b, s.p) {
                return Err(Error::param(
                    "s",
                    format!("(s, b, p) = ({}, {}, {}) is outside the regime; set regime_check = false to explore", s.s, s.b, s.p),
                ));
            }
            if s.modes.iter().any(|&n| n.unsigned_abs() as usize > s.n_max) {
                return Err(Error::param("modes", "modes must satisfy |n| <= n_max"));
            }
            if let Some((alpha, m)) = s.factorized {
                if !(alpha > 0.0 && alpha < 0.5) || m == 0 {
                    return Err(Error::param(
                        "factorized",
                        "need 0 < alpha < 1/2 and m >= 1",
                    ));
                }
            }
            Ok(())
        }
        Experiment::Norm(s) => {
            nonzero("n_max", s.n_max)?;
            positive("dt", s.dt)?;
            positive("window", s.window)?;
            s.norms.iter().try_for_each(NormSpec::validate)
        }
        Experiment::VerifyEstimates(v) => {
            for sel in &v.estimates {
                if let EstimateSelector::Resonance { bound } = sel {
                    if *bound < 1 || *bound > MAX_SWEEP_BOUND {
                        return Err(Error::param(
                            "estimates.bound",
                            format!("need 1 <= bound <= {MAX_SWEEP_BOUND}"),
                        ));
                    }
                }
            }
            Ok(())
        }
        Experiment::ConvergenceStudy(s) => {
            nonzero("runs", s.runs)?;
            if s.levels.len() < 2 {
                return Err(Error::param("levels", "need at least two levels"));
            }
            if s.levels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::param("levels", "levels must increase"));
            }
            convergence_config(s, regime_check).validate()
        }
    }
}

fn simulate_config(s: &SimulateSpec, regime_check: bool) -> SolveConfig {
    let mut cfg = SolveConfig::new(s.n_max, s.dt, s.window);
    if let Some(t) = s.tolerance {
        cfg.tolerance = t;
    }
    if let Some(k) = s.max_sweeps {
        cfg.max_sweeps = k;
    }
    cfg.regime_check = regime_check;
    cfg
}

fn convergence_config(s: &ConvergenceSpec, regime_check: bool) -> SolveConfig {
    let mut cfg = SolveConfig::new(s.n_max, s.dt, s.window.unwrap_or(1.0));
    cfg.levels = s.levels.clone();
    cfg.regime_check = regime_check;
    cfg
}

// ---------------------------------------------------------------- outputs

/// Columnar table written as CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        w.write_record(&self.columns).map_err(csv_error)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// x–y series for plotting; written as `series,x,y` columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plot {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    #[serde(default)]
    pub log_x: bool,
    #[serde(default)]
    pub log_y: bool,
    #[serde(skip)]
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

impl Plot {
    fn new(name: &str, x: &str, y: &str) -> Self {
        Self {
            name: name.into(),
            x_label: x.into(),
            y_label: y.into(),
            log_x: false,
            log_y: false,
            series: Vec::new(),
        }
    }

    fn logs(mut self, x: bool, y: bool) -> Self {
        self.log_x = x;
        self.log_y = y;
        self
    }

    fn table(&self) -> Table {
        let mut t = Table::new(&self.name, &["series", "x", "y"]);
        for (label, pts) in &self.series {
            for &(x, y) in pts {
                t.push(vec![label.clone(), x.to_string(), y.to_string()]);
            }
        }
        t
    }
}

/// Everything one cell computed.
#[derive(Clone, Debug, Default)]
struct Outcome {
    scalars: BTreeMap<String, f64>,
    details: BTreeMap<String, Value>,
    tables: Vec<Table>,
    plots: Vec<Plot>,
}

impl Outcome {
    fn scalar(&mut self, key: impl Into<String>, v: f64) {
        self.scalars.insert(key.into(), v);
    }

    fn detail(&mut self, key: &str, v: impl Serialize) {
        self.details.insert(
            key.into(),
            serde_json::to_value(v).expect("report serializes"),
        );
    }
}

/// Machine-readable failure of a cell or a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub code: String,
    pub message: String,
}

impl From<&Error> for Failure {
    fn from(e: &Error) -> Self {
        Self {
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

/// Contents of a cell's `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: String,
    pub index: usize,
    /// The resolved cell configuration, seed included.
    pub config: Value,
    pub conventions: Conventions,
    pub status: String,
    #[serde(default)]
    pub failure: Option<Failure>,
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub details: BTreeMap<String, Value>,
    pub tables: Vec<String>,
    pub plots: Vec<Plot>,
}

impl Report {
    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub index: usize,
    pub kind: String,
    pub dir: String,
    pub status: String,
}

/// `manifest.json`; the only file carrying wall-clock times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub workers: usize,
    pub cells: Vec<CellEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub reports: Vec<Report>,
}

impl RunSummary {
    pub fn failures(&self) -> Vec<(usize, &Failure)> {
        self.reports
            .iter()
            .filter_map(|r| r.failure.as_ref().map(|f| (r.index, f)))
            .collect()
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

// -------------------------------------------------------------------- run

/// Runs every cell on a pool of `workers` threads (`None`: rayon's default)
/// and writes the artifacts. Cell failures are recorded in their reports and
/// returned in the summary rather than aborting the other cells.
pub fn run(config: &ExperimentConfig, workers: Option<usize>) -> Result<RunSummary> {
    config.validate()?;
    let started = unix_now();
    let resolved = config.resolved();
    let dir = config.run_dir();
    fs::create_dir_all(&dir)?;
    let mut echo = serde_json::to_value(&resolved)?;
    // where the run lives is not part of what it is
    echo.as_object_mut()
        .expect("config is an object")
        .remove("output_dir");
    echo["conventions"] = serde_json::to_value(Conventions::pinned())?;
    echo["config_hash"] = Value::String(config.hash());
    write_json(&dir.join("config.json"), &echo)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let n_workers = pool.current_num_threads();
    let cells: Vec<(usize, &Experiment)> = resolved.experiments.iter().enumerate().collect();
    let reports: Vec<Result<Report>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, e)| run_cell(i, e, resolved.regime_check, &dir))
            .collect()
    });
    let reports: Vec<Report> = reports.into_iter().collect::<Result<_>>()?;

    let manifest = Manifest {
        config_hash: config.hash(),
        started_unix: started,
        finished_unix: unix_now(),
        workers: n_workers,
        cells: reports
            .iter()
            .map(|r| CellEntry {
                index: r.index,
                kind: r.kind.clone(),
                dir: cell_dir_name(r.index, &r.kind),
                status: r.status.clone(),
            })
            .collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunSummary {
        dir,
        manifest,
        reports,
    })
}

fn cell_dir_name(index: usize, kind: &str) -> String {
    format!("{index:03}-{kind}")
}

fn run_cell(index: usize, e: &Experiment, regime_check: bool, root: &Path) -> Result<Report> {
    let dir = root.join(cell_dir_name(index, e.kind()));
    fs::create_dir_all(&dir)?;
    let result = match e {
        Experiment::Simulate(s) => simulate(s, regime_check),
        Experiment::SampleNoise(s) => sample_noise(s),
        Experiment::StochasticConvolution(s) => stochastic_convolution(s),
        Experiment::Norm(s) => norm(s),
        Experiment::VerifyEstimates(s) => verify_estimates(s),
        Experiment::ConvergenceStudy(s) => convergence_study(s, regime_check),
    };
    let (outcome, failure) = match result {
        Ok(o) => (o, None),
        Err(err) => (Outcome::default(), Some(Failure::from(&err))),
    };
    let mut tables = Vec::new();
    for t in &outcome.tables {
        let file = format!("{}.csv", t.name);
        t.write(&dir.join(&file))?;
        tables.push(file);
    }
    if !outcome.plots.is_empty() {
        let plots = dir.join("plots");
        fs::create_dir_all(&plots)?;
        for p in &outcome.plots {
            p.table().write(&plots.join(format!("{}.csv", p.name)))?;
        }
    }
    let report = Report {
        kind: e.kind().into(),
        index,
        config: serde_json::to_value(e)?,
        conventions: Conventions::pinned(),
        status: if failure.is_none() { "ok" } else { "failed" }.into(),
        failure,
        scalars: outcome.scalars,
        details: outcome.details,
        tables,
        plots: outcome.plots,
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

// ------------------------------------------------------------------ cells

fn noise_forcing(
    u0: &SpectralField,
    n_max: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<(
    SpectralField,
    CovarianceOp,
    crate::noise::BrownianFamily,
    SpaceTimeField,
)> {
    let grid = TorusGrid::new(n_max)?;
    let family = sample_brownian_family(n_max, TimeGrid::covering(horizon, dt)?, seed);
    let (v0, phi, _) = gauge_reduce(u0, &family);
    let forcing = ito_convolution(&phi, &family, grid)?.field;
    Ok((v0, phi, family, forcing))
}

fn simulate(s: &SimulateSpec, regime_check: bool) -> Result<Outcome> {
    let seed = s.seed.unwrap_or_default();
    let grid = TorusGrid::new(s.n_max)?;
    let u0 = s.initial.build(grid, seed);
    let mut cfg = simulate_config(s, regime_check);
    let mut out = Outcome::default();
    let (data, forcing) = if s.noise {
        // Φ on [0, 2] so that the radius sees the whole cutoff support
        let (v0, _, _, f) = noise_forcing(&u0, s.n_max, s.dt, s.window.max(2.0), seed)?;
        (v0, Some(f))
    } else {
        (u0.clone(), None)
    };
    if s.adaptive {
        let choice = adaptive_window(&data, forcing.as_ref(), &cfg)?;
        cfg.window = choice.window;
        out.scalar("radius", choice.radius);
        out.detail("window_factors", &choice.factors);
    }
    let traj = picard_solve(&data, forcing.as_ref(), &cfg)?;
    out.scalar("window", traj.window);
    out.scalar("sweeps", traj.residuals.len() as f64);
    out.scalar("halved", traj.halved_count as f64);
    out.scalar("converged", f64::from(u8::from(traj.converged)));
    out.scalar(
        "final_residual",
        traj.residuals.last().copied().unwrap_or(0.0),
    );
    out.detail(
        "variable",
        if s.noise { "gauge-reduced" } else { "original" },
    );

    let u = &traj.u;
    let e0 = energy(u, 0);
    let mut table = Table::new(
        "conservation",
        &["t", "energy", "relative_drift", "mean_re", "mean_im"],
    );
    let mut drift_plot = Plot::new("energy_drift", "t", "relative energy drift");
    let mut pts = Vec::new();
    let mut max_drift = 0.0f64;
    for k in 0..u.n_times() {
        let e = energy(u, k);
        let drift = if e0 > 0.0 { (e - e0) / e0 } else { e - e0 };
        max_drift = max_drift.max(drift.abs());
        let m = u.get(0, k);
        table.push(vec![
            u.time(k).to_string(),
            e.to_string(),
            drift.to_string(),
            m.re.to_string(),
            m.im.to_string(),
        ]);
        pts.push((u.time(k), drift));
    }
    drift_plot.series.push(("energy".into(), pts));
    out.scalar("energy_drift_max", max_drift);
    out.tables.push(table);
    out.plots.push(drift_plot);

    let mut res = Plot::new("residuals", "sweep", "successive-iterate distance").logs(false, true);
    res.series.push((
        "residual".into(),
        traj.residuals
            .iter()
            .enumerate()
            .map(|(i, &r)| ((i + 1) as f64, r))
            .collect(),
    ));
    out.plots.push(res);

    if let Some(refine) = s.reference_refine {
        if forcing.is_some() {
            return Err(Error::param(
                "reference_refine",
                "the reference integrator is deterministic",
            ));
        }
        let steps = u.n_times() - 1;
        let fine = TorusGrid::new(2 * s.n_max)?;
        let reference = reference_kdv(
            &u0.regridded(fine),
            s.dt / refine as f64,
            refine * steps,
            refine,
        )?;
        let mut err = Table::new("reference_error", &["t", "h1_error"]);
        let mut worst = 0.0f64;
        for k in 0..u.n_times() {
            let d = u.snapshot(k).sub(&reference.snapshot(k).regridded(grid))?;
            let h1 = crate::norms::sobolev_norm(&d, 1.0);
            worst = worst.max(h1);
            err.push(vec![u.time(k).to_string(), h1.to_string()]);
        }
        out.scalar("reference_h1_max", worst);
        out.tables.push(err);
    }
    if s.write_trajectory {
        let mut json = serde_json::to_value(u.to_json())?;
        json["window"] = Value::from(traj.window);
        out.detail("trajectory", json);
    }
    Ok(out)
}

fn sample_noise(s: &SampleNoiseSpec) -> Result<Outcome> {
    let seed = s.seed.unwrap_or_default();
    let grid = TorusGrid::new(s.n_max)?;
    let rows: Vec<Vec<f64>> = (0..s.samples as u64)
        .into_par_iter()
        .map(|i| {
            let w = sample_spatial_white_noise(grid, derive_seed(seed, i));
            s.norms
                .iter()
                .map(|spec| besov_norm(&w, spec))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut cols = vec!["sample".to_string()];
    cols.extend((0..s.norms.len()).map(|j| format!("norm_{j}")));
    let mut table = Table {
        name: "norms".into(),
        columns: cols,
        rows: Vec::new(),
    };
    for (i, r) in rows.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(r.iter().map(|v| v.to_string()));
        table.push(row);
    }
    let mut out = Outcome::default();
    for j in 0..s.norms.len() {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let (m, se) = mean_se(&col);
        out.scalar(format!("norm_{j}.median"), median(&col));
        out.scalar(format!("norm_{j}.mean"), m);
        out.scalar(format!("norm_{j}.std_error"), se);
    }
    out.detail("norms", &s.norms);
    out.tables.push(table);

    if let Some(b) = &s.brownian {
        // per-mode variance rate E|Δβ_n|²/dt: 1 for n = 0, 2 otherwise
        let tg = TimeGrid::covering(b.horizon, b.dt)?;
        let mut rates = vec![0.0; s.n_max + 1];
        let mut count = 0usize;
        for i in 0..s.samples as u64 {
            let fam = sample_brownian_family(s.n_max, tg, derive_seed(seed ^ 0x5eed, i));
            for (n, r) in rates.iter_mut().enumerate() {
                for j in 0..tg.steps {
                    *r += fam.increment(n as i64, j).norm_sqr() / tg.dt;
                }
            }
            count += tg.steps;
        }
        let mut t = Table::new("brownian_variance", &["n", "rate", "expected"]);
        for (n, r) in rates.iter().enumerate() {
            let expected = if n == 0 { 1.0 } else { 2.0 };
            t.push(vec![
                n.to_string(),
                (r / count as f64).to_string(),
                expected.to_string(),
            ]);
        }
        out.scalar("brownian.rate_mode0", rates[0] / count as f64);
        let off: f64 = rates[1..].iter().sum::<f64>() / (count * s.n_max.max(1)) as f64;
        out.scalar("brownian.rate_mean_nonzero", off);
        out.tables.push(t);
    }
    Ok(out)
}

fn stochastic_convolution(s: &ConvolutionSpec) -> Result<Outcome> {
    let seed = s.seed.unwrap_or_default();
    let mc = mc_expected_xsbpq(&McConfig {
        phi: s.phi.clone(),
        s: s.s,
        b: s.b,
        p: s.p,
        q: s.q,
        window: s.window,
        samples: s.samples,
        seed,
        n_max: s.n_max,
        dt: s.dt,
    })?;
    let mut out = Outcome::default();
    out.scalar("mc.mean", mc.mean);
    out.scalar("mc.std_error", mc.std_error);
    out.detail("in_regime", mc.in_regime);
    out.detail("surrogate", mc.surrogate);
    let mut samples = Table::new("mc_samples", &["sample", "norm"]);
    for (i, v) in mc.samples.iter().enumerate() {
        samples.push(vec![i.to_string(), v.to_string()]);
    }
    out.tables.push(samples);

    if !s.modes.is_empty() || s.factorized.is_some() {
        // same Brownian seeds as the Monte Carlo mean
        let grid = TorusGrid::new(s.n_max)?;
        let tg = TimeGrid::covering(s.window, s.dt)?;
        let per_sample: Vec<(Vec<Vec<f64>>, Option<f64>)> = (0..s.samples as u64)
            .into_par_iter()
            .map(|i| {
                let fam = sample_brownian_family(s.n_max, tg, derive_seed(seed, i));
                let phi = CovarianceOp::build(&s.phi, &fam);
                let ito = ito_convolution(&phi, &fam, grid)?.field;
                let sq = s
                    .modes
                    .iter()
                    .map(|&n| {
                        (0..ito.n_times())
                            .map(|k| ito.get(n, k).norm_sqr())
                            .collect()
                    })
                    .collect();
                let rms = match s.factorized {
                    Some((alpha, m)) => Some(rms_difference(
                        &ito,
                        &factorized_convolution(&phi, &fam, grid, alpha, m)?.field,
                    )?),
                    None => None,
                };
                Ok((sq, rms))
            })
            .collect::<Result<_>>()?;
        if !s.modes.is_empty() {
            let mut t = Table::new("isometry", &["n", "t", "mean_abs_sq", "std_error"]);
            let mut plot = Plot::new("isometry", "t", "E|Φ̂(n,t)|²");
            for (a, &n) in s.modes.iter().enumerate() {
                let mut pts = Vec::new();
                for k in 0..=tg.steps {
                    let col: Vec<f64> = per_sample.iter().map(|(sq, _)| sq[a][k]).collect();
                    let (m, se) = mean_se(&col);
                    let time = tg.time(k);
                    t.push(vec![
                        n.to_string(),
                        time.to_string(),
                        m.to_string(),
                        se.to_string(),
                    ]);
                    pts.push((time, m));
                }
                plot.series.push((format!("n={n}"), pts));
            }
            out.tables.push(t);
            out.plots.push(plot);
        }
        if s.factorized.is_some() {
            let rms: Vec<f64> = per_sample.iter().filter_map(|(_, r)| *r).collect();
            let (m, se) = mean_se(&rms);
            out.scalar("factorized.rms_mean", m);
            out.scalar("factorized.rms_std_error", se);
        }
    }
    Ok(out)
}

fn norm(s: &NormExperiment) -> Result<Outcome> {
    let seed = s.seed.unwrap_or_default();
    let grid = TorusGrid::new(s.n_max)?;
    let f = s.field.build(grid, seed);
    let mut out = Outcome::default();
    let mut free = None;
    let mut t = Table::new(
        "norms",
        &["index", "s", "b", "p", "q", "restriction", "value"],
    );
    for (j, spec) in s.norms.iter().enumerate() {
        let value = match spec.b {
            None => besov_norm(&f, spec)?,
            Some(_) => {
                let steps = ((s.window / s.dt).round() as usize).max(1);
                let u = match &free {
                    Some(u) => u,
                    None => free.insert(SpaceTimeField::free_evolution(&f, 0.0, s.dt, steps + 1)?),
                };
                match spec.restriction {
                    Some(_) => restricted_norm(u, spec)?.value,
                    None => xsbpq_norm(u, spec)?,
                }
            }
        };
        out.scalar(format!("norm_{j}"), value);
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        t.push(vec![
            j.to_string(),
            spec.s.to_string(),
            opt(spec.b),
            spec.p.to_string(),
            spec.q.to_string(),
            opt(spec.restriction),
            value.to_string(),
        ]);
    }
    out.tables.push(t);
    Ok(out)
}

fn ratio_outputs(out: &mut Outcome, key: &str, r: &RatioReport) {
    out.scalar(format!("{key}.max_ratio"), r.max_ratio);
    out.scalar(format!("{key}.median_ratio"), r.quantiles.median);
    out.scalar(format!("{key}.skipped"), r.skipped as f64);
    let mut t = Table::new(&format!("{key}_ratios"), &["sample", "ratio"]);
    for (i, v) in r.ratios.iter().enumerate() {
        t.push(vec![i.to_string(), v.to_string()]);
    }
    out.tables.push(t);
}

fn verify_estimates(s: &VerifySpec) -> Result<Outcome> {
    let mut out = Outcome::default();
    for (i, sel) in s.estimates.iter().enumerate() {
        let key = format!("{i}-{}", sel.name());
        match sel {
            EstimateSelector::Resonance { bound } => {
                let r = resonance_identity_sweep(*bound)?;
                out.scalar(format!("{key}.passed"), f64::from(u8::from(r.passed)));
                out.scalar(format!("{key}.triples"), r.triples as f64);
                out.detail(&key, r);
            }
            EstimateSelector::Strichartz { ensemble } => {
                let r = strichartz_ratio(ensemble)?;
                ratio_outputs(&mut out, &key, &r);
                out.detail(&key, r);
            }
            EstimateSelector::Bilinear { s, delta, ensemble } => {
                let r = bilinear_ratio(*s, *delta, ensemble)?;
                ratio_outputs(&mut out, &key, &r.full);
                ratio_outputs(&mut out, &format!("{key}-dominant"), &r.output_dominant);
                out.detail(&key, r);
            }
            EstimateSelector::RAlpha { alpha, p, ensemble } => {
                let r = r_alpha_bound(ensemble, *alpha, *p)?;
                ratio_outputs(&mut out, &key, &r);
                out.detail(&key, r);
            }
            EstimateSelector::NearCurve { n_max, c, window } => {
                let r = near_curve_sweep(*n_max, *c, (-window, *window))?;
                out.scalar(format!("{key}.slope"), r.slope);
                out.scalar(
                    format!("{key}.max"),
                    r.running_max.last().copied().unwrap_or(0.0),
                );
                let mut plot = Plot::new(&key, "n", "near-curve integral").logs(true, true);
                plot.series.push((
                    "value".into(),
                    r.values.iter().map(|&(n, v)| (n as f64, v)).collect(),
                ));
                out.plots.push(plot);
                out.detail(&key, r);
            }
            EstimateSelector::LinearLemmas { config } => {
                let r = linear_lemma_ratios(config)?;
                out.scalar(format!("{key}.homogeneous_spread"), r.homogeneous_spread);
                let mut t = Table::new(&key, &["suite", "window", "max_ratio", "median_ratio"]);
                for (suite, reps) in [
                    ("homogeneous", &r.homogeneous),
                    ("inhomogeneous", &r.inhomogeneous),
                    ("restriction", &r.restriction),
                ] {
                    for w in reps {
                        t.push(vec![
                            suite.into(),
                            w.window.to_string(),
                            w.report.max_ratio.to_string(),
                            w.report.quantiles.median.to_string(),
                        ]);
                    }
                }
                out.tables.push(t);
                out.detail(&key, r);
            }
            EstimateSelector::Trilinear { config } => {
                let r = stochastic_trilinear_check(config)?;
                out.scalar(format!("{key}.mean_f1"), r.mean_f1);
                out.scalar(format!("{key}.mean_f2"), r.mean_f2);
                out.scalar(format!("{key}.ratio_spread"), r.ratio_spread);
                let mut t = Table::new(&key, &["seed", "f1", "f2", "ratio"]);
                for p in &r.per_seed {
                    t.push(vec![
                        p.seed.to_string(),
                        p.f1.to_string(),
                        p.f2.to_string(),
                        p.ratio.to_string(),
                    ]);
                }
                out.tables.push(t);
                out.detail(&key, r);
            }
        }
    }
    Ok(out)
}

fn convergence_study(s: &ConvergenceSpec, regime_check: bool) -> Result<Outcome> {
    let seed = s.seed.unwrap_or_default();
    let base = convergence_config(s, regime_check);
    let grid = TorusGrid::new(s.n_max)?;
    let rows: Vec<(u64, f64, Vec<f64>)> = (0..s.runs as u64)
        .into_par_iter()
        .map(|r| {
            let run_seed = derive_seed(seed, r);
            let u0 = project_mean_zero(&sample_spatial_white_noise(grid, derive_seed(run_seed, 1)));
            let (v0, phi, family, forcing) = noise_forcing(&u0, s.n_max, s.dt, 2.0, run_seed)?;
            let mut cfg = base.clone();
            if s.window.is_none() {
                cfg.window = adaptive_window(&v0, Some(&forcing), &cfg)?.window;
            }
            let study = solve_truncated_sequence(&v0, &phi, &family, &cfg)?;
            Ok((run_seed, study.window, study.consecutive()))
        })
        .collect::<Result<_>>()?;
    let mut cols = vec!["run".to_string(), "seed".into(), "window".into()];
    cols.extend(s.levels.windows(2).map(|w| format!("d({},{})", w[0], w[1])));
    let mut table = Table {
        name: "distances".into(),
        columns: cols,
        rows: Vec::new(),
    };
    let mut plot = Plot::new("distances", "N", "d(N, 2N)").logs(true, true);
    let mut decreasing = 0;
    for (r, (seed, window, d)) in rows.iter().enumerate() {
        let mut row = vec![r.to_string(), seed.to_string(), window.to_string()];
        row.extend(d.iter().map(|v| v.to_string()));
        table.push(row);
        if d.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
        plot.series.push((
            format!("run {r}"),
            s.levels
                .iter()
                .zip(d)
                .map(|(&n, &v)| (n as f64, v))
                .collect(),
        ));
    }
    let mut out = Outcome::default();
    out.scalar("fraction_decreasing", decreasing as f64 / s.runs as f64);
    for (j, w) in s.levels.windows(2).enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r.2[j]).collect();
        out.scalar(format!("median_d({},{})", w[0], w[1]), median(&col));
    }
    out.tables.push(table);
    out.plots.push(plot);
    Ok(out)
}

// --------------------------------------------------------------- compare

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarDiff {
    pub key: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `|a - b| / |a|`, or `|a - b|` when `a = 0`; absent keys count as infinite.
    pub relative: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDiff {
    pub kind: String,
    pub tolerance: f64,
    pub scalars: Vec<ScalarDiff>,
    /// Paths where the configuration echoes differ.
    pub config_changes: Vec<String>,
    pub flagged: usize,
}

/// Relative differences of every scalar and the paths where the configs differ.
pub fn compare_reports(a: &Report, b: &Report, tolerance: f64) -> Result<ReportDiff> {
    if a.kind != b.kind {
        return Err(Error::ReportMismatch(format!(
            "kinds differ: {} vs {}",
            a.kind, b.kind
        )));
    }
    let keys: std::collections::BTreeSet<&String> =
        a.scalars.keys().chain(b.scalars.keys()).collect();
    let scalars: Vec<ScalarDiff> = keys
        .into_iter()
        .map(|k| {
            let (x, y) = (a.scalars.get(k).copied(), b.scalars.get(k).copied());
            let relative = match (x, y) {
                (Some(x), Some(y)) if x == y => 0.0,
                (Some(x), Some(y)) if x != 0.0 => (x - y).abs() / x.abs(),
                (Some(x), Some(y)) => (x - y).abs(),
                _ => f64::INFINITY,
            };
            ScalarDiff {
                key: k.clone(),
                a: x,
                b: y,
                relative,
                flagged: !(relative <= tolerance),
            }
        })
        .collect();
    let mut config_changes = Vec::new();
    diff_values("", &a.config, &b.config, &mut config_changes);
    Ok(ReportDiff {
        kind: a.kind.clone(),
        tolerance,
        flagged: scalars.iter().filter(|d| d.flagged).count(),
        scalars,
        config_changes,
    })
}

fn diff_values(path: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for k in keys {
                let p = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => diff_values(&p, u, v, out),
                    _ => out.push(p),
                }
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                diff_values(&format!("{path}[{i}]"), u, v, out);
            }
        }
        _ if a != b => out.push(if path.is_empty() {
            "<root>".into()
        } else {
            path.into()
        }),
        _ => {}
    }
}
