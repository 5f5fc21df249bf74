//! Closed-form examples, the explicit constants of the convergence bound,
//! decay-rate fits and end-to-end decay reports.
//!
//! A report evolves a conditioned law on the grid, measures its distance to
//! the QSD in TV, W₁ and χ₂ (the latter as `χ₂(η*φ_t(μ) | β)`, i.e. after
//! tilting both sides by η), fits exponential rates after the burn-in time
//! and checks the measured curves against the certified bounds.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::doob::{chi2_decay_curve, chi2_to_beta, conditioned_flow, conditioned_trajectory, doob_generator, FlowOptions};
use crate::error::{Error, Result};
use crate::fit::least_squares;
use crate::grid_measure::{quadrature_extrapolated, tv_distance, w1_distance, Grid1D, GridMeasure};
use crate::io;
use crate::potential::{be_constant, cdfi_rate, certified_rate, effective_second_derivative, CdfiForm, PotentialSpec};
use crate::spectral::{assemble_generator, qsd_from_eigen, solve_eigen, EigenPair, Normalization, TridiagonalOperator};

/// Burn-in is over once `α(ψ²/η̂)·χ₂²` drops below this.
pub const BURN_IN_THRESHOLD: f64 = 0.9;
/// Distances below this are discretization noise and are left out of fits.
pub const FIT_FLOOR: f64 = 1e-12;
/// Relative slack on the TV bounds and the sandwich bracket.
pub const BOUND_SLACK: f64 = 1e-3;
/// Relative slack on the χ₂ contraction check.
pub const CHI2_SLACK: f64 = 1e-4;

/// `(a, b) = (1 + 1/(1 − √0.9), 1/(1 − √0.9))`.
pub fn ab_constants() -> (f64, f64) {
    let b = 1.0 / (1.0 - BURN_IN_THRESHOLD.sqrt());
    (1.0 + b, b)
}

/// The two examples with explicit eigenpairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum ClosedFormExample {
    /// Brownian motion on `(−N, N)^d`.
    BrownianHypercube { half_width: f64, dim: usize },
    /// `V(x) = λ|x|²` on `(0, ∞)^d`.
    OrnsteinUhlenbeck { lambda: f64, dim: usize },
}

impl ClosedFormExample {
    pub fn brownian(half_width: f64, dim: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidArgument(format!("half width N must be positive, got {half_width}")));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        Ok(Self::BrownianHypercube { half_width, dim })
    }

    pub fn ornstein_uhlenbeck(lambda: f64, dim: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        Ok(Self::OrnsteinUhlenbeck { lambda, dim })
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::BrownianHypercube { .. } => "brownian_hypercube",
            Self::OrnsteinUhlenbeck { .. } => "ornstein_uhlenbeck",
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Self::BrownianHypercube { dim, .. } | Self::OrnsteinUhlenbeck { dim, .. } => dim,
        }
    }

    /// Potential of one coordinate.
    pub fn spec(&self) -> PotentialSpec {
        match *self {
            Self::BrownianHypercube { .. } => PotentialSpec::Zero,
            Self::OrnsteinUhlenbeck { lambda, .. } => PotentialSpec::Quadratic { lambda },
        }
    }

    /// Interval of one coordinate.
    pub fn interval(&self) -> (f64, f64) {
        match *self {
            Self::BrownianHypercube { half_width, .. } => (-half_width, half_width),
            Self::OrnsteinUhlenbeck { .. } => (0.0, f64::INFINITY),
        }
    }

    /// One-coordinate η, scaled so that `α(η) = 1`.
    pub fn eta(&self, x: f64) -> f64 {
        match *self {
            Self::BrownianHypercube { half_width, .. } => 4.0 / PI * (PI * x / (2.0 * half_width)).cos(),
            Self::OrnsteinUhlenbeck { lambda, .. } => 2.0 * (lambda / PI).sqrt() * x,
        }
    }

    /// One-coordinate QSD density.
    pub fn alpha_density(&self, x: f64) -> f64 {
        match *self {
            Self::BrownianHypercube { half_width, .. } => {
                PI / (4.0 * half_width) * (PI * x / (2.0 * half_width)).cos()
            }
            Self::OrnsteinUhlenbeck { lambda, .. } => 2.0 * lambda * x * (-lambda * x * x).exp(),
        }
    }

    /// λ₀ of one coordinate.
    pub fn lambda0_1d(&self) -> f64 {
        match *self {
            Self::BrownianHypercube { half_width, .. } => (PI / (2.0 * half_width)).powi(2) / 2.0,
            Self::OrnsteinUhlenbeck { lambda, .. } => lambda,
        }
    }

    /// λ₀ of the d-dimensional process.
    pub fn lambda0(&self) -> f64 {
        self.dim() as f64 * self.lambda0_1d()
    }

    /// `λ₁ − λ₀`, the same in every dimension.
    pub fn gap(&self) -> f64 {
        match *self {
            Self::BrownianHypercube { half_width, .. } => 3.0 / 8.0 * (PI / half_width).powi(2),
            Self::OrnsteinUhlenbeck { lambda, .. } => 2.0 * lambda,
        }
    }

    /// The published Bakry–Émery rate: `(π/2N)²` and `2λ`.
    pub fn kappa(&self) -> f64 {
        match *self {
            Self::BrownianHypercube { half_width, .. } => (PI / (2.0 * half_width)).powi(2),
            Self::OrnsteinUhlenbeck { lambda, .. } => 2.0 * lambda,
        }
    }

    /// `α(1/η)`: `(π²/8)^d` and `(π/2)^d`.
    pub fn alpha_inv_eta(&self) -> f64 {
        let per = match self {
            Self::BrownianHypercube { .. } => PI * PI / 8.0,
            Self::OrnsteinUhlenbeck { .. } => PI / 2.0,
        };
        per.powi(self.dim() as i32)
    }

    /// Asymptotic prefactor `d(d−1)/(4λ)·(π/2)^d`, for OU with `d ≥ 2`.
    pub fn prefactor_cd(&self) -> Option<f64> {
        match *self {
            Self::OrnsteinUhlenbeck { lambda, dim } if dim >= 2 => {
                let d = dim as f64;
                Some(d * (d - 1.0) / (4.0 * lambda) * (PI / 2.0).powi(dim as i32))
            }
            _ => None,
        }
    }

    pub fn constants(&self) -> ClosedFormConstants {
        ClosedFormConstants {
            lambda0: self.lambda0(),
            gap: self.gap(),
            kappa: self.kappa(),
            alpha_inv_eta: self.alpha_inv_eta(),
            prefactor_cd: self.prefactor_cd(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedFormConstants {
    #[serde(serialize_with = "io::ser_f64")]
    pub lambda0: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub gap: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub kappa: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub alpha_inv_eta: f64,
    #[serde(serialize_with = "io::ser_opt_f64")]
    pub prefactor_cd: Option<f64>,
}

/// Analytic one-coordinate eigenpair and QSD sampled on a grid, with the
/// constants of the full d-dimensional example.
#[derive(Debug, Clone)]
pub struct ClosedForm {
    pub eigen: EigenPair,
    pub alpha: GridMeasure,
    pub constants: ClosedFormConstants,
}

pub fn closed_form(example: &ClosedFormExample, grid: &Grid1D) -> Result<ClosedForm> {
    let (lo, hi) = example.interval();
    if grid.x_min() < lo || grid.x_max() > hi {
        return Err(Error::InvalidArgument(format!(
            "grid [{}, {}] leaves the interval ({lo}, {hi}) of {}",
            grid.x_min(),
            grid.x_max(),
            example.id()
        )));
    }
    let l0 = example.lambda0_1d();
    let eigen = EigenPair::new(
        *grid,
        l0,
        grid.sample(|x| example.eta(x)),
        Some(l0 + example.gap()),
        Normalization::AnalyticAlphaUnit,
    )?;
    let alpha = GridMeasure::new(*grid, grid.sample(|x| example.alpha_density(x)))?;
    Ok(ClosedForm { eigen, alpha, constants: example.constants() })
}

/// Constants of the bound `C_ψ = (a + bα(ψ))·α(ψ²/η̂)^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    #[serde(serialize_with = "io::ser_f64")]
    pub a: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub b: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub c_psi: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub alpha_psi: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub alpha_psi2_over_eta: f64,
}

/// `C_ψ` and its ingredients, with η̂ = η/α(η).
///
/// `α(ψ²/η̂)` uses the endpoint-extrapolated trapezoid rule: `α/η` does not
/// vanish at an absorbing end.
pub fn bound_constants(psi: &[f64], eigen: &EigenPair, alpha: &GridMeasure) -> Result<BoundConstants> {
    let grid = eigen.grid();
    if alpha.grid() != grid {
        return Err(Error::GridMismatch);
    }
    grid_len(psi, grid)?;
    if let Some(i) = psi.iter().position(|p| !(*p >= 1.0)) {
        return Err(Error::InvalidArgument(format!("psi must be >= 1, got {} at node {i}", psi[i])));
    }
    let alpha_eta = alpha.expectation(eigen.eta())?;
    let integrand: Vec<f64> = alpha
        .density()
        .iter()
        .zip(eigen.eta())
        .zip(psi)
        .map(|((a, e), p)| a * p * p * alpha_eta / e)
        .collect();
    let alpha_psi2_over_eta = quadrature_extrapolated(&integrand, grid)?;
    if !alpha_psi2_over_eta.is_finite() {
        return Err(Error::Divergent("alpha(psi^2/eta) is not finite".into()));
    }
    let alpha_psi = alpha.expectation(psi)?;
    let (a, b) = ab_constants();
    Ok(BoundConstants {
        a,
        b,
        c_psi: (a + b * alpha_psi) * alpha_psi2_over_eta.sqrt(),
        alpha_psi,
        alpha_psi2_over_eta,
    })
}

fn grid_len(v: &[f64], grid: &Grid1D) -> Result<()> {
    if v.len() != grid.n() {
        return Err(Error::LengthMismatch { expected: grid.n(), found: v.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BurnIn {
    #[serde(serialize_with = "io::ser_f64")]
    pub time: f64,
    /// False when the threshold was not crossed by the last sampled time,
    /// in which case `time` is that last time.
    pub reached: bool,
    /// Length of the smoothing step taken first when `χ₂(η*μ|β) = ∞`.
    #[serde(serialize_with = "io::ser_opt_f64")]
    pub smoothing: Option<f64>,
}

fn first_crossing(k: f64, times: &[f64], chi2: &[f64]) -> BurnIn {
    match times.iter().zip(chi2).find(|(_, c)| k * *c * *c < BURN_IN_THRESHOLD) {
        Some((t, _)) => BurnIn { time: *t, reached: true, smoothing: None },
        None => BurnIn { time: times.last().copied().unwrap_or(0.0), reached: false, smoothing: None },
    }
}

/// Smallest sampled `t` with `α(ψ²/η̂)·χ₂²(η*φ_t(μ)|β) < 0.9`, 0 if `μ`
/// already qualifies.
///
/// If `χ₂(η*μ|β)` is infinite the flow is first run for one step `dt` and
/// the search restarts from there (sampled times before it are skipped).
pub fn burn_in_time(
    op: &TridiagonalOperator,
    eigen: &EigenPair,
    alpha: &GridMeasure,
    psi: &[f64],
    mu: &GridMeasure,
    times: &[f64],
    opts: &FlowOptions,
) -> Result<BurnIn> {
    let k = bound_constants(psi, eigen, alpha)?.alpha_psi2_over_eta;
    let tilde = doob_generator(op, eigen)?;
    let chi0 = chi2_to_beta(&tilde, mu)?;
    if chi0.is_finite() {
        if k * chi0 * chi0 < BURN_IN_THRESHOLD {
            return Ok(BurnIn { time: 0.0, reached: true, smoothing: None });
        }
        let curve = chi2_decay_curve(op, eigen, mu, times, opts)?;
        let chi: Vec<f64> = curve.iter().map(|p| p.chi2).collect();
        return Ok(first_crossing(k, times, &chi));
    }
    let t0 = opts.dt;
    let start = conditioned_flow(op, mu, t0, opts)?.mu_t;
    if !chi2_to_beta(&tilde, &start)?.is_finite() {
        return Err(Error::Divergent("chi2 stays infinite after the smoothing step".into()));
    }
    let later: Vec<f64> = times.iter().copied().filter(|t| *t >= t0).collect();
    let shifted: Vec<f64> = later.iter().map(|t| t - t0).collect();
    let curve = chi2_decay_curve(op, eigen, &start, &shifted, opts)?;
    let chi: Vec<f64> = curve.iter().map(|p| p.chi2).collect();
    let mut b = first_crossing(k, &later, &chi);
    b.smoothing = Some(t0);
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// Positive for decay.
    #[serde(serialize_with = "io::ser_f64")]
    pub rate: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub intercept: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub r_squared: f64,
    pub points: usize,
}

/// Least squares of `log value` against `t` over the closed `window`.
pub fn fit_decay_rate(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::LengthMismatch { expected: times.len(), found: values.len() });
    }
    let mut t = Vec::new();
    let mut y = Vec::new();
    for (ti, v) in times.iter().zip(values) {
        if *ti < window.0 || *ti > window.1 {
            continue;
        }
        if !(*v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("value {v} at t = {ti} cannot be log-fitted")));
        }
        t.push(*ti);
        y.push(v.ln());
    }
    if t.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "window [{}, {}] holds {} points, need 5",
            window.0,
            window.1,
            t.len()
        )));
    }
    let f = least_squares(&t, &y)?;
    Ok(DecayFit { rate: -f.slope, intercept: f.intercept, r_squared: f.r_squared, points: t.len() })
}

/// κ̃ request: λ₀ lower bound (defaults to the computed λ₀), form and
/// optional probe window for the infimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfiSettings {
    pub lambda0_lower: Option<f64>,
    pub form: CdfiForm,
    pub probe: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct ReportConfig {
    pub id: String,
    pub spec: PotentialSpec,
    pub grid: Grid1D,
    pub mu: GridMeasure,
    /// Sample times; `t = 0` is prepended when missing.
    pub times: Vec<f64>,
    /// Defaults to [`FlowOptions::default_for`].
    pub flow: Option<FlowOptions>,
    /// Published κ to use in the bound checks instead of the certified one.
    pub kappa_override: Option<f64>,
    pub cdfi: Option<CdfiSettings>,
    /// Weight ψ ≥ 1; defaults to ψ ≡ 1.
    pub psi: Option<Vec<f64>>,
    /// Defaults to `[max(burn_in, 0.5/gap), 3/gap]`.
    pub fit_window: Option<(f64, f64)>,
    pub prefactor_cd: Option<f64>,
}

impl ReportConfig {
    pub fn new(id: impl Into<String>, spec: PotentialSpec, mu: GridMeasure, times: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            spec,
            grid: *mu.grid(),
            mu,
            times,
            flow: None,
            kappa_override: None,
            cdfi: None,
            psi: None,
            fit_window: None,
            prefactor_cd: None,
        }
    }

    /// Fills in the published constants of a closed-form example.
    pub fn for_example(example: &ClosedFormExample, mu: GridMeasure, times: Vec<f64>) -> Self {
        let mut c = Self::new(example.id(), example.spec(), mu, times);
        c.kappa_override = Some(example.kappa());
        c.prefactor_cd = example.prefactor_cd();
        c
    }
}

/// Outcome of the bound checks, each over the sampled times it applies to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundChecks {
    /// `TV ≤ C_ψ χ₂(0) e^{−gap·t}(1 + 1e−3)` for `t ≥ burn-in`.
    pub gap_bound: bool,
    /// Same with the κ used for the report.
    pub kappa_bound: bool,
    /// `χ₂²(t) ≤ e^{−2·gap·t} χ₂²(0)(1 + 1e−4)` at every sampled time.
    pub chi2_contraction: bool,
    /// Conditioned expectations of two test functions stay inside the
    /// bracket `[(α(f) − s)/(1 + s), (α(f) + s)/(1 − s)]` after burn-in.
    pub sandwich: bool,
    pub kappa_below_gap: bool,
    pub kappa_tilde_below_gap: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub id: String,
    pub potential: String,
    pub n: usize,
    #[serde(serialize_with = "io::ser_f64")]
    pub x_min: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub x_max: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub lambda0: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub lambda1: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub gap: f64,
    /// Certified rate from the effective potential: `inf W″ / 2`.
    #[serde(serialize_with = "io::ser_f64")]
    pub kappa: f64,
    #[serde(serialize_with = "io::ser_opt_f64")]
    pub kappa_override: Option<f64>,
    /// κ used in the bound checks.
    #[serde(serialize_with = "io::ser_f64")]
    pub kappa_bound: f64,
    #[serde(serialize_with = "io::ser_opt_f64")]
    pub kappa_tilde: Option<f64>,
    #[serde(serialize_with = "io::ser_vec_f64")]
    pub times: Vec<f64>,
    #[serde(serialize_with = "io::ser_vec_f64")]
    pub tv: Vec<f64>,
    #[serde(serialize_with = "io::ser_vec_f64")]
    pub w1: Vec<f64>,
    /// `χ₂(η*φ_t(μ) | β)`.
    #[serde(serialize_with = "io::ser_vec_f64")]
    pub chi2: Vec<f64>,
    #[serde(serialize_with = "io::ser_vec_f64")]
    pub survival_weight: Vec<f64>,
    #[serde(serialize_with = "io::ser_vec_f64")]
    pub log_survival: Vec<f64>,
    pub burn_in: BurnIn,
    #[serde(serialize_with = "io::ser_vec_f64")]
    pub fit_window: Vec<f64>,
    pub fit_tv: Option<DecayFit>,
    pub fit_w1: Option<DecayFit>,
    pub fit_chi2: Option<DecayFit>,
    pub constants: BoundConstants,
    #[serde(serialize_with = "io::ser_opt_f64")]
    pub prefactor_cd: Option<f64>,
    pub checks: BoundChecks,
    pub notes: Vec<String>,
}

impl DecayReport {
    pub fn fitted_rate_tv(&self) -> Option<f64> {
        self.fit_tv.map(|f| f.rate)
    }

    pub fn fitted_rate_w1(&self) -> Option<f64> {
        self.fit_w1.map(|f| f.rate)
    }

    pub fn fitted_rate_chi2(&self) -> Option<f64> {
        self.fit_chi2.map(|f| f.rate)
    }

    pub fn bound_constant(&self) -> f64 {
        self.constants.c_psi
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `t,tv,w1,chi2,survival_weight,log_survival`.
    pub fn curves_csv(&self) -> Result<Vec<u8>> {
        io::columns_to_csv(
            &["t", "tv", "w1", "chi2", "survival_weight", "log_survival"],
            &[&self.times, &self.tv, &self.w1, &self.chi2, &self.survival_weight, &self.log_survival],
        )
    }

    /// Writes `report.json` and `curves.csv` into `dir`.
    pub fn write_to<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        io::write_atomic(dir.join("report.json"), self.to_json()?.as_bytes())?;
        io::write_atomic(dir.join("curves.csv"), &self.curves_csv()?)
    }
}

fn fit_or_none(times: &[f64], values: &[f64], window: (f64, f64)) -> Option<DecayFit> {
    let (t, v): (Vec<f64>, Vec<f64>) =
        times.iter().zip(values).filter(|(_, v)| **v >= FIT_FLOOR).map(|(t, v)| (*t, *v)).unzip();
    fit_decay_rate(&t, &v, window).ok()
}

/// Runs the conditioned flow from `config.mu`, measures the distances to
/// the QSD and checks them against the certified bounds.
pub fn decay_report(config: &ReportConfig) -> Result<DecayReport> {
    let grid = config.grid;
    if config.mu.grid() != &grid {
        return Err(Error::GridMismatch);
    }
    let mut times = config.times.clone();
    if times.first() != Some(&0.0) {
        times.insert(0, 0.0);
    }
    let op = assemble_generator(&config.spec, &grid)?;
    let eigen = solve_eigen(&op)?;
    let alpha = qsd_from_eigen(&eigen, &config.spec)?;
    let lambda1 = eigen.lambda1().expect("solve_eigen fills lambda1");
    let gap = lambda1 - eigen.lambda0();
    let opts = config.flow.unwrap_or_else(|| FlowOptions::default_for(&grid, eigen.lambda0()));
    let psi = config.psi.clone().unwrap_or_else(|| vec![1.0; grid.n()]);
    let constants = bound_constants(&psi, &eigen, &alpha)?;

    let states = conditioned_trajectory(&op, &config.mu, &times, &opts)?;
    let tilde = doob_generator(&op, &eigen)?;
    let mut tv = Vec::with_capacity(times.len());
    let mut w1 = Vec::with_capacity(times.len());
    let mut chi2 = Vec::with_capacity(times.len());
    for s in &states {
        tv.push(tv_distance(&s.mu_t, &alpha)?);
        w1.push(w1_distance(&s.mu_t, &alpha)?);
        chi2.push(chi2_to_beta(&tilde, &s.mu_t)?);
    }
    let mut notes = Vec::new();
    if !chi2[0].is_finite() {
        return Err(Error::Divergent(
            "chi2(eta*mu | beta) is infinite; start from a smoother initial law".into(),
        ));
    }
    let k = constants.alpha_psi2_over_eta;
    let burn_in = first_crossing(k, &times, &chi2);
    if !burn_in.reached {
        notes.push("burn-in threshold not reached within the sampled times".into());
    }

    let w = effective_second_derivative(&config.spec, &eigen)?;
    let kappa = certified_rate(be_constant(&w.w_second)?.value);
    let kappa_bound = config.kappa_override.unwrap_or(kappa);
    let kappa_tilde = match config.cdfi {
        Some(c) => {
            let l0 = c.lambda0_lower.unwrap_or(eigen.lambda0());
            Some(cdfi_rate(&config.spec, l0, &grid, c.form, c.probe)?.value)
        }
        None => None,
    };

    let window = config
        .fit_window
        .unwrap_or((burn_in.time.max(0.5 / gap), 3.0 / gap));
    let fit_tv = fit_or_none(&times, &tv, window);
    let fit_w1 = fit_or_none(&times, &w1, window);
    let fit_chi2 = fit_or_none(&times, &chi2, window);
    if let (Some(f), true) = (fit_tv, fit_tv.is_some_and(|f| f.rate > gap + 0.5)) {
        notes.push(format!(
            "fitted TV rate {} exceeds the gap {gap}: the initial law barely excites the second eigenfunction",
            f.rate
        ));
    }

    let after: Vec<usize> = (0..times.len()).filter(|&i| burn_in.reached && times[i] >= burn_in.time).collect();
    let c = constants.c_psi * chi2[0];
    let gap_bound = after.iter().all(|&i| tv[i] <= c * (-gap * times[i]).exp() * (1.0 + BOUND_SLACK));
    let kappa_ok = after.iter().all(|&i| tv[i] <= c * (-kappa_bound * times[i]).exp() * (1.0 + BOUND_SLACK));
    let chi2_contraction = (0..times.len())
        .all(|i| chi2[i] * chi2[i] <= (-2.0 * gap * times[i]).exp() * chi2[0] * chi2[0] * (1.0 + CHI2_SLACK));
    let sandwich = sandwich_holds(&grid, &alpha, &states, &chi2, &times, &after, k.sqrt(), gap)?;

    Ok(DecayReport {
        id: config.id.clone(),
        potential: config.spec.id(),
        n: grid.n(),
        x_min: grid.x_min(),
        x_max: grid.x_max(),
        lambda0: eigen.lambda0(),
        lambda1,
        gap,
        kappa,
        kappa_override: config.kappa_override,
        kappa_bound,
        kappa_tilde,
        survival_weight: states.iter().map(|s| s.survival_weight).collect(),
        log_survival: states.iter().map(|s| s.log_survival).collect(),
        times,
        tv,
        w1,
        chi2,
        burn_in,
        fit_window: vec![window.0, window.1],
        fit_tv,
        fit_w1,
        fit_chi2,
        constants,
        prefactor_cd: config.prefactor_cd,
        checks: BoundChecks {
            gap_bound,
            kappa_bound: kappa_ok,
            chi2_contraction,
            sandwich,
            kappa_below_gap: kappa_bound <= gap,
            kappa_tilde_below_gap: kappa_tilde.map(|k| k <= gap),
        },
        notes,
    })
}

/// Bracket check for `f = 1_{x ≤ centre}` and `f = (x − x_min)/(x_max − x_min)`,
/// restarting the bracket at the burn-in time.
#[allow(clippy::too_many_arguments)]
fn sandwich_holds(
    grid: &Grid1D,
    alpha: &GridMeasure,
    states: &[crate::doob::FlowState],
    chi2: &[f64],
    times: &[f64],
    after: &[usize],
    sqrt_k: f64,
    gap: f64,
) -> Result<bool> {
    let Some(&b) = after.first() else {
        return Ok(true);
    };
    let centre = 0.5 * (grid.x_min() + grid.x_max());
    let tests = [
        grid.sample(|x| if x <= centre { 1.0 } else { 0.0 }),
        grid.sample(|x| (x - grid.x_min()) / (grid.x_max() - grid.x_min())),
    ];
    for f in &tests {
        let af = alpha.expectation(f)?;
        for &i in after {
            let s = sqrt_k * chi2[b] * (-gap * (times[i] - times[b])).exp();
            let v = states[i].mu_t.expectation(f)?;
            let slack = BOUND_SLACK * s + 1e-12;
            if v < (af - s) / (1.0 + s) - slack || v > (af + s) / (1.0 - s) + slack {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Marginal reports of a product initial law plus the additive bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductReport {
    pub factors: Vec<DecayReport>,
    #[serde(serialize_with = "io::ser_f64")]
    pub lambda0_total: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub gap: f64,
    /// Smallest factor κ.
    #[serde(serialize_with = "io::ser_f64")]
    pub kappa: f64,
    #[serde(serialize_with = "io::ser_opt_f64")]
    pub kappa_tilde_min: Option<f64>,
    /// Largest factor `C_ψ`.
    #[serde(serialize_with = "io::ser_f64")]
    pub bound_constant: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub burn_in_time: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub chi2_sum_initial: f64,
    #[serde(serialize_with = "io::ser_vec_f64")]
    pub times: Vec<f64>,
    /// `Σ_i TV_i(t)`, an upper bound for the TV of the product laws.
    #[serde(serialize_with = "io::ser_vec_f64")]
    pub tv_sum: Vec<f64>,
    /// TV of the product laws themselves, for two factors.
    pub tv_product: Option<Vec<f64>>,
    /// `Σ_i W₁_i(t)`, which is the W₁ of the product laws.
    #[serde(serialize_with = "io::ser_vec_f64")]
    pub w1_sum: Vec<f64>,
    /// `Σ TV_i ≤ max C_i · Σ χ₂_i(0) · e^{−κt}` after the burn-in.
    pub additive_tv_bound: bool,
    /// The same for W₁ with `C_i` scaled by half the interval length.
    pub additive_w1_bound: bool,
    /// `min κ̃_i` is below every fitted marginal TV rate.
    pub kappa_tilde_below_fitted: Option<bool>,
    pub notes: Vec<String>,
}

/// Runs the factor reports concurrently and combines them.
pub fn product_report(configs: &[ReportConfig]) -> Result<ProductReport> {
    if configs.is_empty() {
        return Err(Error::Empty("product report needs at least one factor"));
    }
    let factors: Vec<DecayReport> = configs.par_iter().map(decay_report).collect::<Result<_>>()?;
    let times = factors[0].times.clone();
    if factors.iter().any(|f| f.times != times) {
        return Err(Error::ShapeMismatch("factor reports must share their sample times".into()));
    }
    let m = times.len();
    let sum_over = |sel: fn(&DecayReport) -> &Vec<f64>| -> Vec<f64> {
        (0..m).map(|i| factors.iter().map(|f| sel(f)[i]).sum()).collect()
    };
    let tv_sum = sum_over(|f| &f.tv);
    let w1_sum = sum_over(|f| &f.w1);
    let kappa = factors.iter().map(|f| f.kappa_bound).fold(f64::INFINITY, f64::min);
    let gap = factors.iter().map(|f| f.gap).fold(f64::INFINITY, f64::min);
    let bound_constant = factors.iter().map(|f| f.constants.c_psi).fold(0.0, f64::max);
    let w1_constant = factors
        .iter()
        .map(|f| f.constants.c_psi * 0.5 * (f.x_max - f.x_min))
        .fold(0.0, f64::max);
    let reached = factors.iter().all(|f| f.burn_in.reached);
    let burn_in_time = factors.iter().map(|f| f.burn_in.time).fold(0.0, f64::max);
    let chi2_sum_initial: f64 = factors.iter().map(|f| f.chi2[0]).sum();
    let after: Vec<usize> = (0..m).filter(|&i| reached && times[i] >= burn_in_time).collect();
    let bound = |c: f64, i: usize| c * chi2_sum_initial * (-kappa * times[i]).exp() * (1.0 + BOUND_SLACK);
    let additive_tv_bound = after.iter().all(|&i| tv_sum[i] <= bound(bound_constant, i));
    let additive_w1_bound = after.iter().all(|&i| w1_sum[i] <= bound(w1_constant, i));

    let tv_product = if configs.len() == 2 { Some(product_tv_2d(configs, &factors)?) } else { None };

    let kappa_tilde_min = factors
        .iter()
        .map(|f| f.kappa_tilde)
        .try_fold(f64::INFINITY, |m, k| k.map(|k| m.min(k)));
    let kappa_tilde_below_fitted = kappa_tilde_min.map(|kt| {
        factors.iter().all(|f| f.fitted_rate_tv().is_some_and(|r| kt <= r))
    });
    let mut notes = vec![
        "tensor eigenfunction eta = prod eta_i with lambda0 = sum lambda0_i; product distances are built from the marginals".to_string(),
    ];
    if !reached {
        notes.push("some factor did not reach its burn-in threshold".into());
    }
    Ok(ProductReport {
        lambda0_total: factors.iter().map(|f| f.lambda0).sum(),
        factors,
        gap,
        kappa,
        kappa_tilde_min,
        bound_constant,
        burn_in_time,
        chi2_sum_initial,
        times,
        tv_sum,
        tv_product,
        w1_sum,
        additive_tv_bound,
        additive_w1_bound,
        kappa_tilde_below_fitted,
        notes,
    })
}

/// Exact TV between `φ_t(μ₁) ⊗ φ_t(μ₂)` and `α₁ ⊗ α₂` at the report times.
fn product_tv_2d(configs: &[ReportConfig], factors: &[DecayReport]) -> Result<Vec<f64>> {
    let mut laws = Vec::new();
    for c in configs {
        let op = assemble_generator(&c.spec, &c.grid)?;
        let eigen = solve_eigen(&op)?;
        let alpha = qsd_from_eigen(&eigen, &c.spec)?;
        let opts = c.flow.unwrap_or_else(|| FlowOptions::default_for(&c.grid, eigen.lambda0()));
        let states = conditioned_trajectory(&op, &c.mu, &factors[0].times, &opts)?;
        laws.push((alpha.masses(), states.into_iter().map(|s| s.mu_t.masses()).collect::<Vec<_>>()));
    }
    let (a1, s1) = &laws[0];
    let (a2, s2) = &laws[1];
    Ok((0..s1.len())
        .map(|i| {
            let (p1, p2) = (&s1[i], &s2[i]);
            p1.iter()
                .zip(a1)
                .map(|(x, y)| p2.iter().zip(a2).map(|(u, v)| (x * u - y * v).abs()).sum::<f64>())
                .sum()
        })
        .collect())
}

impl ProductReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
        (0..=k).map(|i| a + (b - a) * i as f64 / k as f64).collect()
    }

    #[test]
    fn a_and_b() {
        let (a, b) = ab_constants();
        assert_relative_eq!(b, 1.0 / (1.0 - 0.9f64.sqrt()), epsilon = 1e-14);
        assert!((a - 20.4868).abs() < 1e-4 && (b - 19.4868).abs() < 1e-4);
        assert_eq!(a - b, 1.0);
    }

    #[test]
    fn registry_constants() {
        let b = ClosedFormExample::brownian(1.0, 1).unwrap();
        assert_relative_eq!(b.kappa(), PI * PI / 4.0);
        assert_relative_eq!(b.gap(), 3.0 / 8.0 * PI * PI);
        assert_relative_eq!(b.lambda0(), PI * PI / 8.0);
        assert_relative_eq!(ClosedFormExample::brownian(2.0, 3).unwrap().alpha_inv_eta(), (PI * PI / 8.0).powi(3));
        let o = ClosedFormExample::ornstein_uhlenbeck(1.5, 1).unwrap();
        assert_eq!(o.kappa(), 3.0);
        assert_eq!(o.prefactor_cd(), None);
        let o3 = ClosedFormExample::ornstein_uhlenbeck(2.0, 3).unwrap();
        assert_relative_eq!(o3.prefactor_cd().unwrap(), 6.0 / 8.0 * (PI / 2.0).powi(3));
        assert!(ClosedFormExample::brownian(0.0, 1).is_err());
        assert!(ClosedFormExample::ornstein_uhlenbeck(1.0, 0).is_err());
    }

    #[test]
    fn closed_form_quadratures() {
        let ex = ClosedFormExample::brownian(1.0, 1).unwrap();
        let g = Grid1D::new(-1.0, 1.0, 3999).unwrap();
        let cf = closed_form(&ex, &g).unwrap();
        let bc = bound_constants(&vec![1.0; g.n()], &cf.eigen, &cf.alpha).unwrap();
        assert!((bc.alpha_psi2_over_eta - PI * PI / 8.0).abs() < 1e-6);
        assert!((bc.alpha_psi - 1.0).abs() < 1e-12);
        let (a, b) = ab_constants();
        assert_relative_eq!(bc.c_psi, (a + b) * bc.alpha_psi2_over_eta.sqrt(), max_relative = 1e-14);

        let ex = ClosedFormExample::ornstein_uhlenbeck(1.0, 1).unwrap();
        let g = Grid1D::new(0.0, 8.0, 7999).unwrap();
        let cf = closed_form(&ex, &g).unwrap();
        let bc = bound_constants(&vec![1.0; g.n()], &cf.eigen, &cf.alpha).unwrap();
        assert!((bc.alpha_psi2_over_eta - PI / 2.0).abs() < 1e-6);
        let psi = g.sample(|x| 1.0 + (x - 1.0).abs());
        assert!(bound_constants(&psi, &cf.eigen, &cf.alpha).unwrap().c_psi.is_finite());
        assert!(bound_constants(&vec![0.5; g.n()], &cf.eigen, &cf.alpha).is_err());
        assert!(closed_form(&ex, &Grid1D::new(-1.0, 1.0, 9).unwrap()).is_err());
    }

    #[test]
    fn analytic_and_computed_eigenpairs_agree() {
        let ex = ClosedFormExample::ornstein_uhlenbeck(1.0, 1).unwrap();
        let g = Grid1D::new(0.0, 8.0, 3999).unwrap();
        let cf = closed_form(&ex, &g).unwrap();
        let op = assemble_generator(&ex.spec(), &g).unwrap();
        let alpha = qsd_from_eigen(&solve_eigen(&op).unwrap(), &ex.spec()).unwrap();
        assert!(tv_distance(&alpha, &cf.alpha).unwrap() < 1e-4);
    }

    #[test]
    fn fit_examples() {
        let t = linspace(0.0, 2.0, 20);
        let v: Vec<f64> = t.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        let f = fit_decay_rate(&t, &v, (0.0, 2.0)).unwrap();
        assert!((f.rate - 2.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let mut z = v.clone();
        z[5] = 0.0;
        assert!(fit_decay_rate(&t, &z, (0.0, 2.0)).is_err());
        assert!(fit_decay_rate(&t, &z, (1.0, 2.0)).is_ok());
        assert!(fit_decay_rate(&t, &v, (0.0, 0.3)).is_err());
    }

    struct Setup {
        op: TridiagonalOperator,
        eigen: EigenPair,
        alpha: GridMeasure,
    }

    fn setup(spec: &PotentialSpec, g: Grid1D) -> Setup {
        let op = assemble_generator(spec, &g).unwrap();
        let eigen = solve_eigen(&op).unwrap();
        let alpha = qsd_from_eigen(&eigen, spec).unwrap();
        Setup { op, eigen, alpha }
    }

    #[test]
    fn burn_in_examples() {
        let g = Grid1D::new(-1.0, 1.0, 399).unwrap();
        let s = setup(&PotentialSpec::Zero, g);
        let opts = FlowOptions::new(1e-3).unwrap();
        let ones = vec![1.0; g.n()];
        let times = linspace(0.0, 2.0, 200);
        let b = burn_in_time(&s.op, &s.eigen, &s.alpha, &ones, &s.alpha, &times, &opts).unwrap();
        assert_eq!((b.time, b.reached), (0.0, true));

        let mu = GridMeasure::uniform_on(g, -1.0, -0.5).unwrap();
        let b = burn_in_time(&s.op, &s.eigen, &s.alpha, &ones, &mu, &times, &opts).unwrap();
        // Oracle: threshold crossing read off an independently computed curve.
        let k = bound_constants(&ones, &s.eigen, &s.alpha).unwrap().alpha_psi2_over_eta;
        let curve = chi2_decay_curve(&s.op, &s.eigen, &mu, &times, &opts).unwrap();
        let i = curve.iter().position(|p| k * p.chi2 * p.chi2 < 0.9).unwrap();
        assert!(i > 0);
        assert_eq!(b.time, curve[i].t);
        assert!(b.reached);

        let point = GridMeasure::point_mass(g, 50).unwrap();
        let b = burn_in_time(&s.op, &s.eigen, &s.alpha, &ones, &point, &times, &opts).unwrap();
        assert!(b.reached && b.time > 0.0 && b.time < 2.0);

        let b = burn_in_time(&s.op, &s.eigen, &s.alpha, &ones, &point, &times[..3], &opts).unwrap();
        assert!(!b.reached);
        assert_eq!(b.time, times[2]);
    }

    #[test]
    fn brownian_report() {
        let ex = ClosedFormExample::brownian(1.0, 1).unwrap();
        let g = Grid1D::new(-1.0, 1.0, 999).unwrap();
        let mu = GridMeasure::from_fn(g, |x| 1.0 + x).unwrap();
        let mut cfg = ReportConfig::for_example(&ex, mu, linspace(0.0, 2.0, 100));
        cfg.flow = Some(FlowOptions::new(1e-3).unwrap());
        let r = decay_report(&cfg).unwrap();
        assert!(r.checks.gap_bound && r.checks.kappa_bound && r.checks.chi2_contraction && r.checks.sandwich);
        assert!(r.checks.kappa_below_gap);
        assert!((r.kappa - ex.kappa()).abs() < 1e-3);
        let tv_rate = r.fitted_rate_tv().unwrap();
        assert!(tv_rate >= ex.kappa() && tv_rate >= r.gap - 0.05, "{tv_rate}");
        // The default window still sees the second excited mode of this μ.
        assert!((r.fitted_rate_chi2().unwrap() - r.gap).abs() < 0.05);
        cfg.fit_window = Some((2.0 / r.gap, 6.0 / r.gap));
        let late = decay_report(&cfg).unwrap();
        assert!((late.fitted_rate_chi2().unwrap() - r.gap).abs() < 0.02, "{:?}", late.fit_chi2);
        assert_eq!(r.tv.len(), r.times.len());
        assert!(r.fit_window[0] >= r.burn_in.time);
    }

    #[test]
    fn ou_report_w1_rate() {
        let ex = ClosedFormExample::ornstein_uhlenbeck(1.0, 1).unwrap();
        let g = Grid1D::new(0.0, 6.0, 1199).unwrap();
        let mu = GridMeasure::uniform_on(g, 0.0, 1.0).unwrap();
        let r = decay_report(&ReportConfig::for_example(&ex, mu, linspace(0.0, 3.0, 150))).unwrap();
        assert!(r.fitted_rate_w1().unwrap() >= 2.0 - 0.05);
        assert!(r.checks.gap_bound && r.checks.kappa_bound);
        // Certified rate from W″ is half the published one here.
        assert!(r.kappa > 0.95 && r.kappa < 1.1, "{}", r.kappa);
    }

    #[test]
    fn shifted_power_cdfi_report() {
        let spec = PotentialSpec::shifted_power(3.0).unwrap();
        let g = Grid1D::new(0.0, 3.0, 1499).unwrap();
        let mu = GridMeasure::uniform_on(g, 0.0, 1.0).unwrap();
        let mut cfg = ReportConfig::new("shifted_power", spec, mu, linspace(0.0, 0.6, 120));
        cfg.cdfi = Some(CdfiSettings { lambda0_lower: Some(1.0), form: CdfiForm::Refined, probe: None });
        let r = decay_report(&cfg).unwrap();
        let kt = r.kappa_tilde.unwrap();
        assert!(kt >= 6.0);
        assert!(r.fitted_rate_tv().unwrap() >= kt - 0.05);
        assert_eq!(r.checks.kappa_tilde_below_gap, Some(true));
    }

    #[test]
    fn product_report_sums_marginals() {
        let g = Grid1D::new(-1.0, 1.0, 199).unwrap();
        let ex = ClosedFormExample::brownian(1.0, 1).unwrap();
        let times = linspace(0.0, 1.5, 60);
        let c1 = ReportConfig::for_example(&ex, GridMeasure::from_fn(g, |x| 1.0 + x).unwrap(), times.clone());
        let c2 = ReportConfig::for_example(&ex, GridMeasure::from_fn(g, |x| 1.0 - 0.5 * x).unwrap(), times);
        let p = product_report(&[c1, c2]).unwrap();
        assert_eq!(p.lambda0_total, p.factors[0].lambda0 + p.factors[1].lambda0);
        assert!(p.additive_tv_bound && p.additive_w1_bound);
        let exact = p.tv_product.as_ref().unwrap();
        for (e, s) in exact.iter().zip(&p.tv_sum) {
            assert!(*e <= s + 1e-12);
        }
        assert!(p.kappa_tilde_min.is_none());
    }

    #[test]
    fn report_files() {
        let g = Grid1D::new(-1.0, 1.0, 99).unwrap();
        let ex = ClosedFormExample::brownian(1.0, 1).unwrap();
        let r = decay_report(&ReportConfig::for_example(&ex, GridMeasure::uniform(g), linspace(0.1, 1.0, 9))).unwrap();
        assert_eq!(r.times[0], 0.0);
        let dir = tempfile::tempdir().unwrap();
        r.write_to(dir.path()).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(v["id"], "brownian_hypercube");
        assert!(v["fit_tv"].is_object() || v["fit_tv"].is_null());
        let cols = io::read_columns(dir.path().join("curves.csv"), &["t", "tv", "chi2"]).unwrap();
        assert_eq!(cols[0].len(), 11);
    }
}
