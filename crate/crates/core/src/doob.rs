//! Doob-transformed generator `L̃f = η⁻¹(L + λ₀)(ηf)`, time stepping of
//! measures under `L` (conditioned laws) and under `L̃`, and the χ₂ decay
//! curve of `η*φ_t(μ)` towards `β = η²*γ`.
//!
//! Measures evolve on the adjoint side with Crank–Nicolson. The first two
//! steps are replaced by four backward-Euler half-steps (Rannacher start):
//! plain Crank–Nicolson barely damps the stiffest modes, which then pollute
//! distances between a rough initial law and the flow for a long time.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_measure::{chi2_divergence, tilt, Grid1D, GridMeasure};
use crate::io;
use crate::linalg::{tri_matvec, tri_matvec_transpose, TriFactor};
use crate::spectral::{EigenPair, TridiagonalOperator};

/// Relative negative density that rejects a step.
pub const NEGATIVE_TOL: f64 = 1e-10;
/// Allowed mass drift of the conservative (transformed) flow.
pub const MASS_TOL: f64 = 1e-10;
/// Survival weights below this are reported as underflow.
pub const SURVIVAL_FLOOR: f64 = 1e-290;

/// Time-stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Upper bound on the step size.
    pub dt: f64,
    /// Constant σ added to the generator while stepping the conditioned
    /// flow (`L + σ`); survival is corrected by `e^{−σt}`. Using `σ = λ₀`
    /// makes the stepping map an exact conjugate of the transformed one.
    pub shift: f64,
    /// Backward-Euler half-steps replacing the first Crank–Nicolson steps.
    pub startup_half_steps: usize,
    /// Renormalize the unnormalized density every this many steps.
    pub renormalize_every: usize,
}

impl FlowOptions {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { dt, shift: 0.0, startup_half_steps: 4, renormalize_every: 50 })
    }

    /// `dt = min(h, 0.01/λ₀)`.
    pub fn default_for(grid: &Grid1D, lambda0: f64) -> Self {
        let dt = if lambda0 > 0.0 { grid.h().min(0.01 / lambda0) } else { grid.h() };
        Self { dt, shift: 0.0, startup_half_steps: 4, renormalize_every: 50 }
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_startup(mut self, half_steps: usize) -> Self {
        self.startup_half_steps = half_steps;
        self
    }
}

/// Tridiagonal matrix acting on densities, plus the stepping machinery.
struct MeasureStepper<'a> {
    lower: &'a [f64],
    diag: Vec<f64>,
    upper: &'a [f64],
    grid: Grid1D,
}

impl<'a> MeasureStepper<'a> {
    /// `M = Aᵀ + σI` for the function-side generator `A`.
    fn new(parts: (&'a [f64], &'a [f64], &'a [f64]), shift: f64, grid: Grid1D) -> Self {
        let (lower, diag, upper) = parts;
        // Transposition swaps the off-diagonals.
        Self { lower: upper, diag: diag.iter().map(|d| d + shift).collect(), upper: lower, grid }
    }

    /// Evolves a normalized density for time `t`. Returns the normalized
    /// density and the log of the total mass gained under `M`.
    fn run(&self, mut p: Vec<f64>, t: f64, opts: &FlowOptions) -> Result<(Vec<f64>, f64)> {
        if t < 0.0 || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
        }
        if !(opts.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", opts.dt)));
        }
        if t == 0.0 {
            return Ok((p, 0.0));
        }
        let steps = ((t / opts.dt) - 1e-9).ceil().max(1.0) as usize;
        let k = t / steps as f64;
        let n = p.len();
        // I − (k/2)M serves both the Crank–Nicolson step and the backward-Euler half-step.
        let implicit_diag: Vec<f64> = self.diag.iter().map(|d| 1.0 - 0.5 * k * d).collect();
        let implicit_lower: Vec<f64> = self.lower.iter().map(|v| -0.5 * k * v).collect();
        let implicit_upper: Vec<f64> = self.upper.iter().map(|v| -0.5 * k * v).collect();
        let factor = TriFactor::new(&implicit_lower, &implicit_diag, &implicit_upper)?;
        let explicit_diag: Vec<f64> = self.diag.iter().map(|d| 1.0 + 0.5 * k * d).collect();
        let explicit_lower: Vec<f64> = self.lower.iter().map(|v| 0.5 * k * v).collect();
        let explicit_upper: Vec<f64> = self.upper.iter().map(|v| 0.5 * k * v).collect();

        let half_steps = opts.startup_half_steps.min(2 * steps) & !1;
        let cn_steps = steps - half_steps / 2;
        let h = self.grid.h();
        let mut log_mass = 0.0;
        let mut rhs = vec![0.0; n];
        let mut since_norm = 0;
        let mut elapsed = 0.0;
        let renorm = |p: &mut Vec<f64>, log_mass: &mut f64| -> Result<()> {
            let s = h * p.iter().sum::<f64>();
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Underflow { log_weight: *log_mass });
            }
            *log_mass += s.ln();
            p.iter_mut().for_each(|v| *v /= s);
            Ok(())
        };
        for step in 0..half_steps + cn_steps {
            if step < half_steps {
                factor.solve_in_place(&mut p);
                elapsed += 0.5 * k;
            } else {
                tri_matvec(&explicit_lower, &explicit_diag, &explicit_upper, &p, &mut rhs);
                std::mem::swap(&mut p, &mut rhs);
                factor.solve_in_place(&mut p);
                elapsed += k;
            }
            let max = p.iter().cloned().fold(0.0_f64, f64::max);
            let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
            if !(min >= -NEGATIVE_TOL * max) {
                return Err(Error::StepRejected { t: elapsed, value: min / max });
            }
            since_norm += 1;
            if since_norm == opts.renormalize_every {
                renorm(&mut p, &mut log_mass)?;
                since_norm = 0;
            }
        }
        renorm(&mut p, &mut log_mass)?;
        p.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok((p, log_mass))
    }
}

/// Conditioned law at time `t` with its survival weight.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    /// `φ_t(μ)`.
    pub mu_t: GridMeasure,
    /// `μP_t𝟙`.
    pub survival_weight: f64,
    pub log_survival: f64,
    /// `χ₂(η*φ_t(μ) | β)` when an eigenpair was supplied.
    pub chi2_to_beta: Option<f64>,
}

/// Evolves `μ` under the sub-Markovian semigroup and conditions on survival.
pub fn conditioned_flow(op: &TridiagonalOperator, mu: &GridMeasure, t: f64, opts: &FlowOptions) -> Result<FlowState> {
    if mu.grid() != op.grid() {
        return Err(Error::GridMismatch);
    }
    if t == 0.0 {
        return Ok(FlowState { t, mu_t: mu.clone(), survival_weight: 1.0, log_survival: 0.0, chi2_to_beta: None });
    }
    let stepper = MeasureStepper::new(op.parts(), opts.shift, *op.grid());
    let (p, log_mass) = stepper.run(mu.density().to_vec(), t, opts)?;
    let log_survival = log_mass - opts.shift * t;
    if log_survival < SURVIVAL_FLOOR.ln() {
        return Err(Error::Underflow { log_weight: log_survival });
    }
    Ok(FlowState {
        t,
        mu_t: GridMeasure::new(*op.grid(), p)?,
        survival_weight: log_survival.exp(),
        log_survival,
        chi2_to_beta: None,
    })
}

/// Conditioned laws at increasing `times`, restarting from each normalized
/// state (the semi-flow property); log survival accumulates across segments.
pub fn conditioned_trajectory(
    op: &TridiagonalOperator,
    mu: &GridMeasure,
    times: &[f64],
    opts: &FlowOptions,
) -> Result<Vec<FlowState>> {
    check_times(times)?;
    let mut out = Vec::with_capacity(times.len());
    let mut current = mu.clone();
    let mut t_prev = 0.0;
    let mut log_s = 0.0;
    for &t in times {
        let seg = conditioned_flow(op, &current, t - t_prev, opts)?;
        log_s += seg.log_survival;
        if log_s < SURVIVAL_FLOOR.ln() {
            return Err(Error::Underflow { log_weight: log_s });
        }
        current = seg.mu_t;
        out.push(FlowState {
            t,
            mu_t: current.clone(),
            survival_weight: log_s.exp(),
            log_survival: log_s,
            chi2_to_beta: None,
        });
        t_prev = t;
    }
    Ok(out)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument("times must be finite and nonnegative".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("times must be nondecreasing".into()));
    }
    Ok(())
}

/// Markovian generator of the Doob transform, with its invariant weights.
#[derive(Debug, Clone)]
pub struct TransformedOperator {
    base: TridiagonalOperator,
    eigen: EigenPair,
    diag: Vec<f64>,
    upper: Vec<f64>,
    lower: Vec<f64>,
    beta_weights: Vec<f64>,
}

/// Row-by-row conjugation `η⁻¹(L + λ₀)η`; the diagonal is set to minus the
/// off-diagonal sum so constants are annihilated exactly.
pub fn doob_generator(op: &TridiagonalOperator, eigen: &EigenPair) -> Result<TransformedOperator> {
    if eigen.grid() != op.grid() {
        return Err(Error::GridMismatch);
    }
    let eta = eigen.eta();
    if let Some(i) = eta.iter().position(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument(format!("eta must be positive (node {i})")));
    }
    let n = eta.len();
    let upper: Vec<f64> = (0..n - 1).map(|i| op.upper()[i] * eta[i + 1] / eta[i]).collect();
    let lower: Vec<f64> = (0..n - 1).map(|i| op.lower()[i] * eta[i] / eta[i + 1]).collect();
    let diag = (0..n)
        .map(|i| {
            let mut s = 0.0;
            if i > 0 {
                s += lower[i - 1];
            }
            if i + 1 < n {
                s += upper[i];
            }
            -s
        })
        .collect();
    let beta_weights = eta.iter().zip(op.gamma_weights()).map(|(e, g)| e * e * g).collect();
    Ok(TransformedOperator { base: op.clone(), eigen: eigen.clone(), diag, upper, lower, beta_weights })
}

impl TransformedOperator {
    pub fn base(&self) -> &TridiagonalOperator {
        &self.base
    }

    pub fn eigen(&self) -> &EigenPair {
        &self.eigen
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// `η²e^{−(V − v_shift)}` at the nodes.
    pub fn beta_weights(&self) -> &[f64] {
        &self.beta_weights
    }

    /// β as a probability measure.
    pub fn beta(&self) -> GridMeasure {
        GridMeasure::new(*self.base.grid(), self.beta_weights.clone()).expect("beta weights are positive")
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        tri_matvec(&self.lower, &self.diag, &self.upper, f, &mut out);
        out
    }

    pub fn apply_transpose(&self, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.len()];
        tri_matvec_transpose(&self.lower, &self.diag, &self.upper, m, &mut out);
        out
    }

    /// First-order coefficient `h(L̃[i][i+1] − L̃[i][i−1])` at interior rows:
    /// the drift of the transformed diffusion.
    pub fn drift(&self) -> Vec<f64> {
        let h = self.base.grid().h();
        let n = self.diag.len();
        (0..n)
            .map(|i| {
                let up = if i + 1 < n { self.upper[i] } else { 0.0 };
                let down = if i > 0 { self.lower[i - 1] } else { 0.0 };
                h * (up - down)
            })
            .collect()
    }

    /// Largest relative mismatch `|β_i U_i − β_{i+1} L_i|`.
    pub fn symmetry_residual(&self) -> f64 {
        let b = &self.beta_weights;
        (0..self.upper.len())
            .map(|i| {
                let x = b[i] * self.upper[i];
                let y = b[i + 1] * self.lower[i];
                (x - y).abs() / x.abs().max(y.abs())
            })
            .fold(0.0, f64::max)
    }

    fn parts(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.lower, &self.diag, &self.upper)
    }
}

/// `νP̃_t` by Crank–Nicolson on the measure side.
pub fn evolve_transformed(tilde: &TransformedOperator, nu: &GridMeasure, t: f64, opts: &FlowOptions) -> Result<GridMeasure> {
    let grid = *tilde.base.grid();
    if nu.grid() != &grid {
        return Err(Error::GridMismatch);
    }
    if t == 0.0 {
        return Ok(nu.clone());
    }
    let stepper = MeasureStepper::new(tilde.parts(), 0.0, grid);
    let (p, log_mass) = stepper.run(nu.density().to_vec(), t, &FlowOptions { shift: 0.0, ..*opts })?;
    if log_mass.abs() > MASS_TOL {
        return Err(Error::MassDrift { drift: log_mass.exp_m1() });
    }
    GridMeasure::new(grid, p)
}

/// `χ₂(η*μ | β)`.
pub fn chi2_to_beta(tilde: &TransformedOperator, mu: &GridMeasure) -> Result<f64> {
    chi2_divergence(&tilt(tilde.eigen.eta(), mu)?, &tilde.beta())
}

/// TV distance between `η*φ_t(μ)` and `(η*μ)P̃_t`.
///
/// The conditioned side is stepped on `L + λ₀` so both sides apply the same
/// rational stepping map to conjugate matrices; the residual then measures
/// the conjugation itself rather than time-discretization error.
pub fn checkpoint_residual(
    op: &TridiagonalOperator,
    eigen: &EigenPair,
    mu: &GridMeasure,
    t: f64,
    opts: &FlowOptions,
) -> Result<f64> {
    let tilde = doob_generator(op, eigen)?;
    let lhs = tilt(eigen.eta(), &conditioned_flow(op, mu, t, &opts.with_shift(eigen.lambda0()))?.mu_t)?;
    let rhs = evolve_transformed(&tilde, &tilt(eigen.eta(), mu)?, t, opts)?;
    crate::grid_measure::tv_distance(&lhs, &rhs)
}

/// One point of a χ₂ decay curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Chi2Point {
    #[serde(serialize_with = "io::ser_f64")]
    pub t: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub chi2: f64,
}

/// `χ₂(η*φ_t(μ) | β)` at each requested time, by restarting the
/// conditioned flow from the previous checkpoint.
pub fn chi2_decay_curve(
    op: &TridiagonalOperator,
    eigen: &EigenPair,
    mu: &GridMeasure,
    times: &[f64],
    opts: &FlowOptions,
) -> Result<Vec<Chi2Point>> {
    let tilde = doob_generator(op, eigen)?;
    let states = conditioned_trajectory(op, mu, times, opts)?;
    states
        .iter()
        .map(|s| Ok(Chi2Point { t: s.t, chi2: chi2_to_beta(&tilde, &s.mu_t)? }))
        .collect()
}
