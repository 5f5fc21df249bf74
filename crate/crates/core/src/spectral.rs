//! Discretized sub-Markovian generator `L = ½Δ − ½V′∂ₓ` with Dirichlet
//! (absorbing) ends, its principal eigenpair and spectral gap, the
//! quasi-stationary distribution `α = η*γ`, tensorization, and the kernel
//! identities satisfied by η for processes coming down from infinity.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_measure::{cumulative_trapezoid, quadrature, Grid1D, GridMeasure};
use crate::io;
use crate::linalg::{tri_matvec, tri_matvec_transpose, TriFactor};
use crate::potential::PotentialSpec;

/// Successive Rayleigh quotients closer than this (relative) stop the iteration.
pub const RQ_TOL: f64 = 1e-13;
/// Inverse-iteration cap.
pub const MAX_ITERATIONS: usize = 500;

/// Tridiagonal discretization of the generator on the interior nodes.
///
/// `upper[i] = L[i][i+1]` and `lower[i] = L[i+1][i]`. The stored γ weights
/// are `e^{−(V − v_shift)}` with `v_shift` the minimum of `V` over nodes and
/// midpoints, which keeps them in `(0, 1]`.
#[derive(Debug, Clone)]
pub struct TridiagonalOperator {
    grid: Grid1D,
    diag: Vec<f64>,
    upper: Vec<f64>,
    lower: Vec<f64>,
    gamma_weights: Vec<f64>,
    v_nodes: Vec<f64>,
    v_shift: f64,
}

impl TridiagonalOperator {
    /// Builds an operator from raw coefficients. `gamma_weights` must make
    /// it symmetric; see [`TridiagonalOperator::symmetry_residual`].
    pub fn from_parts(
        grid: Grid1D,
        diag: Vec<f64>,
        upper: Vec<f64>,
        lower: Vec<f64>,
        gamma_weights: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.n();
        if diag.len() != n || gamma_weights.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: diag.len().min(gamma_weights.len()) });
        }
        if upper.len() != n - 1 || lower.len() != n - 1 {
            return Err(Error::LengthMismatch { expected: n - 1, found: upper.len().min(lower.len()) });
        }
        let v_nodes = gamma_weights.iter().map(|g| -g.ln()).collect();
        Ok(Self { grid, diag, upper, lower, gamma_weights, v_nodes, v_shift: 0.0 })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
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

    /// `e^{−(V_i − v_shift)}` at the nodes.
    pub fn gamma_weights(&self) -> &[f64] {
        &self.gamma_weights
    }

    /// Unshifted `V` at the nodes.
    pub fn potential_values(&self) -> Vec<f64> {
        self.v_nodes.iter().map(|v| v + self.v_shift).collect()
    }

    pub fn v_shift(&self) -> f64 {
        self.v_shift
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        tri_matvec(&self.lower, &self.diag, &self.upper, f, &mut out);
        out
    }

    /// Action on measures (densities w.r.t. Lebesgue on the uniform grid).
    pub fn apply_transpose(&self, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.len()];
        tri_matvec_transpose(&self.lower, &self.diag, &self.upper, m, &mut out);
        out
    }

    /// Largest relative mismatch `|γ_i U_i − γ_{i+1} L_i| / max(·)`.
    pub fn symmetry_residual(&self) -> f64 {
        let g = &self.gamma_weights;
        (0..self.upper.len())
            .map(|i| {
                let a = g[i] * self.upper[i];
                let b = g[i + 1] * self.lower[i];
                let s = a.abs().max(b.abs());
                if s == 0.0 {
                    0.0
                } else {
                    (a - b).abs() / s
                }
            })
            .fold(0.0, f64::max)
    }

    /// Diagonal and off-diagonal of `D^{1/2} L D^{−1/2}`, `D = diag(γ)`.
    pub fn symmetrized(&self) -> (Vec<f64>, Vec<f64>) {
        let off = self.upper.iter().zip(&self.lower).map(|(u, l)| (u * l).sqrt()).collect();
        (self.diag.clone(), off)
    }

    pub(crate) fn parts(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.lower, &self.diag, &self.upper)
    }
}

/// Divergence-form assembly on the interior nodes with Dirichlet ends.
pub fn assemble_generator(spec: &PotentialSpec, grid: &Grid1D) -> Result<TridiagonalOperator> {
    let n = grid.n();
    let h = grid.h();
    let v_nodes = spec.values_on(grid)?;
    // Midpoint k sits between node k−1 and node k; midpoints 0 and n touch the ends.
    let v_mid: Vec<f64> = (0..=n)
        .map(|k| spec.evaluate(grid.x_min() + (k as f64 + 0.5) * h).map(|p| p.v))
        .collect::<Result<_>>()?;
    let v_shift = v_nodes.iter().chain(&v_mid).cloned().fold(f64::INFINITY, f64::min);
    if !v_shift.is_finite() {
        return Err(Error::Overflow("potential on the grid".into()));
    }
    let c = 1.0 / (2.0 * h * h);
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n - 1];
    let mut lower = vec![0.0; n - 1];
    for i in 0..n {
        let left = c * (v_nodes[i] - v_mid[i]).exp();
        let right = c * (v_nodes[i] - v_mid[i + 1]).exp();
        if !(left.is_finite() && right.is_finite()) {
            return Err(Error::Overflow(format!("generator row {i}; refine the grid")));
        }
        diag[i] = -(left + right);
        if i + 1 < n {
            upper[i] = right;
        }
        if i > 0 {
            lower[i - 1] = left;
        }
    }
    let gamma_weights: Vec<f64> = v_nodes.iter().map(|v| (-(v - v_shift)).exp()).collect();
    if let Some(i) = gamma_weights.iter().position(|g| *g < 1e-300) {
        return Err(Error::Overflow(format!(
            "e^(-V) underflows at x = {}; truncate the domain",
            grid.node(i)
        )));
    }
    let v_nodes = v_nodes.iter().map(|v| v - v_shift).collect();
    Ok(TridiagonalOperator { grid: *grid, diag, upper, lower, gamma_weights, v_nodes, v_shift })
}

/// How η is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `γ_h(η²) = γ_h(η)`, i.e. `α(η) = 1` at the discrete level.
    AlphaUnit,
    /// Analytic formula with `α(η) = 1` in the continuum.
    AnalyticAlphaUnit,
    /// No particular scale.
    Unnormalized,
}

/// Principal eigenvalue λ₀ and positive eigenfunction η of `−L_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    grid: Grid1D,
    lambda0: f64,
    eta: Vec<f64>,
    lambda1: Option<f64>,
    normalization: Normalization,
}

#[derive(Serialize)]
struct EigenJson {
    #[serde(serialize_with = "io::ser_f64")]
    lambda0: f64,
    #[serde(serialize_with = "io::ser_opt_f64")]
    lambda1: Option<f64>,
    normalization: Normalization,
}

impl EigenPair {
    pub fn new(
        grid: Grid1D,
        lambda0: f64,
        eta: Vec<f64>,
        lambda1: Option<f64>,
        normalization: Normalization,
    ) -> Result<Self> {
        if eta.len() != grid.n() {
            return Err(Error::LengthMismatch { expected: grid.n(), found: eta.len() });
        }
        if !(lambda0.is_finite() && lambda0 > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda0 must be positive, got {lambda0}")));
        }
        if let Some(node) = eta.iter().position(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::SignChange { node });
        }
        if let Some(l1) = lambda1 {
            if !(l1 > lambda0) {
                return Err(Error::DegenerateSpectrum { lambda0, lambda1: l1 });
            }
        }
        Ok(Self { grid, lambda0, eta, lambda1, normalization })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn lambda1(&self) -> Option<f64> {
        self.lambda1
    }

    pub fn gap(&self) -> Option<f64> {
        self.lambda1.map(|l| l - self.lambda0)
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// JSON object `{lambda0, lambda1, normalization}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&EigenJson {
            lambda0: self.lambda0,
            lambda1: self.lambda1,
            normalization: self.normalization,
        })?)
    }

    /// Writes `eigen.json` and `eta.csv` into `dir`.
    pub fn write_to<P: AsRef<Path>>(&self, dir: P) -> Result<()> {
        let dir = dir.as_ref();
        io::write_atomic(dir.join("eigen.json"), self.to_json()?.as_bytes())?;
        io::write_columns(dir.join("eta.csv"), &["x", "eta"], &[&self.grid.nodes(), &self.eta])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(x: &mut [f64]) {
    let s = dot(x, x).sqrt();
    x.iter_mut().for_each(|v| *v /= s);
}

/// Inverse iteration for the smallest eigenvalue of the SPD matrix `B`
/// behind `factor`, optionally orthogonal to `deflate`.
fn inverse_iteration(factor: &TriFactor, start: Vec<f64>, deflate: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    let project = |x: &mut [f64]| {
        if let Some(q) = deflate {
            let c = dot(q, x);
            x.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
        }
    };
    let mut x = start;
    project(&mut x);
    normalize(&mut x);
    let mut prev = f64::NAN;
    let mut prev_step = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let mut y = x.clone();
        factor.solve_in_place(&mut y);
        project(&mut y);
        // With B y = x: yᵀBy / yᵀy = xᵀy / yᵀy.
        let rq = dot(&x, &y) / dot(&y, &y);
        normalize(&mut y);
        // The quotient settles quadratically faster than the vector, so the
        // iterate must settle too (or stop improving, at the rounding floor).
        let sign = if dot(&x, &y) < 0.0 { -1.0 } else { 1.0 };
        let step = x.iter().zip(&y).fold(0.0_f64, |m, (a, b)| m.max((a - sign * b).abs()));
        x = y;
        if (rq - prev).abs() < RQ_TOL * rq.abs() && (step < 1e-14 || step >= 0.5 * prev_step) {
            return Ok((rq, x));
        }
        prev = rq;
        prev_step = step;
    }
    Err(Error::NonConvergence { iterations: MAX_ITERATIONS })
}

struct SymmetricSolve {
    lambda0: f64,
    y0: Vec<f64>,
    factor: TriFactor,
}

fn solve_principal(op: &TridiagonalOperator) -> Result<SymmetricSolve> {
    let (d, off) = op.symmetrized();
    let neg_d: Vec<f64> = d.iter().map(|v| -v).collect();
    let neg_off: Vec<f64> = off.iter().map(|v| -v).collect();
    let factor = TriFactor::new(&neg_off, &neg_d, &neg_off)?;
    let start: Vec<f64> = op.gamma_weights.iter().map(|g| g.sqrt()).collect();
    let (lambda0, mut y0) = inverse_iteration(&factor, start, None)?;
    let mid = y0.len() / 2;
    if y0[mid] < 0.0 {
        y0.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(SymmetricSolve { lambda0, y0, factor })
}

fn eta_from_symmetric(op: &TridiagonalOperator, y0: &[f64]) -> Result<Vec<f64>> {
    let mut eta: Vec<f64> = y0.iter().zip(&op.gamma_weights).map(|(y, g)| y / g.sqrt()).collect();
    if let Some(node) = eta.iter().position(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::SignChange { node });
    }
    // Scale so that γ_h(η²) = γ_h(η); independent of the γ shift.
    let g_eta: f64 = eta.iter().zip(&op.gamma_weights).map(|(e, g)| e * g).sum();
    let g_eta2: f64 = eta.iter().zip(&op.gamma_weights).map(|(e, g)| e * e * g).sum();
    let c = g_eta / g_eta2;
    eta.iter_mut().for_each(|e| *e *= c);
    Ok(eta)
}

/// λ₀ and η by inverse iteration on the γ-symmetrized operator.
pub fn principal_eigenpair(op: &TridiagonalOperator) -> Result<EigenPair> {
    let s = solve_principal(op)?;
    let eta = eta_from_symmetric(op, &s.y0)?;
    EigenPair::new(op.grid, s.lambda0, eta, None, Normalization::AlphaUnit)
}

fn second_eigenvalue(op: &TridiagonalOperator, s: &SymmetricSolve) -> Result<f64> {
    let n = s.y0.len();
    let centre = op.grid.x_min() + 0.5 * (op.grid.x_max() - op.grid.x_min());
    // Odd-looking start plus a fixed aperiodic perturbation so no mode is missed.
    let start: Vec<f64> = (0..n)
        .map(|i| {
            let x = op.grid.node(i) - centre;
            s.y0[i] * (x + 0.1 * (1.0 + (i as f64 * 0.618_033_988_7).fract()))
        })
        .collect();
    let (lambda1, _) = inverse_iteration(&s.factor, start, Some(&s.y0))?;
    if !(lambda1 > s.lambda0) {
        return Err(Error::DegenerateSpectrum { lambda0: s.lambda0, lambda1 });
    }
    Ok(lambda1)
}

/// The two smallest eigenvalues `(λ₀, λ₁)` of `−L_h`.
pub fn spectral_gap(op: &TridiagonalOperator) -> Result<(f64, f64)> {
    let s = solve_principal(op)?;
    let l1 = second_eigenvalue(op, &s)?;
    Ok((s.lambda0, l1))
}

/// Principal eigenpair with λ₁ filled in.
pub fn solve_eigen(op: &TridiagonalOperator) -> Result<EigenPair> {
    let s = solve_principal(op)?;
    let l1 = second_eigenvalue(op, &s)?;
    let eta = eta_from_symmetric(op, &s.y0)?;
    EigenPair::new(op.grid, s.lambda0, eta, Some(l1), Normalization::AlphaUnit)
}

/// `‖L_h η + λ₀ η‖_∞ / ‖η‖_∞`.
pub fn eigen_residual(op: &TridiagonalOperator, eigen: &EigenPair) -> f64 {
    let le = op.apply(&eigen.eta);
    let num = le
        .iter()
        .zip(&eigen.eta)
        .map(|(a, e)| (a + eigen.lambda0 * e).abs())
        .fold(0.0, f64::max);
    num / eigen.eta.iter().cloned().fold(0.0, f64::max)
}

/// `γ_h(η²) / γ_h(η)`, which is 1 under [`Normalization::AlphaUnit`].
pub fn alpha_of_eta(op: &TridiagonalOperator, eigen: &EigenPair) -> f64 {
    let g = &op.gamma_weights;
    let a: f64 = eigen.eta.iter().zip(g).map(|(e, w)| e * e * w).sum();
    let b: f64 = eigen.eta.iter().zip(g).map(|(e, w)| e * w).sum();
    a / b
}

/// Largest discrete `(log η)″` over the nodes, skipping the two extreme ones.
pub fn log_concavity_defect(eigen: &EigenPair) -> f64 {
    let s: Vec<f64> = eigen.eta.iter().map(|e| e.ln()).collect();
    let h2 = eigen.grid.h() * eigen.grid.h();
    (1..s.len() - 1)
        .map(|i| (s[i + 1] - 2.0 * s[i] + s[i - 1]) / h2)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Normalized `η·e^{−V}` on the nodes.
fn eta_gamma(eigen: &EigenPair, spec: &PotentialSpec) -> Result<Vec<f64>> {
    let v = spec.values_on(&eigen.grid)?;
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(eigen.eta.iter().zip(&v).map(|(e, v)| e * (-(v - vmin)).exp()).collect())
}

/// The quasi-stationary distribution `α = η*γ`.
pub fn qsd_from_eigen(eigen: &EigenPair, spec: &PotentialSpec) -> Result<GridMeasure> {
    GridMeasure::new(eigen.grid, eta_gamma(eigen, spec)?)
}

/// `β = η²*γ`, the invariant law of the Doob-transformed process.
pub fn beta_from_eigen(eigen: &EigenPair, spec: &PotentialSpec) -> Result<GridMeasure> {
    let eg = eta_gamma(eigen, spec)?;
    GridMeasure::new(eigen.grid, eg.iter().zip(&eigen.eta).map(|(a, e)| a * e).collect())
}

/// Tensor-product eigenfunction `η = ∏ η_i` with `λ₀ = Σ λ₀,i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductEigenPair {
    pub factors: Vec<EigenPair>,
    pub lambda0_total: f64,
}

impl ProductEigenPair {
    /// Spectral gap of the product generator: the smallest factor gap.
    pub fn gap(&self) -> Option<f64> {
        self.factors.iter().map(|f| f.gap()).try_fold(f64::INFINITY, |m, g| g.map(|g| m.min(g)))
    }
}

pub fn tensor_eigen(factors: Vec<EigenPair>) -> Result<ProductEigenPair> {
    if factors.is_empty() {
        return Err(Error::Empty("tensor_eigen needs at least one factor"));
    }
    let lambda0_total = factors.iter().map(|f| f.lambda0).sum();
    Ok(ProductEigenPair { factors, lambda0_total })
}

/// Residuals of the kernel identity for η and its derivative forms, each
/// relative to the sup norm of the left-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResiduals {
    /// `η(x)` vs `4λ₀∫(x∧y)η(y)γ(dy)`.
    #[serde(serialize_with = "io::ser_f64")]
    pub kernel: f64,
    /// `η′(x)` vs `4λ₀∫ₓ η dγ`.
    #[serde(serialize_with = "io::ser_f64")]
    pub first_derivative: f64,
    /// `η″(x)` vs `−4λ₀η(x)e^{−V(x)}`.
    #[serde(serialize_with = "io::ser_f64")]
    pub second_derivative: f64,
    /// `e^{−V(x)}η′(x)` vs `2λ₀∫ₓ η dγ`: the first integral of the
    /// eigen-equation of `½Δ − ½V′∂ₓ`.
    #[serde(serialize_with = "io::ser_f64")]
    pub flux: f64,
}

/// Kernel-identity residuals on `(0, x_max)` with unnormalized `γ = e^{−V}dx`.
pub fn integral_identity_residual(eigen: &EigenPair, spec: &PotentialSpec) -> Result<IdentityResiduals> {
    let grid = eigen.grid;
    if grid.x_min() != 0.0 {
        return Err(Error::WrongDomain(format!(
            "the kernel identity lives on (0, x_max); grid starts at {}",
            grid.x_min()
        )));
    }
    let n = grid.n();
    let h = grid.h();
    let lam = eigen.lambda0;
    let x = grid.nodes();
    let eta = &eigen.eta;
    let v = spec.values_on(&grid)?;
    let w: Vec<f64> = v.iter().map(|v| (-v).exp()).collect();
    if w.iter().any(|w| !w.is_finite()) {
        return Err(Error::Overflow("e^(-V) in the kernel identity".into()));
    }
    let g: Vec<f64> = eta.iter().zip(&w).map(|(e, w)| e * w).collect();
    let yg: Vec<f64> = g.iter().zip(&x).map(|(g, x)| g * x).collect();
    let cum_g = cumulative_trapezoid(&g, &grid)?;
    let cum_yg = cumulative_trapezoid(&yg, &grid)?;
    let total_g = quadrature(&g, &grid)?;
    let tail: Vec<f64> = cum_g.iter().map(|c| total_g - c).collect();

    let at = |i: isize| if i < 0 || i >= n as isize { 0.0 } else { eta[i as usize] };
    let d1: Vec<f64> = (0..n as isize).map(|i| (at(i + 1) - at(i - 1)) / (2.0 * h)).collect();
    let d2: Vec<f64> = (0..n as isize).map(|i| (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (h * h)).collect();

    let sup = |v: &[f64]| v.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
    let rel = |lhs: &[f64], rhs: &[f64]| {
        let d: Vec<f64> = lhs.iter().zip(rhs).map(|(a, b)| a - b).collect();
        sup(&d) / sup(lhs)
    };
    let kernel_rhs: Vec<f64> = (0..n).map(|i| 4.0 * lam * (cum_yg[i] + x[i] * tail[i])).collect();
    let first_rhs: Vec<f64> = tail.iter().map(|t| 4.0 * lam * t).collect();
    let second_rhs: Vec<f64> = (0..n).map(|i| -4.0 * lam * eta[i] * w[i]).collect();
    let flux_lhs: Vec<f64> = d1.iter().zip(&w).map(|(d, w)| d * w).collect();
    let flux_rhs: Vec<f64> = tail.iter().map(|t| 2.0 * lam * t).collect();
    Ok(IdentityResiduals {
        kernel: rel(eta, &kernel_rhs),
        first_derivative: rel(&d1, &first_rhs),
        second_derivative: rel(&d2, &second_rhs),
        flux: rel(&flux_lhs, &flux_rhs),
    })
}
