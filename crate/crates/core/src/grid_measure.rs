//! Uniform grids, quadrature, probability measures on grids, and the
//! distances between them (TV, ψ-weighted TV, χ₂, W₁, relative entropy).
//!
//! A [`GridMeasure`] stores a density with respect to Lebesgue measure at
//! the interior nodes. Integrals use the trapezoid rule with the integrand
//! extended by zero at the absorbing endpoints, so the total mass of a
//! density `p` is `h * Σ p_i`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io;

/// ν-density below this value counts as zero for absolute continuity.
pub const NU_FLOOR: f64 = 1e-300;
/// μ-density above this value on a ν-null node makes χ₂ and entropy infinite.
pub const MU_FLOOR: f64 = 1e-14;

/// Uniform grid on `(x_min, x_max)` with `n` interior nodes.
///
/// The endpoints are the cemetery and carry no mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    n: usize,
    h: f64,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidGrid("endpoints must be finite".into()));
        }
        if x_min >= x_max {
            return Err(Error::InvalidGrid(format!(
                "empty interval: x_min = {x_min} >= x_max = {x_max}"
            )));
        }
        if n < 3 {
            return Err(Error::InvalidGrid(format!("n must be >= 3, got {n}")));
        }
        let h = (x_max - x_min) / (n as f64 + 1.0);
        Ok(Self { x_min, x_max, n, h })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Coordinate of interior node `i` (0-based).
    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 1.0) * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Samples `f` at every interior node.
    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.n).map(|i| f(self.node(i))).collect()
    }

    /// Index of the histogram cell containing `x`.
    ///
    /// Cells are centred at the nodes with width `h`; the two end cells
    /// absorb the half-strips next to the endpoints. A point exactly on a
    /// cell edge belongs to the lower cell.
    pub fn cell_index(&self, x: f64) -> usize {
        let u = (x - self.x_min) / self.h - 0.5;
        let k = u.ceil() - 1.0;
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n - 1)
        }
    }

    /// Index of the interior node nearest to `x`.
    pub fn nearest_node(&self, x: f64) -> usize {
        let k = ((x - self.x_min) / self.h - 1.0).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n - 1)
        }
    }

    fn check_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                found: values.len(),
            });
        }
        Ok(())
    }
}

/// Trapezoid rule with zero boundary values: `h * Σ values`.
pub fn quadrature(values: &[f64], grid: &Grid1D) -> Result<f64> {
    grid.check_len(values)?;
    Ok(grid.h * values.iter().sum::<f64>())
}

/// Trapezoid rule with endpoint values extrapolated linearly from the
/// two nearest nodes.
///
/// Use this for integrands that do not vanish on the boundary, e.g. ratios
/// like `ψ²α/η` where numerator and denominator vanish together; the
/// zero-extension rule would only be first-order accurate there.
pub fn quadrature_extrapolated(values: &[f64], grid: &Grid1D) -> Result<f64> {
    grid.check_len(values)?;
    let n = values.len();
    let left = 2.0 * values[0] - values[1];
    let right = 2.0 * values[n - 1] - values[n - 2];
    Ok(grid.h * (values.iter().sum::<f64>() + 0.5 * (left + right)))
}

/// Cumulative trapezoid integral at each node, zero at `x_min`.
pub fn cumulative_trapezoid(values: &[f64], grid: &Grid1D) -> Result<Vec<f64>> {
    grid.check_len(values)?;
    let h = grid.h;
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.5 * h * values[0];
    out.push(acc);
    for w in values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    Ok(out)
}

/// Probability measure given by a density at the interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    grid: Grid1D,
    density: Vec<f64>,
}

impl GridMeasure {
    /// Builds a measure from a nonnegative density, renormalizing to mass 1.
    pub fn new(grid: Grid1D, density: Vec<f64>) -> Result<Self> {
        grid.check_len(&density)?;
        if let Some(i) = density.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "density must be finite and nonnegative (node {i}: {})",
                density[i]
            )));
        }
        let mass = quadrature(&density, &grid)?;
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::ZeroMass);
        }
        let density = density.into_iter().map(|p| p / mass).collect();
        Ok(Self { grid, density })
    }

    pub fn uniform(grid: Grid1D) -> Self {
        let p = 1.0 / (grid.h * grid.n as f64);
        Self {
            grid,
            density: vec![p; grid.n],
        }
    }

    /// Density proportional to `f` sampled at the nodes.
    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid1D, f: F) -> Result<Self> {
        Self::new(grid, grid.sample(f))
    }

    /// Uniform law on the nodes lying in `[lo, hi]`.
    pub fn uniform_on(grid: Grid1D, lo: f64, hi: f64) -> Result<Self> {
        Self::from_fn(grid, |x| if x >= lo && x <= hi { 1.0 } else { 0.0 })
    }

    /// All mass on node `index`.
    pub fn point_mass(grid: Grid1D, index: usize) -> Result<Self> {
        if index >= grid.n {
            return Err(Error::InvalidArgument(format!(
                "node index {index} out of range for n = {}",
                grid.n
            )));
        }
        let mut density = vec![0.0; grid.n];
        density[index] = 1.0 / grid.h;
        Ok(Self { grid, density })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn into_density(self) -> Vec<f64> {
        self.density
    }

    /// Quadrature weights `h * p_i`.
    pub fn masses(&self) -> Vec<f64> {
        self.density.iter().map(|p| p * self.grid.h).collect()
    }

    /// μ(f) by quadrature.
    pub fn expectation(&self, f: &[f64]) -> Result<f64> {
        self.grid.check_len(f)?;
        Ok(self.grid.h * self.density.iter().zip(f).map(|(p, v)| p * v).sum::<f64>())
    }

    pub fn mean(&self) -> f64 {
        self.expectation(&self.grid.nodes()).expect("node count matches")
    }

    /// Cumulative distribution at the nodes (cumulative trapezoid).
    pub fn cdf(&self) -> Vec<f64> {
        cumulative_trapezoid(&self.density, &self.grid).expect("length matches grid")
    }

    /// Transfers the mass onto the cells of another (typically coarser)
    /// grid. Each node carries `h·p_i` spread uniformly over its own cell
    /// and is split by overlap, so nodes sitting on a target cell edge are
    /// shared rather than assigned by rounding.
    pub fn rebin(&self, target: &Grid1D) -> Result<GridMeasure> {
        let mut mass = vec![0.0; target.n];
        let h = self.grid.h;
        let edge_lo = |k: usize| if k == 0 { f64::NEG_INFINITY } else { target.node(k) - 0.5 * target.h };
        let edge_hi = |k: usize| if k + 1 == target.n { f64::INFINITY } else { target.node(k) + 0.5 * target.h };
        for (i, p) in self.density.iter().enumerate() {
            let (a, b) = (self.grid.node(i) - 0.5 * h, self.grid.node(i) + 0.5 * h);
            let first = target.cell_index(a);
            for (k, m) in mass.iter_mut().enumerate().take(target.cell_index(b) + 1).skip(first) {
                let overlap = b.min(edge_hi(k)) - a.max(edge_lo(k));
                if overlap > 0.0 {
                    *m += p * overlap;
                }
            }
        }
        let density = mass.into_iter().map(|m| m / target.h).collect();
        GridMeasure::new(*target, density)
    }

    pub fn to_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        io::write_columns(path, &["x", "density"], &[&self.grid.nodes(), &self.density])
    }

    /// Reads an `x,density` CSV. The node coordinates must match `grid`.
    pub fn from_csv<P: AsRef<Path>>(path: P, grid: Grid1D) -> Result<Self> {
        let cols = io::read_columns(path, &["x", "density"])?;
        grid.check_len(&cols[0])?;
        for (i, x) in cols[0].iter().enumerate() {
            if (x - grid.node(i)).abs() > 1e-9 * grid.h.max(1.0) {
                return Err(Error::GridMismatch);
            }
        }
        Self::new(grid, cols[1].clone())
    }
}

/// Product of one-dimensional measures, kept factorized.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductGridMeasure {
    factors: Vec<GridMeasure>,
}

impl ProductGridMeasure {
    pub fn new(factors: Vec<GridMeasure>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Empty("product measure needs at least one factor"));
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[GridMeasure] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }
}

fn same_grid(mu: &GridMeasure, nu: &GridMeasure) -> Result<()> {
    if mu.grid != nu.grid {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// `f*μ`: the measure with density proportional to `f·p`.
pub fn tilt(f: &[f64], mu: &GridMeasure) -> Result<GridMeasure> {
    mu.grid.check_len(f)?;
    if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(
            "tilting function must be finite and nonnegative".into(),
        ));
    }
    let density: Vec<f64> = f.iter().zip(&mu.density).map(|(a, b)| a * b).collect();
    GridMeasure::new(mu.grid, density)
}

/// Total variation with the `sup_{|f| ≤ 1}` convention (range `[0, 2]`).
pub fn tv_distance(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    same_grid(mu, nu)?;
    let s: f64 = mu
        .density
        .iter()
        .zip(&nu.density)
        .map(|(p, q)| (p - q).abs())
        .sum();
    Ok(mu.grid.h * s)
}

/// `sup_{|f| ≤ ψ} |μ(f) − ν(f)|`, requiring `ψ ≥ 1`.
pub fn weighted_tv(mu: &GridMeasure, nu: &GridMeasure, psi: &[f64]) -> Result<f64> {
    same_grid(mu, nu)?;
    mu.grid.check_len(psi)?;
    if let Some(i) = psi.iter().position(|v| !(*v >= 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "weight psi must be >= 1 (node {i}: {})",
            psi[i]
        )));
    }
    let s: f64 = mu
        .density
        .iter()
        .zip(&nu.density)
        .zip(psi)
        .map(|((p, q), w)| w * (p - q).abs())
        .sum();
    Ok(mu.grid.h * s)
}

/// One-dimensional W₁ as `∫|F_μ − F_ν|`.
pub fn w1_distance(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    same_grid(mu, nu)?;
    // Both CDFs are 0 at x_min and 1 at x_max, so the endpoint terms drop.
    let h = mu.grid.h;
    let mut f = 0.0;
    let mut g = 0.0;
    let mut prev_p = 0.0;
    let mut prev_q = 0.0;
    let mut acc = 0.0;
    for (p, q) in mu.density.iter().zip(&nu.density) {
        f += 0.5 * h * (prev_p + p);
        g += 0.5 * h * (prev_q + q);
        acc += (f - g).abs();
        prev_p = *p;
        prev_q = *q;
    }
    Ok(h * acc)
}

/// W₁ between product measures under the L¹ ground metric: the sum of the
/// marginal distances.
pub fn product_w1_distance(mu: &ProductGridMeasure, nu: &ProductGridMeasure) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::ShapeMismatch(format!(
            "product dimensions differ: {} vs {}",
            mu.dim(),
            nu.dim()
        )));
    }
    mu.factors
        .iter()
        .zip(&nu.factors)
        .map(|(a, b)| w1_distance(a, b))
        .sum()
}

/// χ₂(μ|ν) = `sqrt(∫ (dμ/dν − 1)² dν)`, or `+∞` when μ charges a node
/// where ν vanishes.
pub fn chi2_divergence(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    same_grid(mu, nu)?;
    let mut s = 0.0;
    for (p, q) in mu.density.iter().zip(&nu.density) {
        if *q < NU_FLOOR {
            if *p > MU_FLOOR {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        let d = p - q;
        s += d * d / q;
    }
    Ok((mu.grid.h * s).sqrt())
}

/// Relative entropy `∫ log(dμ/dν) dμ`, `+∞` on absolute-continuity failure.
pub fn entropy(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    same_grid(mu, nu)?;
    let mut s = 0.0;
    for (p, q) in mu.density.iter().zip(&nu.density) {
        if *q < NU_FLOOR {
            if *p > MU_FLOOR {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        if *p > 0.0 {
            s += p * (p / q).ln();
        }
    }
    Ok(mu.grid.h * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(a: f64, b: f64, n: usize) -> Grid1D {
        Grid1D::new(a, b, n).unwrap()
    }

    #[test]
    fn grid_nodes_and_spacing() {
        let g = grid(-1.0, 1.0, 3);
        assert_eq!(g.h(), 0.5);
        assert_eq!(g.nodes(), vec![-0.5, 0.0, 0.5]);

        let g = grid(0.0, 8.0, 7999);
        assert_relative_eq!(g.h(), 0.001, epsilon = 1e-15);
        assert_eq!(g.nodes().len(), 7999);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid1D::new(1.0, 1.0, 10).is_err());
        assert!(Grid1D::new(0.0, 1.0, 2).is_err());
        assert!(Grid1D::new(f64::NEG_INFINITY, 1.0, 10).is_err());
    }

    #[test]
    fn quadrature_of_constant_drops_half_cells() {
        let g = grid(-1.0, 1.0, 1999);
        let q = quadrature(&vec![1.0; 1999], &g).unwrap();
        assert_relative_eq!(q, 2.0 - g.h(), epsilon = 1e-12);
        assert!(quadrature(&[1.0; 5], &g).is_err());
    }

    #[test]
    fn quadrature_of_cosine() {
        let g = grid(-1.0, 1.0, 3999);
        let v = g.sample(|x| (std::f64::consts::FRAC_PI_2 * x).cos());
        let q = quadrature(&v, &g).unwrap();
        assert!((q - 4.0 / std::f64::consts::PI).abs() < 1e-6);
    }

    #[test]
    fn extrapolated_quadrature_is_second_order_for_nonvanishing_integrands() {
        let g = grid(0.0, 1.0, 999);
        let v = g.sample(|x| 1.0 + x * x);
        let q = quadrature_extrapolated(&v, &g).unwrap();
        assert!((q - 4.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn measure_normalizes() {
        let g = grid(0.0, 1.0, 50);
        let m = GridMeasure::from_fn(g, |x| x * (1.0 - x)).unwrap();
        assert_relative_eq!(quadrature(m.density(), &g).unwrap(), 1.0, epsilon = 1e-12);
        assert!(GridMeasure::new(g, vec![0.0; 50]).is_err());
        let mut bad = vec![1.0; 50];
        bad[3] = -1.0;
        assert!(GridMeasure::new(g, bad).is_err());
    }

    #[test]
    fn tilt_identity_and_composition() {
        let g = grid(0.0, 1.0, 20);
        let mu = GridMeasure::from_fn(g, |x| 1.0 + x).unwrap();
        let same = tilt(&[1.0; 20], &mu).unwrap();
        assert!(tv_distance(&same, &mu).unwrap() < 1e-14);

        let f = g.sample(|x| x + 0.1);
        let k = g.sample(|x| 2.0 - x);
        let fk: Vec<f64> = f.iter().zip(&k).map(|(a, b)| a * b).collect();
        let lhs = tilt(&f, &tilt(&k, &mu).unwrap()).unwrap();
        let rhs = tilt(&fk, &mu).unwrap();
        assert!(tv_distance(&lhs, &rhs).unwrap() < 1e-14);
        assert!(tilt(&[0.0; 20], &mu).is_err());
    }

    #[test]
    fn tilting_lebesgue_by_cosine_gives_brownian_qsd() {
        let n_half = 2.0;
        let g = grid(-n_half, n_half, 1999);
        let gamma = GridMeasure::uniform(g);
        let eta = g.sample(|x| (std::f64::consts::PI * x / (2.0 * n_half)).cos());
        let alpha = tilt(&eta, &gamma).unwrap();
        let c = std::f64::consts::PI / (4.0 * n_half);
        for (x, p) in g.nodes().iter().zip(alpha.density()) {
            let exact = c * (std::f64::consts::PI * x / (2.0 * n_half)).cos();
            assert!((p - exact).abs() < 1e-5);
        }
    }

    #[test]
    fn tv_examples() {
        let g = grid(0.0, 5.0, 4);
        let mu = GridMeasure::new(g, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let nu = GridMeasure::new(g, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_relative_eq!(tv_distance(&mu, &nu).unwrap(), 2.0, epsilon = 1e-14);
        assert_eq!(tv_distance(&mu, &mu).unwrap(), 0.0);

        // Hand sum: h = 1, p = (0.4, 0.3, 0.2, 0.1), q = (0.25, 0.25, 0.25, 0.25).
        let mu = GridMeasure::new(g, vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let nu = GridMeasure::new(g, vec![0.25; 4]).unwrap();
        assert_relative_eq!(tv_distance(&mu, &nu).unwrap(), 0.4, epsilon = 1e-14);
    }

    #[test]
    fn weighted_tv_examples() {
        let g = grid(0.0, 4.0, 3);
        let mu = GridMeasure::new(g, vec![0.5, 0.25, 0.25]).unwrap();
        let nu = GridMeasure::new(g, vec![0.25, 0.25, 0.5]).unwrap();
        // Nodes 1, 2, 3 with x0 = 1: psi = (1, 2, 3).
        let psi = g.sample(|x| 1.0 + (x - 1.0).abs());
        // 1·0.25 + 2·0 + 3·0.25 = 1.
        assert_relative_eq!(weighted_tv(&mu, &nu, &psi).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(
            weighted_tv(&mu, &nu, &[1.0; 3]).unwrap(),
            tv_distance(&mu, &nu).unwrap(),
            epsilon = 1e-15
        );
        assert_eq!(weighted_tv(&mu, &mu, &psi).unwrap(), 0.0);
        assert!(weighted_tv(&mu, &nu, &[0.5, 1.0, 1.0]).is_err());
    }

    #[test]
    fn w1_point_masses() {
        let g = grid(0.0, 1.0, 99);
        let a = GridMeasure::point_mass(g, 10).unwrap();
        let b = GridMeasure::point_mass(g, 60).unwrap();
        let w = w1_distance(&a, &b).unwrap();
        assert!((w - (g.node(60) - g.node(10))).abs() <= g.h());
    }

    #[test]
    fn w1_shifted_uniforms() {
        let g = grid(-1.0, 3.0, 3999);
        let a = GridMeasure::uniform_on(g, 0.0, 1.0).unwrap();
        let b = GridMeasure::uniform_on(g, 0.5, 1.5).unwrap();
        let w = w1_distance(&a, &b).unwrap();
        assert!((w - 0.5).abs() <= 2.0 * g.h());
    }

    #[test]
    fn w1_product_is_sum_of_marginals() {
        let g1 = grid(0.0, 1.0, 30);
        let g2 = grid(-2.0, 2.0, 41);
        let m1 = GridMeasure::from_fn(g1, |x| x).unwrap();
        let n1 = GridMeasure::uniform(g1);
        let m2 = GridMeasure::from_fn(g2, |x| (x * x).exp()).unwrap();
        let n2 = GridMeasure::from_fn(g2, |x| 4.0 - x * x).unwrap();
        let mu = ProductGridMeasure::new(vec![m1.clone(), m2.clone()]).unwrap();
        let nu = ProductGridMeasure::new(vec![n1.clone(), n2.clone()]).unwrap();
        let expected = w1_distance(&m1, &n1).unwrap() + w1_distance(&m2, &n2).unwrap();
        assert!((product_w1_distance(&mu, &nu).unwrap() - expected).abs() <= 1e-12);
        let short = ProductGridMeasure::new(vec![m1]).unwrap();
        assert!(product_w1_distance(&mu, &short).is_err());
    }

    #[test]
    fn chi2_and_entropy_two_cells() {
        // Two unit cells carry everything; the third node is empty in both.
        let g = grid(0.0, 4.0, 3);
        let mu = GridMeasure::new(g, vec![0.75, 0.25, 0.0]).unwrap();
        let nu = GridMeasure::new(g, vec![0.5, 0.5, 0.0]).unwrap();
        assert_relative_eq!(chi2_divergence(&mu, &nu).unwrap(), 0.5, epsilon = 1e-14);
        let h = 0.75 * 1.5_f64.ln() + 0.25 * 0.5_f64.ln();
        assert_relative_eq!(entropy(&mu, &nu).unwrap(), h, epsilon = 1e-14);
        assert_eq!(chi2_divergence(&nu, &nu).unwrap(), 0.0);
        assert_eq!(entropy(&nu, &nu).unwrap(), 0.0);

        let far = GridMeasure::new(g, vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(chi2_divergence(&far, &nu).unwrap(), f64::INFINITY);
        assert_eq!(entropy(&far, &nu).unwrap(), f64::INFINITY);
    }

    #[test]
    fn cell_index_ties_go_down() {
        let g = grid(0.0, 1.0, 4); // h = 0.2, nodes 0.2..0.8, edges at 0.3, 0.5, 0.7
        assert_eq!(g.cell_index(0.01), 0);
        assert_eq!(g.cell_index(0.3), 0);
        assert_eq!(g.cell_index(0.3000001), 1);
        assert_eq!(g.cell_index(0.5), 1);
        assert_eq!(g.cell_index(0.99), 3);
    }

    #[test]
    fn rebin_preserves_mass_and_shape() {
        let fine = grid(-1.0, 1.0, 999);
        let coarse = grid(-1.0, 1.0, 5);
        let mu = GridMeasure::from_fn(fine, |x| 1.0 + x).unwrap();
        let r = mu.rebin(&coarse).unwrap();
        // Cell (0.5, 1) carries ∫(1+x)/2 over it = 0.4375 up to O(h).
        let last = r.masses()[4];
        assert!((last - 0.4375).abs() < 2e-3);
    }

    #[test]
    fn csv_round_trip() {
        let g = grid(0.0, 1.0, 17);
        let mu = GridMeasure::from_fn(g, |x| (3.0 * x).sin() + 1.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mu.csv");
        mu.to_csv(&path).unwrap();
        let back = GridMeasure::from_csv(&path, g).unwrap();
        for (a, b) in back.density().iter().zip(mu.density()) {
            assert!((a - b).abs() <= 1e-15 * b.abs());
        }
    }

    fn density_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0..1.0f64, n).prop_map(|mut v| {
            v[0] += 0.01;
            v
        })
    }

    proptest! {
        #[test]
        fn tv_is_a_metric(a in density_strategy(8), b in density_strategy(8), c in density_strategy(8)) {
            let g = grid(0.0, 1.0, 8);
            let (a, b, c) = (
                GridMeasure::new(g, a).unwrap(),
                GridMeasure::new(g, b).unwrap(),
                GridMeasure::new(g, c).unwrap(),
            );
            let ab = tv_distance(&a, &b).unwrap();
            let ba = tv_distance(&b, &a).unwrap();
            let ac = tv_distance(&a, &c).unwrap();
            let cb = tv_distance(&c, &b).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);
            prop_assert!(ab <= ac + cb + 1e-14);
            prop_assert!(ab <= 2.0 + 1e-14);
        }

        #[test]
        fn weighted_tv_dominates_tv(a in density_strategy(10), b in density_strategy(10),
                                    w in prop::collection::vec(1.0..5.0f64, 10)) {
            let g = grid(-1.0, 1.0, 10);
            let (a, b) = (GridMeasure::new(g, a).unwrap(), GridMeasure::new(g, b).unwrap());
            prop_assert!(weighted_tv(&a, &b, &w).unwrap() >= tv_distance(&a, &b).unwrap() - 1e-15);
        }

        #[test]
        fn w1_bounded_by_half_width_times_tv(a in density_strategy(12), b in density_strategy(12),
                                             half in 0.5..4.0f64) {
            let g = grid(-half, half, 12);
            let (a, b) = (GridMeasure::new(g, a).unwrap(), GridMeasure::new(g, b).unwrap());
            prop_assert!(w1_distance(&a, &b).unwrap() <= half * tv_distance(&a, &b).unwrap() + 1e-13);
        }

        #[test]
        fn chi2_matches_cell_sum(n in 3usize..=8, seed in prop::collection::vec(0.05..1.0f64, 16)) {
            let g = grid(0.0, 1.0, n);
            let a = GridMeasure::new(g, seed[..n].to_vec()).unwrap();
            let b = GridMeasure::new(g, seed[8..8 + n].to_vec()).unwrap();
            let brute: f64 = a.density().iter().zip(b.density())
                .map(|(p, q)| g.h() * q * (p / q - 1.0).powi(2)).sum();
            let c = chi2_divergence(&a, &b).unwrap();
            prop_assert!((c * c - brute).abs() < 1e-12);
        }

        #[test]
        fn entropy_below_chi2_squared(a in density_strategy(9), b in prop::collection::vec(0.05..1.0f64, 9)) {
            let g = grid(0.0, 2.0, 9);
            let (a, b) = (GridMeasure::new(g, a).unwrap(), GridMeasure::new(g, b).unwrap());
            let c = chi2_divergence(&a, &b).unwrap();
            prop_assert!(entropy(&a, &b).unwrap() <= c * c + 1e-13);
        }

        #[test]
        fn tilt_has_unit_mass(a in density_strategy(15), f in prop::collection::vec(0.01..10.0f64, 15)) {
            let g = grid(0.0, 3.0, 15);
            let mu = GridMeasure::new(g, a).unwrap();
            let t = tilt(&f, &mu).unwrap();
            prop_assert!((quadrature(t.density(), &g).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
