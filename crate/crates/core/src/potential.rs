//! Potential families `V` with exact derivatives, Bakry–Émery infima for
//! `V` and for the effective potential `W = V − 2 log η`, and the improved
//! rate κ̃ for processes coming down from infinity.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_measure::Grid1D;
use crate::io;
use crate::spectral::EigenPair;

/// `(V, V′, V″)` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialValue {
    pub v: f64,
    pub dv: f64,
    pub d2v: f64,
}

/// Tabulated potential: nodes with `V`, `V′`, `V″`, interpolated by cubic
/// Hermite splines.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialTable {
    x: Vec<f64>,
    v: Vec<f64>,
    vp: Vec<f64>,
    vpp: Vec<f64>,
    /// Finite-difference slopes of `V″`, used to interpolate it.
    vppp: Vec<f64>,
}

impl PotentialTable {
    pub fn new(x: Vec<f64>, v: Vec<f64>, vp: Vec<f64>, vpp: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 {
            return Err(Error::InvalidArgument("potential table needs at least 2 rows".into()));
        }
        if v.len() != n || vp.len() != n || vpp.len() != n {
            return Err(Error::ShapeMismatch("potential table columns differ in length".into()));
        }
        if x.iter().chain(&v).chain(&vp).chain(&vpp).any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("potential table has non-finite entries".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("potential table x must be strictly increasing".into()));
        }
        let vppp = (0..n)
            .map(|k| {
                let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
                (vpp[b] - vpp[a]) / (x[b] - x[a])
            })
            .collect();
        Ok(Self { x, v, vp, vpp, vppp })
    }

    /// Reads a CSV with columns `x,V,Vp,Vpp`.
    pub fn from_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut c = io::read_columns(path, &["x", "V", "Vp", "Vpp"])?;
        let vpp = c.pop().unwrap();
        let vp = c.pop().unwrap();
        let v = c.pop().unwrap();
        let x = c.pop().unwrap();
        Self::new(x, v, vp, vpp)
    }

    fn range(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    fn eval(&self, x: f64) -> PotentialValue {
        let k = match self.x.partition_point(|&a| a <= x) {
            0 => 0,
            p => (p - 1).min(self.x.len() - 2),
        };
        let dx = self.x[k + 1] - self.x[k];
        let t = (x - self.x[k]) / dx;
        let herm = |y0: f64, y1: f64, m0: f64, m1: f64| {
            let t2 = t * t;
            let t3 = t2 * t;
            (2.0 * t3 - 3.0 * t2 + 1.0) * y0
                + (t3 - 2.0 * t2 + t) * dx * m0
                + (-2.0 * t3 + 3.0 * t2) * y1
                + (t3 - t2) * dx * m1
        };
        PotentialValue {
            v: herm(self.v[k], self.v[k + 1], self.vp[k], self.vp[k + 1]),
            dv: herm(self.vp[k], self.vp[k + 1], self.vpp[k], self.vpp[k + 1]),
            d2v: herm(self.vpp[k], self.vpp[k + 1], self.vppp[k], self.vppp[k + 1]),
        }
    }
}

/// Potential family.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    /// `V ≡ 0`: Brownian motion.
    Zero,
    /// `V = λx²`: Ornstein–Uhlenbeck.
    Quadratic { lambda: f64 },
    /// `V = (x + 1)^δ` with `δ > 2`.
    ShiftedPower { delta: f64 },
    Tabulated(Arc<PotentialTable>),
}

impl PotentialSpec {
    pub fn quadratic(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("quadratic family needs lambda > 0, got {lambda}")));
        }
        Ok(Self::Quadratic { lambda })
    }

    pub fn shifted_power(delta: f64) -> Result<Self> {
        if !(delta > 2.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "shifted-power family needs delta > 2, got {delta}"
            )));
        }
        Ok(Self::ShiftedPower { delta })
    }

    pub fn tabulated(table: PotentialTable) -> Self {
        Self::Tabulated(Arc::new(table))
    }

    /// Short family name used in configs and reports.
    pub fn family(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Quadratic { .. } => "quadratic",
            Self::ShiftedPower { .. } => "shifted-power",
            Self::Tabulated(_) => "tabulated",
        }
    }

    /// Human-readable identifier including parameters.
    pub fn id(&self) -> String {
        match self {
            Self::Zero => "zero".into(),
            Self::Quadratic { lambda } => format!("quadratic(lambda={lambda})"),
            Self::ShiftedPower { delta } => format!("shifted-power(delta={delta})"),
            Self::Tabulated(_) => "tabulated".into(),
        }
    }

    /// Open interval on which `V` is defined (the tabulated range is closed).
    pub fn domain(&self) -> (f64, f64) {
        match self {
            Self::Zero | Self::Quadratic { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Self::ShiftedPower { .. } => (-1.0, f64::INFINITY),
            Self::Tabulated(t) => t.range(),
        }
    }

    /// True when `V` is convex by construction.
    pub fn is_convex_family(&self) -> bool {
        !matches!(self, Self::Tabulated(_))
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.domain();
        match self {
            Self::Tabulated(_) => x >= lo && x <= hi,
            _ => x > lo && x < hi,
        }
    }

    pub fn evaluate(&self, x: f64) -> Result<PotentialValue> {
        if !self.contains(x) {
            let (lo, hi) = self.domain();
            return Err(Error::OutsideDomain { x, lo, hi });
        }
        Ok(self.eval_unchecked(x))
    }

    /// `V′(x)` without the domain check, for inner loops over points already
    /// known to be inside.
    #[inline]
    pub fn gradient(&self, x: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Quadratic { lambda } => 2.0 * lambda * x,
            Self::ShiftedPower { delta } => delta * (x + 1.0).powf(delta - 1.0),
            Self::Tabulated(t) => t.eval(x).dv,
        }
    }

    fn eval_unchecked(&self, x: f64) -> PotentialValue {
        match self {
            Self::Zero => PotentialValue { v: 0.0, dv: 0.0, d2v: 0.0 },
            Self::Quadratic { lambda } => PotentialValue {
                v: lambda * x * x,
                dv: 2.0 * lambda * x,
                d2v: 2.0 * lambda,
            },
            Self::ShiftedPower { delta } => {
                let y = x + 1.0;
                PotentialValue {
                    v: y.powf(*delta),
                    dv: delta * y.powf(delta - 1.0),
                    d2v: delta * (delta - 1.0) * y.powf(delta - 2.0),
                }
            }
            Self::Tabulated(t) => t.eval(x),
        }
    }

    /// `V` at every interior node of `grid`.
    pub fn values_on(&self, grid: &Grid1D) -> Result<Vec<f64>> {
        (0..grid.n()).map(|i| self.evaluate(grid.node(i)).map(|p| p.v)).collect()
    }

    /// `V″` at every interior node of `grid`.
    pub fn second_derivatives_on(&self, grid: &Grid1D) -> Result<Vec<f64>> {
        (0..grid.n()).map(|i| self.evaluate(grid.node(i)).map(|p| p.d2v)).collect()
    }
}

/// Truncation point for an unbounded right end: the smallest `x > lower`
/// (to 1e-6) where `e^{−V(x)}(1+x)² < tol · e^{−min V}`, with `min V` taken
/// over `[lower, x]`.
pub fn truncation_point(spec: &PotentialSpec, lower: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidArgument("truncation tolerance must lie in (0, 1)".into()));
    }
    if let PotentialSpec::Zero = spec {
        return Err(Error::InvalidArgument(
            "zero potential has no integrable tail; give x_max explicitly".into(),
        ));
    }
    let log_tol = tol.ln();
    let start = if spec.contains(lower) { lower } else { lower + 1e-12 };
    let v0 = spec.evaluate(start)?.v;
    // Convex families attain min V on [lower, x] at lower or at the vertex.
    let vmin = |x: f64| -> Result<f64> {
        let mut m = v0.min(spec.evaluate(x)?.v);
        if start < 0.0 && x > 0.0 && spec.contains(0.0) {
            m = m.min(spec.evaluate(0.0)?.v);
        }
        Ok(m)
    };
    let excess = |x: f64| -> Result<f64> {
        Ok(-spec.evaluate(x)?.v + 2.0 * (1.0 + x.abs()).ln() + vmin(x)? - log_tol)
    };
    let (_, hi_dom) = spec.domain();
    let mut a = start;
    let mut step = 0.5;
    let mut b = start + step;
    while excess(b)? >= 0.0 {
        a = b;
        step *= 2.0;
        b = start + step;
        if b >= hi_dom || step > 1e6 {
            return Err(Error::Divergent("potential tail does not decay fast enough to truncate".into()));
        }
    }
    while b - a > 1e-6 {
        let m = 0.5 * (a + b);
        if excess(m)? >= 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(b)
}

/// Minimum of a sample array and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Infimum {
    #[serde(serialize_with = "io::ser_f64")]
    pub value: f64,
    pub index: usize,
}

/// Bakry–Émery constant from second-derivative samples: their minimum.
///
/// Feed it `V″` samples for the classical criterion or `W″` samples for
/// the effective potential. For the generator `½Δ − ½∇V·∇` the certified
/// exponential rate is half the returned value; see
/// [`certified_rate`].
pub fn be_constant(values: &[f64]) -> Result<Infimum> {
    let mut best: Option<Infimum> = None;
    for (index, &value) in values.iter().enumerate() {
        if value.is_nan() {
            return Err(Error::InvalidArgument(format!("NaN sample at index {index}")));
        }
        if best.is_none_or(|b| value < b.value) {
            best = Some(Infimum { value, index });
        }
    }
    best.ok_or(Error::Empty("be_constant needs at least one sample"))
}

/// Rate certified by a Hessian lower bound for the diffusion with unit
/// noise and drift `−½∇W`: the Poincaré constant of `e^{−W}` is at most
/// `1/inf W″`, and the generator carries a factor ½.
pub fn certified_rate(hessian_infimum: f64) -> f64 {
    0.5 * hessian_infimum
}

/// `W = V − 2 log η` sampled on the grid with its discrete second derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivePotential {
    pub log_eta: Vec<f64>,
    pub w_second: Vec<f64>,
}

/// Second derivative of a sampled function: central differences inside,
/// second-order one-sided stencils at the two extreme nodes.
pub fn second_difference(s: &[f64], h: f64) -> Vec<f64> {
    let n = s.len();
    let h2 = h * h;
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (s[i + 1] - 2.0 * s[i] + s[i - 1]) / h2;
    }
    if n >= 4 {
        out[0] = (2.0 * s[0] - 5.0 * s[1] + 4.0 * s[2] - s[3]) / h2;
        out[n - 1] = (2.0 * s[n - 1] - 5.0 * s[n - 2] + 4.0 * s[n - 3] - s[n - 4]) / h2;
    } else {
        out[0] = out[1];
        out[n - 1] = out[n - 2];
    }
    out
}

/// `W″ = V″ − 2 (log η)″` at the interior nodes, with `V″` exact and
/// `(log η)″` by finite differences.
pub fn effective_second_derivative(spec: &PotentialSpec, eigen: &EigenPair) -> Result<EffectivePotential> {
    let grid = eigen.grid();
    if let Some(node) = eigen.eta().iter().position(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument(format!("eta must be positive (node {node})")));
    }
    let log_eta: Vec<f64> = eigen.eta().iter().map(|e| e.ln()).collect();
    let s2 = second_difference(&log_eta, grid.h());
    let vpp = spec.second_derivatives_on(grid)?;
    let w_second = vpp.iter().zip(&s2).map(|(v, s)| v - 2.0 * s).collect();
    Ok(EffectivePotential { log_eta, w_second })
}

/// Which expression of κ̃ to minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfiForm {
    /// `V″ + 8λ₀e^{−V}`.
    Basic,
    /// `V″ + 8λ₀e^{−V} + 8λ₀²((1 − 2e^{−V})/V′)²`, needs `V′ > 0`.
    Refined,
}

/// κ̃: the infimum over the probed nodes of the selected expression.
///
/// `probe` restricts the infimum to nodes inside a closed window; `None`
/// probes every interior node.
pub fn cdfi_rate(
    spec: &PotentialSpec,
    lambda0: f64,
    grid: &Grid1D,
    form: CdfiForm,
    probe: Option<(f64, f64)>,
) -> Result<Infimum> {
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda0 must be positive, got {lambda0}")));
    }
    let (lo, hi) = probe.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let mut samples = Vec::new();
    let mut nodes = Vec::new();
    for i in 0..grid.n() {
        let x = grid.node(i);
        if x < lo || x > hi {
            continue;
        }
        let p = spec.evaluate(x)?;
        let e = (-p.v).exp();
        let mut k = p.d2v + 8.0 * lambda0 * e;
        if form == CdfiForm::Refined {
            if !(p.dv > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "refined rate needs V' > 0, but V'({x}) = {}",
                    p.dv
                )));
            }
            let r = (1.0 - 2.0 * e) / p.dv;
            k += 8.0 * lambda0 * lambda0 * r * r;
        }
        samples.push(k);
        nodes.push(i);
    }
    let inf = be_constant(&samples).map_err(|_| Error::InvalidArgument("probe window contains no nodes".into()))?;
    Ok(Infimum { value: inf.value, index: nodes[inf.index] })
}
