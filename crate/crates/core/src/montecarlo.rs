//! Euler–Maruyama particles for `dX = dB − ½V′(X)dt`, killed on leaving the
//! domain, as an independent check on the grid semigroup.
//!
//! Every particle owns a ChaCha8 stream keyed by `(seed, particle index)`
//! and consumed in step order, so results do not depend on how rayon
//! schedules the work. Absorption is tested at step boundaries; with
//! `bridge_correction` on, a surviving step is additionally killed with the
//! Brownian-bridge crossing probability `exp(−2 d₀ d₁ / dt)` for each
//! finite endpoint at distances `d₀`, `d₁`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::least_squares;
use crate::grid_measure::{Grid1D, GridMeasure, ProductGridMeasure};
use crate::io;
use crate::potential::PotentialSpec;

pub const MIN_PARTICLES: usize = 100;
/// Caps the worker count when set to a positive integer.
pub const THREADS_ENV: &str = "QSD_LAB_THREADS";

/// One coordinate of the (product) domain: its potential and interval.
/// Infinite endpoints are allowed and never absorb.
#[derive(Debug, Clone)]
pub struct Coordinate {
    pub spec: PotentialSpec,
    pub lo: f64,
    pub hi: f64,
}

impl Coordinate {
    pub fn new(spec: PotentialSpec, lo: f64, hi: f64) -> Result<Self> {
        let (dlo, dhi) = spec.domain();
        if lo.is_nan() || hi.is_nan() || !(lo < hi) {
            return Err(Error::InvalidArgument(format!("empty interval ({lo}, {hi})")));
        }
        if lo < dlo || hi > dhi {
            return Err(Error::InvalidArgument(format!(
                "interval ({lo}, {hi}) leaves the domain ({dlo}, {dhi}) of {}",
                spec.id()
            )));
        }
        Ok(Self { spec, lo, hi })
    }

    /// The natural domain of the potential.
    pub fn natural(spec: PotentialSpec) -> Self {
        let (lo, hi) = spec.domain();
        Self { spec, lo, hi }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub coordinates: Vec<Coordinate>,
    pub dt: f64,
    pub horizon: f64,
    pub n_particles: usize,
    pub seed: u64,
    /// Fleming–Viot restart of absorbed particles from a uniformly chosen survivor.
    pub resample: bool,
    pub bridge_correction: bool,
    /// Record the survival curve every this many steps.
    pub record_every: usize,
    /// Worker count; falls back to `QSD_LAB_THREADS`, then to rayon's default.
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn new(coordinates: Vec<Coordinate>, dt: f64, horizon: f64, n_particles: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            coordinates,
            dt,
            horizon,
            n_particles,
            seed,
            resample: false,
            bridge_correction: true,
            record_every: 1,
            threads: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coordinates.is_empty() {
            return Err(Error::Empty("simulation needs at least one coordinate"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(Error::InvalidArgument(format!(
                "horizon {} must be finite and at least dt = {}",
                self.horizon, self.dt
            )));
        }
        if self.n_particles < MIN_PARTICLES {
            return Err(Error::InvalidArgument(format!(
                "need at least {MIN_PARTICLES} particles, got {}",
                self.n_particles
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("threads must be positive".into()));
        }
        Ok(())
    }

    pub fn with_resample(mut self, on: bool) -> Self {
        self.resample = on;
        self
    }

    pub fn with_bridge_correction(mut self, on: bool) -> Self {
        self.bridge_correction = on;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn dim(&self) -> usize {
        self.coordinates.len()
    }

    /// Number of steps and the step actually used: `dt` is shrunk so that a
    /// whole number of steps ends exactly at the horizon.
    pub fn steps(&self) -> (usize, f64) {
        let k = (self.horizon / self.dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        (k, self.horizon / k as f64)
    }

    fn thread_count(&self) -> Result<usize> {
        if let Some(t) = self.threads {
            return Ok(t);
        }
        match std::env::var(THREADS_ENV) {
            Ok(s) => match s.trim().parse::<usize>() {
                Ok(t) if t > 0 => Ok(t),
                _ => Err(Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got `{s}`"))),
            },
            Err(_) => Ok(rayon::current_num_threads()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimStatus {
    Completed,
    /// Every particle was absorbed before the horizon.
    AllAbsorbed,
}

/// One sample of the survival curve.
///
/// `alive_fraction` is the fraction of slots alive right after the step
/// (before any resampling); `log_survival` is the running estimate of
/// `log ℙ(τ > t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalPoint {
    #[serde(serialize_with = "io::ser_f64")]
    pub t: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub alive_fraction: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub log_survival: f64,
}

/// Surviving particles at the end of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    positions: Vec<f64>,
    particle_ids: Vec<usize>,
    t: f64,
    initial_count: usize,
    log_survival_estimate: f64,
    status: SimStatus,
    survival_curve: Vec<SurvivalPoint>,
}

impl ParticleEnsemble {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major survivor coordinates, `dim` values per particle.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle_ids(&self) -> &[usize] {
        &self.particle_ids
    }

    pub fn alive_count(&self) -> usize {
        self.particle_ids.len()
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn initial_count(&self) -> usize {
        self.initial_count
    }

    pub fn log_survival_estimate(&self) -> f64 {
        self.log_survival_estimate
    }

    pub fn status(&self) -> SimStatus {
        self.status
    }

    pub fn survival_curve(&self) -> &[SurvivalPoint] {
        &self.survival_curve
    }

    /// Survivor values of coordinate `k`.
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.positions.iter().skip(k).step_by(self.dim).copied().collect()
    }

    /// `t,alive_fraction,log_survival`.
    pub fn survival_to_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let c = &self.survival_curve;
        let t: Vec<f64> = c.iter().map(|p| p.t).collect();
        let a: Vec<f64> = c.iter().map(|p| p.alive_fraction).collect();
        let l: Vec<f64> = c.iter().map(|p| p.log_survival).collect();
        io::write_columns(path, &["t", "alive_fraction", "log_survival"], &[&t, &a, &l])
    }

    /// `particle_id,x1[,x2,…]` for the survivors.
    pub fn positions_to_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["particle_id".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for (row, id) in self.positions.chunks(self.dim).zip(&self.particle_ids) {
            let mut rec = vec![id.to_string()];
            rec.extend(row.iter().map(|x| io::fmt17(*x)));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        io::write_atomic(path, &bytes)
    }
}

/// Cumulative node masses per factor, for inverse-CDF sampling.
struct Sampler<'a> {
    grids: Vec<&'a Grid1D>,
    cdfs: Vec<Vec<f64>>,
}

impl<'a> Sampler<'a> {
    fn new(initial: &'a ProductGridMeasure, coords: &[Coordinate]) -> Result<Self> {
        if initial.dim() != coords.len() {
            return Err(Error::ShapeMismatch(format!(
                "initial law has {} factors for {} coordinates",
                initial.dim(),
                coords.len()
            )));
        }
        let mut grids = Vec::new();
        let mut cdfs = Vec::new();
        for (mu, c) in initial.factors().iter().zip(coords) {
            let g = mu.grid();
            if g.x_min() < c.lo || g.x_max() > c.hi {
                return Err(Error::InvalidArgument(format!(
                    "initial grid [{}, {}] is not inside the domain ({}, {})",
                    g.x_min(),
                    g.x_max(),
                    c.lo,
                    c.hi
                )));
            }
            let mut acc = 0.0;
            let cdf: Vec<f64> = mu
                .masses()
                .iter()
                .map(|m| {
                    acc += m;
                    acc
                })
                .collect();
            grids.push(g);
            cdfs.push(cdf);
        }
        Ok(Self { grids, cdfs })
    }

    /// Picks a cell by its mass, then a uniform point inside the cell.
    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for (k, x) in out.iter_mut().enumerate() {
            let cdf = &self.cdfs[k];
            let total = cdf[cdf.len() - 1];
            let u: f64 = rng.random::<f64>() * total;
            let i = cdf.partition_point(|c| *c <= u).min(cdf.len() - 1);
            let g = self.grids[k];
            *x = g.node(i) + (rng.random::<f64>() - 0.5) * g.h();
        }
    }
}

/// Advances one particle by one step; returns whether it survives.
#[inline]
fn step_particle(pos: &mut [f64], rng: &mut ChaCha8Rng, coords: &[Coordinate], dt: f64, bridge: bool) -> bool {
    let sq = dt.sqrt();
    let mut alive = true;
    for (x, c) in pos.iter_mut().zip(coords) {
        let xi: f64 = rng.sample(StandardNormal);
        let old = *x;
        let new = old + sq * xi - 0.5 * c.spec.gradient(old) * dt;
        *x = new;
        if !(new > c.lo && new < c.hi) {
            alive = false;
        } else if bridge {
            let mut survive = 1.0;
            if c.lo.is_finite() {
                survive *= 1.0 - (-2.0 * (old - c.lo) * (new - c.lo) / dt).exp();
            }
            if c.hi.is_finite() {
                survive *= 1.0 - (-2.0 * (c.hi - old) * (c.hi - new) / dt).exp();
            }
            if survive < 1.0 && rng.random::<f64>() >= survive {
                alive = false;
            }
        }
    }
    alive
}

struct Particles {
    pos: Vec<f64>,
    alive: Vec<bool>,
    rngs: Vec<ChaCha8Rng>,
}

fn run(cfg: &SimConfig, sampler: &Sampler) -> ParticleEnsemble {
    let d = cfg.dim();
    let n = cfg.n_particles;
    let (steps, dt) = cfg.steps();
    let coords = &cfg.coordinates;

    let rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut ps = Particles { pos: vec![0.0; n * d], alive: vec![true; n], rngs };
    ps.pos
        .par_chunks_mut(d)
        .zip(ps.rngs.par_iter_mut())
        .for_each(|(p, r)| sampler.draw(r, p));

    // Without resampling the particles never interact, so each one runs to
    // the horizon on its own: this keeps one RNG state hot at a time and
    // consumes every stream in the same order as stepping them together.
    let deaths: Option<Vec<usize>> = (!cfg.resample).then(|| {
        let died_at: Vec<usize> = ps
            .pos
            .par_chunks_mut(d)
            .zip(ps.alive.par_iter_mut())
            .zip(ps.rngs.par_iter_mut())
            .map(|((p, a), r)| {
                for s in 1..=steps {
                    if !step_particle(p, r, coords, dt, cfg.bridge_correction) {
                        *a = false;
                        return s;
                    }
                }
                steps + 1
            })
            .collect();
        let mut per_step = vec![0; steps + 2];
        for s in died_at {
            per_step[s] += 1;
        }
        per_step
    });

    let mut curve = vec![SurvivalPoint { t: 0.0, alive_fraction: 1.0, log_survival: 0.0 }];
    let mut log_survival = 0.0;
    let mut status = SimStatus::Completed;
    let mut t = 0.0;
    let mut alive_now = n;
    for s in 1..=steps {
        t = s as f64 * dt;
        if let Some(deaths) = &deaths {
            alive_now -= deaths[s];
        } else {
            ps.pos
                .par_chunks_mut(d)
                .zip(ps.alive.par_iter_mut())
                .zip(ps.rngs.par_iter_mut())
                .for_each(|((p, a), r)| {
                    if *a {
                        *a = step_particle(p, r, coords, dt, cfg.bridge_correction);
                    }
                });
            alive_now = ps.alive.iter().filter(|a| **a).count();
        }
        if cfg.resample {
            if alive_now > 0 {
                log_survival += (alive_now as f64 / n as f64).ln();
            }
        } else {
            log_survival = (alive_now as f64 / n as f64).ln();
        }
        if alive_now == 0 {
            status = SimStatus::AllAbsorbed;
            log_survival = f64::NEG_INFINITY;
            curve.push(SurvivalPoint { t, alive_fraction: 0.0, log_survival });
            break;
        }
        let record = s % cfg.record_every == 0 || s == steps;
        if record {
            curve.push(SurvivalPoint { t, alive_fraction: alive_now as f64 / n as f64, log_survival });
        }
        if cfg.resample && alive_now < n {
            let snapshot: Vec<f64> = ps
                .pos
                .chunks(d)
                .zip(&ps.alive)
                .filter(|(_, a)| **a)
                .flat_map(|(p, _)| p.iter().copied())
                .collect();
            ps.pos
                .par_chunks_mut(d)
                .zip(ps.alive.par_iter_mut())
                .zip(ps.rngs.par_iter_mut())
                .for_each(|((p, a), r)| {
                    if !*a {
                        let j = r.random_range(0..alive_now);
                        p.copy_from_slice(&snapshot[j * d..(j + 1) * d]);
                        *a = true;
                    }
                });
        }
    }

    let mut positions = Vec::new();
    let mut particle_ids = Vec::new();
    for (i, (p, a)) in ps.pos.chunks(d).zip(&ps.alive).enumerate() {
        if *a {
            positions.extend_from_slice(p);
            particle_ids.push(i);
        }
    }
    ParticleEnsemble {
        dim: d,
        positions,
        particle_ids,
        t,
        initial_count: n,
        log_survival_estimate: log_survival,
        status,
        survival_curve: curve,
    }
}

/// Runs the particle system from `initial` (one factor per coordinate).
///
/// An ensemble in which every particle died is returned with
/// [`SimStatus::AllAbsorbed`] rather than as an error.
pub fn simulate(config: &SimConfig, initial: &ProductGridMeasure) -> Result<ParticleEnsemble> {
    config.validate()?;
    let sampler = Sampler::new(initial, &config.coordinates)?;
    let threads = config.thread_count()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| run(config, &sampler)))
}

pub fn simulate_1d(config: &SimConfig, initial: &GridMeasure) -> Result<ParticleEnsemble> {
    simulate(config, &ProductGridMeasure::new(vec![initial.clone()])?)
}

fn histogram(values: &[f64], grid: &Grid1D) -> Result<GridMeasure> {
    if values.is_empty() {
        return Err(Error::NoSurvivors);
    }
    let mut counts = vec![0.0; grid.n()];
    for x in values {
        counts[grid.cell_index(*x)] += 1.0;
    }
    let scale = 1.0 / (values.len() as f64 * grid.h());
    GridMeasure::new(*grid, counts.iter().map(|c| c * scale).collect())
}

/// Histogram of the survivors on the cells of `grid`: the empirical
/// conditioned law.
pub fn conditioned_empirical(ensemble: &ParticleEnsemble, grid: &Grid1D) -> Result<GridMeasure> {
    if ensemble.dim != 1 {
        return Err(Error::ShapeMismatch(format!(
            "ensemble has {} coordinates; use conditioned_marginals",
            ensemble.dim
        )));
    }
    histogram(&ensemble.positions, grid)
}

/// Per-coordinate survivor histograms.
pub fn conditioned_marginals(ensemble: &ParticleEnsemble, grids: &[Grid1D]) -> Result<ProductGridMeasure> {
    if grids.len() != ensemble.dim {
        return Err(Error::ShapeMismatch(format!("{} grids for {} coordinates", grids.len(), ensemble.dim)));
    }
    let factors = grids
        .iter()
        .enumerate()
        .map(|(k, g)| histogram(&ensemble.coordinate(k), g))
        .collect::<Result<_>>()?;
    ProductGridMeasure::new(factors)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lambda0Estimate {
    #[serde(serialize_with = "io::ser_f64")]
    pub lambda0: f64,
    /// Regression standard error of the slope.
    #[serde(serialize_with = "io::ser_f64")]
    pub std_error: f64,
    #[serde(serialize_with = "io::ser_f64")]
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares slope of `−log survival` against `t` over `window`.
pub fn estimate_lambda0(curve: &[SurvivalPoint], window: (f64, f64)) -> Result<Lambda0Estimate> {
    let (t, y): (Vec<f64>, Vec<f64>) = curve
        .iter()
        .filter(|p| p.t >= window.0 && p.t <= window.1 && p.log_survival.is_finite())
        .map(|p| (p.t, -p.log_survival))
        .unzip();
    if t.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "degenerate window [{}, {}]: {} usable samples, need 5",
            window.0,
            window.1,
            t.len()
        )));
    }
    let f = least_squares(&t, &y)?;
    Ok(Lambda0Estimate { lambda0: f.slope, std_error: f.slope_std_error, r_squared: f.r_squared, points: t.len() })
}
