//! The five subcommands. Each computes all of its artifacts before writing
//! any of them, so a failing run leaves the output directory untouched.

use std::path::Path;

use serde::Serialize;

use qsd_core::analytics::{decay_report, product_report, CdfiSettings, ClosedFormExample, ReportConfig};
use qsd_core::doob::FlowOptions;
use qsd_core::io::{self, columns_to_csv, fmt17};
use qsd_core::montecarlo::{
    conditioned_marginals, estimate_lambda0, simulate, Coordinate, SimConfig, SimStatus,
};
use qsd_core::potential::{
    be_constant, cdfi_rate, certified_rate, effective_second_derivative, truncation_point, CdfiForm, PotentialTable,
};
use qsd_core::spectral::{assemble_generator, qsd_from_eigen, solve_eigen};
use qsd_core::{EigenPair, Error, Grid1D, GridMeasure, PotentialSpec, ProductGridMeasure};

use crate::config::RunConfig;
use crate::CliError;

/// Relative mass left beyond the default truncation point.
const TRUNCATION_TOL: f64 = 1e-12;

pub(crate) struct Artifacts(Vec<(&'static str, Vec<u8>)>);

impl Artifacts {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn add(&mut self, name: &'static str, bytes: Vec<u8>) {
        self.0.push((name, bytes));
    }

    pub(crate) fn write(self, dir: &Path) -> Result<Vec<&'static str>, CliError> {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        let mut names = Vec::new();
        for (name, bytes) in self.0 {
            io::write_atomic(dir.join(name), &bytes)?;
            names.push(name);
        }
        Ok(names)
    }
}

struct Setup {
    spec: PotentialSpec,
    grid: Grid1D,
    example: Option<ClosedFormExample>,
    /// Absorbing interval of one coordinate.
    domain: (f64, f64),
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let family = cfg.family().unwrap_or("zero");
    let lambda = cfg.potential.lambda.unwrap_or(1.0);
    let spec = match family {
        "zero" => PotentialSpec::Zero,
        "quadratic" => PotentialSpec::quadratic(lambda)?,
        "shifted-power" => PotentialSpec::shifted_power(cfg.potential.delta.unwrap_or(f64::NAN))?,
        _ => {
            let path = cfg.potential.table.as_ref().ok_or_else(|| CliError::Validation("potential.table missing".into()))?;
            PotentialSpec::tabulated(PotentialTable::from_csv(path)?)
        }
    };
    let example = match cfg.example.as_deref() {
        Some("brownian") => Some(ClosedFormExample::brownian(cfg.half_width, cfg.dim)?),
        Some("ou") => Some(ClosedFormExample::ornstein_uhlenbeck(lambda, cfg.dim)?),
        _ => None,
    };
    let (default_lo, default_hi) = match (&spec, &example) {
        (PotentialSpec::Zero, Some(e)) => e.interval(),
        (PotentialSpec::Tabulated(_), _) => spec.domain(),
        (PotentialSpec::Zero, None) => (f64::NAN, f64::NAN),
        _ => (0.0, f64::NAN),
    };
    let x_min = cfg.grid.x_min.unwrap_or(default_lo);
    let x_max = match cfg.grid.x_max {
        Some(x) => x,
        None if default_hi.is_nan() => truncation_point(&spec, x_min, TRUNCATION_TOL)?,
        None => default_hi,
    };
    let grid = Grid1D::new(x_min, x_max, cfg.grid.n)?;
    let domain = match spec {
        PotentialSpec::Quadratic { .. } | PotentialSpec::ShiftedPower { .. } => (x_min, f64::INFINITY),
        _ => (x_min, x_max),
    };
    Ok(Setup { spec, grid, example, domain })
}

fn initial_law(cfg: &RunConfig, s: &Setup, alpha: impl FnOnce() -> Result<GridMeasure, CliError>) -> Result<GridMeasure, CliError> {
    let g = s.grid;
    let lo = cfg.initial.lo.unwrap_or(g.x_min());
    let hi = cfg.initial.hi.unwrap_or(g.x_max());
    let inside = move |x: f64| x >= lo && x <= hi;
    Ok(match cfg.initial.family.as_str() {
        "uniform" => GridMeasure::uniform_on(g, lo, hi)?,
        "gaussian-truncated" => {
            let m = cfg.initial.mean.unwrap_or(0.5 * (lo + hi));
            let sd = cfg.initial.sd.unwrap_or((hi - lo) / 8.0);
            GridMeasure::from_fn(g, |x| if inside(x) { (-(x - m).powi(2) / (2.0 * sd * sd)).exp() } else { 0.0 })?
        }
        "qsd" => alpha()?,
        _ => {
            let path = cfg.initial.path.as_ref().ok_or_else(|| CliError::Validation("initial.path missing".into()))?;
            GridMeasure::from_csv(path, g)?
        }
    })
}

fn times(cfg: &RunConfig) -> Vec<f64> {
    let k = cfg.flow.samples - 1;
    (0..=k).map(|i| cfg.flow.t_max * i as f64 / k as f64).collect()
}

fn measure_csv(m: &GridMeasure) -> Result<Vec<u8>, CliError> {
    Ok(columns_to_csv(&["x", "density"], &[&m.grid().nodes(), m.density()])?)
}

fn eigen_artifacts(eigen: &EigenPair, alpha: &GridMeasure, out: &mut Artifacts) -> Result<(), CliError> {
    out.add("eigen.json", eigen.to_json()?.into_bytes());
    out.add("eta.csv", columns_to_csv(&["x", "eta"], &[&eigen.grid().nodes(), eigen.eta()])?);
    out.add("alpha.csv", measure_csv(alpha)?);
    Ok(())
}

pub(crate) fn eigen(cfg: &RunConfig) -> Result<(Artifacts, String), CliError> {
    let s = setup(cfg)?;
    let e = solve_eigen(&assemble_generator(&s.spec, &s.grid)?)?;
    let alpha = qsd_from_eigen(&e, &s.spec)?;
    let mut out = Artifacts::new();
    eigen_artifacts(&e, &alpha, &mut out)?;
    let summary = format!("lambda0 = {}, gap = {}", fmt17(e.lambda0()), e.gap().map_or("n/a".into(), fmt17));
    Ok((out, summary))
}

fn report_config(cfg: &RunConfig, s: &Setup) -> Result<ReportConfig, CliError> {
    let mu = initial_law(cfg, s, || {
        let e = solve_eigen(&assemble_generator(&s.spec, &s.grid)?)?;
        Ok(qsd_from_eigen(&e, &s.spec)?)
    })?;
    let mut rc = match &s.example {
        Some(ex) => ReportConfig::for_example(ex, mu, times(cfg)),
        None => ReportConfig::new(s.spec.family(), s.spec.clone(), mu, times(cfg)),
    };
    if let Some(dt) = cfg.flow.dt {
        rc.flow = Some(FlowOptions::new(dt)?);
    }
    if let (Some(lo), Some(hi)) = cfg.flow.fit_window {
        rc.fit_window = Some((lo, hi));
    }
    if cfg.cdfi.lambda0_lower.is_some() || matches!(s.spec, PotentialSpec::ShiftedPower { .. }) {
        rc.cdfi = Some(CdfiSettings { lambda0_lower: cfg.cdfi.lambda0_lower, form: form(cfg), probe: None });
    }
    Ok(rc)
}

fn form(cfg: &RunConfig) -> CdfiForm {
    if cfg.cdfi.form == "basic" {
        CdfiForm::Basic
    } else {
        CdfiForm::Refined
    }
}

pub(crate) fn evolve(cfg: &RunConfig) -> Result<(Artifacts, String), CliError> {
    let s = setup(cfg)?;
    let rc = report_config(cfg, &s)?;
    let r = decay_report(&rc)?;
    let alpha = qsd_from_eigen(&solve_eigen(&assemble_generator(&s.spec, &s.grid)?)?, &s.spec)?;
    let mut out = Artifacts::new();
    out.add("curves.csv", r.curves_csv()?);
    out.add("alpha.csv", measure_csv(&alpha)?);
    let last = r.times.len() - 1;
    let summary = format!("t = {}: tv = {}, chi2 = {}", fmt17(r.times[last]), fmt17(r.tv[last]), fmt17(r.chi2[last]));
    Ok((out, summary))
}

pub(crate) fn report(cfg: &RunConfig) -> Result<(Artifacts, String), CliError> {
    let s = setup(cfg)?;
    let rc = report_config(cfg, &s)?;
    let mut out = Artifacts::new();
    let summary = if cfg.dim == 1 {
        let r = decay_report(&rc)?;
        out.add("report.json", r.to_json()?.into_bytes());
        out.add("curves.csv", r.curves_csv()?);
        format!(
            "gap = {}, kappa = {}, fitted tv rate = {}",
            fmt17(r.gap),
            fmt17(r.kappa_bound),
            r.fitted_rate_tv().map_or("n/a".into(), fmt17)
        )
    } else {
        let p = product_report(&vec![rc; cfg.dim])?;
        out.add("report.json", p.to_json()?.into_bytes());
        out.add("curves.csv", columns_to_csv(&["t", "tv_sum", "w1_sum"], &[&p.times, &p.tv_sum, &p.w1_sum])?);
        format!(
            "lambda0 total = {}, additive tv bound holds: {}",
            fmt17(p.lambda0_total),
            p.additive_tv_bound
        )
    };
    Ok((out, summary))
}

/// One row of `rates.csv`.
fn row(name: &str, value: f64) -> String {
    format!("{name},{}\n", fmt17(value))
}

pub(crate) fn rates(cfg: &RunConfig) -> Result<(Artifacts, String), CliError> {
    let s = setup(cfg)?;
    let e = solve_eigen(&assemble_generator(&s.spec, &s.grid)?)?;
    let lambda1 = e.lambda1().unwrap_or(f64::NAN);
    let w = effective_second_derivative(&s.spec, &e)?;
    let kappa = certified_rate(be_constant(&w.w_second)?.value);
    let mut csv = String::from("quantity,value\n");
    csv += &row("lambda0", e.lambda0());
    csv += &row("lambda1", lambda1);
    csv += &row("gap", lambda1 - e.lambda0());
    csv += &row("kappa_certified", kappa);
    if let Some(ex) = &s.example {
        csv += &row("kappa_published", ex.kappa());
    }
    let mut summary = format!("gap = {}, kappa = {}", fmt17(lambda1 - e.lambda0()), fmt17(kappa));
    if cfg.cdfi.lambda0_lower.is_some() || matches!(s.spec, PotentialSpec::ShiftedPower { .. }) {
        let l0 = cfg.cdfi.lambda0_lower.unwrap_or(e.lambda0());
        csv += &row("lambda0_used", l0);
        let basic = cdfi_rate(&s.spec, l0, &s.grid, CdfiForm::Basic, None)?.value;
        csv += &row("kappa_tilde_basic", basic);
        // The refined form needs V' > 0 on the whole grid.
        if let Ok(refined) = cdfi_rate(&s.spec, l0, &s.grid, CdfiForm::Refined, None) {
            csv += &row("kappa_tilde_refined", refined.value);
            summary += &format!(", kappa~ = {}", fmt17(refined.value));
        } else {
            summary += &format!(", kappa~ = {}", fmt17(basic));
        }
    }
    let mut out = Artifacts::new();
    out.add("rates.csv", csv.into_bytes());
    Ok((out, summary))
}

#[derive(Serialize)]
struct McSummary {
    status: SimStatus,
    initial_count: usize,
    alive_count: usize,
    #[serde(serialize_with = "io::ser_f64")]
    t: f64,
    #[serde(serialize_with = "io::ser_f64")]
    log_survival: f64,
    #[serde(serialize_with = "io::ser_opt_f64")]
    lambda0: Option<f64>,
    #[serde(serialize_with = "io::ser_opt_f64")]
    lambda0_std_error: Option<f64>,
    seed: u64,
    resample: bool,
    bridge_correction: bool,
}

pub(crate) fn simulate_cmd(cfg: &RunConfig) -> Result<(Artifacts, String), CliError> {
    let s = setup(cfg)?;
    let mu = initial_law(cfg, &s, || {
        let e = solve_eigen(&assemble_generator(&s.spec, &s.grid)?)?;
        Ok(qsd_from_eigen(&e, &s.spec)?)
    })?;
    let coord = Coordinate::new(s.spec.clone(), s.domain.0, s.domain.1)?;
    let mut sc = SimConfig::new(vec![coord; cfg.dim], cfg.mc.dt, cfg.mc.horizon, cfg.mc.n_particles, cfg.seed)?
        .with_resample(cfg.mc.resample)
        .with_bridge_correction(cfg.mc.bridge_correction)
        .with_record_every(cfg.mc.record_every);
    if let Some(t) = cfg.mc.threads {
        sc = sc.with_threads(t);
    }
    let ens = simulate(&sc, &ProductGridMeasure::new(vec![mu; cfg.dim])?)?;
    if ens.status() == SimStatus::AllAbsorbed {
        return Err(Error::NoSurvivors.into());
    }
    let window = (
        cfg.mc.fit_window.0.unwrap_or(0.5 * cfg.mc.horizon),
        cfg.mc.fit_window.1.unwrap_or(cfg.mc.horizon),
    );
    let est = estimate_lambda0(ens.survival_curve(), window).ok();

    let curve = ens.survival_curve();
    let t: Vec<f64> = curve.iter().map(|p| p.t).collect();
    let frac: Vec<f64> = curve.iter().map(|p| p.alive_fraction).collect();
    let logs: Vec<f64> = curve.iter().map(|p| p.log_survival).collect();
    let mut out = Artifacts::new();
    out.add("survival.csv", columns_to_csv(&["t", "alive_fraction", "log_survival"], &[&t, &frac, &logs])?);

    let mut pos = String::from("particle_id");
    for k in 1..=ens.dim() {
        pos += &format!(",x{k}");
    }
    pos.push('\n');
    for (row, id) in ens.positions().chunks(ens.dim()).zip(ens.particle_ids()) {
        pos += &id.to_string();
        for x in row {
            pos += ",";
            pos += &fmt17(*x);
        }
        pos.push('\n');
    }
    out.add("positions.csv", pos.into_bytes());
    let marginals = conditioned_marginals(&ens, &vec![s.grid; ens.dim()])?;
    out.add("empirical.csv", measure_csv(&marginals.factors()[0])?);

    let summary = McSummary {
        status: ens.status(),
        initial_count: ens.initial_count(),
        alive_count: ens.alive_count(),
        t: ens.t(),
        log_survival: ens.log_survival_estimate(),
        lambda0: est.map(|e| e.lambda0),
        lambda0_std_error: est.map(|e| e.std_error),
        seed: cfg.seed,
        resample: cfg.mc.resample,
        bridge_correction: cfg.mc.bridge_correction,
    };
    out.add("simulation.json", serde_json::to_string_pretty(&summary).map_err(Error::from)?.into_bytes());
    let line = format!(
        "{} of {} particles alive at t = {}, lambda0 = {}",
        ens.alive_count(),
        ens.initial_count(),
        fmt17(ens.t()),
        summary.lambda0.map_or("n/a".into(), fmt17)
    );
    Ok((out, line))
}
