use std::fs;
use std::path::{Path, PathBuf};

use lgflow::boundedness::{
    cylinder_quantile, degiorgi_supbound, growth_profile, unbounded_example, write_growth_csv, write_level_csv,
    Cylinder, DeGiorgiConfig, CALIBRATION_NOTE,
};
use lgflow::certify::{certify, CertifyConfig, TestFunctionFamily};
use lgflow::grid::{write_field_csv, GridSpec};
use lgflow::mollify::{
    area_strict_report, contraction_slack, derivative_identity_residual, exp_mollify, write_area_strict_csv,
    MollifyConfig,
};
use lgflow::solver::{solve_lenient, stability_sweep, Problem, Trajectory};
use serde::Serialize;

use crate::config::Config;
use crate::manifest::{unix_now, RunManifest};
use crate::store::{read_trajectory, write_trajectory, TrajectoryMeta};
use crate::CliError;

/// Output directory that remembers what was written to it.
struct Out {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Out {
    fn new(dir: &Path) -> Result<Out, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Out { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(PathBuf::from(name));
        Ok(())
    }

    fn finish(self, manifest: RunManifest) -> Result<(), CliError> {
        manifest.finish(&self.dir, &self.files)?;
        Ok(())
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> lgflow::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

/// Config next to the trajectory unless given.
fn load_run(traj_dir: &Path, config: Option<&Path>) -> Result<(Config, Vec<u8>, Problem, Trajectory, TrajectoryMeta), CliError> {
    let cpath = config.map(Path::to_path_buf).unwrap_or_else(|| traj_dir.join("config.toml"));
    let (cfg, bytes) = Config::load(&cpath)?;
    let prob = cfg.build_problem()?;
    let spec = cfg.solve.effective_spec(&prob.spec)?;
    let (traj, meta) = read_trajectory(traj_dir, &prob.grid, spec)?;
    Ok((cfg, bytes, prob, traj, meta))
}

pub fn solve(config: &Path, out_dir: Option<&Path>) -> Result<(), CliError> {
    let started = unix_now();
    let (cfg, bytes) = Config::load(config)?;
    let prob = cfg.build_problem()?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let (traj, failed) = solve_lenient(&prob, &cfg.solve)?;
    let mut out = Out::new(&dir)?;
    out.files.extend(write_trajectory(&dir, &traj, &failed)?);
    out.write("config.toml", &bytes)?;
    if cfg.output.csv {
        out.write("u_final.csv", csv_bytes(|w| write_field_csv(w, traj.final_frame()))?)?;
    }
    out.finish(RunManifest::new("solve", Some(&bytes), cfg.problem.seed, started))?;
    if !failed.is_empty() {
        return Err(CliError::Numerical(format!(
            "{} step(s) did not converge (first: {}); best iterates written to {}",
            failed.len(),
            failed[0],
            dir.display()
        )));
    }
    eprintln!("solve: {} steps written to {}", traj.steps(), dir.display());
    Ok(())
}

pub struct CertifyArgs<'a> {
    pub traj_dir: &'a Path,
    pub config: Option<&'a Path>,
    pub battery: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub out: Option<&'a Path>,
}

pub fn certify_cmd(a: CertifyArgs) -> Result<(), CliError> {
    let started = unix_now();
    let (cfg, bytes, prob, traj, _) = load_run(a.traj_dir, a.config)?;
    let mut cc = CertifyConfig::for_method(cfg.solve.method);
    if let Some(t) = a.tol.or(cfg.certify.tol_cert) {
        cc.tol_cert = t;
    }
    let seed = a.seed.unwrap_or(cfg.certify.seed);
    cc.family = TestFunctionFamily { count: a.battery.unwrap_or(cfg.certify.battery), seed, ..Default::default() };
    let report = certify(&traj, &prob, &cc)?;
    let mut out = Out::new(a.out.unwrap_or(a.traj_dir))?;
    out.write("certificate.json", report.to_json())?;
    out.finish(RunManifest::new("certify", Some(&bytes), seed, started))?;
    for c in &report.conditions {
        eprintln!(
            "{:15} residual {:+.3e}  tol {:.1e}  {}",
            c.condition,
            c.residual,
            c.tol,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Numerical("certificate failed".into()))
    }
}

pub fn sweep_mu(config: &Path, mus: &[f64], out_dir: Option<&Path>) -> Result<(), CliError> {
    let started = unix_now();
    let (cfg, bytes) = Config::load(config)?;
    let prob = cfg.build_problem()?;
    let report = stability_sweep(&prob, mus, &cfg.solve)?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let mut out = Out::new(&dir)?;
    out.write("sweep.csv", csv_bytes(|w| report.write_csv(w))?)?;
    out.write("sweep.json", json(&report))?;
    out.finish(RunManifest::new("sweep-mu", Some(&bytes), cfg.problem.seed, started))?;
    let failed: usize = report.rows.iter().map(|r| r.failed_steps.len()).sum();
    eprintln!(
        "sweep-mu: distances {:?}, decreasing: {}",
        report.distances,
        report.distances_decreasing()
    );
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} step(s) did not converge across the sweep")));
    }
    Ok(())
}

#[derive(Serialize)]
struct MollifyRow {
    delta: f64,
    derivative_residual: f64,
    contraction_slack: f64,
    l1_gap: f64,
    area_gap: f64,
    trace_gap: f64,
}

pub fn mollify(traj_dir: &Path, config: Option<&Path>, deltas: &[f64], out_dir: Option<&Path>) -> Result<(), CliError> {
    let started = unix_now();
    let (_, bytes, _, traj, _) = load_run(traj_dir, config)?;
    let seed = traj.u.frame(0).clone();
    let rows = area_strict_report(&traj.u, deltas, &seed)?;
    let mut full = Vec::with_capacity(rows.len());
    for r in &rows {
        let ud = exp_mollify(&traj.u, &MollifyConfig { delta: r.delta, seed: seed.clone() })?;
        full.push(MollifyRow {
            delta: r.delta,
            derivative_residual: derivative_identity_residual(&traj.u, &ud, r.delta)?,
            contraction_slack: contraction_slack(&traj.u, &ud, &seed, r.delta),
            l1_gap: r.l1_gap,
            area_gap: r.area_gap,
            trace_gap: r.trace_gap,
        });
    }
    let mut out = Out::new(out_dir.unwrap_or(traj_dir))?;
    out.write("area_strict.csv", csv_bytes(|w| write_area_strict_csv(w, &rows))?)?;
    out.write("mollify.json", json(&full))?;
    out.finish(RunManifest::new("mollify", Some(&bytes), 0, started))?;
    Ok(())
}

pub struct DeGiorgiArgs<'a> {
    pub traj_dir: &'a Path,
    pub config: Option<&'a Path>,
    pub center: Vec<f64>,
    pub t0: Option<f64>,
    pub rho: f64,
    pub theta: f64,
    pub r: f64,
    pub xi: f64,
    pub k0: Option<f64>,
    pub alpha: f64,
    pub c_cal: f64,
    pub max_levels: usize,
    pub out: Option<&'a Path>,
}

pub fn degiorgi(a: DeGiorgiArgs) -> Result<(), CliError> {
    let started = unix_now();
    let (_, bytes, _, traj, _) = load_run(a.traj_dir, a.config)?;
    let center = match a.center.as_slice() {
        [x] => [*x, 0.0],
        [x, y] => [*x, *y],
        _ => return Err(CliError::Input("--center takes one or two coordinates".into())),
    };
    let t0 = a.t0.unwrap_or(*traj.u.times().last().unwrap());
    let cyl = Cylinder::new(center, t0, a.rho, a.theta)?;
    let k0 = match a.k0 {
        Some(k) => k,
        None => cylinder_quantile(&traj.u, &cyl, 0.0)?,
    };
    let cfg = DeGiorgiConfig { k0, xi: a.xi, r: a.r, alpha: a.alpha, c_cal: a.c_cal, max_levels: a.max_levels };
    let sb = degiorgi_supbound(&traj.u, &cyl, &cfg)?;
    let mut out = Out::new(a.out.unwrap_or(a.traj_dir))?;
    out.write("degiorgi.json", sb.to_json())?;
    out.write("degiorgi_levels.csv", csv_bytes(|w| write_level_csv(w, &sb.table))?)?;
    out.finish(RunManifest::new("degiorgi", Some(&bytes), 0, started))?;
    eprintln!("{CALIBRATION_NOTE}");
    eprintln!(
        "degiorgi: bound {:.6} observed max {:.6} ({}), status {:?}",
        sb.bound,
        sb.observed_max,
        if sb.sound { "sound" } else { "NOT sound" },
        sb.status
    );
    Ok(())
}

#[derive(Serialize)]
struct ExampleSummary {
    n: usize,
    cells: usize,
    h: f64,
    t: f64,
    cap: f64,
    note: &'static str,
}

/// Odd number of cells per axis centred on the origin, h = 1/((cells − 1)/2).
pub fn example_radial(n: usize, cells: usize, t: f64, out_dir: &Path) -> Result<(), CliError> {
    let started = unix_now();
    if cells < 3 || cells % 2 == 0 {
        return Err(CliError::Input(format!("--grid must be odd and at least 3, got {cells}")));
    }
    let h = 2.0 / (cells - 1) as f64;
    let half = cells as f64 * h / 2.0;
    let grid = match n {
        1 => GridSpec::new_1d(cells, h, -half),
        2 => GridSpec::new_2d(cells, cells, h, [-half, -half]),
        _ => return Err(CliError::Input(format!("--n must be 1 or 2, got {n}"))),
    }?;
    let u = unbounded_example(n, &grid, t)?;
    let rows = growth_profile(&u);
    let mut out = Out::new(out_dir)?;
    out.write("field.csv", csv_bytes(|w| write_field_csv(w, &u))?)?;
    out.write("growth.csv", csv_bytes(|w| write_growth_csv(w, &rows))?)?;
    let summary = ExampleSummary {
        n,
        cells,
        h,
        t,
        cap: (1.0 - t).max(0.0) * (n as f64 - 1.0) / (h / 2.0),
        note: "growth is the max over dyadic annuli 2^-(j+1) <= |x| < 2^-j; the centre cell is capped",
    };
    out.write("example.json", json(&summary))?;
    out.finish(RunManifest::new("example-radial", None, 0, started))?;
    Ok(())
}

pub fn export_csv(traj_dir: &Path, config: Option<&Path>, every: usize, out_dir: Option<&Path>) -> Result<(), CliError> {
    let started = unix_now();
    if every == 0 {
        return Err(CliError::Input("--every must be positive".into()));
    }
    let (_, bytes, _, traj, _) = load_run(traj_dir, config)?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| traj_dir.join("csv"));
    let mut out = Out::new(&dir)?;
    let last = traj.u.len() - 1;
    for k in (0..=last).filter(|k| k % every == 0 || *k == last) {
        out.write(&format!("u_{k:05}.csv"), csv_bytes(|w| write_field_csv(w, traj.u.frame(k)))?)?;
    }
    out.write("index.csv", csv_bytes(|w| traj.write_index_csv(w))?)?;
    out.finish(RunManifest::new("export-csv", Some(&bytes), 0, started))?;
    Ok(())
}
