//! Trajectory directories: binary frames, index CSV and a JSON summary.
//!
//! ```text
//! <dir>/frames/u_00000.lgf ... u_<K>.lgf
//! <dir>/frames/z_00001.lgd ... z_<K>.lgd
//! <dir>/index.csv
//! <dir>/trajectory.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use lgflow::grid::{read_dual, read_field, write_dual, write_field, DualField, GridSpec, Gridded, TimeSeries};
use lgflow::lagrangian::LagrangianSpec;
use lgflow::solver::{StepStat, Trajectory};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub steps: usize,
    pub tau: f64,
    pub times: Vec<f64>,
    pub integrand: String,
    pub failed_steps: Vec<usize>,
    pub stats: Vec<StepStat>,
}

fn frame_path(dir: &Path, prefix: &str, k: usize, ext: &str) -> PathBuf {
    dir.join("frames").join(format!("{prefix}_{k:05}.{ext}"))
}

/// Writes the trajectory and returns the written paths relative to `dir`.
pub fn write_trajectory(dir: &Path, traj: &Trajectory, failed: &[usize]) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir.join("frames"))?;
    let mut out = Vec::new();
    for (k, u) in traj.u.frames().iter().enumerate() {
        let p = frame_path(dir, "u", k, "lgf");
        write_field(&p, u)?;
        out.push(p);
    }
    if let Some(z) = &traj.z {
        for (i, zk) in z.frames().iter().enumerate() {
            let p = frame_path(dir, "z", i + 1, "lgd");
            write_dual(&p, zk)?;
            out.push(p);
        }
    }
    let idx = dir.join("index.csv");
    let mut buf = Vec::new();
    traj.write_index_csv(&mut buf)?;
    fs::write(&idx, buf)?;
    out.push(idx);
    let meta = TrajectoryMeta {
        steps: traj.steps(),
        tau: traj.tau,
        times: traj.u.times().to_vec(),
        integrand: traj.spec.kind().name(),
        failed_steps: failed.to_vec(),
        stats: traj.stats.clone(),
    };
    let mp = dir.join("trajectory.json");
    fs::write(&mp, serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    out.push(mp);
    Ok(out.into_iter().map(|p| p.strip_prefix(dir).unwrap().to_path_buf()).collect())
}

/// Reads a trajectory written by [`write_trajectory`] onto `grid` (which
/// carries the mask, if any; the files only store the box).
pub fn read_trajectory(dir: &Path, grid: &GridSpec, spec: LagrangianSpec) -> Result<(Trajectory, TrajectoryMeta), CliError> {
    let meta_path = dir.join("trajectory.json");
    let text = fs::read_to_string(&meta_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", meta_path.display())))?;
    let meta: TrajectoryMeta =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", meta_path.display())))?;
    if meta.times.len() != meta.steps + 1 {
        return Err(CliError::Input("trajectory.json: times and steps disagree".into()));
    }
    let mut us = Vec::with_capacity(meta.steps + 1);
    for k in 0..=meta.steps {
        let f = read_field(&frame_path(dir, "u", k, "lgf"))?;
        us.push(f.on_grid(grid).map_err(|_| CliError::Input(format!("frame {k} does not match the configured grid")))?);
    }
    let mut zs = Vec::with_capacity(meta.steps);
    for k in 1..=meta.steps {
        let p = frame_path(dir, "z", k, "lgd");
        if !p.exists() {
            zs.clear();
            break;
        }
        let z = read_dual(&p)?;
        if !z.grid().same_box(grid) {
            return Err(CliError::Input(format!("dual frame {k} does not match the configured grid")));
        }
        zs.push(DualField::new(grid.clone(), z.values().to_vec())?);
    }
    let u = TimeSeries::new(meta.times.clone(), us)?;
    let z = if zs.is_empty() { None } else { Some(TimeSeries::new(meta.times[1..].to_vec(), zs)?) };
    let traj = Trajectory::new(u, z, meta.stats.clone(), spec, meta.tau)?;
    Ok((traj, meta))
}
